#pragma once

#include "aera/parsing.hpp"

// Parser fixtures shared by the unit tests and the acceptance binary.
namespace aera::golden {

struct StructuredCase {
  const char* name;
  const char* text;
  int score;
  const char* rationale_prefix;
};

// Teacher and student outputs transcribed from published examples.
inline const StructuredCase kStructured[] = {
    {"set1_student", "3 points; This response describes three additional pieces of information that would be needed to accurately replicate the experiment: \xE2\x80\x9A\"how much vinegar was poured into the containers...what kinds of containers they were using...and what 4 samples were used in the experiment.\xE2\x80\x9A\"",
     3, "This response describes three additional"},
    {"set1_teacher", "2 points; This response describes two additional pieces of information that would be needed to accurately replicate the experiment: \xE2\x80\x9A\"how much vinegar was poured into the containers\xE2\x80\x9A\" and \xE2\x80\x9A\"what 4 samples were used in the experiment.\xE2\x80\x9A\" It also hints at a potential third piece of information needed: \xE2\x80\x9A\"what kinds of containers were used.\xE2\x80\x9A\"",
     2, "This response describes two additional"},
    {"set2_student", "2 points; The student provides an acceptable conclusion based on the data: \xE2\x80\x9A\"...the stretchiest polymer plastic of the four is plastic type B....\xE2\x80\x9A\" One correct way to improve the experimental design and/or the validity of the results is given: \xE2\x80\x9A\"Add more trials to increase accuracy of the results.\xE2\x80\x9A\"",
     2, "The student provides an acceptable conclusion"},
    {"set2_teacher", "3 points; The student provides an acceptable conclusion based on the data: \xE2\x80\x9A\"...the stretchiest polymer plastic of the four is plastic type B...\xE2\x80\x9A\" Two correct ways to improve the experimental design and/or the validity of the results are given: \xE2\x80\x9A\"1.) Add more trials to increase accuracy of the results....\xE2\x80\x9A\" and \xE2\x80\x9A\"2.) Repeat the experiment with heavier weights to see if it affects the results.\xE2\x80\x9A\"",
     3, "The student provides an acceptable conclusion"},
    {"set5_student", "0 points; The student answer does not match any key elements given.", 0,
     "The student answer does not match any key elements given."},
    {"set5_teacher", "0 points; The student answer does not provide any coherent or relevant information on the steps involved in protein synthesis.",
     0, "The student answer does not provide"},
    {"set6_student", "1 point; This student answer only matches one key element, \"Osmosis... movement of water\". The other two concepts are incorrect or incomplete.",
     1, "This student answer only matches one key element"},
    {"set6_teacher", "2 points; This student answer matches two key elements, \"Osmosis... movement of water across the membrane\" and \"Endocytosis... movement of things into the cell\" but didn't include an explanation for \"Exocytosis\".",
     2, "This student answer matches two key elements"},
    {"refine_original_1", "1 point; This response describes one piece of relevant information that would be needed to accurately replicate the experiment: \xE2\x80\x9Chow much of the solution was poured.\xE2\x80\x9D",
     1, "This response describes one piece"},
    {"refine_refined_1", "0 points; This response describes little or no accurate or relevant information from the acid rain investigation.",
     0, "This response describes little or no"},
    {"refine_original_5", "2 points; The student answer matches two key elements, \xE2\x80\x9C...mRNA going to the rRNA...\xE2\x80\x9D and \xE2\x80\x9C...tRNA will take the information and make a protein...\xE2\x80\x9D. However, the other two steps are not described accurately or comprehensibly.",
     2, "The student answer matches two key elements"},
    {"refine_refined_5", "1 point; The student answer matches only one key element, \xE2\x80\x9C...mRNA going to the rRNA...\xE2\x80\x9D", 1,
     "The student answer matches only one key element"},
    {"refine_refined_6", "3 points; This student answer matches three key elements, \xE2\x80\x9COsmosis... how water gets diffused\xE2\x80\x9D, \xE2\x80\x9C" "Active transport... enzyme opens the cell membrane for an object to come in, and extra energy is needed\xE2\x80\x9D and \xE2\x80\x9CPassive transport... enzyme opens the cell, but the object doesn't need the extra energy to come in\xE2\x80\x9D.",
     3, "This student answer matches three key elements"},
    {"other_llm_teacher", "1 point; The student answer only matches one key element, \xE2\x80\x9C...tRNA transfers it outside the nucleus to be matched with a ribosome...\xE2\x80\x9D.",
     1, "The student answer only matches one key element"},
    {"other_llm_gpt4", "1 point; The student answer matches two key elements, \"The codons match up\" and \"It creates protein\".", 1,
     "The student answer matches two key elements"},
};

// Zero-shot hallucination examples, verbatim.
struct FreeformCase {
  const char* name;
  const char* text;
  HallucinationCategory expected;
  const char* evidence_fragment;
};

inline const FreeformCase kFreeform[] = {
    {"scale_out_of_5", "... answer should receive 1 point out of 5.", HallucinationCategory::IncorrectScoringScale,
     "out of 5"},
    {"scale_fraction", "... answer should receive 1.5 points out of 3.", HallucinationCategory::IncorrectScoringScale,
     "1.5"},
    {"scale_out_of_12",
     "... Overall, this student answer receives a score of 2 out of 12 (0+0+1+1) as the answer does not accurately and completely ...",
     HallucinationCategory::IncorrectScoringScale, "out of 12"},
    {"inconsistent",
     "Score: 1 point This student answer ... Therefore, the answer is not relevant to the question and should receive a score of 0 points.",
     HallucinationCategory::InconsistentAssessment, "1"},
    {"uncertain", "... Therefore, this answer would receive a score of 1-2 points out of 3.",
     HallucinationCategory::UncertainScore, "1-2 points"},
};

}  // namespace aera::golden
