#include <gtest/gtest.h>

#include "aera/rng.hpp"
#include "aera/text.hpp"

using namespace aera;

TEST(Text, CollapseAndTrim) {
  EXPECT_EQ(text::collapse_whitespace("  a \t b\n\nc  "), "a b c");
  EXPECT_EQ(text::trim("\t x y \n"), "x y");
  EXPECT_EQ(text::collapse_whitespace("   "), "");
}

TEST(Text, AsciiQuotesDropsLowQuote) {
  // "‚how much‚" as it appears in copy-pasted output
  EXPECT_EQ(text::ascii_quotes("\xE2\x80\x9Ahow much\xE2\x80\x9A"), "how much");
  EXPECT_EQ(text::ascii_quotes("\xE2\x80\x9Cit\xE2\x80\x99s\xE2\x80\x9D"), "\"it's\"");
}

TEST(Text, NormalizeForMatch) { EXPECT_EQ(text::normalize_for_match("  The \xE2\x80\x9CMass\xE2\x80\x9D  "), "the \"mass\""); }

TEST(Text, WordCount) {
  EXPECT_EQ(text::word_count(""), 0u);
  EXPECT_EQ(text::word_count("one  two\tthree\n"), 3u);
}

TEST(Text, Sha256KnownVectors) {
  EXPECT_EQ(text::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(text::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Rng, ShuffleIsAPermutationAndSeedStable) {
  std::vector<int> a(50), b;
  for (int i = 0; i < 50; ++i) a[i] = i;
  b = a;
  std::mt19937_64 g1(7), g2(7);
  seeded_shuffle(std::span<int>(a), g1);
  seeded_shuffle(std::span<int>(b), g2);
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Rng, MixSeedSeparatesLabels) {
  EXPECT_NE(mix_seed(42, "1"), mix_seed(42, "2"));
  EXPECT_NE(mix_seed(42, "1"), mix_seed(43, "1"));
  EXPECT_EQ(mix_seed(42, "1"), mix_seed(42, "1"));
}
