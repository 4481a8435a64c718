#include <filesystem>

#include <gtest/gtest.h>

#include "srfc/rng.hpp"
#include "srfc/text.hpp"

using namespace srfc;

TEST(Tokenize, TitleExample) {
  EXPECT_EQ(tokenize("Pearly Button A-Line Dress!"),
            (TokenSeq{"pearly", "button", "a-line", "dress"}));
}

TEST(Tokenize, EmptyAndPunctuationOnly) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("... --- !!!").empty());
}

TEST(Tokenize, KeepsInternalApostrophe) {
  EXPECT_EQ(tokenize("  Women's  (cotton), 'tee'  "), (TokenSeq{"women's", "cotton", "tee"}));
}

TEST(Tokenize, OutputIsLowercaseAlnum) {
  Rng rng(3);
  const std::string alphabet = "aB3-'!. ,Zx";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (int i = 0; i < 30; ++i) s += alphabet[rng.below(alphabet.size())];
    for (const auto& t : tokenize(s)) {
      ASSERT_FALSE(t.empty());
      bool any_alnum = false;
      for (char c : t) {
        EXPECT_FALSE(std::isupper(static_cast<unsigned char>(c)));
        any_alnum |= std::isalnum(static_cast<unsigned char>(c)) != 0;
      }
      EXPECT_TRUE(any_alnum);
    }
  }
}

TEST(Vocab, MinCountExample) {
  const Vocab v = build_vocab({{"a", "a", "a"}, {"a", "b"}}, 2);
  EXPECT_EQ(v.size(), Vocab::kNumReserved + 1);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_EQ(v.id("b"), Vocab::kUnk);
}

TEST(Vocab, MinCountOneKeepsEverything) {
  const Vocab v = build_vocab({{"x", "y"}, {"z"}}, 1);
  EXPECT_EQ(v.size(), Vocab::kNumReserved + 3);
}

TEST(Vocab, IdenticalCaptions) {
  const TokenSeq cap{"red", "dress", "red"};
  const Vocab v = build_vocab({cap, cap, cap}, 1);
  EXPECT_EQ(v.words(), (TokenSeq{"red", "dress"}));
}

TEST(Vocab, FrequencyThenLexicographicIds) {
  const Vocab v = build_vocab({{"b", "c", "a", "c"}}, 1);
  EXPECT_EQ(v.words(), (TokenSeq{"c", "a", "b"}));
  EXPECT_EQ(v.id("c"), Vocab::kNumReserved);
}

TEST(Vocab, RaisingMinCountNeverAddsTokens) {
  std::vector<TokenSeq> corpus;
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    TokenSeq c;
    for (int k = 0; k < 6; ++k) c.push_back(std::string(1, static_cast<char>('a' + rng.below(12))));
    corpus.push_back(c);
  }
  for (int m = 1; m < 40; ++m) {
    const Vocab lo = build_vocab(corpus, m), hi = build_vocab(corpus, m + 1);
    for (const auto& w : hi.words()) EXPECT_TRUE(lo.contains(w));
  }
}

TEST(Codec, RoundTrip) {
  const TokenSeq cap{"floral", "lace", "dress"};
  const Vocab v = build_vocab({cap}, 1);
  const IdSeq ids = encode(cap, v);
  EXPECT_EQ(ids.front(), Vocab::kBos);
  EXPECT_EQ(ids.back(), Vocab::kEos);
  EXPECT_EQ(decode(ids, v), cap);
}

TEST(Codec, UnknownMapsToUnk) {
  const Vocab v = build_vocab({{"a"}}, 1);
  EXPECT_EQ(encode({"zzz"}, v)[1], Vocab::kUnk);
}

TEST(Codec, DecodeRejectsOutOfRange) {
  const Vocab v = build_vocab({{"a"}}, 1);
  EXPECT_THROW(decode({v.size() + 5}, v), std::out_of_range);
}

TEST(Codec, DecodeStripsPad) {
  const Vocab v = build_vocab({{"a"}}, 1);
  EXPECT_EQ(decode({Vocab::kBos, v.id("a"), Vocab::kPad, Vocab::kEos}, v), (TokenSeq{"a"}));
}

TEST(VocabFile, RoundTripAndValidation) {
  const auto dir = std::filesystem::temp_directory_path() / "srfc_test_text";
  std::filesystem::create_directories(dir);
  const Vocab v = build_vocab({{"x", "y", "y"}}, 1);
  save_vocab(v, (dir / "vocab.txt").string());
  EXPECT_EQ(load_vocab((dir / "vocab.txt").string()), v);
  {
    std::ofstream bad(dir / "bad.txt");
    bad << "<eos>\n<bos>\n<unk>\n<pad>\nx\n";
  }
  EXPECT_THROW(load_vocab((dir / "bad.txt").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}
