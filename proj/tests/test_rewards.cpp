#include <cmath>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "oracles/random_text.hpp"
#include "srfc/rewards.hpp"

using namespace srfc;

namespace {

TokenSeq toks(const std::string& s) { return tokenize(s); }

AttributeVocab pink_lace_floral() { return AttributeVocab({{"pink"}, {"lace"}, {"floral"}}); }

TextCnnClassifier small_classifier(int vocab, int cats, std::uint64_t seed = 2) {
  ClassifierConfig c;
  c.vocab_size = vocab;
  c.n_categories = cats;
  c.embed_dim = 4;
  c.filters = 3;
  c.init_range = 0.5;
  c.init_seed = seed;
  return TextCnnClassifier(c);
}

}  // namespace

TEST(Als, WorkedExample) {
  const auto rep = als_report(toks("pink lace dress"), toks("pink lace dress with floral trim"),
                              pink_lace_floral());
  EXPECT_EQ(rep.matches[0], 2);
  EXPECT_EQ(rep.total[0], 3);
  EXPECT_EQ(rep.matches[1], 2);
  EXPECT_EQ(rep.total[1], 2);
  EXPECT_NEAR(rep.beta, std::exp(-1.0), 1e-15);
  EXPECT_NEAR(rep.r_als, std::exp(-1.0) * std::sqrt(2.0 / 3.0), 1e-15);
  // e^-1 * sqrt(2/3) = 0.3003723..., commonly quoted as 0.300379
  EXPECT_NEAR(rep.r_als, 0.300379, 1e-5);
}

TEST(Als, PerfectMatchStillBelowOne) {
  const auto s = toks("pink lace dress with floral trim");
  const auto rep = als_report(s, s, pink_lace_floral());
  EXPECT_DOUBLE_EQ(rep.beta, 1.0);
  EXPECT_DOUBLE_EQ(rep.precision[0], 0.5);
  EXPECT_DOUBLE_EQ(rep.precision[1], 0.8);
  EXPECT_NEAR(rep.r_als, std::sqrt(0.4), 1e-15);
  EXPECT_NEAR(rep.r_als, 0.632456, 1e-6);
}

TEST(Als, NoAttributeWordsIsZero) {
  EXPECT_EQ(als_reward(toks("a dress with trim"), toks("pink lace dress"), pink_lace_floral()), 0.0);
}

TEST(Als, SingleTokenIsZero) {
  const auto rep = als_report(toks("pink"), toks("pink dress"), pink_lace_floral());
  EXPECT_EQ(rep.total[1], 0);
  EXPECT_EQ(rep.r_als, 0.0);
}

TEST(Als, EmptyGeneratedThrows) {
  EXPECT_THROW(als_reward({}, toks("pink"), pink_lace_floral()), std::invalid_argument);
}

TEST(Als, TwoTokenPhraseCountsOnlyAsBigram) {
  AttributeVocab v(std::vector<TokenSeq>{{"v", "neck"}});
  const auto rep = als_report(toks("v neck top"), toks("v neck top"), v);
  EXPECT_EQ(rep.matches[0], 0);
  EXPECT_EQ(rep.matches[1], 1);
  EXPECT_EQ(rep.r_als, 0.0);
  EXPECT_TRUE(is_attribute_tuple(std::vector<std::string>{"v", "neck"}, v));
  EXPECT_FALSE(is_attribute_tuple(std::vector<std::string>{"neck"}, v));
}

TEST(Als, BigramNeedsToOccurInReference) {
  // "lace pink" contains attributes but never appears in the reference.
  const auto rep = als_report(toks("lace pink"), toks("pink lace"), pink_lace_floral());
  EXPECT_EQ(rep.matches[0], 2);
  EXPECT_EQ(rep.matches[1], 0);
  EXPECT_EQ(rep.r_als, 0.0);
}

TEST(Brevity, Values) {
  EXPECT_NEAR(brevity_penalty(3, 6), std::exp(-1.0), 1e-15);
  EXPECT_EQ(brevity_penalty(6, 6), 1.0);
  EXPECT_EQ(brevity_penalty(9, 6), 1.0);
  EXPECT_THROW(brevity_penalty(0, 6), std::invalid_argument);
  double prev = 0.0;
  for (std::size_t l = 1; l <= 12; ++l) {
    const double b = brevity_penalty(l, 8);
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(Als, RangesAndClipping) {
  Rng rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    const auto attrs = randtext::attribute_vocab(rng);
    const auto gen = randtext::sentence(rng, 1, 8);
    const auto ref = randtext::sentence(rng, 1, 8);
    const auto rep = als_report(gen, ref, attrs);
    for (int k = 0; k < 2; ++k) {
      EXPECT_GE(rep.matches[k], 0);
      EXPECT_LE(rep.matches[k], rep.total[k]);
    }
    EXPECT_GE(rep.r_als, 0.0);
    EXPECT_LE(rep.r_als, 1.0);
    // Appending an attribute word already present in the generated sentence
    // as often as the reference holds it cannot raise Match(1).
    for (const auto& p : attrs.phrases()) {
      if (p.size() != 1) continue;
      const auto in_ref = std::count(ref.begin(), ref.end(), p[0]);
      auto dup = gen;
      while (std::count(dup.begin(), dup.end(), p[0]) < in_ref) dup.push_back(p[0]);
      const int base = match_count(dup, ref, attrs, 1);
      dup.push_back(p[0]);
      EXPECT_LE(match_count(dup, ref, attrs, 1), base);
    }
  }
}

TEST(Als, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto attrs = randtext::attribute_vocab(rng);
    const auto gen = randtext::sentence(rng, 1, 9);
    const auto ref = randtext::sentence(rng, 1, 9);
    const auto parts = oracle::als_parts(gen, ref, attrs.phrases());
    const auto rep = als_report(gen, ref, attrs);
    ASSERT_EQ(rep.matches[0], parts.m1);
    ASSERT_EQ(rep.matches[1], parts.m2);
    ASSERT_EQ(rep.total[0], parts.h1);
    ASSERT_EQ(rep.total[1], parts.h2);
    ASSERT_NEAR(rep.r_als, oracle::als(gen, ref, attrs.phrases()), 1e-12);
  }
}

TEST(Sls, OneHotAndUniform) {
  auto clf = small_classifier(12, 5);
  Tensor w = clf.params().get("cls.out.w");  // shares storage
  for (auto& v : w.data()) v = 0.0;
  const IdSeq words = {4, 5, 6};
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(sls_reward(words, c, clf), 0.2, 1e-15);
  Tensor b = clf.params().get("cls.out.b");
  b.data()[3] = 1000.0;
  EXPECT_EQ(sls_reward(words, 3, clf), 1.0);
  EXPECT_EQ(sls_reward(words, 0, clf), 0.0);
}

TEST(Sls, IsAProbability) {
  const auto clf = small_classifier(12, 6, 9);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    IdSeq words;
    const std::size_t len = 1 + rng.below(8);
    for (std::size_t i = 0; i < len; ++i) words.push_back(4 + static_cast<int>(rng.below(8)));
    double sum = 0.0;
    const auto direct = clf.classify(words);
    for (int c = 0; c < 6; ++c) {
      const double p = sls_reward(words, c, clf);
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
      EXPECT_EQ(p, direct[static_cast<std::size_t>(c)]);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Sls, UnknownCategoryThrows) {
  const auto clf = small_classifier(12, 4);
  EXPECT_THROW(sls_reward({4, 5}, 4, clf), std::out_of_range);
  EXPECT_THROW(sls_reward({4, 5}, -1, clf), std::out_of_range);
}

TEST(Combined, Examples) {
  RewardConfig both;
  EXPECT_NEAR(combined_reward(0.300379, 0.5, both), 0.800379, 1e-15);
  RewardConfig no_als{0.0, 1.0};
  EXPECT_EQ(combined_reward(0.7, 0.25, no_als), 0.25);
  EXPECT_EQ(combined_reward(0.0, 0.0, both), 0.0);
  RewardConfig bad{-1.0, 1.0};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(SemanticReward, ScoresIdsAgainstReference) {
  const Vocab vocab = Vocab::from_ordered(toks("pink lace dress with floral trim"));
  const auto attrs = pink_lace_floral();
  const auto clf = small_classifier(vocab.size(), 3);
  SemanticReward scorer(vocab, attrs, clf, RewardConfig{});
  IdSeq gen;
  for (const auto& t : toks("pink lace dress")) gen.push_back(vocab.id(t));
  const auto rb = scorer.score(gen, toks("pink lace dress with floral trim"), 1);
  EXPECT_NEAR(rb.als.r_als, std::exp(-1.0) * std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_EQ(rb.r_sls, clf.classify(gen)[1]);
  EXPECT_DOUBLE_EQ(rb.r, rb.als.r_als + rb.r_sls);
  // A sampler may stop immediately; that scores 0 on the attribute side.
  const auto empty = scorer.score({}, toks("pink lace"), 0);
  EXPECT_EQ(empty.als.r_als, 0.0);
}
