#pragma once

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfc/dataset.hpp"
#include "srfc/models.hpp"
#include "srfc/text.hpp"

namespace srfc {

struct RewardConfig {
  double alpha_als = 1.0;  // alpha_1
  double alpha_sls = 1.0;  // alpha_2
  static constexpr int kMaxN = 2;

  void validate() const {
    if (alpha_als < 0.0 || alpha_sls < 0.0)
      throw std::invalid_argument("RewardConfig: reward weights must be nonnegative");
  }
};

// Whether an n-gram of the generated sentence is a tuple t_n: it contains an
// attribute. For n = 1 only single-token attributes count; for n = 2 the
// bigram is itself a 2-token phrase or holds a single-token attribute.
inline bool is_attribute_tuple(std::span<const std::string> gram, const AttributeVocab& attrs) {
  if (gram.size() == 1) return attrs.is_unigram(gram[0]);
  if (gram.size() == 2)
    return attrs.is_bigram(gram[0], gram[1]) || attrs.is_unigram(gram[0]) ||
           attrs.is_unigram(gram[1]);
  throw std::invalid_argument("is_attribute_tuple: only n = 1, 2 are supported");
}

namespace detail {
using GramCounts = std::map<std::vector<std::string>, int>;

inline GramCounts count_grams(const TokenSeq& s, std::size_t n) {
  GramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}
}  // namespace detail

// Match(n) = sum over distinct tuples t_n of min(C_g(t_n), C_r(t_n)).
inline int match_count(const TokenSeq& generated, const TokenSeq& reference,
                       const AttributeVocab& attrs, int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("match_count: n must be 1 or 2");
  const auto un = static_cast<std::size_t>(n);
  const auto gen = detail::count_grams(generated, un);
  if (gen.empty()) return 0;
  const auto ref = detail::count_grams(reference, un);
  int total = 0;
  for (const auto& [gram, cg] : gen) {
    if (!is_attribute_tuple(gram, attrs)) continue;
    auto it = ref.find(gram);
    if (it != ref.end()) total += std::min(cg, it->second);
  }
  return total;
}

// beta = exp(min(0, (l - L) / l)).
inline double brevity_penalty(std::size_t generated_len, std::size_t reference_len) {
  if (generated_len == 0) throw std::invalid_argument("brevity_penalty: generated length is 0");
  if (reference_len == 0) throw std::invalid_argument("brevity_penalty: reference length is 0");
  const double l = static_cast<double>(generated_len), L = static_cast<double>(reference_len);
  return std::exp(std::min(0.0, (l - L) / l));
}

struct AttributeMatchReport {
  std::array<int, 2> total{};    // H(n) = M + 1 - n, floored at 0
  std::array<int, 2> matches{};  // Match(n)
  std::array<double, 2> precision{};
  double beta = 0.0;
  std::size_t generated_len = 0;  // l
  std::size_t reference_len = 0;  // L
  double r_als = 0.0;
};

inline void to_json(nlohmann::json& j, const AttributeMatchReport& r) {
  j = {{"H", r.total},
       {"match", r.matches},
       {"P", r.precision},
       {"beta", r.beta},
       {"l", r.generated_len},
       {"L", r.reference_len},
       {"r_als", r.r_als}};
}

// r_ALS = beta * (P(1) P(2))^(1/2). A one-token sentence has no bigrams, so
// P(2) = 0 and the reward is 0.
inline AttributeMatchReport als_report(const TokenSeq& generated, const TokenSeq& reference,
                                       const AttributeVocab& attrs) {
  if (generated.empty()) throw std::invalid_argument("als_reward: empty generated sentence");
  AttributeMatchReport rep;
  rep.generated_len = generated.size();
  rep.reference_len = reference.size();
  rep.beta = brevity_penalty(generated.size(), reference.size());
  double product = 1.0;
  for (int n = 1; n <= RewardConfig::kMaxN; ++n) {
    const auto k = static_cast<std::size_t>(n - 1);
    const int grams = static_cast<int>(generated.size()) + 1 - n;
    rep.total[k] = std::max(grams, 0);
    rep.matches[k] = match_count(generated, reference, attrs, n);
    rep.precision[k] =
        rep.total[k] > 0 ? static_cast<double>(rep.matches[k]) / rep.total[k] : 0.0;
    product *= rep.precision[k];
  }
  rep.r_als = product > 0.0 ? rep.beta * std::sqrt(product) : 0.0;
  return rep;
}

inline double als_reward(const TokenSeq& generated, const TokenSeq& reference,
                         const AttributeVocab& attrs) {
  return als_report(generated, reference, attrs).r_als;
}

// r_SLS = p_phi(l = c | Y'), read from a frozen classifier.
inline double sls_reward(const IdSeq& generated_words, int category,
                         const TextCnnClassifier& classifier) {
  if (category < 0 || category >= classifier.config().n_categories)
    throw std::out_of_range("sls_reward: unknown category id " + std::to_string(category));
  return classifier.classify(generated_words)[static_cast<std::size_t>(category)];
}

inline double combined_reward(double r_als, double r_sls, const RewardConfig& cfg) {
  return cfg.alpha_als * r_als + cfg.alpha_sls * r_sls;
}

struct RewardBreakdown {
  AttributeMatchReport als;
  double r_sls = 0.0;
  double r = 0.0;
};

// Bundles what reward evaluation needs for one corpus: word vocab (ids ->
// tokens), attribute phrases, the frozen classifier and the weights.
class SemanticReward {
 public:
  SemanticReward(const Vocab& vocab, const AttributeVocab& attrs,
                 const TextCnnClassifier& classifier, RewardConfig cfg)
      : vocab_(vocab), attrs_(attrs), classifier_(classifier), cfg_(cfg) {
    cfg_.validate();
  }

  const RewardConfig& config() const { return cfg_; }

  // Empty generations score 0 rather than raising: a sampler may emit EOS
  // first, and that is a legitimately bad caption.
  RewardBreakdown score(const IdSeq& generated_words, const TokenSeq& reference,
                        int category) const {
    RewardBreakdown out;
    const TokenSeq gen = decode(generated_words, vocab_);
    if (!gen.empty() && !reference.empty()) out.als = als_report(gen, reference, attrs_);
    out.als.generated_len = gen.size();
    out.als.reference_len = reference.size();
    out.r_sls = sls_reward(generated_words, category, classifier_);
    out.r = combined_reward(out.als.r_als, out.r_sls, cfg_);
    return out;
  }

 private:
  const Vocab& vocab_;
  const AttributeVocab& attrs_;
  const TextCnnClassifier& classifier_;
  RewardConfig cfg_;
};

}  // namespace srfc
