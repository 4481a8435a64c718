#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfc/dataset.hpp"
#include "srfc/models.hpp"
#include "srfc/text.hpp"

namespace srfc {

namespace detail {
using NgramCounts = std::map<std::vector<std::string>, int>;

inline NgramCounts ngrams(const TokenSeq& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

inline void check_corpus(const char* metric, std::size_t hyps, std::size_t refs) {
  if (hyps != refs)
    throw std::invalid_argument(std::string(metric) + ": " + std::to_string(hyps) +
                                " hypotheses for " + std::to_string(refs) + " references");
  if (hyps == 0) throw std::invalid_argument(std::string(metric) + ": empty corpus");
}
}  // namespace detail

// Corpus BLEU-4: clipped n-gram precisions pooled over the corpus, uniform
// weights, brevity penalty exp(1 - r/c) when c <= r. No smoothing, so any
// zero precision gives 0.
inline double bleu4(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  detail::check_corpus("bleu4", hyps.size(), refs.size());
  constexpr std::size_t kMaxN = 4;
  std::array<double, kMaxN> clipped{}, total{};
  double c = 0.0, r = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    c += static_cast<double>(hyps[i].size());
    r += static_cast<double>(refs[i].size());
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto h = detail::ngrams(hyps[i], n);
      const auto ref = detail::ngrams(refs[i], n);
      for (const auto& [g, cnt] : h) {
        total[n - 1] += cnt;
        if (auto it = ref.find(g); it != ref.end()) clipped[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  if (c == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxN; ++n) {
    if (total[n] == 0.0 || clipped[n] == 0.0) return 0.0;
    log_sum += std::log(clipped[n] / total[n]);
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / kMaxN);
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sentence ROUGE-L F-measure, F = (1 + beta^2) P R / (R + beta^2 P).
inline double rouge_l_sentence(const TokenSeq& hyp, const TokenSeq& ref, double beta = 1.2) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

// Mean sentence ROUGE-L over the corpus.
inline double rouge_l(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                      double beta = 1.2) {
  detail::check_corpus("rouge_l", hyps.size(), refs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) s += rouge_l_sentence(hyps[i], refs[i], beta);
  return s / static_cast<double>(hyps.size());
}

// CIDEr with one reference per item: per n = 1..4, cosine similarity of
// TF-IDF n-gram vectors, IDF = log(N / max(1, df)) with document frequencies
// from the reference corpus; n-scores averaged uniformly, then over items.
// Zero-norm vectors contribute 0.
inline double cider(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  detail::check_corpus("cider", hyps.size(), refs.size());
  if (hyps.size() < 2) throw std::invalid_argument("cider: need at least 2 items for IDF");
  constexpr std::size_t kMaxN = 4;
  const double log_n = std::log(static_cast<double>(refs.size()));
  std::array<std::map<std::vector<std::string>, int>, kMaxN> df;
  std::vector<std::array<detail::NgramCounts, kMaxN>> ref_grams(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i)
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      ref_grams[i][n - 1] = detail::ngrams(refs[i], n);
      for (const auto& kv : ref_grams[i][n - 1]) ++df[n - 1][kv.first];
    }
  auto idf = [&](std::size_t n, const std::vector<std::string>& g) {
    auto it = df[n].find(g);
    const double d = it == df[n].end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
    return log_n - std::log(d);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double item = 0.0;
    for (std::size_t n = 0; n < kMaxN; ++n) {
      const auto h = detail::ngrams(hyps[i], n + 1);
      const auto& r = ref_grams[i][n];
      double dot = 0.0, nh = 0.0, nr = 0.0;
      for (const auto& [g, cnt] : h) {
        const double w = cnt * idf(n, g);
        nh += w * w;
        if (auto it = r.find(g); it != r.end()) dot += w * it->second * idf(n, g);
      }
      for (const auto& [g, cnt] : r) {
        const double w = cnt * idf(n, g);
        nr += w * w;
      }
      if (nh > 0.0 && nr > 0.0) item += dot / (std::sqrt(nh) * std::sqrt(nr));
    }
    total += item / kMaxN;
  }
  return total / static_cast<double>(hyps.size());
}

// Mean average precision of attribute mentions. For each attribute with at
// least one ground-truth item, the "retrieved" items are those whose caption
// contains the phrase, in item order; AP = (1/#positives) * sum of
// precision@k over retrieved positives. Averaged over those attributes.
inline double attribute_map(const std::vector<TokenSeq>& generated,
                            const std::vector<std::vector<int>>& truth,
                            const AttributeVocab& attrs) {
  if (generated.size() != truth.size())
    throw std::invalid_argument("attribute_map: " + std::to_string(generated.size()) +
                                " captions for " + std::to_string(truth.size()) + " label sets");
  double sum_ap = 0.0;
  int counted = 0;
  for (int a = 0; a < attrs.size(); ++a) {
    int positives = 0;
    for (const auto& t : truth)
      if (std::find(t.begin(), t.end(), a) != t.end()) ++positives;
    if (positives == 0) continue;
    int retrieved = 0, hits = 0;
    double ap = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
      if (!contains_phrase(generated[i], attrs.phrase(a))) continue;
      ++retrieved;
      if (std::find(truth[i].begin(), truth[i].end(), a) != truth[i].end()) {
        ++hits;
        ap += static_cast<double>(hits) / retrieved;
      }
    }
    sum_ap += ap / positives;
    ++counted;
  }
  return counted ? sum_ap / counted : 0.0;
}

// Fraction of captions the frozen classifier assigns to their target category.
inline double category_acc(const std::vector<IdSeq>& generated, const std::vector<int>& targets,
                           const TextCnnClassifier& classifier) {
  if (generated.size() != targets.size())
    throw std::invalid_argument("category_acc: size mismatch");
  if (generated.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < generated.size(); ++i)
    if (classifier.predict(generated[i]) == targets[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(generated.size());
}

struct EvalReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double map = 0.0;
  double acc = 0.0;
  bool has_acc = false;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"bleu4", r.bleu4}, {"rouge_l", r.rouge_l}, {"cider", r.cider},
       {"cider_x100", r.cider * 100.0}, {"map", r.map}};
  if (r.has_acc) j["acc"] = r.acc;
  else j["acc"] = nullptr;
}

}  // namespace srfc
