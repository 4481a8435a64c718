#pragma once

// Finite-difference cases shared by the tensor unit tests and the acceptance
// run: every differentiable op, then the composed losses.

#include <functional>
#include <string>
#include <vector>

#include "oracles/oracles.hpp"
#include "srfc/models.hpp"
#include "srfc/rng.hpp"
#include "srfc/tensor.hpp"
#include "srfc/training.hpp"

namespace gradcases {

using srfc::Rng;
using srfc::Tape;
using srfc::Tensor;

struct Case {
  std::string name;
  std::function<oracle::GradCheck()> run;
};

inline Tensor random_tensor(Rng& rng, srfc::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(srfc::numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, for ops with a kink there.
inline Tensor away_from_zero(Rng& rng, srfc::Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (auto& x : t.data()) x = (x < 0 ? -0.1 : 0.1) + 0.9 * x;
  return t;
}

// sum(op(x) * R) with a fixed random R, so every output element matters.
inline Tensor weighted(Tape& tape, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return tape.sum(tape.mul(y, Tensor(y.shape(), w)));
}

inline std::vector<Case> op_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  auto add = [&](std::string name, auto make) { cases.push_back({std::move(name), make}); };
  const std::uint64_t s = seed;

  add("matmul", [s] {
    Rng rng(s + 1);
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.matmul(a, b), s); });
  });
  add("add", [s] {
    Rng rng(s + 2);
    Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 3});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.add(a, b), s); });
  });
  add("add_bias_row", [s] {
    Rng rng(s + 3);
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {1, 4});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.add(a, b), s); });
  });
  add("sub", [s] {
    Rng rng(s + 4);
    Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 3});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.sub(a, b), s); });
  });
  add("mul", [s] {
    Rng rng(s + 5);
    Tensor a = random_tensor(rng, {3, 3}), b = random_tensor(rng, {3, 3});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.mul(a, b), s); });
  });
  add("scale_neg", [s] {
    Rng rng(s + 6);
    Tensor a = random_tensor(rng, {2, 4});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.neg(t.scale(a, 2.5)), s); });
  });
  add("transpose", [s] {
    Rng rng(s + 7);
    Tensor a = random_tensor(rng, {2, 5});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.transpose(a), s); });
  });
  add("concat_rows", [s] {
    Rng rng(s + 8);
    Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {1, 3});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.concat({a, b, a}, 0), s); });
  });
  add("concat_cols", [s] {
    Rng rng(s + 9);
    Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 1});
    return oracle::check_gradients({a, b}, [=](Tape& t) { return weighted(t, t.concat({a, b}, 1), s); });
  });
  add("slice_cols", [s] {
    Rng rng(s + 10);
    Tensor a = random_tensor(rng, {3, 6});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.slice_cols(a, 1, 4), s); });
  });
  add("pick", [s] {
    Rng rng(s + 11);
    Tensor a = random_tensor(rng, {3, 4});
    return oracle::check_gradients({a}, [=](Tape& t) { return t.add(t.pick(a, 1, 2), t.scale(t.pick(a, 2, 0), 3.0)); });
  });
  add("sum_mean", [s] {
    Rng rng(s + 12);
    Tensor a = random_tensor(rng, {3, 4});
    return oracle::check_gradients({a}, [=](Tape& t) { return t.add(t.sum(t.mul(a, a)), t.mean(a)); });
  });
  add("mean_rows", [s] {
    Rng rng(s + 13);
    Tensor a = random_tensor(rng, {4, 3});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.mean_rows(a), s); });
  });
  add("embedding_gather", [s] {
    Rng rng(s + 14);
    Tensor table = random_tensor(rng, {5, 3});
    return oracle::check_gradients({table}, [=](Tape& t) {
      const int ids[] = {4, 0, 4, 2};
      return weighted(t, t.embedding_gather(table, ids), s);
    });
  });
  add("sigmoid", [s] {
    Rng rng(s + 15);
    Tensor a = random_tensor(rng, {2, 4}, -3, 3);
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.sigmoid(a), s); });
  });
  add("tanh", [s] {
    Rng rng(s + 16);
    Tensor a = random_tensor(rng, {2, 4}, -2, 2);
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.tanh(a), s); });
  });
  add("relu", [s] {
    Rng rng(s + 17);
    Tensor a = away_from_zero(rng, {3, 4});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.relu(a), s); });
  });
  add("exp", [s] {
    Rng rng(s + 18);
    Tensor a = random_tensor(rng, {2, 3});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.exp(a), s); });
  });
  add("log", [s] {
    Rng rng(s + 19);
    Tensor a = random_tensor(rng, {2, 3}, 0.2, 3.0);
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.log(a), s); });
  });
  for (int axis : {0, 1}) {
    add("softmax_axis" + std::to_string(axis), [s, axis] {
      Rng rng(s + 20 + static_cast<std::uint64_t>(axis));
      Tensor a = random_tensor(rng, {3, 4}, -2, 2);
      return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.softmax(a, axis), s); });
    });
    add("log_softmax_axis" + std::to_string(axis), [s, axis] {
      Rng rng(s + 22 + static_cast<std::uint64_t>(axis));
      Tensor a = random_tensor(rng, {3, 4}, -2, 2);
      return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.log_softmax(a, axis), s); });
    });
  }
  add("conv1d", [s] {
    Rng rng(s + 24);
    Tensor x = random_tensor(rng, {6, 3}), w = random_tensor(rng, {2 * 3, 4}), b = random_tensor(rng, {1, 4});
    return oracle::check_gradients({x, w, b}, [=](Tape& t) { return weighted(t, t.conv1d(x, w, b, 2), s); });
  });
  add("max_over_time", [s] {
    Rng rng(s + 25);
    Tensor a = random_tensor(rng, {5, 4});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.max_over_time(a), s); });
  });
  add("dropout", [s] {
    Rng rng(s + 26);
    Tensor a = random_tensor(rng, {3, 5});
    return oracle::check_gradients({a}, [=](Tape& t) { return weighted(t, t.dropout(a, 0.4, true, 77), s); });
  });
  add("binary_cross_entropy", [s] {
    Rng rng(s + 27);
    Tensor p = random_tensor(rng, {1, 6}, 0.05, 0.95);
    const std::vector<double> y = {1, 0, 0, 1, 1, 0};
    return oracle::check_gradients({p}, [=](Tape& t) { return t.binary_cross_entropy(p, y); });
  });
  add("fan_out", [s] {
    Rng rng(s + 28);
    Tensor a = random_tensor(rng, {2, 2}), b = random_tensor(rng, {2, 2});
    return oracle::check_gradients({a, b}, [=](Tape& t) {
      const Tensor c = t.matmul(a, b);
      return weighted(t, t.add(t.mul(c, t.tanh(c)), t.matmul(c, a)), s);
    });
  });
  return cases;
}

// Tiny captioner over a 7-word vocabulary. Weights and features are large
// enough that the attention query matters: with small ones its gradient
// drops to 1e-7..1e-9, where h = 1e-5 differences are mostly roundoff.
inline srfc::Captioner toy_captioner(std::uint64_t seed) {
  srfc::CaptionerConfig c;
  c.vocab_size = 7;
  c.feature_dim = 3;
  c.n_attributes = 4;
  c.embed_dim = 3;
  c.hidden_dim = 3;
  c.attention_dim = 3;
  c.attr_hidden = 3;
  c.init_range = 1.5;
  c.init_seed = seed;
  return srfc::Captioner(c);
}

inline Tensor toy_features(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(9);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return Tensor({3, 3}, v);
}

inline std::vector<Case> loss_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  cases.push_back({"L_MLE", [seed] {
    srfc::Captioner m = toy_captioner(seed);
    const Tensor x1 = toy_features(seed + 1), x2 = toy_features(seed + 2);
    const srfc::IdSeq y1 = {srfc::Vocab::kBos, 4, 5, 6, srfc::Vocab::kEos};
    const srfc::IdSeq y2 = {srfc::Vocab::kBos, 6, 4, srfc::Vocab::kEos};
    return oracle::check_gradients(m.params().tensors(), [&](Tape& t) {
      return t.add(srfc::mle_loss(t, m, x1, y1), srfc::mle_loss(t, m, x2, y2));
    });
  }});
  cases.push_back({"L_a", [seed] {
    srfc::Captioner m = toy_captioner(seed + 10);
    const Tensor x = toy_features(seed + 3);
    const std::vector<double> y = {1, 0, 1, 0};
    return oracle::check_gradients(m.params().tensors(), [&](Tape& t) {
      return srfc::attribute_loss(t, m.predict_attributes(t, x).probs, y);
    });
  }});
  cases.push_back({"REINFORCE_surrogate", [seed] {
    srfc::Captioner m = toy_captioner(seed + 20);
    const Tensor x = toy_features(seed + 4);
    const std::vector<double> rewards = {0.9, 0.1, 0.4, 0.0, 0.6};
    std::vector<srfc::IdSeq> first;
    auto result = oracle::check_gradients(m.params().tensors(), [&](Tape& t) {
      const auto enc = m.encode(t, x);
      const Tensor z = m.predict_attributes(t, x).z;
      Rng rng(seed + 99);
      std::vector<std::vector<Tensor>> lps;
      std::vector<srfc::IdSeq> ids;
      for (std::size_t j = 0; j < rewards.size(); ++j) {
        auto s = m.sample_decode(t, enc, z, 6, rng);
        ids.push_back(s.ids);
        if (!t.recording()) {
          // Re-score on the non-recording tape to get the same quantity.
          lps.emplace_back();
          double lp = s.log_prob();
          lps.back().push_back(Tensor::scalar(lp));
        } else {
          lps.push_back(s.step_log_prob_nodes);
        }
      }
      if (first.empty()) first = ids;
      if (ids != first) throw std::runtime_error("perturbation changed a sampled sequence");
      const auto adv = srfc::compute_advantages(rewards, srfc::BaselineNormalization::kUnbiased);
      return srfc::reinforce_surrogate(t, lps, adv);
    });
    return result;
  }});
  cases.push_back({"classifier_xent", [seed] {
    srfc::ClassifierConfig c;
    c.vocab_size = 9;
    c.n_categories = 3;
    c.embed_dim = 3;
    c.filters = 2;
    c.windows = {2, 3};
    c.init_range = 0.5;
    c.init_seed = seed + 30;
    srfc::TextCnnClassifier clf(c);
    const srfc::IdSeq words = {4, 5, 8, 6, 7};
    return oracle::check_gradients(clf.params().tensors(), [&](Tape& t) {
      return t.neg(t.pick(t.log_softmax(clf.logits(t, words), 1), 0, 1));
    });
  }});
  return cases;
}

}  // namespace gradcases
