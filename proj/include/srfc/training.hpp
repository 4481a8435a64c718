#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfc/dataset.hpp"
#include "srfc/metrics.hpp"
#include "srfc/models.hpp"
#include "srfc/params.hpp"
#include "srfc/rewards.hpp"
#include "srfc/rng.hpp"
#include "srfc/tensor.hpp"

namespace srfc {

// ---- losses ----------------------------------------------------------------

// -sum_t log p(y_t | y_<t, z, X) over every target after BOS, EOS included.
inline Tensor mle_loss(Tape& tape, const Captioner& model, const EncodedImage& enc,
                       const Tensor& z, const IdSeq& ids) {
  if (ids.size() < 2) throw std::invalid_argument("mle_loss: caption needs at least one target");
  const Tensor lp = model.teacher_forced_log_probs(tape, enc, z, ids);
  std::vector<Tensor> picked;
  picked.reserve(ids.size() - 1);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t)
    picked.push_back(tape.pick(lp, t, static_cast<std::size_t>(ids[t + 1])));
  Tensor total = picked[0];
  for (std::size_t t = 1; t < picked.size(); ++t) total = tape.add(total, picked[t]);
  return tape.neg(total);
}

inline Tensor mle_loss(Tape& tape, const Captioner& model, const Tensor& features,
                       const IdSeq& ids) {
  const EncodedImage enc = model.encode(tape, features);
  const Tensor z = model.predict_attributes(tape, features).z;
  return mle_loss(tape, model, enc, z, ids);
}

// Mean per-attribute binary cross-entropy, probabilities clipped to
// [1e-12, 1 - 1e-12].
inline Tensor attribute_loss(Tape& tape, const Tensor& probs, std::span<const double> labels) {
  for (double y : labels)
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("attribute_loss: labels must be 0 or 1");
  return tape.binary_cross_entropy(probs, labels, 1e-12);
}

inline std::vector<double> attribute_labels(const Item& item, int n_attributes) {
  std::vector<double> y(static_cast<std::size_t>(std::max(n_attributes, 1)), 0.0);
  for (int a : item.attributes)
    if (a >= 0 && a < n_attributes) y[static_cast<std::size_t>(a)] = 1.0;
  return y;
}

// ---- REINFORCE ---------------------------------------------------------------

// How the baseline-corrected sum is normalized. With b the mean of the same H
// rewards, the 1/H form has expectation (H-1)/H times the true gradient; the
// 1/(H-1) form (identical to a leave-one-out baseline) is unbiased.
enum class BaselineNormalization { kUnbiased, kSampleMean };

inline const char* to_string(BaselineNormalization b) {
  return b == BaselineNormalization::kUnbiased ? "unbiased" : "sample_mean";
}

inline BaselineNormalization baseline_normalization_from(const std::string& s) {
  if (s == "unbiased") return BaselineNormalization::kUnbiased;
  if (s == "sample_mean") return BaselineNormalization::kSampleMean;
  throw std::invalid_argument("unknown baseline normalization '" + s + "'");
}

struct AdvantageSet {
  double baseline = 0.0;
  std::vector<double> advantages;  // r_j - b
  double scale = 0.0;              // 1/H or 1/(H-1)
};

inline AdvantageSet compute_advantages(const std::vector<double>& rewards,
                                       BaselineNormalization norm) {
  const std::size_t h = rewards.size();
  if (h < 2) throw std::invalid_argument("REINFORCE: need H >= 2 samples for the baseline");
  AdvantageSet out;
  for (double r : rewards) out.baseline += r;
  out.baseline /= static_cast<double>(h);
  for (double r : rewards) out.advantages.push_back(r - out.baseline);
  out.scale = 1.0 / static_cast<double>(norm == BaselineNormalization::kUnbiased ? h - 1 : h);
  return out;
}

// Surrogate whose gradient is the estimator
//   -scale * sum_j (r_j - b) * grad log p(Y'_j),
// with the advantages held constant. `log_probs[j]` are the per-token
// log-probability scalars of sample j, all on `tape`.
inline Tensor reinforce_surrogate(Tape& tape, const std::vector<std::vector<Tensor>>& log_probs,
                                  const AdvantageSet& adv) {
  if (log_probs.size() != adv.advantages.size())
    throw std::invalid_argument("reinforce_surrogate: one advantage per sample required");
  std::optional<Tensor> total;
  for (std::size_t j = 0; j < log_probs.size(); ++j) {
    if (log_probs[j].empty()) continue;
    Tensor seq = log_probs[j][0];
    for (std::size_t t = 1; t < log_probs[j].size(); ++t) seq = tape.add(seq, log_probs[j][t]);
    Tensor term = tape.scale(seq, -adv.scale * adv.advantages[j]);
    total = total ? tape.add(*total, term) : term;
  }
  return total ? *total : Tensor::scalar(0.0);
}

struct ReinforceResult {
  Tensor surrogate;
  std::vector<SampledSequence> samples;
  std::vector<RewardBreakdown> rewards;
  AdvantageSet advantages;

  double mean_reward() const {
    double s = 0.0;
    for (const auto& r : rewards) s += r.r;
    return rewards.empty() ? 0.0 : s / static_cast<double>(rewards.size());
  }
};

// Draws H captions for one item on the caller's tape, scores them, and
// returns the surrogate for backward().
inline ReinforceResult reinforce(Tape& tape, const Captioner& model, const EncodedImage& enc,
                                 const Tensor& z, const Item& item, const SemanticReward& reward,
                                 int samples, int max_len, Rng& rng,
                                 BaselineNormalization norm = BaselineNormalization::kUnbiased) {
  ReinforceResult out;
  std::vector<double> r;
  std::vector<std::vector<Tensor>> lps;
  for (int j = 0; j < samples; ++j) {
    SampledSequence s = model.sample_decode(tape, enc, z, max_len, rng);
    RewardBreakdown rb = reward.score(s.words(), item.caption, item.category);
    r.push_back(rb.r);
    lps.push_back(s.step_log_prob_nodes);
    out.rewards.push_back(rb);
    out.samples.push_back(std::move(s));
  }
  out.advantages = compute_advantages(r, norm);
  out.surrogate = reinforce_surrogate(tape, lps, out.advantages);
  return out;
}

// ---- configuration ----------------------------------------------------------

struct TrainConfig {
  // Model dimensions (full scale: 512/512).
  int embed_dim = 64;
  int hidden_dim = 64;
  int attention_dim = 64;
  int attr_hidden = 64;
  // Objective weights: L = L_MLE + lambda_rl * L_r + lambda_attr * L_a.
  double lambda_rl = 1.0;
  double lambda_attr = 1.0;
  RewardConfig reward;
  int samples = 5;  // H
  BaselineNormalization baseline = BaselineNormalization::kUnbiased;
  // Optimizer and schedule.
  double lr = 1e-4;
  double anneal_factor = 0.9;
  int anneal_every = 2;
  double clip_norm = 0.0;
  int batch_size = 16;
  int phase1_max_epochs = 30;
  int patience = 3;
  double min_improvement = 0.0;  // val L_MLE must drop by more than this to count
  int phase2_max_epochs = 10;
  int phase2_patience = 3;
  int max_len = 25;
  std::uint64_t seed = 1;
  bool checkpoint_every_epoch = true;
  bool run_phase2 = true;
  std::string classifier;  // checkpoint path; pretrained on the fly when empty
  std::uint64_t init_seed = 1;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"embed_dim", c.embed_dim},
       {"hidden_dim", c.hidden_dim},
       {"attention_dim", c.attention_dim},
       {"attr_hidden", c.attr_hidden},
       {"lambda_rl", c.lambda_rl},
       {"lambda_attr", c.lambda_attr},
       {"alpha_als", c.reward.alpha_als},
       {"alpha_sls", c.reward.alpha_sls},
       {"samples", c.samples},
       {"baseline", to_string(c.baseline)},
       {"lr", c.lr},
       {"anneal_factor", c.anneal_factor},
       {"anneal_every", c.anneal_every},
       {"clip_norm", c.clip_norm},
       {"batch_size", c.batch_size},
       {"phase1_max_epochs", c.phase1_max_epochs},
       {"patience", c.patience},
       {"min_improvement", c.min_improvement},
       {"phase2_max_epochs", c.phase2_max_epochs},
       {"phase2_patience", c.phase2_patience},
       {"max_len", c.max_len},
       {"seed", c.seed},
       {"checkpoint_every_epoch", c.checkpoint_every_epoch},
       {"run_phase2", c.run_phase2},
       {"classifier", c.classifier},
       {"init_seed", c.init_seed}};
}

// Unknown keys are rejected so a typo in a run config fails loudly.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {
      "embed_dim",  "hidden_dim",        "attention_dim", "attr_hidden",      "lambda_rl",
      "lambda_attr", "alpha_als",        "alpha_sls",     "samples",          "baseline",
      "lr",         "anneal_factor",     "anneal_every",  "clip_norm",        "batch_size",
      "phase1_max_epochs", "patience",   "min_improvement", "phase2_max_epochs", "phase2_patience",
      "max_len",    "seed",              "checkpoint_every_epoch", "run_phase2", "classifier",
      "init_seed"};
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("train config: unknown field '" + k + "'");
  auto get = [&j](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(std::string("train config: field '") + key + "' has the wrong type");
    }
  };
  get("embed_dim", c.embed_dim);
  get("hidden_dim", c.hidden_dim);
  get("attention_dim", c.attention_dim);
  get("attr_hidden", c.attr_hidden);
  get("lambda_rl", c.lambda_rl);
  get("lambda_attr", c.lambda_attr);
  get("alpha_als", c.reward.alpha_als);
  get("alpha_sls", c.reward.alpha_sls);
  get("samples", c.samples);
  if (j.contains("baseline")) c.baseline = baseline_normalization_from(j.at("baseline").get<std::string>());
  get("lr", c.lr);
  get("anneal_factor", c.anneal_factor);
  get("anneal_every", c.anneal_every);
  get("clip_norm", c.clip_norm);
  get("batch_size", c.batch_size);
  get("phase1_max_epochs", c.phase1_max_epochs);
  get("patience", c.patience);
  get("min_improvement", c.min_improvement);
  get("phase2_max_epochs", c.phase2_max_epochs);
  get("phase2_patience", c.phase2_patience);
  get("max_len", c.max_len);
  get("seed", c.seed);
  get("checkpoint_every_epoch", c.checkpoint_every_epoch);
  get("run_phase2", c.run_phase2);
  get("classifier", c.classifier);
  get("init_seed", c.init_seed);
}

inline void validate(const TrainConfig& c) {
  if (c.samples < 2) throw std::invalid_argument("train config: samples (H) must be >= 2");
  if (c.lambda_rl < 0.0 || c.lambda_attr < 0.0)
    throw std::invalid_argument("train config: lambda weights must be nonnegative");
  c.reward.validate();
  if (c.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (c.max_len < 1) throw std::invalid_argument("train config: max_len must be >= 1");
  if (c.anneal_every < 1) throw std::invalid_argument("train config: anneal_every must be >= 1");
  if (c.lr < 0.0) throw std::invalid_argument("train config: lr must be nonnegative");
}

// Learning rate for a 0-based global epoch index.
inline double annealed_lr(double base_lr, double factor, int every, int epoch) {
  return base_lr * std::pow(factor, static_cast<double>(epoch / every));
}

inline CaptionerConfig captioner_config(const TrainConfig& t, const Dataset& ds) {
  CaptionerConfig c;
  c.vocab_size = ds.vocab.size();
  c.feature_dim = static_cast<int>(ds.items.at(0).features.dim);
  c.n_attributes = ds.attributes.size();
  c.embed_dim = t.embed_dim;
  c.hidden_dim = t.hidden_dim;
  c.attention_dim = t.attention_dim;
  c.attr_hidden = t.attr_hidden;
  c.init_seed = t.init_seed;
  return c;
}

inline IdSeq caption_words(const Item& item, const Vocab& vocab) {
  IdSeq ids;
  ids.reserve(item.caption.size());
  for (const auto& t : item.caption) ids.push_back(vocab.id(t));
  return ids;
}

// ---- classifier pretraining --------------------------------------------------

struct ClassifierTrainConfig {
  int embed_dim = 32;
  int filters = 64;
  std::vector<int> windows = {3, 4, 5};
  double dropout = 0.3;
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 8;
  std::uint64_t seed = 3;
};

inline void to_json(nlohmann::json& j, const ClassifierTrainConfig& c) {
  j = {{"embed_dim", c.embed_dim}, {"filters", c.filters}, {"windows", c.windows},
       {"dropout", c.dropout},     {"lr", c.lr},           {"batch_size", c.batch_size},
       {"epochs", c.epochs},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ClassifierTrainConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("classifier config: expected a JSON object");
  nlohmann::json defaults = c;
  for (const auto& [k, v] : j.items()) {
    if (!defaults.contains(k)) throw std::invalid_argument("classifier config: unknown field '" + k + "'");
    if (v.type() != defaults[k].type() && !(v.is_number() && defaults[k].is_number()))
      throw std::invalid_argument("classifier config: field '" + k + "' has the wrong type");
  }
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.filters = j.value("filters", c.filters);
  c.windows = j.value("windows", c.windows);
  c.dropout = j.value("dropout", c.dropout);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
}

struct ClassifierReport {
  std::vector<double> epoch_loss;
  std::vector<double> val_acc;
  double first_batch_loss = 0.0;
  double test_acc = 0.0;
};

inline double classifier_accuracy(const TextCnnClassifier& clf, const std::vector<const Item*>& items,
                                  const Vocab& vocab) {
  if (items.empty()) return 0.0;
  std::size_t ok = 0;
  for (const Item* it : items)
    if (clf.predict(caption_words(*it, vocab)) == it->category) ++ok;
  return static_cast<double>(ok) / static_cast<double>(items.size());
}

// Cross-entropy training of the text CNN on ground-truth captions; keeps the
// epoch with the best validation accuracy.
inline TextCnnClassifier pretrain_classifier(const Dataset& ds, const ClassifierTrainConfig& cfg,
                                             ClassifierReport* report = nullptr) {
  if (ds.categories.size() < 2)
    throw std::invalid_argument("pretrain_classifier: need at least 2 categories");
  const auto train = ds.train();
  if (train.empty()) throw std::invalid_argument("pretrain_classifier: empty training split");
  const auto val = ds.val();
  ClassifierConfig cc;
  cc.vocab_size = ds.vocab.size();
  cc.n_categories = ds.categories.size();
  cc.embed_dim = cfg.embed_dim;
  cc.filters = cfg.filters;
  cc.windows = cfg.windows;
  cc.dropout = cfg.dropout;
  cc.init_seed = cfg.seed;
  TextCnnClassifier clf(cc);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam adam(clf.params(), ac);
  ClassifierReport rep;
  std::vector<double> best = clf.params().snapshot();
  double best_acc = -1.0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, {static_cast<std::uint64_t>(epoch), 17}));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      clf.params().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Item& item = *train[order[k]];
        Tape tape;
        const Tensor logits = clf.logits(tape, caption_words(item, ds.vocab), true,
                                         mix_seed(cfg.seed, {static_cast<std::uint64_t>(epoch), k}));
        const Tensor nll =
            tape.neg(tape.pick(tape.log_softmax(logits, 1), 0, static_cast<std::size_t>(item.category)));
        batch_loss += nll.item();
        tape.backward(tape.scale(nll, 1.0 / static_cast<double>(end - start)));
      }
      if (epoch == 0 && start == 0) rep.first_batch_loss = batch_loss / static_cast<double>(end - start);
      loss_sum += batch_loss;
      adam.step(clf.params());
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    const double acc = classifier_accuracy(clf, val.empty() ? train : val, ds.vocab);
    rep.val_acc.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = clf.params().snapshot();
    }
  }
  clf.params().restore(best);
  rep.test_acc = classifier_accuracy(clf, ds.test(), ds.vocab);
  if (report) *report = rep;
  return clf;
}

inline void save_classifier(const TextCnnClassifier& clf, const Dataset& ds, const std::string& path) {
  nlohmann::json meta = clf.meta();
  meta["vocab"] = ds.vocab.words();
  meta["categories"] = ds.categories.names();
  save_checkpoint(clf.params(), path, meta);
}

struct LoadedClassifier {
  TextCnnClassifier model;
  Vocab vocab;
  std::vector<std::string> categories;
};

inline LoadedClassifier load_classifier(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (ck.meta.value("model", "") != "text_cnn")
    throw std::runtime_error(path + ": not a text-CNN classifier checkpoint");
  LoadedClassifier out{TextCnnClassifier(ck.meta.at("config").get<ClassifierConfig>()),
                       Vocab::from_ordered(ck.meta.at("vocab").get<TokenSeq>()),
                       ck.meta.at("categories").get<std::vector<std::string>>()};
  load_checkpoint(out.model.params(), path);
  return out;
}

// ---- held-out evaluation -------------------------------------------------------

struct HeldOutReport {
  double mle = 0.0;  // mean per-item L_MLE
  double reward = 0.0;
  double r_als = 0.0;
  double r_sls = 0.0;
  EvalReport metrics;
  std::vector<IdSeq> generated;
};

inline void to_json(nlohmann::json& j, const HeldOutReport& r) {
  j = {{"mle", r.mle}, {"reward", r.reward}, {"r_als", r.r_als}, {"r_sls", r.r_sls},
       {"metrics", r.metrics}};
}

inline double mean_mle(const Captioner& model, const std::vector<const Item*>& items,
                       const Vocab& vocab) {
  if (items.empty()) return 0.0;
  double s = 0.0;
  for (const Item* it : items) {
    Tape tape(false);
    s += mle_loss(tape, model, it->features.tensor(), encode(it->caption, vocab)).item();
  }
  return s / static_cast<double>(items.size());
}

// Greedy captions for `items`, scored by reward and every corpus metric.
inline HeldOutReport evaluate_captioner(const Captioner& model, const std::vector<const Item*>& items,
                                        const Dataset& ds, const TextCnnClassifier& clf,
                                        const RewardConfig& rcfg, int max_len, bool with_mle = true) {
  HeldOutReport rep;
  if (items.empty()) return rep;
  const SemanticReward scorer(ds.vocab, ds.attributes, clf, rcfg);
  std::vector<TokenSeq> hyps, refs;
  std::vector<std::vector<int>> truth;
  std::vector<int> targets;
  for (const Item* it : items) {
    IdSeq gen = model.greedy_decode(it->features.tensor(), max_len);
    const RewardBreakdown rb = scorer.score(gen, it->caption, it->category);
    rep.reward += rb.r;
    rep.r_als += rb.als.r_als;
    rep.r_sls += rb.r_sls;
    hyps.push_back(decode(gen, ds.vocab));
    refs.push_back(it->caption);
    truth.push_back(it->attributes);
    targets.push_back(it->category);
    rep.generated.push_back(std::move(gen));
  }
  const double n = static_cast<double>(items.size());
  rep.reward /= n;
  rep.r_als /= n;
  rep.r_sls /= n;
  rep.metrics.bleu4 = bleu4(hyps, refs);
  rep.metrics.rouge_l = rouge_l(hyps, refs);
  rep.metrics.cider = items.size() >= 2 ? cider(hyps, refs) : 0.0;
  rep.metrics.map = attribute_map(hyps, truth, ds.attributes);
  rep.metrics.acc = category_acc(rep.generated, targets, clf);
  rep.metrics.has_acc = true;
  if (with_mle) rep.mle = mean_mle(model, items, ds.vocab);
  return rep;
}

// ---- two-phase trainer ---------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  int phase = 1;
  double lr = 0.0;
  double l_mle = 0.0;
  double l_a = 0.0;
  double l_r = 0.0;
  double train_r_als = 0.0;
  double train_r_sls = 0.0;
  HeldOutReport val;
};

inline std::string metrics_csv_header() {
  return "epoch,phase,lr,L_MLE,L_a,L_r,mean_r_als,mean_r_sls,val_mle,val_reward,val_r_als,"
         "val_r_sls,val_bleu4,val_rouge_l,val_cider,val_map,val_acc";
}

inline std::string metrics_csv_row(const EpochLog& e) {
  std::ostringstream os;
  os.precision(17);
  os << e.epoch << ',' << e.phase << ',' << e.lr << ',' << e.l_mle << ',' << e.l_a << ','
     << e.l_r << ',' << e.train_r_als << ',' << e.train_r_sls << ',' << e.val.mle << ','
     << e.val.reward << ',' << e.val.r_als << ',' << e.val.r_sls << ',' << e.val.metrics.bleu4
     << ',' << e.val.metrics.rouge_l << ',' << e.val.metrics.cider << ',' << e.val.metrics.map
     << ',' << e.val.metrics.acc;
  return os.str();
}

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<double> phase1_params;  // warm-up checkpoint (best val L_MLE)
  int phase1_epochs = 0;
  int phase2_epochs = 0;
  std::vector<std::string> checkpoints;
};

// Warm-up on L_MLE + lambda_attr * L_a until validation L_MLE stalls for
// `patience` epochs, then joint training on the full objective, keeping the
// epoch with the best validation reward. Deterministic given config.seed.
class Trainer {
 public:
  Trainer(Captioner& model, const Dataset& ds, const TextCnnClassifier& clf, TrainConfig cfg)
      : model_(model), ds_(ds), clf_(clf), cfg_(std::move(cfg)),
        scorer_(ds.vocab, ds.attributes, clf, cfg_.reward) {
    validate(cfg_);
    train_ = ds_.train();
    val_ = ds_.val();
    if (train_.empty()) throw std::invalid_argument("train: empty training split");
    if (val_.empty()) val_ = train_;
  }

  // Optional sinks.
  std::function<void(const EpochLog&)> on_epoch;
  std::filesystem::path checkpoint_dir;

  // One epoch of parameter updates; phase 2 adds the REINFORCE term. The lr
  // schedule runs on lr_epoch (defaults to global_epoch); seeds and logs use
  // global_epoch.
  EpochLog run_epoch(int phase, int global_epoch, Adam& adam, int lr_epoch = -1) {
    EpochLog e;
    e.epoch = global_epoch;
    e.phase = phase;
    e.lr = annealed_lr(cfg_.lr, cfg_.anneal_factor, cfg_.anneal_every, lr_epoch < 0 ? global_epoch : lr_epoch);
    adam.config().lr = e.lr;
    adam.config().clip_norm = cfg_.clip_norm;
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(cfg_.seed, {static_cast<std::uint64_t>(global_epoch), 1}));
    shuffle_rng.shuffle(order);
    const int n_attr = ds_.attributes.size();
    std::size_t rl_items = 0;
    const auto batch = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      model_.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const Item& item = *train_[idx];
        Tape tape;
        const Tensor x = item.features.tensor();
        const EncodedImage enc = model_.encode(tape, x);
        const AttributeOutput attr = model_.predict_attributes(tape, x);
        const Tensor l_mle = mle_loss(tape, model_, enc, attr.z, encode(item.caption, ds_.vocab));
        const auto labels = attribute_labels(item, n_attr);
        const Tensor l_a = attribute_loss(tape, attr.probs, labels);
        Tensor loss = tape.add(l_mle, tape.scale(l_a, cfg_.lambda_attr));
        e.l_mle += l_mle.item();
        e.l_a += l_a.item();
        if (phase == 2) {
          Rng rng(mix_seed(cfg_.seed, {static_cast<std::uint64_t>(global_epoch), idx, 2}));
          ReinforceResult rl = reinforce(tape, model_, enc, attr.z, item, scorer_, cfg_.samples,
                                         cfg_.max_len, rng, cfg_.baseline);
          e.l_r -= rl.mean_reward();
          for (const auto& rb : rl.rewards) {
            e.train_r_als += rb.als.r_als;
            e.train_r_sls += rb.r_sls;
          }
          ++rl_items;
          if (rl.surrogate.requires_grad())
            loss = tape.add(loss, tape.scale(rl.surrogate, cfg_.lambda_rl));
        }
        tape.backward(tape.scale(loss, inv));
      }
      adam.step(model_.params());
    }
    const double n = static_cast<double>(train_.size());
    e.l_mle /= n;
    e.l_a /= n;
    if (rl_items) {
      e.l_r /= static_cast<double>(rl_items);
      const double ns = static_cast<double>(rl_items * static_cast<std::size_t>(cfg_.samples));
      e.train_r_als /= ns;
      e.train_r_sls /= ns;
    }
    e.val = evaluate_captioner(model_, val_, ds_, clf_, cfg_.reward, cfg_.max_len);
    return e;
  }

  TrainResult run() {
    TrainResult res = run_phase1();
    if (cfg_.run_phase2) run_phase2(res);
    save_named("final.ckpt", res);
    return res;
  }

  // Warm-up only; leaves the best-val-L_MLE parameters in the model.
  TrainResult run_phase1() {
    TrainResult res;
    Adam adam(model_.params());
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    std::vector<double> best_params = model_.params().snapshot();
    for (int k = 0; k < cfg_.phase1_max_epochs; ++k) {
      EpochLog e = run_epoch(1, k, adam);
      finish_epoch(res, e);
      ++res.phase1_epochs;
      if (e.val.mle < best - cfg_.min_improvement) {
        best = e.val.mle;
        best_params = model_.params().snapshot();
        stale = 0;
      } else if (++stale >= cfg_.patience) {
        break;
      }
    }
    model_.params().restore(best_params);
    res.phase1_params = best_params;
    save_named("phase1.ckpt", res);
    return res;
  }

  // Joint training from the model's current parameters. Epochs are numbered
  // after res.phase1_epochs; the optimizer and the lr schedule start over.
  // Keeps the epoch with the best validation reward.
  void run_phase2(TrainResult& res) {
    if (cfg_.phase2_max_epochs <= 0) return;
    Adam adam(model_.params());
    double best = evaluate_captioner(model_, val_, ds_, clf_, cfg_.reward, cfg_.max_len, false).reward;
    std::vector<double> best_params = model_.params().snapshot();
    int stale = 0;
    for (int k = 0; k < cfg_.phase2_max_epochs; ++k) {
      EpochLog e = run_epoch(2, res.phase1_epochs + k, adam, k);
      finish_epoch(res, e);
      ++res.phase2_epochs;
      if (e.val.reward > best) {
        best = e.val.reward;
        best_params = model_.params().snapshot();
        stale = 0;
      } else if (++stale >= cfg_.phase2_patience) {
        break;
      }
    }
    model_.params().restore(best_params);
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  void finish_epoch(TrainResult& res, const EpochLog& e) {
    res.log.push_back(e);
    if (!checkpoint_dir.empty() && cfg_.checkpoint_every_epoch) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", e.epoch);
      save_named(name, res);
    }
    if (on_epoch) on_epoch(e);
  }

  void save_named(const std::string& name, TrainResult& res) {
    if (checkpoint_dir.empty()) return;
    std::filesystem::create_directories(checkpoint_dir);
    const auto path = (checkpoint_dir / name).string();
    save_checkpoint(model_.params(), path, model_.meta());
    res.checkpoints.push_back(path);
  }

  Captioner& model_;
  const Dataset& ds_;
  const TextCnnClassifier& clf_;
  TrainConfig cfg_;
  SemanticReward scorer_;
  std::vector<const Item*> train_, val_;
};

}  // namespace srfc
