#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfc/dataset.hpp"
#include "srfc/params.hpp"
#include "srfc/rng.hpp"
#include "srfc/tensor.hpp"
#include "srfc/text.hpp"

namespace srfc {

struct CaptionerConfig {
  int vocab_size = 0;      // K
  int feature_dim = 0;     // D
  int n_attributes = 0;    // |AttributeVocab|
  int embed_dim = 64;      // word embedding size (512 at full scale)
  int hidden_dim = 64;     // LSTM hidden size (512 at full scale)
  int attention_dim = 64;  // additive-attention inner size
  int attr_hidden = 64;    // size of the attribute embedding z
  double init_range = 0.1;
  std::uint64_t init_seed = 1;
};

inline void to_json(nlohmann::json& j, const CaptionerConfig& c) {
  j = {{"vocab_size", c.vocab_size},   {"feature_dim", c.feature_dim},
       {"n_attributes", c.n_attributes}, {"embed_dim", c.embed_dim},
       {"hidden_dim", c.hidden_dim},   {"attention_dim", c.attention_dim},
       {"attr_hidden", c.attr_hidden}, {"init_range", c.init_range},
       {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, CaptionerConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.n_attributes = j.value("n_attributes", c.n_attributes);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.attr_hidden = j.value("attr_hidden", c.attr_hidden);
  c.init_range = j.value("init_range", c.init_range);
  c.init_seed = j.value("init_seed", c.init_seed);
}

struct DecoderState {
  Tensor h;  // [1 x hidden]
  Tensor c;  // [1 x hidden]
};

// Encoder output reused by every decoding step of one image.
struct EncodedImage {
  Tensor projected;   // [B x hidden], the x_i that attention mixes
  Tensor attn_keys;   // [B x attention_dim], projected @ W_x, computed once
  DecoderState init;  // (h0, c0) from the feature mean
};

struct AttributeOutput {
  Tensor z;      // [1 x attr_hidden], pre-output activation
  Tensor probs;  // [1 x n_attributes]
};

struct Attention {
  Tensor context;  // [1 x hidden]
  Tensor weights;  // [B x 1], sums to 1
};

struct StepOutput {
  DecoderState state;
  Tensor log_probs;  // [1 x K]
};

// Generated sequence plus the log-probability of every emitted token. Token
// ids exclude BOS; EOS is included when it was emitted.
struct SampledSequence {
  IdSeq ids;
  std::vector<double> step_log_probs;
  std::vector<Tensor> step_log_prob_nodes;  // scalars on the sampling tape
  bool ended_with_eos = false;

  IdSeq words() const {
    IdSeq w = ids;
    if (ended_with_eos && !w.empty()) w.pop_back();
    return w;
  }
  double log_prob() const {
    double s = 0.0;
    for (double v : step_log_probs) s += v;
    return s;
  }
};

// Attention encoder, LSTM decoder fed [y_{t-1}; x_t; z], and the visual
// attribute predictor that produces z. All three share one parameter set so a
// single optimizer trains them jointly.
class Captioner {
 public:
  explicit Captioner(CaptionerConfig cfg) : cfg_(cfg) {
    if (cfg.vocab_size <= Vocab::kNumReserved || cfg.feature_dim < 1 || cfg.n_attributes < 0)
      throw std::invalid_argument("Captioner: invalid dimensions");
    Rng rng(cfg.init_seed);
    const auto K = static_cast<std::size_t>(cfg.vocab_size);
    const auto D = static_cast<std::size_t>(cfg.feature_dim);
    const auto E = static_cast<std::size_t>(cfg.embed_dim);
    const auto H = static_cast<std::size_t>(cfg.hidden_dim);
    const auto A = static_cast<std::size_t>(cfg.attention_dim);
    const auto Z = static_cast<std::size_t>(cfg.attr_hidden);
    const auto NA = static_cast<std::size_t>(std::max(cfg.n_attributes, 1));
    const double r = cfg.init_range;
    params_.add_uniform("enc.proj.w", {D, H}, r, rng);
    params_.add("enc.proj.b", {1, H});
    params_.add_uniform("enc.init_h.w", {D, H}, r, rng);
    params_.add("enc.init_h.b", {1, H});
    params_.add_uniform("enc.init_c.w", {D, H}, r, rng);
    params_.add("enc.init_c.b", {1, H});
    params_.add_uniform("att.w_h", {H, A}, r, rng);
    params_.add_uniform("att.w_x", {H, A}, r, rng);
    params_.add("att.b", {1, A});
    params_.add_uniform("att.v", {A, 1}, r, rng);
    params_.add_uniform("dec.embed", {K, E}, r, rng);
    params_.add_uniform("dec.lstm.w_in", {E + H + Z, 4 * H}, r, rng);
    params_.add_uniform("dec.lstm.w_h", {H, 4 * H}, r, rng);
    params_.add("dec.lstm.b", {1, 4 * H});
    params_.add_uniform("dec.out.w", {H, K}, r, rng);
    params_.add("dec.out.b", {1, K});
    params_.add_uniform("attr.hidden.w", {D, Z}, r, rng);
    params_.add("attr.hidden.b", {1, Z});
    params_.add_uniform("attr.out.w", {Z, NA}, r, rng);
    params_.add("attr.out.b", {1, NA});
  }

  const CaptionerConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Tensor& p(const char* name) const { return params_.get(name); }

  EncodedImage encode(Tape& tape, const Tensor& features) const {
    check_features(features);
    EncodedImage out;
    out.projected = tape.add(tape.matmul(features, p("enc.proj.w")), p("enc.proj.b"));
    out.attn_keys = tape.matmul(out.projected, p("att.w_x"));
    const Tensor pooled = tape.mean_rows(features);
    out.init.h = tape.tanh(tape.add(tape.matmul(pooled, p("enc.init_h.w")), p("enc.init_h.b")));
    out.init.c = tape.tanh(tape.add(tape.matmul(pooled, p("enc.init_c.w")), p("enc.init_c.b")));
    return out;
  }

  // Additive attention: gamma = softmax_i(v . tanh(W_h h + W_x x_i + b)).
  Attention attend(Tape& tape, const EncodedImage& enc, const Tensor& h) const {
    const Tensor query = tape.add(tape.matmul(h, p("att.w_h")), p("att.b"));
    const Tensor hidden = tape.tanh(tape.add(enc.attn_keys, query));
    const Tensor scores = tape.matmul(hidden, p("att.v"));
    Attention a;
    a.weights = tape.softmax(scores, 0);
    a.context = tape.matmul(tape.transpose(a.weights), enc.projected);
    return a;
  }

  AttributeOutput predict_attributes(Tape& tape, const Tensor& features) const {
    check_features(features);
    const Tensor pooled = tape.mean_rows(features);
    AttributeOutput out;
    out.z = tape.tanh(tape.add(tape.matmul(pooled, p("attr.hidden.w")), p("attr.hidden.b")));
    out.probs = tape.sigmoid(tape.add(tape.matmul(out.z, p("attr.out.w")), p("attr.out.b")));
    return out;
  }

  // One LSTM step over [embed(prev); context; z], then log-softmax(f(h)).
  StepOutput decode_step(Tape& tape, int prev_id, const Tensor& context, const Tensor& z,
                         const DecoderState& state) const {
    return project(tape, lstm_step(tape, prev_id, context, z, state));
  }

  // attend + decode_step, the unit every decoder loop repeats.
  StepOutput step(Tape& tape, const EncodedImage& enc, int prev_id, const Tensor& z,
                  const DecoderState& state) const {
    const Attention att = attend(tape, enc, state.h);
    return decode_step(tape, prev_id, att.context, z, state);
  }

  // Teacher-forced log p(y_t | y_<t, z, X) for every target of `ids`
  // (ids[0] is BOS); returns [T x K] log-probabilities, row t predicting
  // ids[t+1]. Output projection is batched over time.
  Tensor teacher_forced_log_probs(Tape& tape, const EncodedImage& enc, const Tensor& z,
                                  const IdSeq& ids) const {
    if (ids.size() < 2) throw std::invalid_argument("teacher_forced_log_probs: need BOS + target");
    DecoderState state = enc.init;
    std::vector<Tensor> hs;
    hs.reserve(ids.size() - 1);
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      const Attention att = attend(tape, enc, state.h);
      state = lstm_step(tape, ids[t], att.context, z, state);
      hs.push_back(state.h);
    }
    const Tensor h_all = hs.size() == 1 ? hs[0] : tape.concat(hs, 0);
    return tape.log_softmax(tape.add(tape.matmul(h_all, p("dec.out.w")), p("dec.out.b")), 1);
  }

  // Argmax decoding (lowest id wins ties) until EOS or max_len tokens.
  // Returned ids exclude EOS.
  IdSeq greedy_decode(const Tensor& features, int max_len) const {
    if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    Tape tape(false);
    const EncodedImage enc = encode(tape, features);
    const Tensor z = predict_attributes(tape, features).z;
    DecoderState state = enc.init;
    IdSeq out;
    int prev = Vocab::kBos;
    for (int t = 0; t < max_len; ++t) {
      StepOutput s = step(tape, enc, prev, z, state);
      const auto lp = s.log_probs.values();
      const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      if (best == Vocab::kEos) break;
      out.push_back(best);
      prev = best;
      state = std::move(s.state);
    }
    return out;
  }

  // Multinomial sampling. When `tape` records, every emitted token's
  // log-probability stays on it for a later REINFORCE backward pass.
  SampledSequence sample_decode(Tape& tape, const EncodedImage& enc, const Tensor& z, int max_len,
                                Rng& rng) const {
    if (max_len < 1) throw std::invalid_argument("sample_decode: max_len must be >= 1");
    SampledSequence seq;
    DecoderState state = enc.init;
    int prev = Vocab::kBos;
    std::vector<double> probs(static_cast<std::size_t>(cfg_.vocab_size));
    for (int t = 0; t < max_len; ++t) {
      StepOutput s = step(tape, enc, prev, z, state);
      const auto lp = s.log_probs.values();
      for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(lp[k]);
      const int tok = static_cast<int>(rng.categorical(probs));
      seq.ids.push_back(tok);
      seq.step_log_probs.push_back(lp[static_cast<std::size_t>(tok)]);
      if (tape.recording())
        seq.step_log_prob_nodes.push_back(tape.pick(s.log_probs, 0, static_cast<std::size_t>(tok)));
      if (tok == Vocab::kEos) {
        seq.ended_with_eos = true;
        break;
      }
      prev = tok;
      state = std::move(s.state);
    }
    return seq;
  }

  SampledSequence sample_decode(const Tensor& features, int max_len, std::uint64_t seed) const {
    Tape tape(false);
    const EncodedImage enc = encode(tape, features);
    const Tensor z = predict_attributes(tape, features).z;
    Rng rng(seed);
    return sample_decode(tape, enc, z, max_len, rng);
  }

  // Sum of log p(y_t | ...) over a given continuation (no BOS; EOS included
  // if present). Independent re-scoring path for sampled sequences.
  double score_sequence(const Tensor& features, const IdSeq& ids) const {
    Tape tape(false);
    const EncodedImage enc = encode(tape, features);
    const Tensor z = predict_attributes(tape, features).z;
    DecoderState state = enc.init;
    int prev = Vocab::kBos;
    double total = 0.0;
    for (int tok : ids) {
      StepOutput s = step(tape, enc, prev, z, state);
      total += s.log_probs.values()[static_cast<std::size_t>(tok)];
      prev = tok;
      state = std::move(s.state);
    }
    return total;
  }

  nlohmann::json meta() const { return {{"model", "captioner"}, {"config", cfg_}}; }

 private:
  void check_features(const Tensor& features) const {
    if (features.rank() != 2 || features.rows() < 1 ||
        features.cols() != static_cast<std::size_t>(cfg_.feature_dim))
      throw ShapeError("Captioner: features must be [B x " + std::to_string(cfg_.feature_dim) +
                       "] with B >= 1, got " + shape_str(features.shape()));
  }

  DecoderState lstm_step(Tape& tape, int prev_id, const Tensor& context, const Tensor& z,
                         const DecoderState& state) const {
    if (prev_id < 0 || prev_id >= cfg_.vocab_size)
      throw std::out_of_range("decode_step: word id " + std::to_string(prev_id) +
                              " outside vocabulary of " + std::to_string(cfg_.vocab_size));
    const int ids[1] = {prev_id};
    const Tensor emb = tape.embedding_gather(p("dec.embed"), ids);
    const Tensor input = tape.concat({emb, context, z}, 1);
    const Tensor gates = tape.add(
        tape.add(tape.matmul(input, p("dec.lstm.w_in")), tape.matmul(state.h, p("dec.lstm.w_h"))),
        p("dec.lstm.b"));
    const auto H = static_cast<std::size_t>(cfg_.hidden_dim);
    const Tensor i = tape.sigmoid(tape.slice_cols(gates, 0, H));
    const Tensor f = tape.sigmoid(tape.slice_cols(gates, H, 2 * H));
    const Tensor o = tape.sigmoid(tape.slice_cols(gates, 2 * H, 3 * H));
    const Tensor g = tape.tanh(tape.slice_cols(gates, 3 * H, 4 * H));
    DecoderState next;
    next.c = tape.add(tape.mul(f, state.c), tape.mul(i, g));
    next.h = tape.mul(o, tape.tanh(next.c));
    return next;
  }

  StepOutput project(Tape& tape, DecoderState next) const {
    StepOutput out;
    out.log_probs =
        tape.log_softmax(tape.add(tape.matmul(next.h, p("dec.out.w")), p("dec.out.b")), 1);
    out.state = std::move(next);
    return out;
  }

  CaptionerConfig cfg_;
  ParameterSet params_;
};

// ---- category classifier ---------------------------------------------------

struct ClassifierConfig {
  int vocab_size = 0;
  int n_categories = 0;
  int embed_dim = 32;
  int filters = 64;  // per window
  std::vector<int> windows = {3, 4, 5};
  double dropout = 0.0;
  double init_range = 0.1;
  std::uint64_t init_seed = 2;
};

inline void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"n_categories", c.n_categories}, {"embed_dim", c.embed_dim},
       {"filters", c.filters},       {"windows", c.windows},           {"dropout", c.dropout},
       {"init_range", c.init_range}, {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_categories = j.value("n_categories", c.n_categories);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.filters = j.value("filters", c.filters);
  c.windows = j.value("windows", c.windows);
  c.dropout = j.value("dropout", c.dropout);
  c.init_range = j.value("init_range", c.init_range);
  c.init_seed = j.value("init_seed", c.init_seed);
}

// Text CNN over word ids: parallel valid convolutions (one per window),
// ReLU, max-over-time, concatenation, one output layer.
class TextCnnClassifier {
 public:
  explicit TextCnnClassifier(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.vocab_size <= 0 || cfg_.n_categories < 1 || cfg_.windows.empty())
      throw std::invalid_argument("TextCnnClassifier: invalid dimensions");
    Rng rng(cfg_.init_seed);
    const auto K = static_cast<std::size_t>(cfg_.vocab_size);
    const auto E = static_cast<std::size_t>(cfg_.embed_dim);
    const auto F = static_cast<std::size_t>(cfg_.filters);
    const double r = cfg_.init_range;
    params_.add_uniform("cls.embed", {K, E}, r, rng);
    for (int w : cfg_.windows) {
      if (w < 1) throw std::invalid_argument("TextCnnClassifier: window must be >= 1");
      params_.add_uniform("cls.conv" + std::to_string(w) + ".w", {static_cast<std::size_t>(w) * E, F},
                          r, rng);
      params_.add("cls.conv" + std::to_string(w) + ".b", {1, F});
    }
    params_.add_uniform("cls.out.w", {cfg_.windows.size() * F, static_cast<std::size_t>(cfg_.n_categories)},
                        r, rng);
    params_.add("cls.out.b", {1, static_cast<std::size_t>(cfg_.n_categories)});
  }

  const ClassifierConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  int min_length() const { return *std::max_element(cfg_.windows.begin(), cfg_.windows.end()); }

  // [1 x C] logits. Inputs shorter than the widest window are PAD-extended.
  Tensor logits(Tape& tape, const IdSeq& words, bool train = false, std::uint64_t seed = 0) const {
    IdSeq ids = words;
    while (static_cast<int>(ids.size()) < min_length()) ids.push_back(Vocab::kPad);
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw std::out_of_range("classifier: word id " + std::to_string(id) + " outside vocabulary");
    const Tensor emb = tape.embedding_gather(params_.get("cls.embed"), ids);
    std::vector<Tensor> pooled;
    for (int w : cfg_.windows) {
      const std::string k = "cls.conv" + std::to_string(w);
      const Tensor conv = tape.conv1d(emb, params_.get(k + ".w"), params_.get(k + ".b"),
                                      static_cast<std::size_t>(w));
      pooled.push_back(tape.max_over_time(tape.relu(conv)));
    }
    Tensor feat = pooled.size() == 1 ? pooled[0] : tape.concat(pooled, 1);
    feat = tape.dropout(feat, cfg_.dropout, train, seed);
    return tape.add(tape.matmul(feat, params_.get("cls.out.w")), params_.get("cls.out.b"));
  }

  // Probability distribution over categories.
  std::vector<double> classify(const IdSeq& words) const {
    Tape tape(false);
    const Tensor probs = tape.softmax(logits(tape, words), 1);
    return probs.values();
  }

  int predict(const IdSeq& words) const {
    const auto p = classify(words);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  nlohmann::json meta() const { return {{"model", "text_cnn"}, {"config", cfg_}}; }

 private:
  ClassifierConfig cfg_;
  ParameterSet params_;
};

}  // namespace srfc
