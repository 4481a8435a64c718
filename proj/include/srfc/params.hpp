#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfc/rng.hpp"
#include "srfc/tensor.hpp"

namespace srfc {

// Named, ordered collection of trainable tensors. Insertion order defines
// checkpoint layout and optimizer state order.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("ParameterSet: duplicate '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(Tensor::zeros(std::move(shape), true));
    return tensors_.back();
  }

  Tensor& add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
    Tensor& t = add(name, std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParameterSet: no parameter '" + name + "'");
    return tensors_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  void fill(double v) {
    for (auto& t : tensors_)
      for (auto& x : t.data()) x = v;
  }

  // Flat copy of all values, in order.
  std::vector<double> snapshot() const {
    std::vector<double> out;
    out.reserve(numel());
    for (const auto& t : tensors_) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
  }

  void restore(const std::vector<double>& flat) {
    if (flat.size() != numel())
      throw std::invalid_argument("ParameterSet::restore: size mismatch");
    std::size_t off = 0;
    for (auto& t : tensors_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.numel(), t.data().begin());
      off += t.numel();
    }
  }

  std::vector<double> flat_grad() const {
    std::vector<double> out;
    out.reserve(numel());
    for (const auto& t : tensors_) {
      if (t.has_grad())
        out.insert(out.end(), t.grad().begin(), t.grad().end());
      else
        out.insert(out.end(), t.numel(), 0.0);
    }
    return out;
  }

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

// Adam with bias correction over every tensor of a ParameterSet.
class Adam {
 public:
  explicit Adam(const ParameterSet& params, AdamConfig config = {}) : config_(config) {
    for (const auto& t : params.tensors()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  AdamConfig& config() { return config_; }
  std::int64_t steps() const { return t_; }

  void step(ParameterSet& params) {
    if (params.size() != m_.size()) throw std::invalid_argument("Adam: parameter set changed");
    double clip = 1.0;
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params.tensors())
        if (p.has_grad())
          for (double g : p.grad()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = params.tensors()[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Checkpoint layout: u64 little-endian header length, the JSON header
// {"meta": ..., "params": [{"name", "shape", "offset"}]}, then every value as
// a little-endian IEEE-754 double. Offsets count doubles from the start of
// the data block.
inline void save_checkpoint(const ParameterSet& params, const std::string& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["meta"] = meta;
  header["params"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensors()[i];
    header["params"].push_back(
        {{"name", params.names()[i]}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  auto put_u64 = [&out](std::uint64_t x) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
    out.write(b, 8);
  };
  put_u64(text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors())
    for (double v : t.values()) put_u64(std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_checkpoint: cannot open " + path);
  auto get_u64 = [&in, &path]() {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
      throw std::runtime_error("read_checkpoint: truncated file " + path);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return x;
  };
  const std::uint64_t header_len = get_u64();
  if (header_len > (1u << 30)) throw std::runtime_error("read_checkpoint: bad header in " + path);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw std::runtime_error("read_checkpoint: truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_checkpoint: malformed header in " + path + ": " + e.what());
  }
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  std::size_t expected = 0;
  for (const auto& entry : header.at("params")) {
    const Shape shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::size_t>() != expected)
      throw std::runtime_error("read_checkpoint: non-contiguous offset for " +
                               entry.at("name").get<std::string>());
    std::vector<double> values(numel_of(shape));
    for (auto& v : values) v = std::bit_cast<double>(get_u64());
    expected += values.size();
    ck.names.push_back(entry.at("name").get<std::string>());
    ck.tensors.emplace_back(shape, std::move(values));
  }
  return ck;
}

// Copies checkpoint values into an existing parameter set; names and shapes
// must match exactly.
inline nlohmann::json load_checkpoint(ParameterSet& params, const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.names != params.names())
    throw std::runtime_error("load_checkpoint: parameter names in " + path +
                             " do not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& dst = params.tensors()[i];
    if (dst.shape() != ck.tensors[i].shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + ck.names[i] + ": " +
                               shape_str(ck.tensors[i].shape()) + " vs " +
                               shape_str(dst.shape()));
    std::copy(ck.tensors[i].values().begin(), ck.tensors[i].values().end(), dst.data().begin());
  }
  return ck.meta;
}

}  // namespace srfc
