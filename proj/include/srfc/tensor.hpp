#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "srfc/rng.hpp"

namespace srfc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};
}  // namespace detail

// Handle to a dense row-major double array. Copies share storage; use
// clone() for a deep copy. Scalars have an empty shape.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (numel_of(shape) != values.size())
      throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? node_->shape[1] : numel(); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (numel() != 1) throw ShapeError("Tensor::item on shape " + shape_str(shape()));
    return node_->value[0];
  }

  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  Tensor clone() const {
    Tensor t(shape(), node_->value, requires_grad());
    return t;
  }

  // Constant copy that the tape will not differentiate through.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& shared() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Records differentiable operations in creation order so backward can replay
// them in reverse. A tape is single-use: backward() consumes it. A tape built
// with recording=false computes values only.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return backward_.size(); }

  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::logic_error("backward: loss does not depend on any differentiable input");
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
    backward_.clear();
  }

  // ---- elementwise / linear algebra -------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
      throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = output({m, n}, {a, b});
    gemm(a.values().data(), b.values().data(), out.data().data(), m, k, n);
    if (out.requires_grad()) {
      record([a, b, out, m, k, n]() {
        const auto& g = out.node()->grad;
        if (g.empty()) return;
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          auto& ga = a.node()->grad;
          const auto& bv = b.values();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[p * n + j];
            }
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          auto& gb = b.node()->grad;
          const auto& av = a.values();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
      });
    }
    return out;
  }

  // Same-shape addition, or a [1 x n] bias row added to every row of a.
  Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool bias = !same && a.rank() == 2 && b.rank() == 2 && b.rows() == 1 &&
                      b.cols() == a.cols();
    if (!same && !bias)
      throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " + " +
                       shape_str(b.shape()));
    Tensor out = output(a.shape(), {a, b});
    auto o = out.data();
    const auto& av = a.values();
    const auto& bv = b.values();
    const std::size_t n = b.numel();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[same ? i : i % n];
    if (out.requires_grad()) {
      record([a, b, out, same, n]() {
        const auto& g = out.node()->grad;
        if (g.empty()) return;
        accumulate(a, g);
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          auto& gb = b.node()->grad;
          for (std::size_t i = 0; i < g.size(); ++i) gb[same ? i : i % n] += g[i];
        }
      });
    }
    return out;
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    require_same("sub", a, b);
    Tensor out = output(a.shape(), {a, b});
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] - b.values()[i];
    if (out.requires_grad()) {
      record([a, b, out]() {
        const auto& g = out.node()->grad;
        if (g.empty()) return;
        accumulate(a, g);
        accumulate(b, g, -1.0);
      });
    }
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    require_same("mul", a, b);
    Tensor out = output(a.shape(), {a, b});
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] * b.values()[i];
    if (out.requires_grad()) {
      record([a, b, out]() {
        const auto& g = out.node()->grad;
        if (g.empty()) return;
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) a.node()->grad[i] += g[i] * b.values()[i];
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) b.node()->grad[i] += g[i] * a.values()[i];
        }
      });
    }
    return out;
  }

  Tensor scale(const Tensor& a, double s) {
    Tensor out = output(a.shape(), {a});
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * a.values()[i];
    if (out.requires_grad()) {
      record([a, out, s]() {
        const auto& g = out.node()->grad;
        if (!g.empty()) accumulate(a, g, s);
      });
    }
    return out;
  }

  Tensor neg(const Tensor& a) { return scale(a, -1.0); }

  Tensor transpose(const Tensor& a) {
    require_rank2("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = output({n, m}, {a});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.values()[i * n + j];
    if (out.requires_grad()) {
      record([a, out, m, n]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) a.node()->grad[i * n + j] += g[j * m + i];
      });
    }
    return out;
  }

  // Rank-2 concatenation along axis 0 (rows) or 1 (columns).
  Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    for (const auto& p : parts) require_rank2("concat", p);
    std::size_t rows = 0, cols = 0;
    if (axis == 1) {
      rows = parts[0].rows();
      for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeError(mismatch("concat(axis=1)", parts));
        cols += p.cols();
      }
    } else {
      cols = parts[0].cols();
      for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError(mismatch("concat(axis=0)", parts));
        rows += p.rows();
      }
    }
    Tensor out = output({rows, cols}, parts);
    auto o = out.data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t c = 0; c < p.cols(); ++c) {
          const std::size_t dst = axis == 1 ? r * cols + offset + c : (offset + r) * cols + c;
          o[dst] = p.at(r, c);
        }
      offset += axis == 1 ? p.cols() : p.rows();
    }
    if (out.requires_grad()) {
      record([parts, out, axis, cols]() {
        const auto& g = out.node()->grad;
        if (g.empty()) return;
        std::size_t off = 0;
        for (const auto& p : parts) {
          if (p.requires_grad()) {
            p.node()->ensure_grad();
            auto& gp = p.node()->grad;
            for (std::size_t r = 0; r < p.rows(); ++r)
              for (std::size_t c = 0; c < p.cols(); ++c) {
                const std::size_t src = axis == 1 ? r * cols + off + c : (off + r) * cols + c;
                gp[r * p.cols() + c] += g[src];
              }
          }
          off += axis == 1 ? p.cols() : p.rows();
        }
      });
    }
    return out;
  }

  Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_rank2("slice_cols", a);
    if (begin >= end || end > a.cols())
      throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                       ") out of range for " + shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
    Tensor out = output({m, w}, {a});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) out.data()[r * w + c] = a.values()[r * n + begin + c];
    if (out.requires_grad()) {
      record([a, out, m, n, w, begin]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) a.node()->grad[r * n + begin + c] += g[r * w + c];
      });
    }
    return out;
  }

  // Single element as a scalar.
  Tensor pick(const Tensor& a, std::size_t r, std::size_t c) {
    require_rank2("pick", a);
    if (r >= a.rows() || c >= a.cols())
      throw ShapeError("pick: (" + std::to_string(r) + ", " + std::to_string(c) +
                       ") out of range for " + shape_str(a.shape()));
    const std::size_t idx = r * a.cols() + c;
    Tensor out = output({}, {a});
    out.data()[0] = a.values()[idx];
    if (out.requires_grad()) {
      record([a, out, idx]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        a.node()->grad[idx] += g[0];
      });
    }
    return out;
  }

  // ---- reductions --------------------------------------------------------

  Tensor sum(const Tensor& a) {
    Tensor out = output({}, {a});
    double s = 0.0;
    for (double v : a.values()) s += v;
    out.data()[0] = s;
    if (out.requires_grad()) {
      record([a, out]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        for (auto& x : a.node()->grad) x += g[0];
      });
    }
    return out;
  }

  Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
  }

  // Mean over rows of a rank-2 tensor: [m x n] -> [1 x n].
  Tensor mean_rows(const Tensor& a) {
    require_rank2("mean_rows", a);
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) throw ShapeError("mean_rows: no rows");
    Tensor out = output({1, n}, {a});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) out.data()[c] += a.values()[r * n + c];
    for (auto& v : out.data()) v /= static_cast<double>(m);
    if (out.requires_grad()) {
      record([a, out, m, n]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c)
            a.node()->grad[r * n + c] += g[c] / static_cast<double>(m);
      });
    }
    return out;
  }

  // ---- lookups -----------------------------------------------------------

  Tensor embedding_gather(const Tensor& table, std::span<const int> ids) {
    require_rank2("embedding_gather", table);
    const std::size_t rows = table.rows(), e = table.cols();
    for (int id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= rows)
        throw ShapeError("embedding_gather: id " + std::to_string(id) + " outside table " +
                         shape_str(table.shape()));
    std::vector<int> idv(ids.begin(), ids.end());
    Tensor out = output({idv.size(), e}, {table});
    for (std::size_t i = 0; i < idv.size(); ++i)
      std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(idv[i] * e), e,
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * e));
    if (out.requires_grad()) {
      record([table, out, idv, e]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !table.requires_grad()) return;
        table.node()->ensure_grad();
        for (std::size_t i = 0; i < idv.size(); ++i)
          for (std::size_t c = 0; c < e; ++c)
            table.node()->grad[static_cast<std::size_t>(idv[i]) * e + c] += g[i * e + c];
      });
    }
    return out;
  }

  // ---- nonlinearities ----------------------------------------------------

  Tensor sigmoid(const Tensor& a) {
    return unary(a, [](double x) {
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }, [](double, double y) { return y * (1.0 - y); });
  }

  Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
  }

  Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  }

  Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
  }

  Tensor log(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
  }

  Tensor softmax(const Tensor& a, int axis = 1) { return softmax_impl(a, axis, false); }
  Tensor log_softmax(const Tensor& a, int axis = 1) { return softmax_impl(a, axis, true); }

  // ---- convolution / pooling --------------------------------------------

  // Valid 1-D convolution over time. x: [T x E], w: [(width*E) x F], bias:
  // [1 x F]; output [(T - width + 1) x F]. Row j*E+e of w weights x[t+j][e].
  Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t width) {
    require_rank2("conv1d", x);
    require_rank2("conv1d", w);
    const std::size_t t_len = x.rows(), e = x.cols(), f = w.cols();
    if (width == 0 || w.rows() != width * e || bias.numel() != f)
      throw ShapeError("conv1d: shape mismatch x" + shape_str(x.shape()) + " w" +
                       shape_str(w.shape()) + " bias" + shape_str(bias.shape()) + " width " +
                       std::to_string(width));
    if (t_len < width)
      throw ShapeError("conv1d: input length " + std::to_string(t_len) + " shorter than width " +
                       std::to_string(width));
    const std::size_t t_out = t_len - width + 1;
    Tensor out = output({t_out, f}, {x, w, bias});
    const std::size_t span_len = width * e;
    for (std::size_t t = 0; t < t_out; ++t) {
      double* o = out.data().data() + t * f;
      std::copy(bias.values().begin(), bias.values().end(), o);
      // Window rows are contiguous in x, so the window is a 1 x (width*E) row.
      gemm_acc(x.values().data() + t * e, w.values().data(), o, 1, span_len, f);
    }
    if (out.requires_grad()) {
      record([x, w, bias, out, t_out, e, f, span_len]() {
        const auto& g = out.node()->grad;
        if (g.empty()) return;
        if (bias.requires_grad()) {
          bias.node()->ensure_grad();
          for (std::size_t t = 0; t < t_out; ++t)
            for (std::size_t c = 0; c < f; ++c) bias.node()->grad[c] += g[t * f + c];
        }
        if (w.requires_grad()) {
          w.node()->ensure_grad();
          auto& gw = w.node()->grad;
          for (std::size_t t = 0; t < t_out; ++t) {
            const double* xw = x.values().data() + t * e;
            for (std::size_t p = 0; p < span_len; ++p) {
              const double xv = xw[p];
              if (xv == 0.0) continue;
              for (std::size_t c = 0; c < f; ++c) gw[p * f + c] += xv * g[t * f + c];
            }
          }
        }
        if (x.requires_grad()) {
          x.node()->ensure_grad();
          auto& gx = x.node()->grad;
          const auto& wv = w.values();
          for (std::size_t t = 0; t < t_out; ++t)
            for (std::size_t p = 0; p < span_len; ++p) {
              double acc = 0.0;
              for (std::size_t c = 0; c < f; ++c) acc += wv[p * f + c] * g[t * f + c];
              gx[t * e + p] += acc;
            }
        }
      });
    }
    return out;
  }

  // Column-wise max over rows: [T x F] -> [1 x F]. Ties go to the first row.
  Tensor max_over_time(const Tensor& a) {
    require_rank2("max_over_time", a);
    const std::size_t t_len = a.rows(), f = a.cols();
    if (t_len == 0) throw ShapeError("max_over_time: no rows");
    Tensor out = output({1, f}, {a});
    std::vector<std::size_t> arg(f, 0);
    for (std::size_t c = 0; c < f; ++c) {
      double best = a.values()[c];
      for (std::size_t t = 1; t < t_len; ++t)
        if (a.values()[t * f + c] > best) {
          best = a.values()[t * f + c];
          arg[c] = t;
        }
      out.data()[c] = best;
    }
    if (out.requires_grad()) {
      record([a, out, arg, f]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t c = 0; c < f; ++c) a.node()->grad[arg[c] * f + c] += g[c];
      });
    }
    return out;
  }

  // Inverted dropout; identity when !train or rate == 0.
  Tensor dropout(const Tensor& a, double rate, bool train, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!train || rate == 0.0) return a;
    Rng rng(seed);
    Tensor mask = Tensor::zeros(a.shape());
    const double keep = 1.0 / (1.0 - rate);
    for (auto& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
    return mul(a, mask);
  }

  // ---- losses ------------------------------------------------------------

  // Mean binary cross-entropy of probabilities against constant {0,1} labels,
  // probabilities clipped to [eps, 1 - eps]. Clipped entries pass no gradient.
  Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> labels,
                              double eps = 1e-12) {
    if (probs.numel() != labels.size())
      throw ShapeError("binary_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for probs " + shape_str(probs.shape()));
    if (probs.numel() == 0) throw ShapeError("binary_cross_entropy: empty input");
    std::vector<double> y(labels.begin(), labels.end());
    const double n = static_cast<double>(y.size());
    Tensor out = output({}, {probs});
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double p = std::clamp(probs.values()[i], eps, 1.0 - eps);
      loss -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    out.data()[0] = loss / n;
    if (out.requires_grad()) {
      record([probs, out, y, eps, n]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !probs.requires_grad()) return;
        probs.node()->ensure_grad();
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double raw = probs.values()[i];
          if (raw < eps || raw > 1.0 - eps) continue;
          probs.node()->grad[i] += g[0] * (-y[i] / raw + (1.0 - y[i]) / (1.0 - raw)) / n;
        }
      });
    }
    return out;
  }

 private:
  Tensor output(Shape shape, std::initializer_list<Tensor> inputs) {
    bool rg = false;
    if (recording_)
      for (const auto& t : inputs) rg = rg || t.requires_grad();
    return Tensor::zeros(std::move(shape), rg);
  }

  Tensor output(Shape shape, const std::vector<Tensor>& inputs) {
    bool rg = false;
    if (recording_)
      for (const auto& t : inputs) rg = rg || t.requires_grad();
    return Tensor::zeros(std::move(shape), rg);
  }

  void record(std::function<void()> fn) { backward_.push_back(std::move(fn)); }

  static void accumulate(const Tensor& t, const std::vector<double>& g, double s = 1.0) {
    if (!t.requires_grad()) return;
    t.node()->ensure_grad();
    auto& gt = t.node()->grad;
    for (std::size_t i = 0; i < g.size(); ++i) gt[i] += s * g[i];
  }

  template <typename F, typename D>
  Tensor unary(const Tensor& a, F f, D df) {
    Tensor out = output(a.shape(), {a});
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a.values()[i]);
    if (out.requires_grad()) {
      record([a, out, df]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          a.node()->grad[i] += g[i] * df(a.values()[i], out.values()[i]);
      });
    }
    return out;
  }

  Tensor softmax_impl(const Tensor& a, int axis, bool log_space) {
    const char* name = log_space ? "log_softmax" : "softmax";
    require_rank2(name, a);
    if (axis != 0 && axis != 1) throw ShapeError(std::string(name) + ": axis must be 0 or 1");
    const std::size_t m = a.rows(), n = a.cols();
    // Lines run along the reduced axis: (count, length, stride between
    // elements, stride between line starts).
    const std::size_t lines = axis == 1 ? m : n, len = axis == 1 ? n : m;
    const std::size_t step = axis == 1 ? 1 : n, start_step = axis == 1 ? n : 1;
    Tensor out = output(a.shape(), {a});
    const auto& av = a.values();
    auto o = out.data();
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t s = l * start_step;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, av[s + i * step]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) z += std::exp(av[s + i * step] - mx);
      const double log_z = mx + std::log(z);
      for (std::size_t i = 0; i < len; ++i) {
        const double lp = av[s + i * step] - log_z;
        o[s + i * step] = log_space ? lp : std::exp(lp);
      }
    }
    if (out.requires_grad()) {
      record([a, out, lines, len, step, start_step, log_space]() {
        const auto& g = out.node()->grad;
        if (g.empty() || !a.requires_grad()) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        const auto& y = out.values();
        for (std::size_t l = 0; l < lines; ++l) {
          const std::size_t s = l * start_step;
          if (log_space) {
            double gsum = 0.0;
            for (std::size_t i = 0; i < len; ++i) gsum += g[s + i * step];
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t k = s + i * step;
              ga[k] += g[k] - std::exp(y[k]) * gsum;
            }
          } else {
            double dot = 0.0;
            for (std::size_t i = 0; i < len; ++i) dot += g[s + i * step] * y[s + i * step];
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t k = s + i * step;
              ga[k] += y[k] * (g[k] - dot);
            }
          }
        }
      });
    }
    return out;
  }

  // c = a * b for row-major a [m x k], b [k x n]; c is zero on entry.
  static void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    gemm_acc(a, b, c, m, k, n);
  }

  static void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                       std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
  }

  static void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }

  static void require_rank2(const char* op, const Tensor& a) {
    if (a.rank() != 2)
      throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }

  static std::string mismatch(const char* op, const std::vector<Tensor>& parts) {
    std::string s = std::string(op) + ": shape mismatch";
    for (const auto& p : parts) s += " " + shape_str(p.shape());
    return s;
  }

  std::vector<std::function<void()>> backward_;
  bool recording_;
};

}  // namespace srfc
