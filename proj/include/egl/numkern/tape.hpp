#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "egl/core/types.hpp"

namespace egl::nk {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// A trainable tensor that outlives individual tapes. Backward passes
// accumulate into `grad`; optimizers read and clear it.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  int index() const { return idx_; }
  Tape* tape() const { return tape_; }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
// which is a topological order; backward walks them once in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  struct Node {
    Mat value;
    Mat grad;
    std::vector<int> inputs;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var constant(Mat v) { return push(std::move(v), {}, nullptr, false); }

  Var leaf(Mat v) { return push(std::move(v), {}, nullptr, true); }

  Var param(Parameter& p) {
    auto var = push(p.value, {}, nullptr, true);
    nodes_[static_cast<std::size_t>(var.index())].param = &p;
    return var;
  }

  Var push(Mat v, std::vector<int> inputs, Backward bw, bool needs_grad) {
    for (int i : inputs) needs_grad = needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
    Node n;
    n.value = std::move(v);
    n.inputs = std::move(inputs);
    n.backward = needs_grad ? std::move(bw) : Backward{};
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const Mat& value(int i) const { return node(i).value; }

  // Gradient buffer of node i, allocated lazily.
  Mat& grad_buffer(int i) {
    auto& n = node(i);
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool needs_grad(int i) const { return node(i).needs_grad; }

  void backward(Var loss) {
    if (loss.tape() != this) throw Error("loss belongs to another tape");
    if (loss.rows() != 1 || loss.cols() != 1) throw Error("backward requires a scalar loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_buffer(loss.index())(0, 0) = 1.0;
    for (int i = loss.index(); i >= 0; --i) {
      auto& n = node(i);
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

  // Gradient of the last backward pass with respect to v (zeros if unreached).
  Mat grad(Var v) const {
    const auto& n = node(v.index());
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape_->value(idx_); }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw Error("operands on different tapes");
}

inline void accumulate(Tape& t, int i, const Mat& g) {
  if (t.needs_grad(i)) t.grad_buffer(i) += g;
}

}  // namespace detail

// ---- linear algebra ----

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows()) throw Error("matmul shape mismatch");
  Mat out = a.value() * b.value();
  const int ia = a.index(), ib = b.index();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    if (t.needs_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  }, false);
}

// Elementwise a + b; b may also be a 1×cols row broadcast over a's rows.
inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  const bool bcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!bcast && (a.rows() != b.rows() || a.cols() != b.cols())) throw Error("add shape mismatch");
  Mat out = a.value();
  if (bcast)
    out.rowwise() += b.value().row(0);
  else
    out += b.value();
  const int ia = a.index(), ib = b.index();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib, bcast](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    detail::accumulate(t, ia, g);
    if (t.needs_grad(ib)) {
      if (bcast)
        t.grad_buffer(ib) += g.colwise().sum();
      else
        t.grad_buffer(ib) += g;
    }
  }, false);
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("sub shape mismatch");
  Mat out = a.value() - b.value();
  const int ia = a.index(), ib = b.index();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, -g);
  }, false);
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("mul shape mismatch");
  Mat out = a.value().cwiseProduct(b.value());
  const int ia = a.index(), ib = b.index();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    if (t.needs_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(t.value(ib));
    if (t.needs_grad(ib)) t.grad_buffer(ib) += g.cwiseProduct(t.value(ia));
  }, false);
}

// Scales each row of a (n×c) by the matching entry of w (n×1).
inline Var mul_rows(Var a, Var w) {
  detail::same_tape(a, w);
  if (w.cols() != 1 || w.rows() != a.rows()) throw Error("mul_rows shape mismatch");
  Mat out = a.value().array().colwise() * w.value().col(0).array();
  const int ia = a.index(), iw = w.index();
  return a.tape()->push(std::move(out), {ia, iw}, [ia, iw](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    if (t.needs_grad(ia)) t.grad_buffer(ia).array() += g.array().colwise() * t.value(iw).col(0).array();
    if (t.needs_grad(iw)) t.grad_buffer(iw) += g.cwiseProduct(t.value(ia)).rowwise().sum();
  }, false);
}

inline Var scale(Var a, double k) {
  Mat out = a.value() * k;
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, k](Tape& t, int self) {
    detail::accumulate(t, ia, t.node(self).grad * k);
  }, false);
}

inline Var add_scalar(Var a, double k) {
  Mat out = a.value().array() + k;
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    detail::accumulate(t, ia, t.node(self).grad);
  }, false);
}

inline Var transpose(Var a) {
  Mat out = a.value().transpose();
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_buffer(ia) += t.node(self).grad.transpose();
  }, false);
}

// ---- structural ----

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat of nothing");
  const Index rows = parts[0].rows();
  Index cols = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != rows) throw Error("concat row mismatch");
    cols += p.cols();
    ids.push_back(p.index());
  }
  Mat out(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts[0].tape()->push(std::move(out), ids, [ids](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    Index o = 0;
    for (int i : ids) {
      const Index c = t.value(i).cols();
      if (t.needs_grad(i)) t.grad_buffer(i) += g.middleCols(o, c);
      o += c;
    }
  }, false);
}

inline Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat of nothing");
  const Index cols = parts[0].cols();
  Index rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.cols() != cols) throw Error("concat column mismatch");
    rows += p.rows();
    ids.push_back(p.index());
  }
  Mat out(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts[0].tape()->push(std::move(out), ids, [ids](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    Index o = 0;
    for (int i : ids) {
      const Index r = t.value(i).rows();
      if (t.needs_grad(i)) t.grad_buffer(i) += g.middleRows(o, r);
      o += r;
    }
  }, false);
}

inline Var slice_cols(Var a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw Error("slice_cols out of range");
  Mat out = a.value().middleCols(start, n);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, start, n](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_buffer(ia).middleCols(start, n) += t.node(self).grad;
  }, false);
}

inline Var slice_rows(Var a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw Error("slice_rows out of range");
  Mat out = a.value().middleRows(start, n);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, start, n](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_buffer(ia).middleRows(start, n) += t.node(self).grad;
  }, false);
}

// out.row(r) = a.row(idx[r]).
inline Var gather_rows(Var a, std::vector<int> idx) {
  Mat out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) throw Error("gather_rows index out of range");
    out.row(static_cast<Index>(r)) = a.value().row(idx[r]);
  }
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& g = t.node(self).grad;
    Mat& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Index>(r));
  }, false);
}

// Segments are contiguous row ranges [offsets[s], offsets[s+1]).
inline Var segment_sum(Var a, std::vector<int> offsets) {
  if (offsets.empty() || offsets.back() != a.rows()) throw Error("segment offsets do not cover input");
  const auto n_seg = static_cast<Index>(offsets.size() - 1);
  Mat out = Mat::Zero(n_seg, a.cols());
  for (Index s = 0; s < n_seg; ++s)
    for (int r = offsets[s]; r < offsets[s + 1]; ++r) out.row(s) += a.value().row(r);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, offsets = std::move(offsets)](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& g = t.node(self).grad;
    Mat& ga = t.grad_buffer(ia);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
      for (int r = offsets[s]; r < offsets[s + 1]; ++r) ga.row(r) += g.row(static_cast<Index>(s));
  }, false);
}

// Softmax of an n×1 column within each contiguous segment.
inline Var segment_softmax(Var a, std::vector<int> offsets) {
  if (a.cols() != 1) throw Error("segment_softmax expects a column");
  if (offsets.empty() || offsets.back() != a.rows()) throw Error("segment offsets do not cover input");
  Mat out(a.rows(), 1);
  const Mat& x = a.value();
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const int b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    double m = x(b, 0);
    for (int r = b + 1; r < e; ++r) m = std::max(m, x(r, 0));
    double z = 0.0;
    for (int r = b; r < e; ++r) z += (out(r, 0) = std::exp(x(r, 0) - m));
    for (int r = b; r < e; ++r) out(r, 0) /= z;
  }
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, offsets = std::move(offsets)](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& g = t.node(self).grad;
    const Mat& y = t.node(self).value;
    Mat& ga = t.grad_buffer(ia);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      double dotp = 0.0;
      for (int r = offsets[s]; r < offsets[s + 1]; ++r) dotp += g(r, 0) * y(r, 0);
      for (int r = offsets[s]; r < offsets[s + 1]; ++r) ga(r, 0) += y(r, 0) * (g(r, 0) - dotp);
    }
  }, false);
}

// ---- elementwise nonlinearities ----

inline Var sigmoid(Var a) {
  Mat out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.node(self).value;
    if (t.needs_grad(ia)) t.grad_buffer(ia).array() += t.node(self).grad.array() * y.array() * (1.0 - y.array());
  }, false);
}

inline Var tanh(Var a) {
  Mat out = a.value().array().tanh();
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.node(self).value;
    if (t.needs_grad(ia)) t.grad_buffer(ia).array() += t.node(self).grad.array() * (1.0 - y.array().square());
  }, false);
}

inline Var relu(Var a) {
  Mat out = a.value().cwiseMax(0.0);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& x = t.value(ia);
    t.grad_buffer(ia).array() += t.node(self).grad.array() * (x.array() > 0.0).cast<double>();
  }, false);
}

inline Var exp(Var a) {
  Mat out = a.value().array().exp();
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_buffer(ia).array() += t.node(self).grad.array() * t.node(self).value.array();
  }, false);
}

inline Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) throw Error("log of non-positive value");
  Mat out = a.value().array().log();
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_buffer(ia).array() += t.node(self).grad.array() / t.value(ia).array();
  }, false);
}

// log σ(x), evaluated without overflow.
inline Var log_sigmoid(Var a) {
  Mat out = a.value().unaryExpr([](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); });
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& x = t.value(ia);
    t.grad_buffer(ia).array() += t.node(self).grad.array() * x.unaryExpr([](double v) { return stable_sigmoid(-v); }).array();
  }, false);
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
  Mat out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& y = t.node(self).value;
    const Mat& g = t.node(self).grad;
    Eigen::VectorXd d = g.cwiseProduct(y).rowwise().sum();
    t.grad_buffer(ia).array() += y.array() * (g.array().colwise() - d.array());
  }, false);
}

// Row-wise log-softmax through log-sum-exp.
inline Var log_softmax_rows(Var a) {
  Mat out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    const double lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& y = t.node(self).value;
    const Mat& g = t.node(self).grad;
    Eigen::VectorXd gs = g.rowwise().sum();
    Mat p = y.array().exp();
    t.grad_buffer(ia).array() += g.array() - p.array().colwise() * gs.array();
  }, false);
}

// Scales each row to unit L2 norm; zero rows pass through unchanged.
inline Var l2_normalize_rows(Var a, double eps = 1e-12) {
  const Mat& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  Mat out = x;
  for (Index r = 0; r < x.rows(); ++r)
    if (norms(r) > eps) out.row(r) /= norms(r);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, norms, eps](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& y = t.node(self).value;
    const Mat& g = t.node(self).grad;
    Mat& ga = t.grad_buffer(ia);
    for (Index r = 0; r < y.rows(); ++r) {
      if (norms(r) > eps)
        ga.row(r) += (g.row(r) - y.row(r) * g.row(r).dot(y.row(r))) / norms(r);
      else
        ga.row(r) += g.row(r);
    }
  }, false);
}

// ---- reductions ----

inline Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_buffer(ia).array() += t.node(self).grad(0, 0);
  }, false);
}

inline Var mean(Var a) {
  if (a.value().size() == 0) throw Error("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

// Column mean of rows within each contiguous block of `block` rows.
inline Var block_mean_rows(Var a, Index block) {
  if (block <= 0 || a.rows() % block != 0) throw Error("block_mean_rows: rows not divisible by block");
  const Index n = a.rows() / block;
  Mat out = Mat::Zero(n, a.cols());
  for (Index b = 0; b < n; ++b) out.row(b) = a.value().middleRows(b * block, block).colwise().sum() / static_cast<double>(block);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, block](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& g = t.node(self).grad;
    Mat& ga = t.grad_buffer(ia);
    for (Index r = 0; r < ga.rows(); ++r) ga.row(r) += g.row(r / block) / static_cast<double>(block);
  }, false);
}

// out(r) = a(r, cols[r]) as an n×1 column.
inline Var pick(Var a, std::vector<int> cols) {
  if (static_cast<Index>(cols.size()) != a.rows()) throw Error("pick needs one column per row");
  Mat out(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) out(r, 0) = a.value()(r, cols[static_cast<std::size_t>(r)]);
  const int ia = a.index();
  return a.tape()->push(std::move(out), {ia}, [ia, cols = std::move(cols)](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const Mat& g = t.node(self).grad;
    Mat& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < cols.size(); ++r) ga(static_cast<Index>(r), cols[r]) += g(static_cast<Index>(r), 0);
  }, false);
}

// ---- losses ----

inline constexpr double kProbClamp = 1e-12;

// Mean binary cross-entropy of σ(logits) against 0/1 labels; probabilities
// clamped to [1e-12, 1 - 1e-12]. Clamped entries contribute no gradient.
inline Var bce_with_logits(Var logits, std::vector<double> labels) {
  if (logits.cols() != 1 || static_cast<Index>(labels.size()) != logits.rows() || labels.empty())
    throw Error("bce_with_logits: need one label per logit row");
  const Mat& s = logits.value();
  double total = 0.0;
  for (Index r = 0; r < s.rows(); ++r) {
    const double p = std::clamp(stable_sigmoid(s(r, 0)), kProbClamp, 1.0 - kProbClamp);
    const double y = labels[static_cast<std::size_t>(r)];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(labels.size());
  const int ia = logits.index();
  return logits.tape()->push(std::move(out), {ia}, [ia, labels = std::move(labels)](Tape& t, int self) {
    if (!t.needs_grad(ia)) return;
    const double g = t.node(self).grad(0, 0) / static_cast<double>(labels.size());
    const Mat& s = t.value(ia);
    Mat& ga = t.grad_buffer(ia);
    for (Index r = 0; r < s.rows(); ++r) {
      const double raw = stable_sigmoid(s(r, 0));
      if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;
      ga(r, 0) += g * (raw - labels[static_cast<std::size_t>(r)]);
    }
  }, false);
}

// Per-block scaled dot-product attention: rows are split into blocks of
// `block` tokens; each block attends only within itself.
// out_b = softmax(Q_b K_bᵀ / sqrt(dk)) V_b.
inline Var block_attention(Var q, Var k, Var v, Index block) {
  detail::same_tape(q, k);
  detail::same_tape(q, v);
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols()) throw Error("block_attention shape mismatch");
  if (block <= 0 || q.rows() % block != 0) throw Error("block_attention: rows not divisible by block");
  const Index nb = q.rows() / block;
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out(q.rows(), v.cols());
  auto weights = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(nb));
  for (Index b = 0; b < nb; ++b) {
    Mat sc = q.value().middleRows(b * block, block) * k.value().middleRows(b * block, block).transpose() * inv;
    for (Index r = 0; r < block; ++r) {
      const double m = sc.row(r).maxCoeff();
      sc.row(r) = (sc.row(r).array() - m).exp();
      sc.row(r) /= sc.row(r).sum();
    }
    out.middleRows(b * block, block).noalias() = sc * v.value().middleRows(b * block, block);
    (*weights)[static_cast<std::size_t>(b)] = std::move(sc);
  }
  const int iq = q.index(), ik = k.index(), iv = v.index();
  return q.tape()->push(std::move(out), {iq, ik, iv}, [iq, ik, iv, block, nb, inv, weights](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    for (Index b = 0; b < nb; ++b) {
      const Mat& a = (*weights)[static_cast<std::size_t>(b)];
      const auto gb = g.middleRows(b * block, block);
      if (t.needs_grad(iv)) t.grad_buffer(iv).middleRows(b * block, block).noalias() += a.transpose() * gb;
      Mat ga = gb * t.value(iv).middleRows(b * block, block).transpose();
      Eigen::VectorXd d = ga.cwiseProduct(a).rowwise().sum();
      Mat gs = (a.array() * (ga.array().colwise() - d.array())).matrix() * inv;
      if (t.needs_grad(iq)) t.grad_buffer(iq).middleRows(b * block, block).noalias() += gs * t.value(ik).middleRows(b * block, block);
      if (t.needs_grad(ik)) t.grad_buffer(ik).middleRows(b * block, block).noalias() += gs.transpose() * t.value(iq).middleRows(b * block, block);
    }
  }, false);
}

// x W + b with b a 1×out row.
inline Var affine(Var x, Var w, Var b) { return add(matmul(x, w), b); }

}  // namespace egl::nk
