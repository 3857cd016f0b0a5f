#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records each operation's output value together with a closure that
// pushes the output gradient back to its inputs. Parameters are leaves that
// accumulate into Parameter::grad when backward() reaches them. Everything is
// double precision; a tape is single-use and single-threaded.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/matrix.hpp"

namespace prosolabel::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Var constant(Matrix value) { return push(std::move(value), nullptr, nullptr); }

  // The node reads p.value in place; p must outlive the tape.
  Var parameter(Parameter& p) { return push(Matrix(), nullptr, &p); }

  Var record(Matrix value, Backward backward) {
    return push(std::move(value), std::move(backward), nullptr);
  }

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }

  // Adds `g` into the gradient slot of `v`. Parameter leaves add straight
  // into Parameter::grad.
  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (n.param) {
      n.param->grad.noalias() += g;
    } else if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad.noalias() += g;
    }
  }

  // Reverse sweep from a 1x1 root.
  void backward(Var root) {
    if (value(root).size() != 1) fail(Errc::DimMismatch, "backward root must be a scalar");
    accumulate(root, Matrix::Ones(1, 1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
  };

  Var push(Matrix value, Backward backward, Parameter* param) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), param});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations

// softmax(logits)-weighted sum of the tensor's layers; logits is 1 x L.
// `layers` is captured by reference and must outlive the tape.
inline Var weighted_layers(Tape& tape, const FeatureTensor& layers, Var logits) {
  const Matrix& z = tape.value(logits);
  if (static_cast<std::size_t>(z.size()) != layers.layers()) {
    fail(Errc::LayerCountMismatch, std::to_string(z.size()) + " logits for " +
                                       std::to_string(layers.layers()) + " layers");
  }
  std::vector<double> zs(z.data(), z.data() + z.size());
  Matrix out = fuse_layers_matrix(layers, zs);
  return tape.record(std::move(out), [&layers, logits, zs](Tape& t, const Matrix& g) {
    const auto grad = fuse_layers_logit_grad(layers, zs, g);
    Matrix gz(1, static_cast<Eigen::Index>(grad.size()));
    for (std::size_t l = 0; l < grad.size(); ++l) gz(0, static_cast<Eigen::Index>(l)) = grad[l];
    t.accumulate(logits, gz);
  });
}

inline Var concat_cols(Tape& tape, Var a, Var b) {
  const Matrix& va = tape.value(a);
  const Matrix& vb = tape.value(b);
  if (va.rows() != vb.rows()) fail(Errc::DimMismatch, "concat_cols row mismatch");
  Matrix out(va.rows(), va.cols() + vb.cols());
  out.leftCols(va.cols()) = va;
  out.rightCols(vb.cols()) = vb;
  const Eigen::Index left = va.cols();
  const Eigen::Index right = vb.cols();
  return tape.record(std::move(out), [a, b, left, right](Tape& t, const Matrix& g) {
    t.accumulate(a, g.leftCols(left));
    t.accumulate(b, g.rightCols(right));
  });
}

namespace detail {

// Rows of x stacked with offsets -pad..+pad into P x (K * C), zero outside.
inline Matrix im2col(const Matrix& x, int kernel) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index ch = x.cols();
  const int pad = kernel / 2;
  Matrix cols = Matrix::Zero(rows, ch * kernel);
  for (Eigen::Index p = 0; p < rows; ++p) {
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index src = p + k - pad;
      if (src < 0 || src >= rows) continue;
      cols.block(p, k * ch, 1, ch) = x.row(src);
    }
  }
  return cols;
}

inline Matrix col2im(const Matrix& cols, Eigen::Index rows, Eigen::Index ch, int kernel) {
  const int pad = kernel / 2;
  Matrix x = Matrix::Zero(rows, ch);
  for (Eigen::Index p = 0; p < rows; ++p) {
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index dst = p + k - pad;
      if (dst < 0 || dst >= rows) continue;
      x.row(dst) += cols.block(p, k * ch, 1, ch);
    }
  }
  return x;
}

}  // namespace detail

// 1-D convolution over rows with same padding (odd kernel).
// weight: (kernel * C_in) x C_out, bias: 1 x C_out.
inline Var conv1d_same(Tape& tape, Var x, Var weight, Var bias, int kernel) {
  const Matrix& vx = tape.value(x);
  const Matrix& w = tape.value(weight);
  if (kernel % 2 == 0) fail(Errc::DimMismatch, "kernel must be odd");
  if (w.rows() != vx.cols() * kernel) {
    fail(Errc::DimMismatch, "conv weight expects " + std::to_string(w.rows() / kernel) +
                                " input channels, got " + std::to_string(vx.cols()));
  }
  Matrix cols = detail::im2col(vx, kernel);
  Matrix out = cols * w;
  out.rowwise() += tape.value(bias).row(0);
  const Eigen::Index rows = vx.rows();
  const Eigen::Index ch = vx.cols();
  return tape.record(std::move(out), [x, weight, bias, kernel, rows, ch,
                                      cols = std::move(cols)](Tape& t, const Matrix& g) {
    t.accumulate(weight, cols.transpose() * g);
    t.accumulate(bias, g.colwise().sum());
    const Matrix dcols = g * t.value(weight).transpose();
    t.accumulate(x, detail::col2im(dcols, rows, ch, kernel));
  });
}

inline Var relu(Tape& tape, Var x) {
  Matrix out = tape.value(x).cwiseMax(0.0);
  return tape.record(std::move(out), [x](Tape& t, const Matrix& g) {
    const Matrix& v = t.value(x);
    t.accumulate(x, (v.array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

inline Var tanh(Tape& tape, Var x) {
  Matrix out = tape.value(x).array().tanh().matrix();
  return tape.record(out, [x, out](Tape& t, const Matrix& g) {
    t.accumulate(x, ((1.0 - out.array().square()) * g.array()).matrix());
  });
}

// x W + b with W: C_in x C_out, b: 1 x C_out.
inline Var affine(Tape& tape, Var x, Var weight, Var bias) {
  const Matrix& vx = tape.value(x);
  const Matrix& w = tape.value(weight);
  if (w.rows() != vx.cols()) fail(Errc::DimMismatch, "affine input width mismatch");
  Matrix out = vx * w;
  out.rowwise() += tape.value(bias).row(0);
  return tape.record(std::move(out), [x, weight, bias](Tape& t, const Matrix& g) {
    t.accumulate(weight, t.value(x).transpose() * g);
    t.accumulate(bias, g.colwise().sum());
    t.accumulate(x, g * t.value(weight).transpose());
  });
}

inline Var add(Tape& tape, std::span<const Var> terms) {
  Matrix out = Matrix::Zero(tape.value(terms.front()).rows(), tape.value(terms.front()).cols());
  for (Var v : terms) out += tape.value(v);
  std::vector<Var> inputs(terms.begin(), terms.end());
  return tape.record(std::move(out), [inputs](Tape& t, const Matrix& g) {
    for (Var v : inputs) t.accumulate(v, g);
  });
}

inline Var scale(Tape& tape, Var x, double factor) {
  Matrix out = tape.value(x) * factor;
  return tape.record(std::move(out), [x, factor](Tape& t, const Matrix& g) {
    t.accumulate(x, g * factor);
  });
}

// Row-wise log-softmax, numerically stable.
inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    const double lse = peak + std::log((logits.row(r).array() - peak).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

// Mean cross-entropy over rows whose target is >= 0; rows with target -1 are
// skipped entirely, so their logits never reach the result.
inline Var masked_cross_entropy(Tape& tape, Var logits, std::span<const int> targets) {
  const Matrix& z = tape.value(logits);
  if (static_cast<std::size_t>(z.rows()) != targets.size()) {
    fail(Errc::DimMismatch, "targets do not match logit rows");
  }
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    if (targets[r] >= z.cols()) fail(Errc::DimMismatch, "target class out of range");
    rows.push_back(static_cast<Eigen::Index>(r));
  }
  if (rows.empty()) fail(Errc::EmptyMask, "no mora-core rows in loss");

  double total = 0.0;
  Matrix probs(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = z.row(rows[i]);
    const double peak = row.maxCoeff();
    const double lse = peak + std::log((row.array() - peak).exp().sum());
    total += lse - row(targets[static_cast<std::size_t>(rows[i])]);
    probs.row(static_cast<Eigen::Index>(i)) = (row.array() - lse).exp();
  }
  const double n = static_cast<double>(rows.size());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  std::vector<int> picked;
  for (auto r : rows) picked.push_back(targets[static_cast<std::size_t>(r)]);
  return tape.record(std::move(out), [logits, rows, picked, probs = std::move(probs), n](
                                         Tape& t, const Matrix& g) {
    const Matrix& z = t.value(logits);
    Matrix dz = Matrix::Zero(z.rows(), z.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      dz.row(rows[i]) = probs.row(static_cast<Eigen::Index>(i));
      dz(rows[i], picked[i]) -= 1.0;
    }
    t.accumulate(logits, dz * (g(0, 0) / n));
  });
}

}  // namespace prosolabel::ad
