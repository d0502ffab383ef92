#pragma once

// Matrix-valued reverse-mode automatic differentiation.
//
// A Tape records every intermediate value produced by the ops below together
// with a closure that pushes the node's adjoint back into its parents.  Nodes
// are stored in creation order, so a single reverse sweep is a valid
// topological order.  Column vectors are n x 1 matrices.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pathseek {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace ad {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int index = -1;

  bool valid() const { return tape != nullptr && index >= 0; }
  const Mat<Scalar>& value() const { return tape->value(index); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Eigen::Index size() const { return value().size(); }
  Scalar scalar() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;
  using Backward = std::function<void(Tape&, int)>;

  Var<Scalar> leaf(Matrix value) { return push(std::move(value), true, {}); }
  Var<Scalar> constant(Matrix value) { return push(std::move(value), false, {}); }

  // Records an op output.  The backward closure is dropped when no parent
  // requires a gradient or recording is disabled.
  Var<Scalar> record(Matrix value, std::initializer_list<Var<Scalar>> parents,
                     Backward backward) {
    bool needs = false;
    if (recording_) {
      for (const auto& p : parents) {
        check_owner(p);
        needs = needs || nodes_[p.index].requires_grad;
      }
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Matrix& value(int i) const { return nodes_[i].value; }
  bool requires_grad(int i) const { return nodes_[i].requires_grad; }
  bool has_grad(int i) const { return nodes_[i].grad.size() != 0; }

  // Adjoint of node i; zero if nothing flowed into it.
  Matrix grad(int i) const {
    const Node& n = nodes_[i];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  Matrix grad(const Var<Scalar>& v) const { return grad(v.index); }

  const Matrix& adjoint(int i) const { return nodes_[i].grad; }

  template <typename Derived>
  void accumulate(int i, const Eigen::MatrixBase<Derived>& contribution) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

  void backward(const Var<Scalar>& root) {
    check_owner(root);
    if (root.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root.index].requires_grad) return;
    nodes_[root.index].grad = Matrix::Ones(1, 1);
    for (int i = root.index; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() != 0 && n.backward) n.backward(*this, i);
    }
  }

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<Scalar> push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad && recording_});
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void check_owner(const Var<Scalar>& v) const {
    if (v.tape != this || v.index < 0 || v.index >= static_cast<int>(nodes_.size()))
      throw std::logic_error("ad: variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
  bool recording_ = true;
};

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("ad shape mismatch: ") + what);
}
}  // namespace detail

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  detail::require(a.cols() == b.rows(), "matmul");
  Tape<S>& t = *a.tape;
  const int ia = a.index, ib = b.index;
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// W x + b for a column vector x.
template <typename S>
Var<S> affine(const Var<S>& w, const Var<S>& x, const Var<S>& b) {
  detail::require(w.cols() == x.rows() && x.cols() == 1 && b.rows() == w.rows() && b.cols() == 1,
                  "affine");
  Tape<S>& t = *w.tape;
  const int iw = w.index, ix = x.index, ib = b.index;
  Mat<S> out = w.value() * x.value() + b.value();
  return t.record(std::move(out), {w, x, b}, [iw, ix, ib](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    if (t.requires_grad(iw)) t.accumulate(iw, g * t.value(ix).transpose());
    if (t.requires_grad(ix)) t.accumulate(ix, t.value(iw).transpose() * g);
    t.accumulate(ib, g);
  });
}

// Row-wise affine map of a stacked input: X W^T + 1 b^T.
template <typename S>
Var<S> affine_rows(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  detail::require(x.cols() == w.cols() && b.rows() == w.rows() && b.cols() == 1, "affine_rows");
  Tape<S>& t = *x.tape;
  const int ix = x.index, iw = w.index, ib = b.index;
  Mat<S> out = x.value() * w.value().transpose();
  out.rowwise() += b.value().col(0).transpose();
  return t.record(std::move(out), {x, w, b}, [ix, iw, ib](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw));
    if (t.requires_grad(iw)) t.accumulate(iw, g.transpose() * t.value(ix));
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum().transpose());
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  const int ia = a.index, ib = b.index;
  return a.tape->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<S>& t, int self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, t.adjoint(self));
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  const int ia = a.index, ib = b.index;
  return a.tape->record(a.value() - b.value(), {a, b}, [ia, ib](Tape<S>& t, int self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, -t.adjoint(self));
  });
}

template <typename S>
Var<S> hadamard(const Var<S>& a, const Var<S>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  const int ia = a.index, ib = b.index;
  return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  const int ia = a.index;
  return a.tape->record(a.value() * factor, {a}, [ia, factor](Tape<S>& t, int self) {
    t.accumulate(ia, t.adjoint(self) * factor);
  });
}

template <typename S>
Var<S> add_constant(const Var<S>& a, S c) {
  const int ia = a.index;
  Mat<S> out = a.value().array() + c;
  return a.tape->record(std::move(out), {a}, [ia](Tape<S>& t, int self) {
    t.accumulate(ia, t.adjoint(self));
  });
}

// Elementwise map with derivative df(x, y) evaluated from input x and output y.
template <typename S, typename F, typename DF>
Var<S> unary(const Var<S>& a, F f, DF df) {
  const int ia = a.index;
  Mat<S> out = a.value().unaryExpr(f);
  return a.tape->record(std::move(out), {a}, [ia, df](Tape<S>& t, int self) {
    const Mat<S>& x = t.value(ia);
    const Mat<S>& y = t.value(self);
    Mat<S> d = t.adjoint(self);
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) *= df(x(i), y(i));
    t.accumulate(ia, d);
  });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  return unary(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return unary(a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Var<S> rsqrt(const Var<S>& a) {
  return unary(a, [](S x) { return S(1) / std::sqrt(x); },
               [](S x, S y) { return S(-0.5) * y / x; });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return unary(a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return unary(a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
               [](S, S y) { return y * (S(1) - y); });
}

// Exact GELU, x * Phi(x).
template <typename S>
S gelu_value(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}
template <typename S>
S gelu_derivative(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
  return cdf + x * pdf;
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
  return unary(a, [](S x) { return gelu_value(x); }, [](S x, S) { return gelu_derivative(x); });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  const int ia = a.index;
  return a.tape->record(a.value().transpose(), {a}, [ia](Tape<S>& t, int self) {
    t.accumulate(ia, t.adjoint(self).transpose());
  });
}

template <typename S>
Var<S> concat_rows(const Var<S>& a, const Var<S>& b) {
  detail::require(a.cols() == b.cols(), "concat_rows");
  const int ia = a.index, ib = b.index;
  const Eigen::Index ra = a.rows(), rb = b.rows();
  Mat<S> out(ra + rb, a.cols());
  out << a.value(), b.value();
  return a.tape->record(std::move(out), {a, b}, [ia, ib, ra, rb](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    t.accumulate(ia, g.topRows(ra));
    t.accumulate(ib, g.bottomRows(rb));
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && start + count <= a.rows(), "slice_rows");
  const int ia = a.index;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape->record(a.value().middleRows(start, count), {a},
                        [ia, start, count, rows, cols](Tape<S>& t, int self) {
                          Mat<S> g = Mat<S>::Zero(rows, cols);
                          g.middleRows(start, count) = t.adjoint(self);
                          t.accumulate(ia, g);
                        });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && start + count <= a.cols(), "slice_cols");
  const int ia = a.index;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape->record(a.value().middleCols(start, count), {a},
                        [ia, start, count, rows, cols](Tape<S>& t, int self) {
                          Mat<S> g = Mat<S>::Zero(rows, cols);
                          g.middleCols(start, count) = t.adjoint(self);
                          t.accumulate(ia, g);
                        });
}

// Picks rows of a column vector: out[k] = a[index[k]].
template <typename S>
Var<S> gather(const Var<S>& a, std::vector<int> index) {
  detail::require(a.cols() == 1, "gather");
  const int ia = a.index;
  const Eigen::Index n = a.rows();
  Mat<S> out(static_cast<Eigen::Index>(index.size()), 1);
  for (std::size_t k = 0; k < index.size(); ++k) {
    detail::require(index[k] >= 0 && index[k] < n, "gather index");
    out(static_cast<Eigen::Index>(k), 0) = a.value()(index[k], 0);
  }
  return a.tape->record(std::move(out), {a}, [ia, n, index = std::move(index)](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    Mat<S> d = Mat<S>::Zero(n, 1);
    for (std::size_t k = 0; k < index.size(); ++k) d(index[k], 0) += g(static_cast<Eigen::Index>(k), 0);
    t.accumulate(ia, d);
  });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  const int ia = a.index;
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [ia, r, c](Tape<S>& t, int self) {
    t.accumulate(ia, Mat<S>::Constant(r, c, t.adjoint(self)(0, 0)));
  });
}

template <typename S>
Vec<S> softmax_values(const Eigen::Ref<const Vec<S>>& logits) {
  const S m = logits.maxCoeff();
  Vec<S> e = (logits.array() - m).exp();
  return e / e.sum();
}

// Softmax of a column vector.
template <typename S>
Var<S> softmax(const Var<S>& a) {
  detail::require(a.cols() == 1 && a.rows() > 0, "softmax");
  const int ia = a.index;
  Mat<S> out = softmax_values<S>(a.value().col(0));
  return a.tape->record(std::move(out), {a}, [ia](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.adjoint(self);
    const S inner = y.cwiseProduct(g).sum();
    t.accumulate(ia, y.cwiseProduct((g.array() - inner).matrix()));
  });
}

// -log softmax(logits)[label], in log-sum-exp form.
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, int label) {
  detail::require(logits.cols() == 1, "cross_entropy");
  if (label < 0 || label >= logits.rows()) throw std::out_of_range("cross_entropy: label out of range");
  const int il = logits.index;
  const auto& z = logits.value();
  const S m = z.maxCoeff();
  const S lse = m + std::log((z.array() - m).exp().sum());
  Mat<S> out(1, 1);
  out(0, 0) = lse - z(label, 0);
  return logits.tape->record(std::move(out), {logits}, [il, label](Tape<S>& t, int self) {
    Mat<S> p = softmax_values<S>(t.value(il).col(0));
    p(label, 0) -= S(1);
    t.accumulate(il, p * t.adjoint(self)(0, 0));
  });
}

// Layer normalisation of a column vector with learnable gain and bias.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps = S(1e-5)) {
  detail::require(x.cols() == 1 && gain.rows() == x.rows() && bias.rows() == x.rows(), "layer_norm");
  const int ix = x.index, ig = gain.index, ib = bias.index;
  const auto& v = x.value();
  const S n = static_cast<S>(v.rows());
  const S mean = v.sum() / n;
  const Mat<S> centered = (v.array() - mean).matrix();
  const S var = centered.squaredNorm() / n;
  const S inv = S(1) / std::sqrt(var + eps);
  Mat<S> xhat = centered * inv;
  Mat<S> out = xhat.cwiseProduct(gain.value()) + bias.value();
  return x.tape->record(std::move(out), {x, gain, bias},
                        [ix, ig, ib, xhat = std::move(xhat), inv, n](Tape<S>& t, int self) {
                          const auto& g = t.adjoint(self);
                          if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat));
                          t.accumulate(ib, g);
                          if (t.requires_grad(ix)) {
                            const Mat<S> gx = g.cwiseProduct(t.value(ig));
                            const S mean_g = gx.sum() / n;
                            const S mean_gx = gx.cwiseProduct(xhat).sum() / n;
                            Mat<S> dx = ((gx.array() - mean_g) - xhat.array() * mean_gx).matrix() * inv;
                            t.accumulate(ix, dx);
                          }
                        });
}

// Drops the oldest column of a D x M window and appends h as the newest.
template <typename S>
Var<S> fifo_push(const Var<S>& window, const Var<S>& h) {
  detail::require(h.cols() == 1 && h.rows() == window.rows() && window.cols() >= 1, "fifo_push");
  const int iw = window.index, ih = h.index;
  const Eigen::Index m = window.cols();
  Mat<S> out(window.rows(), m);
  out.leftCols(m - 1) = window.value().rightCols(m - 1);
  out.col(m - 1) = h.value().col(0);
  return window.tape->record(std::move(out), {window, h}, [iw, ih, m](Tape<S>& t, int self) {
    const auto& g = t.adjoint(self);
    if (t.requires_grad(iw)) {
      Mat<S> d = Mat<S>::Zero(g.rows(), m);
      d.rightCols(m - 1) = g.leftCols(m - 1);
      t.accumulate(iw, d);
    }
    t.accumulate(ih, g.col(m - 1));
  });
}

// Multiplies by a fixed mask (dropout).
template <typename S>
Var<S> mask(const Var<S>& a, Mat<S> m) {
  detail::require(a.rows() == m.rows() && a.cols() == m.cols(), "mask");
  const int ia = a.index;
  Mat<S> out = a.value().cwiseProduct(m);
  return a.tape->record(std::move(out), {a}, [ia, m = std::move(m)](Tape<S>& t, int self) {
    t.accumulate(ia, t.adjoint(self).cwiseProduct(m));
  });
}

}  // namespace ad
}  // namespace pathseek
