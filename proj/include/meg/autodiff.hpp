// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every backward rule is itself written in terms of differentiable ops, so a
// gradient computed with `create_graph = true` can be differentiated again.
// The gradient penalty on the energy needs exactly this: the parameter
// gradient of a squared input gradient.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "meg/errors.hpp"

namespace meg {

using Index = Eigen::Index;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

namespace ad {

template <typename S>
class Var;

namespace detail {

template <typename S>
using BackwardFn = std::function<std::vector<Var<S>>(const Var<S>& grad_out, const Var<S>& self,
                                                     const std::vector<Var<S>>& parents)>;

template <typename S>
struct Node {
  Mat<S> value;
  bool requires_grad = false;
  std::vector<Var<S>> parents;
  BackwardFn<S> backward;
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII switch for graph recording on the current thread.
class GradMode {
 public:
  explicit GradMode(bool enabled) : previous_(detail::grad_mode()) { detail::grad_mode() = enabled; }
  ~GradMode() { detail::grad_mode() = previous_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

template <typename S>
class Var {
 public:
  Var() = default;

  static Var constant(Mat<S> value) {
    auto node = std::make_shared<detail::Node<S>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  /// Leaf that gradients can be taken with respect to.
  static Var variable(Mat<S> value) {
    auto node = std::make_shared<detail::Node<S>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  static Var scalar(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Mat<S>& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  S item() const {
    if (rows() != 1 || cols() != 1) throw ConfigError("item() on a non-scalar value");
    return node_->value(0, 0);
  }
  Var detach() const { return constant(node_->value); }

  const std::shared_ptr<detail::Node<S>>& node() const { return node_; }
  explicit Var(std::shared_ptr<detail::Node<S>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<S>> node_;
};

template <typename S>
Var<S> make_op(Mat<S> value, std::vector<Var<S>> parents, detail::BackwardFn<S> backward) {
  auto node = std::make_shared<detail::Node<S>>();
  node->value = std::move(value);
  if (detail::grad_mode()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Var<S>(std::move(node));
}

namespace detail {
inline void require_same_shape(Index r1, Index c1, Index r2, Index c2, const char* op) {
  if (r1 != r2 || c1 != c2) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(r1) + "x" +
                      std::to_string(c1) + " vs " + std::to_string(r2) + "x" + std::to_string(c2));
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename S>
Var<S> neg(const Var<S>& a);
template <typename S>
Var<S> scale(const Var<S>& a, S c);

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "add");
  return make_op<S>(a.value() + b.value(), {a, b},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{g, g};
                    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "sub");
  return make_op<S>(a.value() - b.value(), {a, b},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{g, p[1].requires_grad() ? neg(g) : Var<S>()};
                    });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return make_op<S>(-a.value(), {a}, [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{neg(g)};
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
  return make_op<S>(a.value() * c, {a},
                    [c](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{scale(g, c)};
                    });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
  return make_op<S>((a.value().array() + c).matrix(), {a},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{g};
                    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "mul");
  return make_op<S>(a.value().cwiseProduct(b.value()), {a, b},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{p[0].requires_grad() ? mul(g, p[1]) : Var<S>(),
                                                 p[1].requires_grad() ? mul(g, p[0]) : Var<S>()};
                    });
}

/// Product with a fixed (non-differentiable) matrix of the same shape.
template <typename S>
Var<S> mul_const(const Var<S>& a, const Mat<S>& mask) {
  detail::require_same_shape(a.rows(), a.cols(), mask.rows(), mask.cols(), "mul_const");
  return make_op<S>(a.value().cwiseProduct(mask), {a},
                    [mask](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{mul_const(g, mask)};
                    });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return mul(a, a);
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> matmul_tn(const Var<S>& a, const Var<S>& b);

/// a * b
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows()) detail::require_same_shape(a.cols(), 0, b.rows(), 0, "matmul");
  Mat<S> out = a.value() * b.value();
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{p[0].requires_grad() ? matmul_nt(g, p[1]) : Var<S>(),
                                                 p[1].requires_grad() ? matmul_tn(p[0], g) : Var<S>()};
                    });
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.cols()) detail::require_same_shape(a.cols(), 0, b.cols(), 0, "matmul_nt");
  Mat<S> out = a.value() * b.value().transpose();
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{p[0].requires_grad() ? matmul(g, p[1]) : Var<S>(),
                                                 p[1].requires_grad() ? matmul_tn(g, p[0]) : Var<S>()};
                    });
}

/// a^T * b
template <typename S>
Var<S> matmul_tn(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows()) detail::require_same_shape(a.rows(), 0, b.rows(), 0, "matmul_tn");
  Mat<S> out = a.value().transpose() * b.value();
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{p[0].requires_grad() ? matmul_nt(p[1], g) : Var<S>(),
                                                 p[1].requires_grad() ? matmul(p[0], g) : Var<S>()};
                    });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

template <typename S>
Var<S> broadcast_rows(const Var<S>& row, Index m);
template <typename S>
Var<S> broadcast_cols(const Var<S>& col, Index n);
template <typename S>
Var<S> broadcast_scalar(const Var<S>& s, Index rows, Index cols);

/// Column sums: m x n -> 1 x n.
template <typename S>
Var<S> sum_rows(const Var<S>& a) {
  const Index m = a.rows();
  return make_op<S>(a.value().colwise().sum(), {a},
                    [m](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{broadcast_rows(g, m)};
                    });
}

/// Row sums: m x n -> m x 1.
template <typename S>
Var<S> sum_cols(const Var<S>& a) {
  const Index n = a.cols();
  return make_op<S>(a.value().rowwise().sum(), {a},
                    [n](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{broadcast_cols(g, n)};
                    });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  const Index r = a.rows(), c = a.cols();
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op<S>(std::move(out), {a},
                    [r, c](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{broadcast_scalar(g, r, c)};
                    });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.rows() * a.cols()));
}

/// 1 x n -> m x n
template <typename S>
Var<S> broadcast_rows(const Var<S>& row, Index m) {
  if (row.rows() != 1) throw ConfigError("broadcast_rows expects a row vector");
  return make_op<S>(row.value().replicate(m, 1), {row},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{sum_rows(g)};
                    });
}

/// m x 1 -> m x n
template <typename S>
Var<S> broadcast_cols(const Var<S>& col, Index n) {
  if (col.cols() != 1) throw ConfigError("broadcast_cols expects a column vector");
  return make_op<S>(col.value().replicate(1, n), {col},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{sum_cols(g)};
                    });
}

template <typename S>
Var<S> broadcast_scalar(const Var<S>& s, Index rows, Index cols) {
  if (s.rows() != 1 || s.cols() != 1) throw ConfigError("broadcast_scalar expects a 1x1 value");
  return make_op<S>(Mat<S>::Constant(rows, cols, s.value()(0, 0)), {s},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{sum(g)};
                    });
}

/// a + broadcast(bias) where bias is 1 x n.
template <typename S>
Var<S> add_row(const Var<S>& a, const Var<S>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    detail::require_same_shape(1, a.cols(), bias.rows(), bias.cols(), "add_row");
  }
  Mat<S> out = a.value();
  out.rowwise() += bias.value().row(0);
  return make_op<S>(std::move(out), {a, bias},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{g, p[1].requires_grad() ? sum_rows(g) : Var<S>()};
                    });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename S>
S softplus_value(S a) {
  return std::max(a, S(0)) + std::log1p(std::exp(-std::abs(a)));
}

template <typename S>
S sigmoid_value(S a) {
  if (a >= 0) return S(1) / (S(1) + std::exp(-a));
  const S e = std::exp(a);
  return e / (S(1) + e);
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Mat<S> mask = a.value().unaryExpr([slope](S v) { return v > 0 ? S(1) : slope; });
  Mat<S> out = a.value().cwiseProduct(mask);
  return make_op<S>(std::move(out), {a},
                    [mask = std::move(mask)](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{mul_const(g, mask)};
                    });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu(a, S(0));
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  Mat<S> out = a.value().array().tanh().matrix();
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const Var<S>& self, const std::vector<Var<S>>&) {
                      // 1 - tanh^2
                      return std::vector<Var<S>>{mul(g, add_scalar(neg(square(self)), S(1)))};
                    });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Mat<S> out = a.value().unaryExpr([](S v) { return sigmoid_value(v); });
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const Var<S>& self, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{mul(g, sub(self, square(self)))};
                    });
}

/// log(1 + e^a), evaluated as max(a, 0) + log1p(e^{-|a|}).
template <typename S>
Var<S> softplus(const Var<S>& a) {
  Mat<S> out = a.value().unaryExpr([](S v) { return softplus_value(v); });
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{mul(g, sigmoid(p[0]))};
                    });
}

template <typename S>
Var<S> swish(const Var<S>& a) {
  return mul(a, sigmoid(a));
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  Mat<S> out = a.value().array().exp().matrix();
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const Var<S>& self, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{mul(g, self)};
                    });
}

template <typename S>
Var<S> reciprocal(const Var<S>& a) {
  Mat<S> out = a.value().array().inverse().matrix();
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const Var<S>& self, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{neg(mul(g, square(self)))};
                    });
}

template <typename S>
Var<S> log(const Var<S>& a) {
  Mat<S> out = a.value().array().log().matrix();
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{mul(g, reciprocal(p[0]))};
                    });
}

/// Row-wise log-sum-exp: m x n -> m x 1.
template <typename S>
Var<S> logsumexp_rows(const Var<S>& a) {
  const Mat<S>& v = a.value();
  Mat<S> out(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    const S mx = v.row(i).maxCoeff();
    out(i, 0) = mx + std::log((v.row(i).array() - mx).exp().sum());
  }
  const Index n = v.cols();
  return make_op<S>(std::move(out), {a},
                    [n](const Var<S>& g, const Var<S>& self, const std::vector<Var<S>>& p) {
                      Var<S> softmax = exp(sub(p[0], broadcast_cols(self, n)));
                      return std::vector<Var<S>>{mul(broadcast_cols(g, n), softmax)};
                    });
}

// ---------------------------------------------------------------------------
// Column slicing and layout

template <typename S>
Var<S> pad_cols(const Var<S>& a, Index offset, Index total);

template <typename S>
Var<S> slice_cols(const Var<S>& a, Index offset, Index count) {
  if (offset < 0 || offset + count > a.cols()) throw ConfigError("slice_cols out of range");
  const Index total = a.cols();
  return make_op<S>(a.value().middleCols(offset, count), {a},
                    [offset, total](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{pad_cols(g, offset, total)};
                    });
}

/// Embeds `a` at column `offset` of a zero matrix with `total` columns.
template <typename S>
Var<S> pad_cols(const Var<S>& a, Index offset, Index total) {
  Mat<S> out = Mat<S>::Zero(a.rows(), total);
  out.middleCols(offset, a.cols()) = a.value();
  const Index count = a.cols();
  return make_op<S>(std::move(out), {a},
                    [offset, count](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{slice_cols(g, offset, count)};
                    });
}

template <typename S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows()) detail::require_same_shape(a.rows(), 0, b.rows(), 0, "concat_cols");
  Mat<S> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index na = a.cols(), nb = b.cols();
  return make_op<S>(std::move(out), {a, b},
                    [na, nb](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{p[0].requires_grad() ? slice_cols(g, 0, na) : Var<S>(),
                                                 p[1].requires_grad() ? slice_cols(g, na, nb) : Var<S>()};
                    });
}

/// Row-major reinterpretation to rows x cols.
template <typename S>
Var<S> reshape(const Var<S>& a, Index rows, Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw ConfigError("reshape: element count mismatch");
  Mat<S> out = Eigen::Map<const Mat<S>>(a.value().data(), rows, cols);
  const Index r0 = a.rows(), c0 = a.cols();
  return make_op<S>(std::move(out), {a},
                    [r0, c0](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{reshape(g, r0, c0)};
                    });
}

// ---------------------------------------------------------------------------
// Image ops. Images are stored one per row in height-width-channel order.

struct ConvGeometry {
  Index height = 0, width = 0, channels = 0;
  Index kernel = 1, stride = 1, pad = 0;
  Index out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  Index out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  Index patch_size() const { return kernel * kernel * channels; }
};

template <typename S>
Var<S> col2im(const Var<S>& cols, Index batch, const ConvGeometry& geo);

/// m x (H*W*C) -> (m*Ho*Wo) x (K*K*C), zero padded; patch order (ky, kx, c).
template <typename S>
Var<S> im2col(const Var<S>& x, const ConvGeometry& geo) {
  const Index m = x.rows(), ho = geo.out_height(), wo = geo.out_width();
  const Index c = geo.channels, k = geo.kernel;
  if (x.cols() != geo.height * geo.width * c) throw ConfigError("im2col: input width mismatch");
  Mat<S> out = Mat<S>::Zero(m * ho * wo, geo.patch_size());
  const Mat<S>& v = x.value();
  for (Index n = 0; n < m; ++n) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index row = (n * ho + oy) * wo + ox;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * geo.stride - geo.pad + ky;
          if (iy < 0 || iy >= geo.height) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * geo.stride - geo.pad + kx;
            if (ix < 0 || ix >= geo.width) continue;
            out.row(row).segment((ky * k + kx) * c, c) = v.row(n).segment((iy * geo.width + ix) * c, c);
          }
        }
      }
    }
  }
  return make_op<S>(std::move(out), {x},
                    [m, geo](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{col2im(g, m, geo)};
                    });
}

/// Adjoint of im2col: scatters patches back, summing overlaps.
template <typename S>
Var<S> col2im(const Var<S>& cols, Index batch, const ConvGeometry& geo) {
  const Index ho = geo.out_height(), wo = geo.out_width();
  const Index c = geo.channels, k = geo.kernel;
  if (cols.rows() != batch * ho * wo || cols.cols() != geo.patch_size()) {
    throw ConfigError("col2im: shape mismatch");
  }
  Mat<S> out = Mat<S>::Zero(batch, geo.height * geo.width * c);
  const Mat<S>& v = cols.value();
  for (Index n = 0; n < batch; ++n) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index row = (n * ho + oy) * wo + ox;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * geo.stride - geo.pad + ky;
          if (iy < 0 || iy >= geo.height) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * geo.stride - geo.pad + kx;
            if (ix < 0 || ix >= geo.width) continue;
            out.row(n).segment((iy * geo.width + ix) * c, c) += v.row(row).segment((ky * k + kx) * c, c);
          }
        }
      }
    }
  }
  return make_op<S>(std::move(out), {cols},
                    [geo](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{im2col(g, geo)};
                    });
}

template <typename S>
Var<S> sumpool2x(const Var<S>& x, Index height, Index width, Index channels);

/// Nearest-neighbour 2x upsampling of H x W x C images.
template <typename S>
Var<S> upsample2x(const Var<S>& x, Index height, Index width, Index channels) {
  if (x.cols() != height * width * channels) throw ConfigError("upsample2x: input width mismatch");
  const Index w2 = 2 * width;
  Mat<S> out(x.rows(), 4 * height * width * channels);
  const Mat<S>& v = x.value();
  for (Index n = 0; n < x.rows(); ++n) {
    for (Index y = 0; y < 2 * height; ++y) {
      for (Index xx = 0; xx < w2; ++xx) {
        out.row(n).segment((y * w2 + xx) * channels, channels) =
            v.row(n).segment(((y / 2) * width + xx / 2) * channels, channels);
      }
    }
  }
  return make_op<S>(std::move(out), {x},
                    [height, width, channels](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{sumpool2x(g, height, width, channels)};
                    });
}

/// Adjoint of upsample2x; `height`, `width` are the pooled dimensions.
template <typename S>
Var<S> sumpool2x(const Var<S>& x, Index height, Index width, Index channels) {
  if (x.cols() != 4 * height * width * channels) throw ConfigError("sumpool2x: input width mismatch");
  const Index w2 = 2 * width;
  Mat<S> out = Mat<S>::Zero(x.rows(), height * width * channels);
  const Mat<S>& v = x.value();
  for (Index n = 0; n < x.rows(); ++n) {
    for (Index y = 0; y < 2 * height; ++y) {
      for (Index xx = 0; xx < w2; ++xx) {
        out.row(n).segment(((y / 2) * width + xx / 2) * channels, channels) +=
            v.row(n).segment((y * w2 + xx) * channels, channels);
      }
    }
  }
  return make_op<S>(std::move(out), {x},
                    [height, width, channels](const Var<S>& g, const Var<S>&, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{upsample2x(g, height, width, channels)};
                    });
}

// ---------------------------------------------------------------------------
// Gradients

/// Gradients of `output` with respect to each of `wrt`, seeded with `seed`
/// (same shape as `output`). Unreachable inputs receive zeros. With
/// `create_graph`, the returned gradients are themselves differentiable.
template <typename S>
std::vector<Var<S>> grad(const Var<S>& output, const std::vector<Var<S>>& wrt, const Var<S>& seed,
                         bool create_graph = false) {
  using NodePtr = std::shared_ptr<detail::Node<S>>;
  detail::require_same_shape(output.rows(), output.cols(), seed.rows(), seed.cols(), "grad seed");

  std::vector<NodePtr> order;
  if (output.requires_grad()) {
    std::unordered_set<const detail::Node<S>*> visited;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        const NodePtr& parent = node->parents[next++].node();
        if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  GradMode mode(create_graph);
  std::unordered_map<const detail::Node<S>*, Var<S>> grads;
  grads[output.node().get()] = create_graph ? seed : seed.detach();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr& node = *it;
    auto found = grads.find(node.get());
    if (found == grads.end() || !node->backward) continue;
    const Var<S> upstream = found->second;
    const std::vector<Var<S>> parent_grads = node->backward(upstream, Var<S>(node), node->parents);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Var<S>& parent = node->parents[i];
      if (!parent.requires_grad() || !parent_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(parent.node().get(), parent_grads[i]);
      if (!inserted) slot->second = add(slot->second, parent_grads[i]);
    }
  }

  std::vector<Var<S>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = grads.find(w.node().get());
    if (found == grads.end()) {
      result.push_back(Var<S>::constant(Mat<S>::Zero(w.rows(), w.cols())));
    } else {
      result.push_back(found->second);
    }
  }
  return result;
}

/// Gradients of a scalar output.
template <typename S>
std::vector<Var<S>> grad(const Var<S>& output, const std::vector<Var<S>>& wrt, bool create_graph = false) {
  if (output.rows() != 1 || output.cols() != 1) throw ConfigError("grad: output must be scalar");
  return grad(output, wrt, Var<S>::scalar(S(1)), create_graph);
}

}  // namespace ad
}  // namespace meg
