// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meg/autodiff.hpp"
#include "meg/rng.hpp"

namespace meg::nn {

/// Per-row tensor shape, flattened in height-width-channel order.
struct Shape {
  Index height = 1;
  Index width = 1;
  Index channels = 1;

  Index size() const { return height * width * channels; }
  static Shape flat(Index n) { return {1, 1, n}; }
  bool operator==(const Shape&) const = default;
  std::string to_string() const;
  /// "d" or "HxWxC".
  static Shape parse(std::string_view text);
};

enum class Activation { Relu, LeakyRelu, Tanh, Sigmoid, Softplus, Swish };

struct LayerSpec {
  enum class Kind { Dense, Conv, Upsample2x, Reshape, Activation, HalfSquaredNorm };
  Kind kind = Kind::Dense;
  Index units = 0;  // dense outputs or conv output channels
  Index kernel = 1, stride = 1, pad = 0;
  Shape target;  // reshape
  Activation activation = Activation::LeakyRelu;
  double slope = 0.2;

  std::string to_string() const;
};

/// Comma-separated layer program, e.g. "dense:256,lrelu,dense:256,lrelu,dense:1"
/// or "conv:32:4:2:1,lrelu,conv:64:4:2:1,lrelu,dense:1". Tokens:
///   dense:N            affine map to N units
///   conv:C:K:S:P       2D convolution, C output channels, kernel K, stride S, pad P
///   up2                nearest-neighbour 2x upsampling
///   reshape:HxWxC      reinterpret the row as an image
///   relu | lrelu[:a] | tanh | sigmoid | softplus | swish
///   halfsq             1/2 * squared norm of the row (parameter free)
/// An empty program is the identity map.
struct NetworkSpec {
  Shape input;
  std::vector<LayerSpec> layers;

  static NetworkSpec parse(std::string_view program, Shape input);
  std::string program() const;
  Shape output_shape() const;
  /// Input shape seen by each layer.
  std::vector<Shape> layer_inputs() const;
};

/// Shapes of the trainable tensors of a network, in order.
std::vector<std::pair<Index, Index>> parameter_shapes(const NetworkSpec& spec);

template <typename S>
using ParameterSet = std::vector<Mat<S>>;

std::size_t parameter_count(const NetworkSpec& spec);

template <typename S>
ParameterSet<S> init_parameters(const NetworkSpec& spec, Rng& rng) {
  ParameterSet<S> params;
  const auto inputs = spec.layer_inputs();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    Index fan_in = 0, rows = 0, cols = 0;
    if (layer.kind == LayerSpec::Kind::Dense) {
      fan_in = inputs[i].size();
      rows = fan_in;
      cols = layer.units;
    } else if (layer.kind == LayerSpec::Kind::Conv) {
      fan_in = layer.kernel * layer.kernel * inputs[i].channels;
      rows = fan_in;
      cols = layer.units;
    } else {
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Mat<S> w(rows, cols);
    Mat<S> b(1, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) w(r, c) = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
    for (Index c = 0; c < cols; ++c) b(0, c) = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
    params.push_back(std::move(w));
    params.push_back(std::move(b));
  }
  return params;
}

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& params) {
  ParameterSet<To> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.template cast<To>());
  return out;
}

template <typename S>
std::vector<ad::Var<S>> bind(const ParameterSet<S>& params, bool trainable) {
  std::vector<ad::Var<S>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(trainable ? ad::Var<S>::variable(p) : ad::Var<S>::constant(p));
  return vars;
}

/// Applies the layer program to a batch (one sample per row).
template <typename S>
ad::Var<S> forward(const NetworkSpec& spec, const ad::Var<S>& x, std::span<const ad::Var<S>> params) {
  using ad::Var;
  if (x.cols() != spec.input.size()) {
    throw ConfigError("network input width " + std::to_string(x.cols()) + " does not match expected " +
                      std::to_string(spec.input.size()));
  }
  if (params.size() != parameter_shapes(spec).size()) throw ConfigError("parameter tensor count mismatch");
  Var<S> h = x;
  Shape shape = spec.input;
  std::size_t next = 0;
  const Index m = x.rows();
  for (const LayerSpec& layer : spec.layers) {
    switch (layer.kind) {
      case LayerSpec::Kind::Dense: {
        h = ad::add_row(ad::matmul(h, params[next]), params[next + 1]);
        next += 2;
        shape = Shape::flat(layer.units);
        break;
      }
      case LayerSpec::Kind::Conv: {
        ad::ConvGeometry geo{shape.height, shape.width, shape.channels, layer.kernel, layer.stride, layer.pad};
        Var<S> cols = ad::im2col(h, geo);
        Var<S> out = ad::add_row(ad::matmul(cols, params[next]), params[next + 1]);
        next += 2;
        shape = Shape{geo.out_height(), geo.out_width(), layer.units};
        h = ad::reshape(out, m, shape.size());
        break;
      }
      case LayerSpec::Kind::Upsample2x:
        h = ad::upsample2x(h, shape.height, shape.width, shape.channels);
        shape = Shape{2 * shape.height, 2 * shape.width, shape.channels};
        break;
      case LayerSpec::Kind::Reshape:
        shape = layer.target;
        break;
      case LayerSpec::Kind::Activation:
        switch (layer.activation) {
          case Activation::Relu: h = ad::relu(h); break;
          case Activation::LeakyRelu: h = ad::leaky_relu(h, static_cast<S>(layer.slope)); break;
          case Activation::Tanh: h = ad::tanh(h); break;
          case Activation::Sigmoid: h = ad::sigmoid(h); break;
          case Activation::Softplus: h = ad::softplus(h); break;
          case Activation::Swish: h = ad::swish(h); break;
        }
        break;
      case LayerSpec::Kind::HalfSquaredNorm:
        h = ad::scale(ad::sum_cols(ad::square(h)), S(0.5));
        shape = Shape::flat(1);
        break;
    }
  }
  return h;
}

template <typename S>
ad::Var<S> forward(const NetworkSpec& spec, const ad::Var<S>& x, const std::vector<ad::Var<S>>& params) {
  return forward(spec, x, std::span<const ad::Var<S>>(params));
}

}  // namespace meg::nn
