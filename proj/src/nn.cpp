// SPDX-License-Identifier: Apache-2.0
#include "meg/nn.hpp"

#include <charconv>
#include <sstream>

namespace meg::nn {
namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(current);
      current.clear();
    } else if (ch != ' ' && ch != '\t') {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  return parts;
}

Index parse_index(const std::string& s, std::string_view context) {
  Index v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) {
    throw ConfigError("invalid integer '" + s + "' in '" + std::string(context) + "'");
  }
  return v;
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "lrelu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softplus: return "softplus";
    case Activation::Swish: return "swish";
  }
  return "?";
}

}  // namespace

std::string Shape::to_string() const {
  if (height == 1 && width == 1) return std::to_string(channels);
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

Shape Shape::parse(std::string_view text) {
  auto parts = split(text, 'x');
  if (parts.size() == 1) return flat(parse_index(parts[0], text));
  if (parts.size() != 3) throw ConfigError("shape must be 'd' or 'HxWxC', got '" + std::string(text) + "'");
  return Shape{parse_index(parts[0], text), parse_index(parts[1], text), parse_index(parts[2], text)};
}

std::string LayerSpec::to_string() const {
  switch (kind) {
    case Kind::Dense: return "dense:" + std::to_string(units);
    case Kind::Conv:
      return "conv:" + std::to_string(units) + ":" + std::to_string(kernel) + ":" + std::to_string(stride) +
             ":" + std::to_string(pad);
    case Kind::Upsample2x: return "up2";
    case Kind::Reshape: return "reshape:" + target.to_string();
    case Kind::HalfSquaredNorm: return "halfsq";
    case Kind::Activation: {
      std::string s = activation_name(activation);
      if (activation == Activation::LeakyRelu && slope != 0.2) {
        std::ostringstream os;
        os << s << ":" << slope;
        s = os.str();
      }
      return s;
    }
  }
  return "?";
}

NetworkSpec NetworkSpec::parse(std::string_view program, Shape input) {
  NetworkSpec spec;
  spec.input = input;
  bool blank = true;
  for (char c : program) blank = blank && (c == ' ' || c == '\t');
  if (blank) return spec;
  for (const std::string& token : split(program, ',')) {
    auto fields = split(token, ':');
    const std::string& head = fields[0];
    LayerSpec layer;
    if (head == "dense") {
      if (fields.size() != 2) throw ConfigError("dense expects dense:N, got '" + token + "'");
      layer.kind = LayerSpec::Kind::Dense;
      layer.units = parse_index(fields[1], token);
    } else if (head == "conv") {
      if (fields.size() != 5) throw ConfigError("conv expects conv:C:K:S:P, got '" + token + "'");
      layer.kind = LayerSpec::Kind::Conv;
      layer.units = parse_index(fields[1], token);
      layer.kernel = parse_index(fields[2], token);
      layer.stride = parse_index(fields[3], token);
      layer.pad = parse_index(fields[4], token);
    } else if (head == "up2") {
      layer.kind = LayerSpec::Kind::Upsample2x;
    } else if (head == "reshape") {
      if (fields.size() != 2) throw ConfigError("reshape expects reshape:HxWxC");
      layer.kind = LayerSpec::Kind::Reshape;
      layer.target = Shape::parse(fields[1]);
    } else if (head == "halfsq") {
      layer.kind = LayerSpec::Kind::HalfSquaredNorm;
    } else {
      layer.kind = LayerSpec::Kind::Activation;
      if (head == "relu") layer.activation = Activation::Relu;
      else if (head == "lrelu") {
        layer.activation = Activation::LeakyRelu;
        if (fields.size() == 2) layer.slope = std::stod(fields[1]);
      } else if (head == "tanh") layer.activation = Activation::Tanh;
      else if (head == "sigmoid") layer.activation = Activation::Sigmoid;
      else if (head == "softplus") layer.activation = Activation::Softplus;
      else if (head == "swish") layer.activation = Activation::Swish;
      else throw ConfigError("unknown layer token '" + token + "'");
    }
    if (layer.units == 0 && (layer.kind == LayerSpec::Kind::Dense || layer.kind == LayerSpec::Kind::Conv)) {
      throw ConfigError("layer '" + token + "' has zero width");
    }
    spec.layers.push_back(layer);
  }
  spec.layer_inputs();  // validates shapes
  return spec;
}

std::string NetworkSpec::program() const {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ",";
    out += layers[i].to_string();
  }
  return out;
}

std::vector<Shape> NetworkSpec::layer_inputs() const {
  std::vector<Shape> shapes;
  Shape shape = input;
  if (shape.size() <= 0) throw ConfigError("network input must be non-empty");
  for (const LayerSpec& layer : layers) {
    shapes.push_back(shape);
    switch (layer.kind) {
      case LayerSpec::Kind::Dense: shape = Shape::flat(layer.units); break;
      case LayerSpec::Kind::Conv: {
        ad::ConvGeometry geo{shape.height, shape.width, shape.channels, layer.kernel, layer.stride, layer.pad};
        if (layer.stride < 1 || layer.kernel < 1 || shape.height + 2 * layer.pad < layer.kernel ||
            shape.width + 2 * layer.pad < layer.kernel) {
          throw ConfigError("conv layer '" + layer.to_string() + "' does not fit input " + shape.to_string());
        }
        shape = Shape{geo.out_height(), geo.out_width(), layer.units};
        break;
      }
      case LayerSpec::Kind::Upsample2x: shape = Shape{2 * shape.height, 2 * shape.width, shape.channels}; break;
      case LayerSpec::Kind::Reshape:
        if (layer.target.size() != shape.size()) {
          throw ConfigError("reshape to " + layer.target.to_string() + " from " + shape.to_string() +
                            " changes element count");
        }
        shape = layer.target;
        break;
      case LayerSpec::Kind::HalfSquaredNorm: shape = Shape::flat(1); break;
      case LayerSpec::Kind::Activation: break;
    }
  }
  shapes.push_back(shape);
  return shapes;
}

Shape NetworkSpec::output_shape() const { return layer_inputs().back(); }

std::vector<std::pair<Index, Index>> parameter_shapes(const NetworkSpec& spec) {
  std::vector<std::pair<Index, Index>> shapes;
  const auto inputs = spec.layer_inputs();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (layer.kind == LayerSpec::Kind::Dense) {
      shapes.emplace_back(inputs[i].size(), layer.units);
      shapes.emplace_back(1, layer.units);
    } else if (layer.kind == LayerSpec::Kind::Conv) {
      shapes.emplace_back(layer.kernel * layer.kernel * inputs[i].channels, layer.units);
      shapes.emplace_back(1, layer.units);
    }
  }
  return shapes;
}

std::size_t parameter_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (auto [r, c] : parameter_shapes(spec)) n += static_cast<std::size_t>(r * c);
  return n;
}

}  // namespace meg::nn
