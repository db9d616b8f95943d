#include "retino/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "retino/error.hpp"
#include "retino/rng.hpp"

namespace retino::convnet {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// TensorFlow "same" padding: total = max((ceil(in/s) - 1) * s + k - in, 0),
// with the extra pixel (if any) going to the bottom/right.
std::array<int, 2> same_padding(std::size_t in, int kernel, int stride) {
  const auto n = static_cast<long>(in);
  const long out = (n + stride - 1) / stride;
  const long total = std::max<long>((out - 1) * stride + kernel - n, 0);
  return {static_cast<int>(total / 2), static_cast<int>(total - total / 2)};
}

std::size_t conv_out(std::size_t in, int kernel, int stride, int pad_lo, int pad_hi) {
  const long span = static_cast<long>(in) + pad_lo + pad_hi - kernel;
  if (span < 0) throw Error(ErrorCode::ShapeMismatch, "kernel larger than input");
  return static_cast<std::size_t>(span / stride + 1);
}

float activate(float x, Activation act) {
  switch (act) {
    case Activation::Relu: return x > 0.0f ? x : 0.0f;
    case Activation::Swish: return x / (1.0f + std::exp(-x));
    case Activation::Sigmoid: return 1.0f / (1.0f + std::exp(-x));
    case Activation::None: break;
  }
  return x;
}

void activate_inplace(std::vector<float>& v, Activation act) {
  if (act == Activation::None) return;
  for (float& x : v) x = activate(x, act);
}

void conv2d(const FeatureMap& x, const Node& node, const float* kernel,
            const float* bias, FeatureMap& y) {
  const int k = node.kernel;
  const int s = node.stride;
  const auto cin = x.c;
  const auto cout = static_cast<std::size_t>(node.filters);
  const std::size_t patch = static_cast<std::size_t>(k) * k * cin;
  y = FeatureMap(node.out_h, node.out_w, cout);
  Eigen::Map<const RowMat> w(kernel, static_cast<Eigen::Index>(patch),
                             static_cast<Eigen::Index>(cout));

  const bool pointwise = k == 1 && s == 1 && node.pad == std::array<int, 4>{};
  if (pointwise) {
    Eigen::Map<const RowMat> in(x.data.data(), static_cast<Eigen::Index>(x.h * x.w),
                                static_cast<Eigen::Index>(cin));
    Eigen::Map<RowMat> out(y.data.data(), static_cast<Eigen::Index>(y.h * y.w),
                           static_cast<Eigen::Index>(cout));
    out.noalias() = in * w;
  } else {
    // im2col over bands of output rows to bound scratch memory.
    const std::size_t row_pixels = y.w;
    const std::size_t budget = std::size_t{4} << 20;  // floats
    const std::size_t band = std::max<std::size_t>(1, budget / (row_pixels * patch));
    RowMat cols;
    for (std::size_t oy0 = 0; oy0 < y.h; oy0 += band) {
      const std::size_t rows = std::min(band, y.h - oy0);
      cols.resize(static_cast<Eigen::Index>(rows * row_pixels),
                  static_cast<Eigen::Index>(patch));
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t oy = oy0 + r;
        for (std::size_t ox = 0; ox < y.w; ++ox) {
          float* dst = cols.data() + (r * row_pixels + ox) * patch;
          for (int ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(oy) * s + ky - node.pad[0];
            for (int kx = 0; kx < k; ++kx) {
              const long ix = static_cast<long>(ox) * s + kx - node.pad[2];
              float* cell = dst + (static_cast<std::size_t>(ky) * k + kx) * cin;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.h) ||
                  ix >= static_cast<long>(x.w)) {
                std::fill(cell, cell + cin, 0.0f);
              } else {
                const float* src = x.data.data() +
                                   (static_cast<std::size_t>(iy) * x.w + ix) * cin;
                std::copy(src, src + cin, cell);
              }
            }
          }
        }
      }
      Eigen::Map<RowMat> out(y.data.data() + oy0 * row_pixels * cout,
                             static_cast<Eigen::Index>(rows * row_pixels),
                             static_cast<Eigen::Index>(cout));
      out.noalias() = cols * w;
    }
  }

  if (bias != nullptr || node.act != Activation::None) {
    const std::size_t pixels = y.h * y.w;
    for (std::size_t p = 0; p < pixels; ++p) {
      float* row = y.data.data() + p * cout;
      for (std::size_t o = 0; o < cout; ++o) {
        const float v = bias != nullptr ? row[o] + bias[o] : row[o];
        row[o] = activate(v, node.act);
      }
    }
  }
}

void depthwise_conv2d(const FeatureMap& x, const Node& node, const float* kernel,
                      FeatureMap& y) {
  const int k = node.kernel;
  const int s = node.stride;
  const std::size_t c = x.c;
  y = FeatureMap(node.out_h, node.out_w, c);
  for (std::size_t oy = 0; oy < y.h; ++oy) {
    for (std::size_t ox = 0; ox < y.w; ++ox) {
      float* acc = y.data.data() + (oy * y.w + ox) * c;
      for (int ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy) * s + ky - node.pad[0];
        if (iy < 0 || iy >= static_cast<long>(x.h)) continue;
        for (int kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox) * s + kx - node.pad[2];
          if (ix < 0 || ix >= static_cast<long>(x.w)) continue;
          const float* src = x.data.data() + (static_cast<std::size_t>(iy) * x.w + ix) * c;
          const float* wk = kernel + (static_cast<std::size_t>(ky) * k + kx) * c;
          for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += src[ch] * wk[ch];
        }
      }
    }
  }
}

FeatureMap zero_pad(const FeatureMap& x, const Node& node) {
  FeatureMap y(node.out_h, node.out_w, x.c);
  for (std::size_t iy = 0; iy < x.h; ++iy) {
    const float* src = x.data.data() + iy * x.w * x.c;
    float* dst = y.data.data() +
                 ((iy + node.pad[0]) * y.w + static_cast<std::size_t>(node.pad[2])) * x.c;
    std::copy(src, src + x.w * x.c, dst);
  }
  return y;
}

FeatureMap max_pool(const FeatureMap& x, const Node& node) {
  FeatureMap y(node.out_h, node.out_w, x.c, -INFINITY);
  for (std::size_t oy = 0; oy < y.h; ++oy) {
    for (std::size_t ox = 0; ox < y.w; ++ox) {
      float* dst = y.data.data() + (oy * y.w + ox) * x.c;
      for (int ky = 0; ky < node.kernel; ++ky) {
        for (int kx = 0; kx < node.kernel; ++kx) {
          const std::size_t iy = oy * node.stride + ky;
          const std::size_t ix = ox * node.stride + kx;
          const float* src = x.data.data() + (iy * x.w + ix) * x.c;
          for (std::size_t ch = 0; ch < x.c; ++ch) dst[ch] = std::max(dst[ch], src[ch]);
        }
      }
    }
  }
  return y;
}

FeatureMap global_avg_pool(const FeatureMap& x) {
  FeatureMap y(1, 1, x.c);
  std::vector<double> acc(x.c, 0.0);
  const std::size_t pixels = x.h * x.w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* src = x.data.data() + p * x.c;
    for (std::size_t ch = 0; ch < x.c; ++ch) acc[ch] += src[ch];
  }
  for (std::size_t ch = 0; ch < x.c; ++ch) {
    y.data[ch] = static_cast<float>(acc[ch] / static_cast<double>(pixels));
  }
  return y;
}

void channel_affine(std::vector<float>& v, std::size_t c, const std::vector<float>& scale,
                    const std::vector<float>& shift) {
  for (std::size_t i = 0; i < v.size(); i += c) {
    for (std::size_t ch = 0; ch < c; ++ch) v[i + ch] = v[i + ch] * scale[ch] + shift[ch];
  }
}

std::vector<float> broadcast_channels(const std::vector<float>& v, std::size_t c) {
  if (v.size() == c) return v;
  return std::vector<float>(c, v.at(0));
}

}  // namespace

// ---- Graph --------------------------------------------------------------

int Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::input(std::size_t h, std::size_t w, std::size_t c) {
  Node n;
  n.kind = OpKind::Input;
  n.name = "input";
  n.out_h = h;
  n.out_w = w;
  n.out_c = c;
  return push(std::move(n));
}

int Graph::zero_pad(const std::string& name, int in, int top, int bottom, int left,
                    int right) {
  const Node& src = nodes_.at(in);
  Node n;
  n.kind = OpKind::ZeroPad;
  n.name = name;
  n.inputs = {in};
  n.pad = {top, bottom, left, right};
  n.out_h = src.out_h + top + bottom;
  n.out_w = src.out_w + left + right;
  n.out_c = src.out_c;
  return push(std::move(n));
}

int Graph::conv(const std::string& name, int in, int filters, int kernel, int stride,
                Padding padding, bool use_bias, Activation act) {
  const Node& src = nodes_.at(in);
  Node n;
  n.kind = OpKind::Conv;
  n.name = name;
  n.inputs = {in};
  n.filters = filters;
  n.kernel = kernel;
  n.stride = stride;
  n.use_bias = use_bias;
  n.act = act;
  if (padding == Padding::Same) {
    const auto ph = same_padding(src.out_h, kernel, stride);
    const auto pw = same_padding(src.out_w, kernel, stride);
    n.pad = {ph[0], ph[1], pw[0], pw[1]};
  }
  n.out_h = conv_out(src.out_h, kernel, stride, n.pad[0], n.pad[1]);
  n.out_w = conv_out(src.out_w, kernel, stride, n.pad[2], n.pad[3]);
  n.out_c = static_cast<std::size_t>(filters);
  return push(std::move(n));
}

int Graph::depthwise_conv(const std::string& name, int in, int kernel, int stride,
                          Padding padding) {
  const Node& src = nodes_.at(in);
  Node n;
  n.kind = OpKind::DepthwiseConv;
  n.name = name;
  n.inputs = {in};
  n.kernel = kernel;
  n.stride = stride;
  if (padding == Padding::Same) {
    const auto ph = same_padding(src.out_h, kernel, stride);
    const auto pw = same_padding(src.out_w, kernel, stride);
    n.pad = {ph[0], ph[1], pw[0], pw[1]};
  }
  n.out_h = conv_out(src.out_h, kernel, stride, n.pad[0], n.pad[1]);
  n.out_w = conv_out(src.out_w, kernel, stride, n.pad[2], n.pad[3]);
  n.out_c = src.out_c;
  return push(std::move(n));
}

namespace {
Node same_shape(const Node& src, OpKind kind, const std::string& name, int in) {
  Node n;
  n.kind = kind;
  n.name = name;
  n.inputs = {in};
  n.out_h = src.out_h;
  n.out_w = src.out_w;
  n.out_c = src.out_c;
  return n;
}
}  // namespace

int Graph::batch_norm(const std::string& name, int in, float epsilon) {
  Node n = same_shape(nodes_.at(in), OpKind::BatchNorm, name, in);
  n.epsilon = epsilon;
  return push(std::move(n));
}

int Graph::activation(const std::string& name, int in, Activation act) {
  Node n = same_shape(nodes_.at(in), OpKind::Activate, name, in);
  n.act = act;
  return push(std::move(n));
}

int Graph::max_pool(const std::string& name, int in, int size, int stride) {
  const Node& src = nodes_.at(in);
  Node n;
  n.kind = OpKind::MaxPool;
  n.name = name;
  n.inputs = {in};
  n.kernel = size;
  n.stride = stride;
  n.out_h = conv_out(src.out_h, size, stride, 0, 0);
  n.out_w = conv_out(src.out_w, size, stride, 0, 0);
  n.out_c = src.out_c;
  return push(std::move(n));
}

int Graph::global_avg_pool(const std::string& name, int in) {
  Node n = same_shape(nodes_.at(in), OpKind::GlobalAvgPool, name, in);
  n.out_h = 1;
  n.out_w = 1;
  return push(std::move(n));
}

int Graph::add(const std::string& name, int a, int b) {
  const Node& x = nodes_.at(a);
  const Node& y = nodes_.at(b);
  if (x.out_h != y.out_h || x.out_w != y.out_w || x.out_c != y.out_c) {
    throw Error(ErrorCode::ShapeMismatch, name);
  }
  Node n = same_shape(x, OpKind::Add, name, a);
  n.inputs = {a, b};
  return push(std::move(n));
}

int Graph::multiply(const std::string& name, int a, int b) {
  const Node& x = nodes_.at(a);
  const Node& y = nodes_.at(b);
  if (x.out_c != y.out_c || !(y.out_h == 1 && y.out_w == 1)) {
    throw Error(ErrorCode::ShapeMismatch, name);
  }
  Node n = same_shape(x, OpKind::Multiply, name, a);
  n.inputs = {a, b};
  return push(std::move(n));
}

int Graph::rescale(const std::string& name, int in, std::vector<float> scale,
                   std::vector<float> offset) {
  Node n = same_shape(nodes_.at(in), OpKind::Rescale, name, in);
  n.scale = std::move(scale);
  n.offset = std::move(offset);
  return push(std::move(n));
}

int Graph::normalize(const std::string& name, int in) {
  return push(same_shape(nodes_.at(in), OpKind::Normalize, name, in));
}

std::vector<ParamSpec> Graph::param_specs() const {
  std::vector<ParamSpec> specs;
  for (const Node& n : nodes_) {
    const std::size_t cin = n.inputs.empty() ? 0 : nodes_[n.inputs[0]].out_c;
    const auto k = static_cast<std::size_t>(n.kernel);
    switch (n.kind) {
      case OpKind::Conv:
        specs.push_back({n.name + "/kernel", {k, k, cin, n.out_c}});
        if (n.use_bias) specs.push_back({n.name + "/bias", {n.out_c}});
        break;
      case OpKind::DepthwiseConv:
        specs.push_back({n.name + "/kernel", {k, k, cin, 1}});
        break;
      case OpKind::BatchNorm:
        for (const char* role : {"gamma", "beta", "moving_mean", "moving_variance"}) {
          specs.push_back({n.name + "/" + role, {n.out_c}});
        }
        break;
      case OpKind::Normalize:
        specs.push_back({n.name + "/mean", {n.out_c}});
        specs.push_back({n.name + "/variance", {n.out_c}});
        break;
      default:
        break;
    }
  }
  return specs;
}

std::vector<std::string> Graph::layer_order() const {
  std::vector<std::string> names;
  for (const Node& n : nodes_) {
    if (n.kind == OpKind::Conv || n.kind == OpKind::DepthwiseConv ||
        n.kind == OpKind::BatchNorm || n.kind == OpKind::Normalize) {
      names.push_back(n.name);
    }
  }
  return names;
}

// ---- Network ------------------------------------------------------------

Network::Network(Graph graph, std::vector<NamedArray> params)
    : graph_(std::move(graph)), params_(std::move(params)) {
  prepare();
}

Network::Network(Graph graph, const Archive& weights) : graph_(std::move(graph)) {
  for (const ParamSpec& spec : graph_.param_specs()) {
    const NamedArray* a = weights.find(spec.name);
    if (a == nullptr) {
      throw Error(ErrorCode::CorruptCheckpoint, "missing array " + spec.name);
    }
    if (a->shape != spec.shape) {
      throw Error(ErrorCode::ShapeMismatch,
                  spec.name.substr(0, spec.name.find('/')));
    }
    NamedArray copy = *a;
    if (copy.dtype != DType::Float32) {
      copy = NamedArray::from_floats(copy.name, copy.shape, a->to_floats());
    }
    params_.push_back(std::move(copy));
  }
  prepare();
}

Network Network::random(Graph graph, std::uint64_t seed) {
  static constexpr float kImagenetMean[3] = {0.485f, 0.456f, 0.406f};
  static constexpr float kImagenetStd[3] = {0.229f, 0.224f, 0.225f};
  std::vector<NamedArray> params;
  Rng rng(derive_seed(seed, 0xC0FFEE));
  for (const ParamSpec& spec : graph.param_specs()) {
    const std::size_t n = std::accumulate(spec.shape.begin(), spec.shape.end(),
                                          std::size_t{1}, std::multiplies<>());
    std::vector<float> v(n, 0.0f);
    const std::string role = spec.name.substr(spec.name.find('/') + 1);
    if (role == "kernel") {
      const auto& s = spec.shape;
      const double fan_in = static_cast<double>(s[0] * s[1] * s[2]);
      const double fan_out = static_cast<double>(s[0] * s[1] * s[3]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (float& x : v) x = static_cast<float>(rng.uniform(-limit, limit));
    } else if (role == "gamma" || role == "moving_variance") {
      std::fill(v.begin(), v.end(), 1.0f);
    } else if (role == "mean" && n == 3) {
      std::copy(kImagenetMean, kImagenetMean + 3, v.begin());
    } else if (role == "variance" && n == 3) {
      for (int i = 0; i < 3; ++i) v[i] = kImagenetStd[i] * kImagenetStd[i];
    } else if (role == "variance") {
      std::fill(v.begin(), v.end(), 1.0f);
    }
    params.push_back(NamedArray::from_floats(spec.name, spec.shape, v));
  }
  return Network(std::move(graph), std::move(params));
}

const std::vector<float>& Network::param(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return values_[i];
  }
  throw Error(ErrorCode::CorruptCheckpoint, "missing array " + name);
}

void Network::prepare() {
  values_.clear();
  for (const auto& p : params_) values_.push_back(p.to_floats());

  const auto& nodes = graph_.nodes();
  fold_scale_.assign(nodes.size(), {});
  fold_shift_.assign(nodes.size(), {});
  node_params_.assign(nodes.size(), {-1, -1});
  const auto index_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  };

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (n.kind == OpKind::Conv || n.kind == OpKind::DepthwiseConv) {
      node_params_[i] = {index_of(n.name + "/kernel"),
                         n.use_bias ? index_of(n.name + "/bias") : -1};
    } else if (n.kind == OpKind::BatchNorm) {
      const auto& gamma = param(n.name + "/gamma");
      const auto& beta = param(n.name + "/beta");
      const auto& mean = param(n.name + "/moving_mean");
      const auto& var = param(n.name + "/moving_variance");
      auto& sc = fold_scale_[i];
      auto& sh = fold_shift_[i];
      sc.resize(n.out_c);
      sh.resize(n.out_c);
      for (std::size_t c = 0; c < n.out_c; ++c) {
        const double s = gamma[c] / std::sqrt(static_cast<double>(var[c]) + n.epsilon);
        sc[c] = static_cast<float>(s);
        sh[c] = static_cast<float>(beta[c] - mean[c] * s);
      }
    } else if (n.kind == OpKind::Normalize) {
      // Keras Normalization: (x - mean) / max(sqrt(var), 1e-7).
      const auto& mean = param(n.name + "/mean");
      const auto& var = param(n.name + "/variance");
      auto& sc = fold_scale_[i];
      auto& sh = fold_shift_[i];
      sc.resize(n.out_c);
      sh.resize(n.out_c);
      for (std::size_t c = 0; c < n.out_c; ++c) {
        const double s = 1.0 / std::max(std::sqrt(static_cast<double>(var[c])), 1e-7);
        sc[c] = static_cast<float>(s);
        sh[c] = static_cast<float>(-mean[c] * s);
      }
    } else if (n.kind == OpKind::Rescale) {
      fold_scale_[i] = broadcast_channels(n.scale, n.out_c);
      fold_shift_[i] = n.offset.empty() ? std::vector<float>(n.out_c, 0.0f)
                                        : broadcast_channels(n.offset, n.out_c);
    }
  }
}

FeatureMap Network::forward(const FeatureMap& input) const {
  const auto& nodes = graph_.nodes();
  const Node& in_node = nodes.front();
  if (input.h != in_node.out_h || input.w != in_node.out_w || input.c != in_node.out_c) {
    throw Error(ErrorCode::ShapeMismatch, "network input");
  }

  std::vector<std::size_t> last_use(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (int j : nodes[i].inputs) last_use[j] = i;
  }
  last_use.back() = nodes.size();

  std::vector<FeatureMap> out(nodes.size());
  out[0] = input;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    const FeatureMap& x = out[n.inputs[0]];
    FeatureMap& y = out[i];
    switch (n.kind) {
      case OpKind::Input:
        break;
      case OpKind::ZeroPad:
        y = zero_pad(x, n);
        break;
      case OpKind::Conv: {
        const auto [ki, bi] = node_params_[i];
        conv2d(x, n, values_[ki].data(), bi >= 0 ? values_[bi].data() : nullptr, y);
        break;
      }
      case OpKind::DepthwiseConv:
        depthwise_conv2d(x, n, values_[node_params_[i][0]].data(), y);
        break;
      case OpKind::BatchNorm:
      case OpKind::Normalize:
      case OpKind::Rescale:
        y = x;
        channel_affine(y.data, y.c, fold_scale_[i], fold_shift_[i]);
        break;
      case OpKind::Activate:
        y = x;
        activate_inplace(y.data, n.act);
        break;
      case OpKind::MaxPool:
        y = max_pool(x, n);
        break;
      case OpKind::GlobalAvgPool:
        y = global_avg_pool(x);
        break;
      case OpKind::Add: {
        const FeatureMap& b = out[n.inputs[1]];
        y = x;
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] += b.data[k];
        break;
      }
      case OpKind::Multiply: {
        const FeatureMap& gate = out[n.inputs[1]];
        y = x;
        for (std::size_t k = 0; k < y.data.size(); k += y.c) {
          for (std::size_t c = 0; c < y.c; ++c) y.data[k + c] *= gate.data[c];
        }
        break;
      }
    }
    for (int j : n.inputs) {
      if (last_use[j] == i) {
        out[j].data.clear();
        out[j].data.shrink_to_fit();
      }
    }
  }
  return std::move(out.back());
}

}  // namespace retino::convnet
