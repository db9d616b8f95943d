#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "retino/archive.hpp"

namespace retino::convnet {

/// H x W x C float activations, channel fastest.
struct FeatureMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(std::size_t h_, std::size_t w_, std::size_t c_, float fill = 0.0f)
      : h(h_), w(w_), c(c_), data(h_ * w_ * c_, fill) {}
};

enum class Activation { None, Relu, Swish, Sigmoid };
enum class Padding { Same, Valid };

enum class OpKind {
  Input,
  ZeroPad,
  Conv,
  DepthwiseConv,
  BatchNorm,
  Activate,
  MaxPool,
  GlobalAvgPool,
  Add,
  Multiply,
  Rescale,
  Normalize,
};

struct Node {
  OpKind kind = OpKind::Input;
  std::string name;
  std::vector<int> inputs;

  int filters = 0;
  int kernel = 1;
  int stride = 1;
  bool use_bias = false;
  Activation act = Activation::None;
  float epsilon = 1e-3f;
  std::array<int, 4> pad{};  // top, bottom, left, right (ZeroPad, resolved Same)
  std::vector<float> scale;  // Rescale, per channel or a single value
  std::vector<float> offset;

  std::size_t out_h = 0, out_w = 0, out_c = 0;
};

struct ParamSpec {
  std::string name;  // "<layer>/<role>", e.g. "block1_conv1/kernel"
  std::vector<std::size_t> shape;
};

/// Static layer graph with Keras-style layer names and shape inference at
/// construction. Nodes are appended in topological order.
class Graph {
 public:
  int input(std::size_t h, std::size_t w, std::size_t c);
  int zero_pad(const std::string& name, int in, int top, int bottom, int left, int right);
  int conv(const std::string& name, int in, int filters, int kernel, int stride,
           Padding padding, bool use_bias, Activation act = Activation::None);
  int depthwise_conv(const std::string& name, int in, int kernel, int stride,
                     Padding padding);
  int batch_norm(const std::string& name, int in, float epsilon);
  int activation(const std::string& name, int in, Activation act);
  int max_pool(const std::string& name, int in, int size, int stride);
  int global_avg_pool(const std::string& name, int in);
  int add(const std::string& name, int a, int b);
  /// Broadcasts a 1x1xC operand over the other's spatial extent.
  int multiply(const std::string& name, int a, int b);
  int rescale(const std::string& name, int in, std::vector<float> scale,
              std::vector<float> offset);
  int normalize(const std::string& name, int in);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& output() const { return nodes_.back(); }

  /// Every trainable/stored array, in node order.
  std::vector<ParamSpec> param_specs() const;
  /// Names of layers that own parameters, in node order.
  std::vector<std::string> layer_order() const;

 private:
  int push(Node node);
  std::vector<Node> nodes_;
};

/// A graph bound to frozen float32 weights.
class Network {
 public:
  /// Validates every ParamSpec against the archive; throws ShapeMismatch
  /// naming the layer on disagreement, CorruptCheckpoint when missing.
  Network(Graph graph, const Archive& weights);

  /// Glorot-uniform kernels, zero biases, identity batch-norm statistics;
  /// Normalize layers receive ImageNet mean/variance.
  static Network random(Graph graph, std::uint64_t seed);

  FeatureMap forward(const FeatureMap& input) const;

  const Graph& graph() const { return graph_; }
  /// Stored arrays in ParamSpec order.
  const std::vector<NamedArray>& parameters() const { return params_; }

 private:
  Network(Graph graph, std::vector<NamedArray> params);
  void prepare();
  const std::vector<float>& param(const std::string& name) const;

  Graph graph_;
  std::vector<NamedArray> params_;
  std::vector<std::vector<float>> values_;  // float copies of params_
  // Per node: folded batch-norm scale/shift, or Normalize scale/shift.
  std::vector<std::vector<float>> fold_scale_;
  std::vector<std::vector<float>> fold_shift_;
  std::vector<std::array<int, 2>> node_params_;  // indices into values_ (kernel, bias)
};

// Architectures, named to match the Keras application layer names so that
// converted weights map one to one. Input is what the network expects after
// the backbone ingress hook.
Graph vgg16_graph();
Graph resnet50v2_graph();
/// `post_norm_scale` is the extra per-channel Rescaling Keras inserts after
/// input normalization when ImageNet weights are loaded; empty means none.
Graph efficientnetb0_graph(std::vector<float> post_norm_scale = {});

}  // namespace retino::convnet
