#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "retino/archive.hpp"
#include "retino/convnet.hpp"
#include "retino/dataset.hpp"
#include "retino/image.hpp"

namespace retino {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// ---- Backbones ------------------------------------------------------------

enum class BackboneId { VGG16, ResNet50V2, EfficientNetB0, StubBackbone };

std::string_view backbone_name(BackboneId id);
/// Throws UnknownBackbone.
BackboneId parse_backbone(std::string_view name);

struct WeightSource {
  enum class Kind { PortableCheckpoint, RandomSeeded, Stub };
  Kind kind = Kind::Stub;
  std::filesystem::path path;  // PortableCheckpoint
  std::uint64_t seed = 0;      // RandomSeeded and Stub

  static WeightSource checkpoint(std::filesystem::path p) {
    return {Kind::PortableCheckpoint, std::move(p), 0};
  }
  static WeightSource random(std::uint64_t seed) { return {Kind::RandomSeeded, {}, seed}; }
  static WeightSource stub(std::uint64_t seed) { return {Kind::Stub, {}, seed}; }
};

std::string_view weight_source_kind_name(WeightSource::Kind kind);
nlohmann::json to_json(const WeightSource& source);
/// Throws CorruptCheckpoint on an unknown kind or missing field.
WeightSource weight_source_from_json(const nlohmann::json& j);

/// How unit-range images are mapped to what a backbone's published weights
/// were trained on. Keras: VGG16 gets BGR mean subtraction on 0..255,
/// ResNet50V2 gets [-1, 1], EfficientNetB0 gets 0..255 (its graph rescales
/// and normalizes internally). None feeds the unit-range image unchanged.
enum class Ingress { Keras, None };

/// StubBackbone: a frozen, seeded random projection of the flattened image,
/// or (identity mode) the flattened image itself.
struct StubOptions {
  std::size_t feature_dim = 64;
  bool identity = false;
  std::size_t input_h = 224;
  std::size_t input_w = 224;
};

struct BackboneSpec {
  BackboneId id = BackboneId::StubBackbone;
  std::array<std::size_t, 3> input_shape{224, 224, 3};
  /// Spatial map before global average pooling (1x1xD for the stub).
  std::array<std::size_t, 3> terminal_shape{1, 1, 0};
  std::size_t feature_dim = 0;
  bool frozen = true;
  WeightSource weight_source;
  Ingress ingress = Ingress::Keras;
};

/// Frozen feature extractor. Immutable after construction; safe to share
/// across threads and models.
class Backbone {
 public:
  /// Throws UnknownBackbone, WeightArchiveMissing, BackboneMismatch (archive
  /// built for another backbone), ShapeMismatch(layer), BackboneUnavailable
  /// (weight source not valid for this backbone).
  static std::shared_ptr<const Backbone> create(BackboneId id, const WeightSource& source,
                                                Ingress ingress = Ingress::Keras,
                                                const StubOptions& stub = {});

  const BackboneSpec& spec() const { return spec_; }
  const StubOptions& stub_options() const { return stub_; }

  /// Terminal feature map for one image (unit or raw domain; raw is scaled
  /// to unit first). Throws ShapeMismatch on wrong input size.
  convnet::FeatureMap terminal_map(const ImageTensor& image) const;

  /// Globally pooled feature vector of length feature_dim.
  std::vector<float> extract(const ImageTensor& image) const;

  /// Every frozen array (network weights or the stub projection).
  std::vector<const NamedArray*> parameters() const;
  /// SHA-256 over names, shapes and payloads of parameters().
  std::string weights_digest() const;

 private:
  Backbone() = default;
  convnet::FeatureMap ingress(const ImageTensor& image) const;

  BackboneSpec spec_;
  StubOptions stub_;
  std::optional<convnet::Network> network_;
  NamedArray projection_;  // stub, D_in x feature_dim, float32
  std::vector<float> projection_values_;  // decoded copy of projection_
};

// ---- Head -----------------------------------------------------------------

struct HeadSpec {
  std::vector<std::size_t> layer_widths{256, 128, 128, 5};

  /// Exactly four layers, all positive, last == kNumClasses; throws
  /// ShapeMismatch otherwise.
  void validate() const;
};

struct DenseLayer {
  Matrix weights;  // fan_in x fan_out, applied as x * W + b
  Vector bias;
};

class ClassifierModel {
 public:
  ClassifierModel(std::shared_ptr<const Backbone> backbone, HeadSpec head_spec,
                  std::vector<DenseLayer> layers, std::uint64_t init_seed);

  const Backbone& backbone() const { return *backbone_; }
  std::shared_ptr<const Backbone> backbone_ptr() const { return backbone_; }
  const HeadSpec& head_spec() const { return head_spec_; }
  std::uint64_t init_seed() const { return init_seed_; }
  std::size_t num_classes() const { return kNumClasses; }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding forward caches.
  std::vector<DenseLayer>& mutable_layers();

  /// Flat views in order W1, b1, W2, b2, ...; invalidates caches.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;

  /// Bumped on every mutable access; forward caches record it.
  std::uint64_t version() const { return version_; }

 private:
  std::shared_ptr<const Backbone> backbone_;
  HeadSpec head_spec_;
  std::vector<DenseLayer> layers_;
  std::uint64_t init_seed_ = 0;
  std::uint64_t version_ = 0;
};

/// Head weights: Rng(derive_seed(init_seed, layer)) uniform in
/// +-sqrt(6 / (fan_in + fan_out)), row-major; biases zero.
ClassifierModel build_model(std::shared_ptr<const Backbone> backbone,
                            const HeadSpec& head_spec, std::uint64_t init_seed);

ClassifierModel build_model(BackboneId backbone_id, const HeadSpec& head_spec,
                            const WeightSource& weight_source, std::uint64_t init_seed,
                            Ingress ingress = Ingress::Keras,
                            const StubOptions& stub = {});

/// One row per image.
Matrix extract_features(const ClassifierModel& model, std::span<const ImageTensor> images);

struct HeadCache {
  Matrix input;
  std::vector<Matrix> pre_activations;  // per layer, batch x width
  std::vector<Matrix> activations;      // ReLU outputs, then probabilities last
  std::uint64_t model_version = 0;
  const ClassifierModel* model = nullptr;

  const Matrix& probabilities() const { return activations.back(); }
};

/// Numerically stable row softmax.
Matrix softmax_rows(const Matrix& logits);

/// ReLU(x W_i + b_i) for the hidden layers, softmax on the last.
HeadCache head_forward(const ClassifierModel& model, const Matrix& features);

/// Row-wise one-hot of the labels.
Matrix one_hot(std::span<const GradeLabel> labels);

/// Mean over rows of -ln(clamp(p_true, 1e-12, 1)). Throws ShapeMismatch and
/// NotOneHot.
double categorical_cross_entropy(const Matrix& probabilities, const Matrix& targets);

struct HeadGradients {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_bias;

  /// Same order as ClassifierModel::parameters().
  std::vector<std::span<const double>> flat() const;
};

/// Exact gradients of the mean cross-entropy. Throws StaleCache when the
/// cache came from another model or the head changed since the forward pass.
HeadGradients head_backward(const ClassifierModel& model, const HeadCache& cache,
                            const Matrix& targets);

/// Lowest index wins ties.
GradeLabel argmax_label(std::span<const double> probabilities);

struct Prediction {
  Matrix probabilities;
  std::vector<GradeLabel> labels;
};

Prediction predict_features(const ClassifierModel& model, const Matrix& features);
Prediction predict(const ClassifierModel& model, std::span<const ImageTensor> images);

}  // namespace retino
