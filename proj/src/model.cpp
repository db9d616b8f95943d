#include "retino/model.hpp"

#include <algorithm>
#include <cmath>

#include "retino/error.hpp"
#include "retino/hash.hpp"
#include "retino/rng.hpp"

namespace retino {

std::string_view backbone_name(BackboneId id) {
  switch (id) {
    case BackboneId::VGG16: return "VGG16";
    case BackboneId::ResNet50V2: return "ResNet50V2";
    case BackboneId::EfficientNetB0: return "EfficientNetB0";
    case BackboneId::StubBackbone: break;
  }
  return "StubBackbone";
}

BackboneId parse_backbone(std::string_view name) {
  for (auto id : {BackboneId::VGG16, BackboneId::ResNet50V2, BackboneId::EfficientNetB0,
                  BackboneId::StubBackbone}) {
    if (backbone_name(id) == name) return id;
  }
  throw Error(ErrorCode::UnknownBackbone, std::string(name));
}

std::string_view weight_source_kind_name(WeightSource::Kind kind) {
  switch (kind) {
    case WeightSource::Kind::PortableCheckpoint: return "portable-checkpoint";
    case WeightSource::Kind::RandomSeeded: return "random-seeded";
    case WeightSource::Kind::Stub: break;
  }
  return "stub";
}

nlohmann::json to_json(const WeightSource& source) {
  return {{"kind", weight_source_kind_name(source.kind)},
          {"path", source.path.string()},
          {"seed", source.seed}};
}

WeightSource weight_source_from_json(const nlohmann::json& j) {
  WeightSource ws;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "portable-checkpoint") {
      ws.kind = WeightSource::Kind::PortableCheckpoint;
    } else if (kind == "random-seeded") {
      ws.kind = WeightSource::Kind::RandomSeeded;
    } else if (kind == "stub") {
      ws.kind = WeightSource::Kind::Stub;
    } else {
      throw Error(ErrorCode::CorruptCheckpoint, "weight source kind " + kind);
    }
    ws.path = j.at("path").get<std::string>();
    ws.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("weight source: ") + e.what());
  }
  return ws;
}

// ---- Backbone -------------------------------------------------------------

namespace {

convnet::Graph graph_for(BackboneId id, const Archive* archive) {
  switch (id) {
    case BackboneId::VGG16: return convnet::vgg16_graph();
    case BackboneId::ResNet50V2: return convnet::resnet50v2_graph();
    case BackboneId::EfficientNetB0: {
      std::vector<float> post;
      if (archive != nullptr) {
        if (const NamedArray* a = archive->find("rescaling_1/scale")) post = a->to_floats();
      }
      return convnet::efficientnetb0_graph(std::move(post));
    }
    case BackboneId::StubBackbone: break;
  }
  throw Error(ErrorCode::UnknownBackbone, "no native graph for StubBackbone");
}

}  // namespace

std::shared_ptr<const Backbone> Backbone::create(BackboneId id, const WeightSource& source,
                                                 Ingress ingress, const StubOptions& stub) {
  std::shared_ptr<Backbone> bb(new Backbone());
  bb->spec_.id = id;
  bb->spec_.weight_source = source;
  bb->spec_.ingress = ingress;
  bb->spec_.frozen = true;

  if (id == BackboneId::StubBackbone) {
    if (source.kind != WeightSource::Kind::Stub) {
      throw Error(ErrorCode::BackboneUnavailable, "StubBackbone needs a stub weight source");
    }
    if (stub.input_h == 0 || stub.input_w == 0) {
      throw Error(ErrorCode::ShapeMismatch, "stub input shape");
    }
    bb->stub_ = stub;
    const std::size_t d_in = stub.input_h * stub.input_w * ImageTensor::kChannels;
    bb->spec_.input_shape = {stub.input_h, stub.input_w, ImageTensor::kChannels};
    if (stub.identity) {
      bb->spec_.feature_dim = d_in;
    } else {
      if (stub.feature_dim == 0) throw Error(ErrorCode::ShapeMismatch, "stub feature_dim");
      bb->spec_.feature_dim = stub.feature_dim;
      std::vector<float> w(d_in * stub.feature_dim);
      const double limit = std::sqrt(3.0 / static_cast<double>(d_in));
      Rng rng(derive_seed(source.seed, 0x57AB));
      for (float& x : w) x = static_cast<float>(rng.uniform(-limit, limit));
      bb->projection_ =
          NamedArray::from_floats("stub/projection", {d_in, stub.feature_dim}, w);
      bb->projection_values_ = std::move(w);
    }
    bb->spec_.terminal_shape = {1, 1, bb->spec_.feature_dim};
    return bb;
  }

  switch (source.kind) {
    case WeightSource::Kind::PortableCheckpoint: {
      if (source.path.empty() || !std::filesystem::exists(source.path)) {
        throw Error(ErrorCode::WeightArchiveMissing, source.path.string());
      }
      const Archive archive = read_archive(source.path);
      if (archive.backbone != backbone_name(id)) {
        throw Error(ErrorCode::BackboneMismatch,
                    "archive holds " + archive.backbone + ", wanted " +
                        std::string(backbone_name(id)));
      }
      bb->network_.emplace(graph_for(id, &archive), archive);
      break;
    }
    case WeightSource::Kind::RandomSeeded:
      bb->network_.emplace(convnet::Network::random(graph_for(id, nullptr), source.seed));
      break;
    case WeightSource::Kind::Stub:
      throw Error(ErrorCode::BackboneUnavailable,
                  std::string(backbone_name(id)) + " cannot use a stub weight source");
  }
  const convnet::Node& out = bb->network_->graph().output();
  bb->spec_.terminal_shape = {out.out_h, out.out_w, out.out_c};
  bb->spec_.feature_dim = out.out_c;
  return bb;
}

convnet::FeatureMap Backbone::ingress(const ImageTensor& image) const {
  const auto& shape = spec_.input_shape;
  if (image.height() != shape[0] || image.width() != shape[1]) {
    throw Error(ErrorCode::ShapeMismatch,
                "backbone input " + std::to_string(image.height()) + "x" +
                    std::to_string(image.width()));
  }
  const float to_unit = image.domain() == ValueDomain::Raw0To255 ? 1.0f / 255.0f : 1.0f;
  convnet::FeatureMap x(image.height(), image.width(), ImageTensor::kChannels);
  const auto& src = image.data();
  const std::size_t pixels = image.height() * image.width();

  const bool keras = spec_.ingress == Ingress::Keras;
  for (std::size_t p = 0; p < pixels; ++p) {
    const float r = src[3 * p] * to_unit;
    const float g = src[3 * p + 1] * to_unit;
    const float b = src[3 * p + 2] * to_unit;
    float* dst = x.data.data() + 3 * p;
    if (!keras || spec_.id == BackboneId::StubBackbone) {
      dst[0] = r, dst[1] = g, dst[2] = b;
    } else if (spec_.id == BackboneId::VGG16) {
      dst[0] = b * 255.0f - 103.939f;
      dst[1] = g * 255.0f - 116.779f;
      dst[2] = r * 255.0f - 123.68f;
    } else if (spec_.id == BackboneId::ResNet50V2) {
      dst[0] = r * 2.0f - 1.0f;
      dst[1] = g * 2.0f - 1.0f;
      dst[2] = b * 2.0f - 1.0f;
    } else {
      dst[0] = r * 255.0f, dst[1] = g * 255.0f, dst[2] = b * 255.0f;
    }
  }
  return x;
}

convnet::FeatureMap Backbone::terminal_map(const ImageTensor& image) const {
  convnet::FeatureMap x = ingress(image);
  if (network_) return network_->forward(x);

  convnet::FeatureMap out(1, 1, spec_.feature_dim);
  if (stub_.identity) {
    out.data = std::move(x.data);
    return out;
  }
  using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatF> proj(projection_values_.data(), static_cast<Eigen::Index>(projection_.shape[0]),
                                 static_cast<Eigen::Index>(projection_.shape[1]));
  Eigen::Map<const Eigen::RowVectorXf> in(x.data.data(),
                                          static_cast<Eigen::Index>(x.data.size()));
  Eigen::Map<Eigen::RowVectorXf> y(out.data.data(),
                                   static_cast<Eigen::Index>(out.data.size()));
  y.noalias() = in * proj;
  return out;
}

std::vector<float> Backbone::extract(const ImageTensor& image) const {
  const convnet::FeatureMap map = terminal_map(image);
  if (map.h == 1 && map.w == 1) return map.data;
  std::vector<double> acc(map.c, 0.0);
  for (std::size_t i = 0; i < map.data.size(); i += map.c) {
    for (std::size_t c = 0; c < map.c; ++c) acc[c] += map.data[i + c];
  }
  std::vector<float> out(map.c);
  const double pixels = static_cast<double>(map.h * map.w);
  for (std::size_t c = 0; c < map.c; ++c) out[c] = static_cast<float>(acc[c] / pixels);
  return out;
}

std::vector<const NamedArray*> Backbone::parameters() const {
  std::vector<const NamedArray*> out;
  if (network_) {
    for (const auto& a : network_->parameters()) out.push_back(&a);
  } else if (!projection_.payload.empty()) {
    out.push_back(&projection_);
  }
  return out;
}

std::string Backbone::weights_digest() const {
  Sha256 h;
  h.update(backbone_name(spec_.id));
  for (const NamedArray* a : parameters()) {
    h.update(a->name);
    h.update_values(std::span<const std::size_t>(a->shape));
    h.update(std::span<const std::byte>(a->payload));
  }
  return h.hex_digest();
}

// ---- Head -----------------------------------------------------------------

void HeadSpec::validate() const {
  if (layer_widths.size() != 4) {
    throw Error(ErrorCode::ShapeMismatch, "head must have exactly 4 dense layers");
  }
  for (std::size_t w : layer_widths) {
    if (w == 0) throw Error(ErrorCode::ShapeMismatch, "head layer width 0");
  }
  if (layer_widths.back() != kNumClasses) {
    throw Error(ErrorCode::ShapeMismatch, "last head layer must have 5 units");
  }
}

ClassifierModel::ClassifierModel(std::shared_ptr<const Backbone> backbone, HeadSpec head_spec,
                                 std::vector<DenseLayer> layers, std::uint64_t init_seed)
    : backbone_(std::move(backbone)),
      head_spec_(std::move(head_spec)),
      layers_(std::move(layers)),
      init_seed_(init_seed) {
  head_spec_.validate();
  if (layers_.size() != head_spec_.layer_widths.size()) {
    throw Error(ErrorCode::ShapeMismatch, "head layer count");
  }
  std::size_t fan_in = backbone_->spec().feature_dim;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::size_t fan_out = head_spec_.layer_widths[i];
    if (static_cast<std::size_t>(l.weights.rows()) != fan_in ||
        static_cast<std::size_t>(l.weights.cols()) != fan_out ||
        static_cast<std::size_t>(l.bias.size()) != fan_out) {
      throw Error(ErrorCode::ShapeMismatch, "head layer " + std::to_string(i + 1));
    }
    fan_in = fan_out;
  }
}

std::vector<DenseLayer>& ClassifierModel::mutable_layers() {
  ++version_;
  return layers_;
}

std::vector<std::span<double>> ClassifierModel::parameters() {
  ++version_;
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> ClassifierModel::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

ClassifierModel build_model(std::shared_ptr<const Backbone> backbone,
                            const HeadSpec& head_spec, std::uint64_t init_seed) {
  head_spec.validate();
  std::vector<DenseLayer> layers;
  std::size_t fan_in = backbone->spec().feature_dim;
  for (std::size_t i = 0; i < head_spec.layer_widths.size(); ++i) {
    const std::size_t fan_out = head_spec.layer_widths[i];
    DenseLayer l;
    l.weights.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    l.bias = Vector::Zero(static_cast<Eigen::Index>(fan_out));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(derive_seed(init_seed, i));
    for (Eigen::Index k = 0; k < l.weights.size(); ++k) {
      l.weights.data()[k] = rng.uniform(-limit, limit);
    }
    layers.push_back(std::move(l));
    fan_in = fan_out;
  }
  return ClassifierModel(std::move(backbone), head_spec, std::move(layers), init_seed);
}

ClassifierModel build_model(BackboneId backbone_id, const HeadSpec& head_spec,
                            const WeightSource& weight_source, std::uint64_t init_seed,
                            Ingress ingress, const StubOptions& stub) {
  head_spec.validate();
  return build_model(Backbone::create(backbone_id, weight_source, ingress, stub), head_spec,
                     init_seed);
}

Matrix extract_features(const ClassifierModel& model, std::span<const ImageTensor> images) {
  const std::size_t dim = model.backbone().spec().feature_dim;
  Matrix features(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto v = model.backbone().extract(images[i]);
    for (std::size_t j = 0; j < dim; ++j) {
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
  }
  return features;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - m);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

HeadCache head_forward(const ClassifierModel& model, const Matrix& features) {
  const auto& layers = model.layers();
  if (static_cast<std::size_t>(features.cols()) != model.backbone().spec().feature_dim) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature width " + std::to_string(features.cols()) + ", expected " +
                    std::to_string(model.backbone().spec().feature_dim));
  }
  HeadCache cache;
  cache.input = features;
  cache.model = &model;
  cache.model_version = model.version();
  const Matrix* x = &cache.input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Matrix z = (*x) * layers[i].weights;
    z.rowwise() += layers[i].bias.transpose();
    cache.pre_activations.push_back(z);
    if (i + 1 < layers.size()) {
      cache.activations.push_back(z.cwiseMax(0.0));
    } else {
      cache.activations.push_back(softmax_rows(z));
    }
    x = &cache.activations.back();
  }
  return cache;
}

Matrix one_hot(std::span<const GradeLabel> labels) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()),
                          static_cast<Eigen::Index>(kNumClasses));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(label_index(labels[i]))) = 1.0;
  }
  return y;
}

namespace {

void check_one_hot(const Matrix& targets) {
  for (Eigen::Index r = 0; r < targets.rows(); ++r) {
    int ones = 0;
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
      const double v = targets(r, c);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw Error(ErrorCode::NotOneHot, "row " + std::to_string(r));
      }
    }
    if (ones != 1) throw Error(ErrorCode::NotOneHot, "row " + std::to_string(r));
  }
}

}  // namespace

double categorical_cross_entropy(const Matrix& probabilities, const Matrix& targets) {
  if (probabilities.rows() != targets.rows() || probabilities.cols() != targets.cols() ||
      probabilities.rows() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "probabilities vs targets");
  }
  check_one_hot(targets);
  double total = 0.0;
  for (Eigen::Index r = 0; r < targets.rows(); ++r) {
    Eigen::Index truth = 0;
    targets.row(r).maxCoeff(&truth);
    const double p = std::clamp(probabilities(r, truth), 1e-12, 1.0);
    total += -std::log(p);
  }
  return total / static_cast<double>(targets.rows());
}

std::vector<std::span<const double>> HeadGradients::flat() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < d_weights.size(); ++i) {
    out.emplace_back(d_weights[i].data(), static_cast<std::size_t>(d_weights[i].size()));
    out.emplace_back(d_bias[i].data(), static_cast<std::size_t>(d_bias[i].size()));
  }
  return out;
}

HeadGradients head_backward(const ClassifierModel& model, const HeadCache& cache,
                            const Matrix& targets) {
  const auto& layers = model.layers();
  if (cache.model != &model || cache.model_version != model.version() ||
      cache.activations.size() != layers.size()) {
    throw Error(ErrorCode::StaleCache, "forward cache does not match the current head");
  }
  const Matrix& probs = cache.probabilities();
  if (targets.rows() != probs.rows() || targets.cols() != probs.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "targets");
  }
  check_one_hot(targets);

  const std::size_t n = layers.size();
  HeadGradients g;
  g.d_weights.resize(n);
  g.d_bias.resize(n);

  Matrix delta = (probs - targets) / static_cast<double>(probs.rows());
  for (std::size_t k = n; k-- > 0;) {
    const Matrix& input = k == 0 ? cache.input : cache.activations[k - 1];
    g.d_weights[k] = input.transpose() * delta;
    g.d_bias[k] = delta.colwise().sum().transpose();
    if (k == 0) break;
    Matrix upstream = delta * layers[k].weights.transpose();
    const Matrix& z = cache.pre_activations[k - 1];
    delta = upstream.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
  }
  return g;
}

GradeLabel argmax_label(std::span<const double> probabilities) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probabilities.size(); ++i) {
    if (probabilities[i] > probabilities[best]) best = i;
  }
  return label_from_index(best);
}

Prediction predict_features(const ClassifierModel& model, const Matrix& features) {
  HeadCache cache = head_forward(model, features);
  Prediction out;
  out.probabilities = std::move(cache.activations.back());
  for (Eigen::Index r = 0; r < out.probabilities.rows(); ++r) {
    out.labels.push_back(argmax_label(std::span<const double>(
        out.probabilities.row(r).data(), static_cast<std::size_t>(out.probabilities.cols()))));
  }
  return out;
}

Prediction predict(const ClassifierModel& model, std::span<const ImageTensor> images) {
  return predict_features(model, extract_features(model, images));
}

}  // namespace retino
