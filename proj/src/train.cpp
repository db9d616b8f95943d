#include "retino/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "retino/archive.hpp"
#include "retino/error.hpp"
#include "retino/rng.hpp"

namespace retino {

namespace {

// Stream tags for derive_seed, so the different random consumers of one run
// never share a stream.
constexpr std::uint64_t kOnlineAugmentTag = 0xA0;
constexpr std::uint64_t kOfflineAugmentTag = 0xA1;
constexpr std::uint64_t kBatchOrderTag = 0xB0;

void invalid(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_mode == BatchMode::MiniBatch && batch_size < 1) invalid("batch_size must be >= 1");
  if (!(optimizer.alpha > 0.0)) invalid("optimizer.alpha must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) invalid("optimizer.beta1 not in [0,1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) invalid("optimizer.beta2 not in [0,1)");
  if (!(optimizer.epsilon > 0.0)) invalid("optimizer.epsilon must be > 0");
  if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0)) invalid("scheduler.factor not in (0,1)");
  if (scheduler.patience < 1) invalid("scheduler.patience must be >= 1");
  if (!(scheduler.min_lr >= 0.0)) invalid("scheduler.min_lr must be >= 0");
  if (!(scheduler.min_delta >= 0.0)) invalid("scheduler.min_delta must be >= 0");
  if (augmentation_mode == AugmentationMode::Offline && offline_copies < 1) {
    invalid("offline_copies must be >= 1");
  }
  try {
    augmentation.validate();
  } catch (const Error& e) {
    invalid(e.what());
  }
}

std::vector<GradeLabel> SampleSource::labels() const {
  std::vector<GradeLabel> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(label(i));
  return out;
}

ManifestSource::ManifestSource(DatasetManifest manifest, std::size_t height, std::size_t width)
    : manifest_(std::move(manifest)), height_(height), width_(width) {}

ImageTensor ManifestSource::image(std::size_t i) const {
  return load_preprocessed(manifest_.records.at(i).image_path, height_, width_);
}

InMemorySource::InMemorySource(std::vector<ImageTensor> images, std::vector<GradeLabel> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.size() != labels_.size()) {
    throw Error(ErrorCode::LengthMismatch, "images vs labels");
  }
}

// ---- Evaluation -----------------------------------------------------------

namespace {

Matrix features_of(const ClassifierModel& model, const SampleSource& source) {
  const std::size_t dim = model.backbone().spec().feature_dim;
  Matrix x(static_cast<Eigen::Index>(source.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto v = model.backbone().extract(source.image(i));
    for (std::size_t j = 0; j < dim; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
  }
  return x;
}

double accuracy_of(const std::vector<GradeLabel>& predicted, std::span<const GradeLabel> truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace

EvaluationResult evaluate_features(const ClassifierModel& model, const Matrix& features,
                                   std::span<const GradeLabel> truth) {
  if (truth.empty()) throw Error(ErrorCode::EmptySplit, "evaluation split is empty");
  Prediction p = predict_features(model, features);
  EvaluationResult r;
  r.loss = categorical_cross_entropy(p.probabilities, one_hot(truth));
  r.accuracy = accuracy_of(p.labels, truth);
  r.probabilities = std::move(p.probabilities);
  r.predicted = std::move(p.labels);
  r.truth.assign(truth.begin(), truth.end());
  return r;
}

EvaluationResult evaluate(const ClassifierModel& model, const SampleSource& split) {
  if (split.size() == 0) throw Error(ErrorCode::EmptySplit, "evaluation split is empty");
  const auto truth = split.labels();
  return evaluate_features(model, features_of(model, split), truth);
}

std::pair<double, double> evaluate_epoch(const ClassifierModel& model,
                                         const SampleSource& split) {
  const auto r = evaluate(model, split);
  return {r.loss, r.accuracy};
}

// ---- Training -------------------------------------------------------------

namespace {

/// Produces the training design matrix for an epoch according to the
/// augmentation mode, caching where inputs cannot change.
class TrainingFeatures {
 public:
  TrainingFeatures(const ClassifierModel& model, const SampleSource& source,
                   const TrainConfig& config)
      : model_(model), source_(source), config_(config) {
    const auto base = source.labels();
    if (config.augmentation_mode == AugmentationMode::Offline) {
      for (std::size_t k = 0; k <= config.offline_copies; ++k) {
        labels_.insert(labels_.end(), base.begin(), base.end());
      }
    } else {
      labels_ = base;
    }
  }

  const std::vector<GradeLabel>& labels() const { return labels_; }

  const Matrix& for_epoch(std::size_t epoch) {
    const bool cacheable = config_.augmentation_mode != AugmentationMode::Online &&
                           config_.feature_cache;
    if (cacheable && cached_) return features_;
    features_ = compute(epoch);
    cached_ = cacheable;
    return features_;
  }

 private:
  Matrix compute(std::size_t epoch) const {
    const std::size_t n = source_.size();
    const std::size_t dim = model_.backbone().spec().feature_dim;
    Matrix x(static_cast<Eigen::Index>(labels_.size()), static_cast<Eigen::Index>(dim));
    const auto put = [&](std::size_t row, const ImageTensor& img) {
      const auto v = model_.backbone().extract(img);
      for (std::size_t j = 0; j < dim; ++j) {
        x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = v[j];
      }
    };
    for (std::size_t i = 0; i < n; ++i) {
      const ImageTensor img = source_.image(i);
      switch (config_.augmentation_mode) {
        case AugmentationMode::None:
          put(i, img);
          break;
        case AugmentationMode::Online: {
          const auto seed = derive_seed(derive_seed(config_.seed, kOnlineAugmentTag + epoch), i);
          put(i, augment(img, source_.label(i), config_.augmentation, seed).first);
          break;
        }
        case AugmentationMode::Offline: {
          put(i, img);
          for (std::size_t k = 1; k <= config_.offline_copies; ++k) {
            const auto seed = derive_seed(derive_seed(config_.seed, kOfflineAugmentTag),
                                          i * (config_.offline_copies + 1) + k);
            put(k * n + i, augment(img, source_.label(i), config_.augmentation, seed).first);
          }
          break;
        }
      }
    }
    return x;
  }

  const ClassifierModel& model_;
  const SampleSource& source_;
  const TrainConfig& config_;
  std::vector<GradeLabel> labels_;
  Matrix features_;
  bool cached_ = false;
};

Matrix rows_of(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

void check_state_shapes(const ClassifierModel& model, const AdamState& adam) {
  const auto params = model.parameters();
  if (adam.m.size() != params.size() || adam.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the head");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (adam.m[i].size() != params[i].size() || adam.v[i].size() != params[i].size()) {
      throw Error(ErrorCode::ShapeMismatch, "optimizer state tensor " + std::to_string(i));
    }
  }
}

}  // namespace

TrainState train(ClassifierModel& model, const SampleSource& train_split,
                 const SampleSource& val_split, const TrainConfig& config,
                 std::optional<TrainState> resume, const TrainHooks& hooks) {
  config.validate();

  TrainState state;
  if (resume) {
    state = std::move(*resume);
    check_state_shapes(model, state.adam);
  } else {
    const auto& const_model = model;
    state.adam = AdamState::zeros(const_model.parameters(), config.optimizer);
    state.scheduler.options = config.scheduler;
    state.learning_rate = config.optimizer.alpha;
  }
  if (state.epochs_completed() >= config.epochs) return state;

  if (train_split.size() == 0) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val_split.size() == 0) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  TrainingFeatures train_features(model, train_split, config);
  const auto& train_labels = train_features.labels();
  const auto val_labels = val_split.labels();
  std::optional<Matrix> val_cache;

  for (std::size_t epoch = state.epochs_completed() + 1; epoch <= config.epochs; ++epoch) {
    const Matrix& x = train_features.for_epoch(epoch);
    const std::size_t n = train_labels.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t batch = n;
    if (config.batch_mode == BatchMode::MiniBatch) {
      batch = std::min(config.batch_size, n);
      Rng rng(derive_seed(config.seed, kBatchOrderTag + epoch));
      rng.shuffle(std::span(order));
    }

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      std::vector<GradeLabel> y_labels;
      for (std::size_t i : idx) y_labels.push_back(train_labels[i]);
      const Matrix xb = batch == n ? x : rows_of(x, idx);
      const Matrix yb = one_hot(y_labels);

      const HeadCache cache = head_forward(model, xb);
      const double loss = categorical_cross_entropy(cache.probabilities(), yb);
      if (!std::isfinite(loss)) {
        if (hooks.diagnostic_checkpoint) {
          save_checkpoint(model, state, *hooks.diagnostic_checkpoint, hooks.config_hash);
        }
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(count);
      for (Eigen::Index r = 0; r < cache.probabilities().rows(); ++r) {
        const auto row = cache.probabilities().row(r);
        hits += argmax_label(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))) ==
                y_labels[static_cast<std::size_t>(r)];
      }

      const HeadGradients grads = head_backward(model, cache, yb);
      state.adam.hyper.alpha = state.learning_rate;
      adam_step(model.parameters(), grads.flat(), state.adam);
    }

    if (!val_cache || !config.feature_cache) val_cache = features_of(model, val_split);
    const EvaluationResult val = evaluate_features(model, *val_cache, val_labels);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(n);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    state.learning_rate = state.scheduler.update(val.accuracy, state.learning_rate);
    rec.learning_rate_after = state.learning_rate;
    state.history.push_back(rec);

    if (hooks.on_epoch) hooks.on_epoch(model, state);
  }
  return state;
}

// ---- Checkpoints ----------------------------------------------------------

namespace {

std::string layer_name(std::size_t i) { return "head/dense_" + std::to_string(i + 1); }

}  // namespace

void save_checkpoint(const ClassifierModel& model, const TrainState& state,
                     const std::filesystem::path& path, const std::string& config_hash) {
  const BackboneSpec& bb = model.backbone().spec();
  Archive a;
  a.backbone = std::string(backbone_name(bb.id));

  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    a.layer_order.push_back(layer_name(i));
    a.add(NamedArray::from_doubles(
        layer_name(i) + "/kernel",
        {static_cast<std::size_t>(l.weights.rows()), static_cast<std::size_t>(l.weights.cols())},
        std::span<const double>(l.weights.data(), static_cast<std::size_t>(l.weights.size()))));
    a.add(NamedArray::from_doubles(
        layer_name(i) + "/bias", {static_cast<std::size_t>(l.bias.size())},
        std::span<const double>(l.bias.data(), static_cast<std::size_t>(l.bias.size()))));
  }
  for (std::size_t k = 0; k < state.adam.m.size(); ++k) {
    a.add(NamedArray::from_doubles("adam/m/" + std::to_string(k), {state.adam.m[k].size()},
                                   state.adam.m[k]));
    a.add(NamedArray::from_doubles("adam/v/" + std::to_string(k), {state.adam.v[k].size()},
                                   state.adam.v[k]));
  }
  const auto& h = state.adam.hyper;
  const std::vector<double> adam_scalars = {h.alpha, h.beta1, h.beta2, h.epsilon};
  a.add(NamedArray::from_doubles("adam/hyper", {4}, adam_scalars));

  const auto& s = state.scheduler;
  const std::vector<double> sched = {s.best_seen,          static_cast<double>(s.wait),
                                     s.options.factor,     static_cast<double>(s.options.patience),
                                     s.options.min_delta,  s.options.min_lr,
                                     state.learning_rate};
  a.add(NamedArray::from_doubles("scheduler/state", {sched.size()}, sched));

  std::vector<double> hist;
  for (const auto& r : state.history) {
    hist.insert(hist.end(), {static_cast<double>(r.epoch), r.train_loss, r.train_accuracy,
                             r.val_loss, r.val_accuracy, r.learning_rate_after});
  }
  a.add(NamedArray::from_doubles("history", {state.history.size(), 6}, hist));

  const std::size_t epoch = state.epochs_completed();
  a.meta = {{"epoch", epoch},
            {"adam_step", state.adam.step},
            {"head_widths", model.head_spec().layer_widths},
            {"init_seed", model.init_seed()},
            {"config_hash", config_hash},
            {"weight_source", to_json(bb.weight_source)},
            {"ingress", bb.ingress == Ingress::Keras ? "keras" : "none"},
            {"stub",
             {{"feature_dim", model.backbone().stub_options().feature_dim},
              {"identity", model.backbone().stub_options().identity},
              {"input_h", model.backbone().stub_options().input_h},
              {"input_w", model.backbone().stub_options().input_w}}}};
  write_archive(a, path);

  const nlohmann::json sidecar = {
      {"epoch", epoch}, {"config_hash", config_hash}, {"backbone", a.backbone}};
  std::ofstream out(path.string() + ".json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, path.string() + ".json");
  out << sidecar.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  Checkpoint c;
  try {
    c.backbone = parse_backbone(a.backbone);
    const auto& m = a.meta;
    c.epoch = m.at("epoch").get<std::size_t>();
    c.head_spec.layer_widths = m.at("head_widths").get<std::vector<std::size_t>>();
    c.init_seed = m.at("init_seed").get<std::uint64_t>();
    c.config_hash = m.at("config_hash").get<std::string>();
    c.weight_source = weight_source_from_json(m.at("weight_source"));
    c.ingress = m.at("ingress").get<std::string>() == "none" ? Ingress::None : Ingress::Keras;
    const auto& stub = m.at("stub");
    c.stub.feature_dim = stub.at("feature_dim").get<std::size_t>();
    c.stub.identity = stub.at("identity").get<bool>();
    c.stub.input_h = stub.at("input_h").get<std::size_t>();
    c.stub.input_w = stub.at("input_w").get<std::size_t>();

    for (std::size_t i = 0; i < c.head_spec.layer_widths.size(); ++i) {
      const NamedArray& w = a.at(layer_name(i) + "/kernel");
      const NamedArray& b = a.at(layer_name(i) + "/bias");
      if (w.shape.size() != 2 || b.shape.size() != 1 || w.dtype != DType::Float64 ||
          b.dtype != DType::Float64) {
        throw Error(ErrorCode::CorruptCheckpoint, layer_name(i));
      }
      DenseLayer l;
      l.weights.resize(static_cast<Eigen::Index>(w.shape[0]), static_cast<Eigen::Index>(w.shape[1]));
      const auto wv = w.to_doubles();
      std::copy(wv.begin(), wv.end(), l.weights.data());
      const auto bv = b.to_doubles();
      l.bias = Eigen::Map<const Vector>(bv.data(), static_cast<Eigen::Index>(bv.size()));
      c.head.push_back(std::move(l));
    }

    for (std::size_t k = 0;; ++k) {
      const NamedArray* mm = a.find("adam/m/" + std::to_string(k));
      if (mm == nullptr) break;
      c.state.adam.m.push_back(mm->to_doubles());
      c.state.adam.v.push_back(a.at("adam/v/" + std::to_string(k)).to_doubles());
    }
    c.state.adam.step = m.at("adam_step").get<std::uint64_t>();
    const auto hyper = a.at("adam/hyper").to_doubles();
    c.state.adam.hyper = {hyper.at(0), hyper.at(1), hyper.at(2), hyper.at(3)};

    const auto sched = a.at("scheduler/state").to_doubles();
    if (sched.size() != 7) throw Error(ErrorCode::CorruptCheckpoint, "scheduler/state");
    c.state.scheduler.best_seen = sched[0];
    c.state.scheduler.wait = static_cast<int>(sched[1]);
    c.state.scheduler.options = {sched[2], static_cast<int>(sched[3]), sched[4], sched[5]};
    c.state.learning_rate = sched[6];

    const NamedArray& hist = a.at("history");
    const auto hv = hist.to_doubles();
    if (hist.shape.size() != 2 || hist.shape[1] != 6) {
      throw Error(ErrorCode::CorruptCheckpoint, "history");
    }
    for (std::size_t r = 0; r < hist.shape[0]; ++r) {
      const double* row = hv.data() + 6 * r;
      c.state.history.push_back({static_cast<std::size_t>(row[0]), row[1], row[2], row[3],
                                 row[4], row[5]});
    }
    if (c.state.history.size() != c.epoch) {
      throw Error(ErrorCode::CorruptCheckpoint, "history length vs epoch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnknownBackbone) {
      throw Error(ErrorCode::CorruptCheckpoint, e.what());
    }
    throw;
  }
  return c;
}

namespace {

LoadedCheckpoint assemble(Checkpoint c, std::shared_ptr<const Backbone> backbone) {
  ClassifierModel model(std::move(backbone), c.head_spec, std::move(c.head), c.init_seed);
  check_state_shapes(model, c.state.adam);
  return {std::move(model), std::move(c.state), c.epoch, std::move(c.config_hash)};
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint c = read_checkpoint(path);
  auto backbone = Backbone::create(c.backbone, c.weight_source, c.ingress, c.stub);
  return assemble(std::move(c), std::move(backbone));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::shared_ptr<const Backbone> backbone) {
  Checkpoint c = read_checkpoint(path);
  if (c.backbone != backbone->spec().id) {
    throw Error(ErrorCode::BackboneMismatch,
                "checkpoint for " + std::string(backbone_name(c.backbone)) + ", backbone is " +
                    std::string(backbone_name(backbone->spec().id)));
  }
  return assemble(std::move(c), std::move(backbone));
}

}  // namespace retino
