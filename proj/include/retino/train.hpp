#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "retino/dataset.hpp"
#include "retino/image.hpp"
#include "retino/model.hpp"
#include "retino/optim.hpp"
#include "retino/preprocess.hpp"

namespace retino {

enum class BatchMode { FullBatch, MiniBatch };

/// Online: fresh augmentation of every training image each epoch.
/// Offline: the training set is expanded once (originals plus
/// `offline_copies` augmented copies per image) before the first epoch.
enum class AugmentationMode { None, Online, Offline };

struct TrainConfig {
  std::size_t epochs = 15;
  BatchMode batch_mode = BatchMode::FullBatch;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  AdamHyperparameters optimizer;
  PlateauOptions scheduler;
  AugmentationPolicy augmentation;
  AugmentationMode augmentation_mode = AugmentationMode::Online;
  std::size_t offline_copies = 1;
  /// Extract frozen-backbone features once and reuse them across epochs
  /// where the inputs do not change (never for online augmentation).
  bool feature_cache = true;

  /// Throws InvalidConfig.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate_after = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

using TrainingHistory = std::vector<EpochRecord>;

/// Indexed labeled images.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual GradeLabel label(std::size_t i) const = 0;
  /// The image as the backbone expects it (unit domain, backbone size).
  virtual ImageTensor image(std::size_t i) const = 0;

  std::vector<GradeLabel> labels() const;
};

/// Decodes manifest records on demand: read, resize, normalize.
class ManifestSource final : public SampleSource {
 public:
  ManifestSource(DatasetManifest manifest, std::size_t height, std::size_t width);
  std::size_t size() const override { return manifest_.records.size(); }
  GradeLabel label(std::size_t i) const override { return manifest_.records.at(i).label; }
  ImageTensor image(std::size_t i) const override;

 private:
  DatasetManifest manifest_;
  std::size_t height_;
  std::size_t width_;
};

class InMemorySource final : public SampleSource {
 public:
  InMemorySource(std::vector<ImageTensor> images, std::vector<GradeLabel> labels);
  std::size_t size() const override { return images_.size(); }
  GradeLabel label(std::size_t i) const override { return labels_.at(i); }
  ImageTensor image(std::size_t i) const override { return images_.at(i); }

 private:
  std::vector<ImageTensor> images_;
  std::vector<GradeLabel> labels_;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  AdamState adam;
  PlateauScheduler scheduler;
  TrainingHistory history;
  double learning_rate = 0.0;

  std::size_t epochs_completed() const { return history.size(); }
};

struct TrainHooks {
  /// Called after each epoch with the model and state as of that epoch.
  std::function<void(const ClassifierModel&, const TrainState&)> on_epoch;
  /// Written (checkpoint + sidecar) before NonFiniteLoss is thrown.
  std::optional<std::filesystem::path> diagnostic_checkpoint;
  std::string config_hash;
};

/// Runs epochs (resume->epochs_completed(), config.epochs]. Throws
/// EmptySplit, NonFiniteLoss, InvalidConfig and propagated shape errors.
TrainState train(ClassifierModel& model, const SampleSource& train_split,
                 const SampleSource& val_split, const TrainConfig& config,
                 std::optional<TrainState> resume = std::nullopt,
                 const TrainHooks& hooks = {});

struct EvaluationResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Matrix probabilities;
  std::vector<GradeLabel> predicted;
  std::vector<GradeLabel> truth;
};

/// Mean cross-entropy and argmax accuracy; never mutates the model. Throws
/// EmptySplit.
EvaluationResult evaluate(const ClassifierModel& model, const SampleSource& split);
EvaluationResult evaluate_features(const ClassifierModel& model, const Matrix& features,
                                   std::span<const GradeLabel> truth);

/// (loss, accuracy)
std::pair<double, double> evaluate_epoch(const ClassifierModel& model,
                                         const SampleSource& split);

// ---- Checkpoints ----------------------------------------------------------

struct Checkpoint {
  std::vector<DenseLayer> head;
  HeadSpec head_spec;
  std::uint64_t init_seed = 0;
  TrainState state;
  std::size_t epoch = 0;
  BackboneId backbone = BackboneId::StubBackbone;
  WeightSource weight_source;
  Ingress ingress = Ingress::Keras;
  StubOptions stub;
  std::string config_hash;
};

/// Writes the named-array container at `path` and a JSON sidecar at
/// `path` + ".json" (epoch, config hash, backbone id).
void save_checkpoint(const ClassifierModel& model, const TrainState& state,
                     const std::filesystem::path& path, const std::string& config_hash = {});

/// Throws MissingPath, CorruptCheckpoint.
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct LoadedCheckpoint {
  ClassifierModel model;
  TrainState state;
  std::size_t epoch = 0;
  std::string config_hash;
};

/// Rebuilds the backbone from the recorded weight source.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Reuses `backbone`; throws BackboneMismatch when the checkpoint was
/// written for a different backbone id.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::shared_ptr<const Backbone> backbone);

}  // namespace retino
