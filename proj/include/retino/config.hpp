#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "retino/model.hpp"
#include "retino/optim.hpp"
#include "retino/preprocess.hpp"
#include "retino/train.hpp"

namespace retino {

/// One run, as read from an INI-style file. Every key is optional; the
/// defaults below apply. Relative paths resolve against the file's directory.
///
///   [dataset]        manifest, train_fraction = 0.8, split_seed = 0
///   [preprocessing]  augmentation = online|offline|none, offline_copies = 1,
///                    rotation_max_deg = 15, shear_max = 0.1,
///                    crop_fraction = 0.9, hflip_probability = 0.5
///   [model]          backbone = VGG16, weight_source = auto|portable-checkpoint|
///                    random-seeded|stub, weights_path = weights/<backbone>.rtck,
///                    weights_seed = 0, ingress = keras|none,
///                    head_widths = 256,128,128,5, init_seed = 0,
///                    stub_feature_dim = 64, stub_identity = false,
///                    stub_input_size = 224
///   [optimizer]      alpha = 0.001, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8
///   [scheduler]      factor = 0.5, patience = 2, min_delta = 1e-4, min_lr = 1e-6
///   [training]       epochs = 15, batch_mode = full|mini, batch_size = 32,
///                    seed = 0, feature_cache = true
///   [output]         runs_dir = runs
struct RunConfig {
  struct Dataset {
    std::filesystem::path manifest;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
  } dataset;

  struct Preprocessing {
    AugmentationPolicy policy;
    AugmentationMode mode = AugmentationMode::Online;
    std::size_t offline_copies = 1;
  } preprocessing;

  struct Model {
    BackboneId backbone = BackboneId::VGG16;
    std::optional<WeightSource::Kind> weight_source;  // nullopt: auto
    std::filesystem::path weights_path;               // empty: default location
    std::uint64_t weights_seed = 0;
    Ingress ingress = Ingress::Keras;
    HeadSpec head;
    std::uint64_t init_seed = 0;
    StubOptions stub;
  } model;

  AdamHyperparameters optimizer;
  PlateauOptions scheduler;

  struct Training {
    std::size_t epochs = 15;
    BatchMode batch_mode = BatchMode::FullBatch;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    bool feature_cache = true;
  } training;

  struct Output {
    std::filesystem::path runs_dir = "runs";
  } output;

  std::filesystem::path base_dir;  // where relative paths resolve

  /// Auto picks stub for StubBackbone and a portable checkpoint otherwise.
  WeightSource weight_source() const;
  TrainConfig train_config() const;
  /// Resolved settings that affect results (not the output location).
  nlohmann::json to_json() const;
  /// SHA-256 of to_json().
  std::string hash() const;
};

/// Throws InvalidConfig on unknown sections or keys, malformed values or
/// values out of range; MissingPath when the file does not exist.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir);

}  // namespace retino
