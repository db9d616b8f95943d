#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "retino/config.hpp"
#include "retino/dataset.hpp"
#include "retino/error.hpp"
#include "retino/report.hpp"

namespace retino::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int exit_code(ErrorCode code);

/// Flag overrides. `seed` replaces every seed in the config (split, head
/// init, training).
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<BackboneId> backbone;
};

void apply(RunConfig& config, const Overrides& overrides);

/// RETINO_BENCH_RUNS_DIR when set, else the config's output.runs_dir.
std::filesystem::path runs_root(const RunConfig& config);

struct SplitResult {
  DatasetManifest manifest;
  ClassCounts train;
  ClassCounts validation;
};

/// Loads the manifest and applies the configured split. Records that already
/// carry a train/validation assignment for every row are kept as they are.
SplitResult load_split(const RunConfig& config);

SplitResult cmd_split(const RunConfig& config, const std::filesystem::path& out_csv);

struct TrainResult {
  ExperimentRecord record;
  std::filesystem::path run_dir;
};

/// Trains, evaluates on the validation split and writes the run bundle plus
/// checkpoint.rtck into <runs root>/<run_id>.
TrainResult cmd_train(const RunConfig& config,
                      const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Evaluates a checkpoint on the configured validation split; writes
/// metrics.csv, metrics_full.json, fig_confusion.png, fig_roc.png and
/// evaluation.json. Returns the output directory.
std::filesystem::path cmd_evaluate(const RunConfig& config,
                                   const std::filesystem::path& checkpoint,
                                   const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct CompareResult {
  std::filesystem::path out_dir;
  bool mixed_datasets = false;
};

/// Loads <runs root>/<id>/record.json for each id and writes the comparison
/// files.
CompareResult cmd_compare(const std::filesystem::path& runs_root,
                                  const std::vector<std::string>& run_ids,
                                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Entry point behind the executable.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace retino::cli
