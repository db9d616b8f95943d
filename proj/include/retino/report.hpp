#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "retino/eval.hpp"
#include "retino/model.hpp"
#include "retino/train.hpp"

namespace retino {

struct ExperimentRecord {
  std::string run_id;
  std::string model_name;  // section label in the metrics tables

  TrainConfig train_config;
  BackboneSpec backbone;
  StubOptions stub;
  HeadSpec head;
  std::uint64_t init_seed = 0;
  std::string config_hash;
  std::string dataset_fingerprint;

  TrainingHistory history;
  ConfusionMatrix confusion;
  MetricsTable metrics;
  std::array<RocCurve, kNumClasses> roc;

  std::map<std::string, std::string> artifact_paths;  // name -> file, relative to the bundle
  std::string started_at;   // ISO-8601 UTC
  std::string finished_at;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Doubles are written shortest-round-trip, the ROC +inf sentinel as "inf",
/// so reading back reproduces every number bit-exactly.
nlohmann::json to_json(const ExperimentRecord& r);
/// Throws IncompleteRecord on missing or mistyped fields.
ExperimentRecord record_from_json(const nlohmann::json& j);

void save_record(const ExperimentRecord& r, const std::filesystem::path& path);
ExperimentRecord load_record(const std::filesystem::path& path);

// ---- Sidecars -------------------------------------------------------------

/// `model,metric,Mild DR,...,Severe DR`, one row per metric, 2 decimals.
std::string metrics_csv(const std::string& model_name, const MetricsTable& table);
/// Full precision per class with undefined flags, macro means, overall
/// accuracy, confusion counts and ROC points.
nlohmann::json metrics_full_json(const std::string& model_name, const MetricsTable& table,
                                 const ConfusionMatrix& cm,
                                 const std::array<RocCurve, kNumClasses>& roc);
/// `epoch,train_loss,train_acc,val_loss,val_acc,lr`, shortest round-trip
/// decimal for each value.
std::string history_csv(const TrainingHistory& history);
/// Throws MalformedRow.
TrainingHistory parse_history_csv(const std::string& text);
nlohmann::json roc_json(const RocCurve& curve);

// ---- Figures --------------------------------------------------------------

struct CurveFigures {
  std::filesystem::path accuracy;
  std::filesystem::path loss;
};

/// Writes fig_acc.png and fig_loss.png into `out_dir`. Throws EmptyHistory,
/// IoFailure.
CurveFigures plot_training_curves(const TrainingHistory& history,
                                  const std::filesystem::path& out_dir);
void plot_confusion_matrix(const ConfusionMatrix& cm, const std::filesystem::path& out_path);
void plot_roc(const std::array<RocCurve, kNumClasses>& curves,
              const std::filesystem::path& out_path);

/// Legend entries used by plot_roc, e.g. "No DR (AUC 0.912)" or
/// "Severe DR (AUC n/a)".
std::array<std::string, kNumClasses> roc_legend(const std::array<RocCurve, kNumClasses>& curves);

// ---- Bundles --------------------------------------------------------------

inline constexpr std::array<const char*, 8> kBundleFiles = {
    "record.json",  "metrics.csv",    "metrics_full.json", "history.csv",
    "fig_confusion.png", "fig_roc.png", "fig_acc.png",       "fig_loss.png"};

/// Writes the full bundle into `out_dir` (created if needed) and returns the
/// record with artifact_paths filled in. Throws IncompleteRecord, IoFailure.
ExperimentRecord emit_report(ExperimentRecord record, const std::filesystem::path& out_dir);

struct BestEntry {
  Metric metric;
  std::size_t class_index;
  std::string model_name;
  std::string run_id;
  double value;
};

struct Comparison {
  std::vector<const ExperimentRecord*> order;  // sections as emitted
  std::string table_csv;     // Table-1 shaped, one section per record
  std::vector<BestEntry> best;  // one per (metric, class)
  std::string best_csv;
  bool mixed_datasets = false;
};

/// Sections follow the canonical backbone order, then run_id. Best is the
/// maximum, or the minimum for FPR/FNR/FDR; ties go to the
/// lexicographically smallest run_id. Throws IncompleteRecord when empty.
Comparison compare_runs(const std::vector<ExperimentRecord>& records);

/// Writes comparison.csv, best_models.csv and comparison.json.
void write_comparison(const Comparison& comparison, const std::filesystem::path& out_dir);

// ---- Run directories ------------------------------------------------------

/// Hex SHA-256 prefix of (config hash, dataset fingerprint) plus a UTC
/// timestamp with milliseconds, e.g. "3fa9c1d20b7e-20261018T114705123Z".
std::string make_run_id(const std::string& config_hash, const std::string& dataset_fingerprint,
                        std::chrono::system_clock::time_point when);

std::string iso_timestamp(std::chrono::system_clock::time_point when);

/// Exclusive `.lock` file inside a run directory, removed on destruction.
/// Throws RunDirLocked when another holder exists.
class RunDirLock {
 public:
  explicit RunDirLock(const std::filesystem::path& dir);
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace retino
