#include "retino/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "retino/model.hpp"
#include "retino/train.hpp"

namespace retino::cli {

namespace fs = std::filesystem;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownBackbone:
    case ErrorCode::InvalidPolicy:
    case ErrorCode::DegenerateFraction:
      return kExitUsage;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NonFiniteGradient:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

void apply(RunConfig& config, const Overrides& o) {
  if (o.seed) {
    config.dataset.split_seed = *o.seed;
    config.model.init_seed = *o.seed;
    config.training.seed = *o.seed;
  }
  if (o.epochs) config.training.epochs = *o.epochs;
  if (o.backbone) config.model.backbone = *o.backbone;
}

fs::path runs_root(const RunConfig& config) {
  if (const char* env = std::getenv("RETINO_BENCH_RUNS_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return config.output.runs_dir;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
}

bool fully_assigned(const DatasetManifest& m) {
  bool train = false;
  bool val = false;
  for (const auto& r : m.records) {
    if (r.split == Split::Unassigned) return false;
    (r.split == Split::Train ? train : val) = true;
  }
  return train && val;
}

/// A fresh directory under `root` named `stem`, or `stem-N` when taken.
fs::path unique_dir(const fs::path& root, const std::string& stem) {
  fs::path dir = root / stem;
  for (int n = 1; fs::exists(dir); ++n) dir = root / fmt::format("{}-{}", stem, n);
  return dir;
}

std::shared_ptr<const Backbone> backbone_for(const RunConfig& c) {
  return Backbone::create(c.model.backbone, c.weight_source(), c.model.ingress, c.model.stub);
}

}  // namespace

SplitResult load_split(const RunConfig& config) {
  if (config.dataset.manifest.empty()) {
    throw Error(ErrorCode::MissingPath, "dataset.manifest is not set");
  }
  DatasetManifest m = load_manifest(config.dataset.manifest);
  if (!fully_assigned(m)) {
    m = stratified_split(m, config.dataset.train_fraction, config.dataset.split_seed);
  }
  SplitResult r;
  r.train = class_distribution(m, SplitSelector::Train);
  r.validation = class_distribution(m, SplitSelector::Validation);
  r.manifest = std::move(m);
  return r;
}

SplitResult cmd_split(const RunConfig& config, const fs::path& out_csv) {
  SplitResult r = load_split(config);
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  save_split_csv(r.manifest, out_csv);
  return r;
}

TrainResult cmd_train(const RunConfig& config, const std::optional<fs::path>& resume) {
  const auto started = std::chrono::system_clock::now();
  const SplitResult split = load_split(config);
  const DatasetManifest train_m = split.manifest.subset(Split::Train);
  const DatasetManifest val_m = split.manifest.subset(Split::Validation);
  if (train_m.records.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val_m.records.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  auto backbone = backbone_for(config);
  const auto& in = backbone->spec().input_shape;
  const ManifestSource train_src(train_m, in[0], in[1]);
  const ManifestSource val_src(val_m, in[0], in[1]);

  ClassifierModel model = build_model(backbone, config.model.head, config.model.init_seed);
  std::optional<TrainState> state;
  if (resume) {
    LoadedCheckpoint loaded = load_checkpoint(*resume, backbone);
    model = std::move(loaded.model);
    state = std::move(loaded.state);
  }

  const std::string config_hash = config.hash();
  const std::string fingerprint = manifest_fingerprint(split.manifest);
  const fs::path run_dir =
      unique_dir(runs_root(config), make_run_id(config_hash, fingerprint, started));
  RunDirLock lock(run_dir);

  TrainHooks hooks;
  hooks.diagnostic_checkpoint = run_dir / "diagnostic.rtck";
  hooks.config_hash = config_hash;
  const TrainConfig tc = config.train_config();
  TrainState final_state = train(model, train_src, val_src, tc, std::move(state), hooks);
  save_checkpoint(model, final_state, run_dir / "checkpoint.rtck", config_hash);

  const EvaluationResult eval = evaluate(model, val_src);

  ExperimentRecord record;
  record.run_id = run_dir.filename().string();
  record.model_name = std::string(backbone_name(config.model.backbone));
  record.train_config = tc;
  record.backbone = backbone->spec();
  record.stub = config.model.stub;
  record.head = config.model.head;
  record.init_seed = config.model.init_seed;
  record.config_hash = config_hash;
  record.dataset_fingerprint = fingerprint;
  record.history = final_state.history;
  record.confusion = confusion_matrix(eval.truth, eval.predicted);
  record.metrics = metrics_table(record.confusion);
  record.roc = roc_curves(eval.probabilities, eval.truth);
  record.artifact_paths["checkpoint"] = "checkpoint.rtck";
  record.artifact_paths["checkpoint_sidecar"] = "checkpoint.rtck.json";
  record.started_at = iso_timestamp(started);
  record.finished_at = iso_timestamp(std::chrono::system_clock::now());

  TrainResult result{emit_report(std::move(record), run_dir), run_dir};
  return result;
}

fs::path cmd_evaluate(const RunConfig& config, const fs::path& checkpoint,
                      const std::optional<fs::path>& out_dir) {
  const auto started = std::chrono::system_clock::now();
  const SplitResult split = load_split(config);
  const DatasetManifest val_m = split.manifest.subset(Split::Validation);
  if (val_m.records.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  auto backbone = backbone_for(config);
  LoadedCheckpoint loaded = load_checkpoint(checkpoint, backbone);
  const auto& in = backbone->spec().input_shape;
  const EvaluationResult eval = evaluate(loaded.model, ManifestSource(val_m, in[0], in[1]));

  const auto cm = confusion_matrix(eval.truth, eval.predicted);
  const auto table = metrics_table(cm);
  const auto roc = roc_curves(eval.probabilities, eval.truth);
  const std::string model_name(backbone_name(config.model.backbone));
  const std::string fingerprint = manifest_fingerprint(split.manifest);

  const fs::path dir =
      out_dir ? *out_dir
              : unique_dir(runs_root(config),
                           "eval-" + make_run_id(loaded.config_hash.empty() ? config.hash()
                                                                            : loaded.config_hash,
                                                 fingerprint, started));
  RunDirLock lock(dir);
  write_text(dir / "metrics.csv", metrics_csv(model_name, table));
  write_text(dir / "metrics_full.json",
             metrics_full_json(model_name, table, cm, roc).dump(2) + "\n");
  plot_confusion_matrix(cm, dir / "fig_confusion.png");
  plot_roc(roc, dir / "fig_roc.png");
  const nlohmann::json summary = {{"checkpoint", fs::absolute(checkpoint).string()},
                                  {"epoch", loaded.epoch},
                                  {"model", model_name},
                                  {"loss", eval.loss},
                                  {"accuracy", eval.accuracy},
                                  {"dataset_fingerprint", fingerprint},
                                  {"evaluated_at", iso_timestamp(started)}};
  write_text(dir / "evaluation.json", summary.dump(2) + "\n");
  return dir;
}

CompareResult cmd_compare(const fs::path& root, const std::vector<std::string>& run_ids,
                          const std::optional<fs::path>& out_dir) {
  if (run_ids.empty()) throw Error(ErrorCode::IncompleteRecord, "no run ids given");
  std::vector<ExperimentRecord> records;
  std::string joined;
  for (const auto& id : run_ids) {
    records.push_back(load_record(root / id / "record.json"));
    joined += id + "\n";
  }
  const Comparison comparison = compare_runs(records);
  const fs::path dir =
      out_dir ? *out_dir
              : unique_dir(root, "compare-" + make_run_id(joined, "", std::chrono::system_clock::now()));
  RunDirLock lock(dir);
  write_comparison(comparison, dir);
  return {dir, comparison.mixed_datasets};
}

// ---- Command line ---------------------------------------------------------

namespace {

void print_counts(std::ostream& out, const std::string& label, const ClassCounts& counts) {
  out << label << ":";
  for (std::size_t c = 0; c < kNumClasses; ++c) out << " " << kClassNames[c] << "=" << counts[c];
  out << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frozen-backbone diabetic retinopathy grading benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  std::string out_path;
  std::string resume_path;
  std::string runs_dir;
  std::vector<std::string> run_ids;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string backbone;

  const auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Replace every seed in the config");
    cmd->add_option("--epochs", epochs, "Number of training epochs");
    cmd->add_option("--backbone", backbone, "VGG16, ResNet50V2, EfficientNetB0 or StubBackbone");
  };

  auto* split = app.add_subcommand("split", "Write the stratified train/validation split");
  split->add_option("config", config_path, "Run config file")->required();
  split->add_option("-o,--out", out_path, "Output CSV (default: split.csv in the runs root)");
  add_overrides(split);

  auto* train_cmd = app.add_subcommand("train", "Train the head and write a run bundle");
  train_cmd->add_option("config", config_path, "Run config file")->required();
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint");
  add_overrides(train_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the validation split");
  eval_cmd->add_option("config", config_path, "Run config file")->required();
  eval_cmd->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("-o,--out", out_path, "Output directory");
  add_overrides(eval_cmd);

  auto* compare_cmd = app.add_subcommand("compare", "Merge the metrics of several runs");
  compare_cmd->add_option("run_ids", run_ids, "Run ids")->required();
  compare_cmd->add_option("--runs-dir", runs_dir, "Runs root (default: $RETINO_BENCH_RUNS_DIR or ./runs)");
  compare_cmd->add_option("-o,--out", out_path, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto load_config = [&] {
      RunConfig config = parse_config(config_path);
      Overrides o;
      o.seed = seed;
      o.epochs = epochs;
      if (!backbone.empty()) {
        try {
          o.backbone = parse_backbone(backbone);
        } catch (const Error&) {
          throw Error(ErrorCode::InvalidConfig, "--backbone: unknown backbone '" + backbone + "'");
        }
      }
      apply(config, o);
      return config;
    };

    if (split->parsed()) {
      const RunConfig config = load_config();
      const fs::path target = out_path.empty() ? runs_root(config) / "split.csv" : fs::path(out_path);
      const SplitResult r = cmd_split(config, target);
      print_counts(out, "train", r.train);
      print_counts(out, "validation", r.validation);
      out << target.string() << "\n";
    } else if (train_cmd->parsed()) {
      const RunConfig config = load_config();
      const auto r = cmd_train(config, resume_path.empty() ? std::nullopt
                                                           : std::optional<fs::path>(resume_path));
      const auto& last = r.record.history.back();
      out << fmt::format("run {}: {} epochs, val_acc {:.4f}, overall accuracy {:.4f}\n",
                         r.record.run_id, r.record.history.size(), last.val_accuracy,
                         r.record.metrics.overall_accuracy);
      out << r.run_dir.string() << "\n";
    } else if (eval_cmd->parsed()) {
      const RunConfig config = load_config();
      const fs::path dir = cmd_evaluate(config, checkpoint_path,
                                        out_path.empty() ? std::nullopt
                                                         : std::optional<fs::path>(out_path));
      out << dir.string() << "\n";
    } else if (compare_cmd->parsed()) {
      fs::path root = runs_dir;
      if (root.empty()) {
        const char* env = std::getenv("RETINO_BENCH_RUNS_DIR");
        root = env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
      }
      const auto r = cmd_compare(root, run_ids,
                                 out_path.empty() ? std::nullopt : std::optional<fs::path>(out_path));
      if (r.mixed_datasets) err << "warning: the compared runs used different datasets\n";
      out << r.out_dir.string() << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace retino::cli
