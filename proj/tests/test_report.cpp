#include <doctest.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <regex>
#include <set>
#include <sstream>

#include "retino/csv.hpp"
#include "retino/error.hpp"
#include "retino/hash.hpp"
#include "retino/report.hpp"
#include "support.hpp"

using namespace retino;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Empty;
}

std::string fmt_run(std::uint64_t seed) { return "run" + std::to_string(seed); }
std::string sha_like(std::uint64_t seed) { return std::string(64, static_cast<char>('a' + seed % 6)); }

TrainingHistory random_history(std::size_t epochs, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrainingHistory h;
  for (std::size_t e = 1; e <= epochs; ++e) {
    h.push_back({e, u(gen) * 2, u(gen), u(gen) * 2, u(gen), 1e-3 / static_cast<double>(e)});
  }
  return h;
}

ExperimentRecord random_record(std::uint64_t seed, BackboneId id = BackboneId::StubBackbone) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 40;
  Matrix probs(static_cast<Eigen::Index>(n), 5);
  std::vector<GradeLabel> truth, pred;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (int c = 0; c < 5; ++c) sum += (probs(i, c) = u(gen));
    probs.row(i) /= sum;
    truth.push_back(label_from_index(i % 4));  // Severe DR absent: one degenerate ROC
    std::size_t best = 0;
    for (std::size_t c = 1; c < 5; ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    pred.push_back(label_from_index(best));
  }
  ExperimentRecord r;
  r.run_id = fmt_run(seed);
  r.model_name = std::string(backbone_name(id));
  r.backbone.id = id;
  r.backbone.feature_dim = 6;
  r.init_seed = seed;
  r.config_hash = sha_like(seed);
  r.dataset_fingerprint = "fp";
  r.train_config.epochs = 3;
  r.train_config.optimizer.alpha = 0.1 + 0.2;  // not exactly representable
  r.history = random_history(3, gen);
  r.confusion = confusion_matrix(truth, pred);
  r.metrics = metrics_table(r.confusion);
  r.roc = roc_curves(probs, truth);
  r.started_at = "2026-10-18T11:47:05.123Z";
  r.finished_at = "2026-10-18T11:48:00.000Z";
  return r;
}

}  // namespace

TEST_CASE("record json round trip is bit-exact") {
  const auto r = random_record(1);
  test_support::TempDir dir;
  save_record(r, dir / "record.json");
  const auto back = load_record(dir / "record.json");
  CHECK(back.run_id == r.run_id);
  CHECK(back.model_name == r.model_name);
  CHECK(back.history == r.history);
  CHECK(back.confusion == r.confusion);
  CHECK(back.train_config.optimizer == r.train_config.optimizer);
  CHECK(back.train_config.epochs == r.train_config.epochs);
  CHECK(back.init_seed == r.init_seed);
  CHECK(back.config_hash == r.config_hash);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(back.metrics.rows[c].values == r.metrics.rows[c].values);
    CHECK(back.metrics.rows[c].undefined == r.metrics.rows[c].undefined);
    CHECK(back.roc[c].auc == r.roc[c].auc);
    REQUIRE(back.roc[c].points.size() == r.roc[c].points.size());
    for (std::size_t k = 0; k < r.roc[c].points.size(); ++k) {
      CHECK(back.roc[c].points[k].threshold == r.roc[c].points[k].threshold);
      CHECK(back.roc[c].points[k].fpr == r.roc[c].points[k].fpr);
      CHECK(back.roc[c].points[k].tpr == r.roc[c].points[k].tpr);
    }
  }
  CHECK(back.metrics.macro == r.metrics.macro);
  CHECK(back.metrics.overall_accuracy == r.metrics.overall_accuracy);
  CHECK(to_json(back).dump() == to_json(r).dump());

  auto j = to_json(r);
  j.erase("history");
  CHECK(code_of([&] { record_from_json(j); }) == ErrorCode::IncompleteRecord);
}

TEST_CASE("bundle holds exactly the declared files") {
  test_support::TempDir dir;
  const auto out = emit_report(random_record(2), dir / "bundle");
  std::set<std::string> on_disk;
  for (const auto& e : fs::directory_iterator(dir / "bundle")) on_disk.insert(e.path().filename());
  std::set<std::string> declared;
  for (const auto& [k, v] : out.artifact_paths) declared.insert(v);
  CHECK(on_disk == declared);
  CHECK(on_disk == std::set<std::string>(kBundleFiles.begin(), kBundleFiles.end()));
  const auto back = load_record(dir / "bundle/record.json");
  CHECK(back.artifact_paths == out.artifact_paths);

  const auto first_csv = test_support::read_file(dir / "bundle/metrics.csv");
  const auto first_hist = test_support::read_file(dir / "bundle/history.csv");
  const auto first_full = test_support::read_file(dir / "bundle/metrics_full.json");
  emit_report(random_record(2), dir / "bundle");
  CHECK(test_support::read_file(dir / "bundle/metrics.csv") == first_csv);
  CHECK(test_support::read_file(dir / "bundle/history.csv") == first_hist);
  CHECK(test_support::read_file(dir / "bundle/metrics_full.json") == first_full);

  auto bad = random_record(3);
  bad.history.clear();
  CHECK(code_of([&] { emit_report(bad, dir / "x"); }) == ErrorCode::IncompleteRecord);
  bad = random_record(3);
  bad.confusion = ConfusionMatrix{};
  CHECK(code_of([&] { emit_report(bad, dir / "y"); }) == ErrorCode::IncompleteRecord);
}

TEST_CASE("metrics csv matches the eval values") {
  const auto r = random_record(4);
  const auto text = metrics_csv("VGG16", r.metrics);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,metric,Mild DR,Moderate DR,No DR,Proliferate DR,Severe DR");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto f = csv::split_line(line);
    REQUIRE(f);
    REQUIRE(f->size() == 7);
    CHECK((*f)[0] == "VGG16");
    CHECK((*f)[1] == metric_name(kAllMetrics[rows]));
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(std::abs(std::stod((*f)[c + 2]) - r.metrics.rows[c].values[rows]) <= 0.005 + 1e-12);
    }
    ++rows;
  }
  CHECK(rows == 8);
}

TEST_CASE("history csv") {
  std::mt19937_64 gen(5);
  const auto h = random_history(15, gen);
  const auto text = history_csv(h);
  CHECK(text.rfind("epoch,train_loss,train_acc,val_loss,val_acc,lr\n", 0) == 0);
  const auto back = parse_history_csv(text);
  CHECK(back == h);
  CHECK(back.front().epoch == 1);
  CHECK(back.back().epoch == 15);
  CHECK(history_csv(h) == text);
  CHECK(code_of([] { parse_history_csv("epoch,train_loss,train_acc,val_loss,val_acc,lr\n1,2\n"); }) ==
        ErrorCode::MalformedRow);
}

TEST_CASE("figures") {
  test_support::TempDir dir;
  std::mt19937_64 gen(6);
  CHECK(code_of([&] { plot_training_curves({}, dir.path()); }) == ErrorCode::EmptyHistory);
  const auto one = plot_training_curves(random_history(1, gen), dir / "one");
  CHECK(fs::file_size(one.accuracy) > 0);
  CHECK(fs::file_size(one.loss) > 0);
  const auto r = random_record(6);
  plot_confusion_matrix(r.confusion, dir / "cm.png");
  plot_roc(r.roc, dir / "roc.png");
  CHECK(fs::file_size(dir / "cm.png") > 0);
  CHECK(fs::file_size(dir / "roc.png") > 0);
}

TEST_CASE("roc legend agrees with the eval AUC") {
  const auto r = random_record(7);
  const auto legend = roc_legend(r.roc);
  const std::regex pat(R"(^(.+) \(AUC ([0-9.]+|n/a)\)$)");
  for (std::size_t c = 0; c < 5; ++c) {
    std::smatch m;
    REQUIRE(std::regex_match(legend[c], m, pat));
    CHECK(m[1] == std::string(kClassNames[c]));
    if (r.roc[c].auc) {
      CHECK(std::abs(std::stod(m[2]) - *r.roc[c].auc) <= 5e-4 + 1e-12);
    } else {
      CHECK(m[2] == "n/a");
    }
  }
  CHECK_FALSE(r.roc[4].auc);
}

TEST_CASE("compare runs") {
  std::vector<ExperimentRecord> recs = {random_record(10, BackboneId::ResNet50V2),
                                        random_record(11, BackboneId::VGG16),
                                        random_record(12, BackboneId::EfficientNetB0)};
  // Hand-set TPR and FPR for Mild DR (class 0).
  const auto tpr = static_cast<std::size_t>(Metric::TPR);
  const auto fpr = static_cast<std::size_t>(Metric::FPR);
  recs[0].metrics.rows[0].values[tpr] = 0.5;
  recs[1].metrics.rows[0].values[tpr] = 0.7;
  recs[2].metrics.rows[0].values[tpr] = 0.7;
  recs[0].metrics.rows[0].values[fpr] = 0.01;
  recs[1].metrics.rows[0].values[fpr] = 0.2;
  recs[2].metrics.rows[0].values[fpr] = 0.3;

  const auto cmp = compare_runs(recs);
  REQUIRE(cmp.order.size() == 3);
  CHECK(cmp.order[0]->model_name == "VGG16");
  CHECK(cmp.order[1]->model_name == "EfficientNetB0");
  CHECK(cmp.order[2]->model_name == "ResNet50V2");
  CHECK_FALSE(cmp.mixed_datasets);

  std::istringstream in(cmp.table_csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,metric,Mild DR,Moderate DR,No DR,Proliferate DR,Severe DR");
  std::vector<std::string> sections;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto f = csv::split_line(line);
    if (sections.empty() || sections.back() != (*f)[0]) sections.push_back((*f)[0]);
    ++rows;
  }
  CHECK(rows == 24);
  CHECK(sections == std::vector<std::string>{"VGG16", "EfficientNetB0", "ResNet50V2"});

  REQUIRE(cmp.best.size() == 40);
  // Brute-force every (metric, class) winner.
  for (const auto& b : cmp.best) {
    const auto k = static_cast<std::size_t>(b.metric);
    const ExperimentRecord* want = nullptr;
    for (const auto& r : recs) {
      const double v = r.metrics.rows[b.class_index].values[k];
      if (want == nullptr) {
        want = &r;
        continue;
      }
      const double w = want->metrics.rows[b.class_index].values[k];
      const bool better = lower_is_better(b.metric) ? v < w : v > w;
      if (better || (v == w && r.run_id < want->run_id)) want = &r;
    }
    CHECK(b.run_id == want->run_id);
    CHECK(b.value == want->metrics.rows[b.class_index].values[k]);
  }
  const auto find = [&](Metric m, std::size_t c) {
    for (const auto& b : cmp.best) {
      if (b.metric == m && b.class_index == c) return b;
    }
    FAIL("missing entry");
    return cmp.best.front();
  };
  // Tie at 0.7 between run11 and run12 goes to run11.
  CHECK(find(Metric::TPR, 0).run_id == "run11");
  CHECK(find(Metric::TPR, 0).model_name == "VGG16");
  CHECK(find(Metric::FPR, 0).run_id == "run10");

  test_support::TempDir dir;
  write_comparison(cmp, dir.path());
  for (const char* f : {"comparison.csv", "best_models.csv", "comparison.json"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(test_support::read_file(dir / "comparison.csv") == cmp.table_csv);

  recs.push_back(random_record(13, BackboneId::VGG16));
  recs.back().dataset_fingerprint = "other";
  const auto mixed = compare_runs(recs);
  CHECK(mixed.mixed_datasets);
  CHECK(mixed.table_csv.find("VGG16 [run11]") != std::string::npos);
  CHECK(mixed.table_csv.find("VGG16 [run13]") != std::string::npos);

  CHECK(code_of([] { compare_runs({}); }) == ErrorCode::IncompleteRecord);
}

TEST_CASE("run ids and locks") {
  using namespace std::chrono;
  const system_clock::time_point t{milliseconds(1792324025123LL)};
  const auto id = make_run_id("cfg", "fp", t);
  CHECK(id.size() == 12 + 1 + 19);
  CHECK(id.substr(0, 12) == sha256_hex("cfg\nfp").substr(0, 12));
  CHECK(id.substr(13) == "20261018T114705123Z");
  CHECK(iso_timestamp(t) == "2026-10-18T11:47:05.123Z");
  CHECK(make_run_id("cfg", "fp2", t) != id);

  test_support::TempDir dir;
  {
    RunDirLock lock(dir / "run");
    CHECK(fs::exists(dir / "run/.lock"));
    CHECK(code_of([&] { RunDirLock again(dir / "run"); }) == ErrorCode::RunDirLocked);
  }
  CHECK_FALSE(fs::exists(dir / "run/.lock"));
}
