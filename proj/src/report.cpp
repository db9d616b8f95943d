#include "retino/report.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "retino/csv.hpp"
#include "retino/error.hpp"
#include "retino/hash.hpp"

namespace retino {

using nlohmann::json;

namespace {

[[noreturn]] void incomplete(const std::string& what) {
  throw Error(ErrorCode::IncompleteRecord, what);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingPath, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* batch_mode_name(BatchMode m) { return m == BatchMode::FullBatch ? "full" : "mini"; }

BatchMode parse_batch_mode(const std::string& s) {
  if (s == "full") return BatchMode::FullBatch;
  if (s == "mini") return BatchMode::MiniBatch;
  incomplete("batch_mode " + s);
}

const char* augmentation_mode_name(AugmentationMode m) {
  switch (m) {
    case AugmentationMode::None: return "none";
    case AugmentationMode::Online: return "online";
    case AugmentationMode::Offline: return "offline";
  }
  return "none";
}

AugmentationMode parse_augmentation_mode(const std::string& s) {
  if (s == "none") return AugmentationMode::None;
  if (s == "online") return AugmentationMode::Online;
  if (s == "offline") return AugmentationMode::Offline;
  incomplete("augmentation_mode " + s);
}

json threshold_json(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return t;
}

double threshold_from(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    incomplete("roc threshold " + s);
  }
  return j.get<double>();
}

json backbone_json(const BackboneSpec& b) {
  return {{"id", backbone_name(b.id)},
          {"input_shape", b.input_shape},
          {"terminal_shape", b.terminal_shape},
          {"feature_dim", b.feature_dim},
          {"frozen", b.frozen},
          {"weight_source", to_json(b.weight_source)},
          {"ingress", b.ingress == Ingress::Keras ? "keras" : "none"}};
}

BackboneSpec backbone_from(const json& j) {
  BackboneSpec b;
  b.id = parse_backbone(j.at("id").get<std::string>());
  b.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
  b.terminal_shape = j.at("terminal_shape").get<std::array<std::size_t, 3>>();
  b.feature_dim = j.at("feature_dim").get<std::size_t>();
  b.frozen = j.at("frozen").get<bool>();
  b.weight_source = weight_source_from_json(j.at("weight_source"));
  b.ingress = j.at("ingress").get<std::string>() == "none" ? Ingress::None : Ingress::Keras;
  return b;
}

json row_json(const ClassMetricsRow& row) {
  json values = json::object();
  json undefined = json::object();
  for (Metric m : kAllMetrics) {
    const std::string name(metric_name(m));
    values[name] = row[m];
    undefined[name] = row.is_undefined(m);
  }
  return {{"values", values}, {"undefined", undefined}};
}

ClassMetricsRow row_from(const json& j) {
  ClassMetricsRow row;
  for (Metric m : kAllMetrics) {
    const std::string name(metric_name(m));
    const auto i = static_cast<std::size_t>(m);
    row.values[i] = j.at("values").at(name).get<double>();
    row.undefined[i] = j.at("undefined").at(name).get<bool>();
  }
  return row;
}

json metrics_json(const MetricsTable& t) {
  json classes = json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    classes[std::string(kClassNames[c])] = row_json(t.rows[c]);
  }
  json macro = json::object();
  for (Metric m : kAllMetrics) macro[std::string(metric_name(m))] = t.macro[static_cast<std::size_t>(m)];
  return {{"classes", classes}, {"macro", macro}, {"overall_accuracy", t.overall_accuracy}};
}

MetricsTable metrics_from(const json& j) {
  MetricsTable t;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    t.rows[c] = row_from(j.at("classes").at(std::string(kClassNames[c])));
  }
  for (Metric m : kAllMetrics) {
    t.macro[static_cast<std::size_t>(m)] = j.at("macro").at(std::string(metric_name(m))).get<double>();
  }
  t.overall_accuracy = j.at("overall_accuracy").get<double>();
  return t;
}

json roc_set_json(const std::array<RocCurve, kNumClasses>& roc) {
  json out = json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    out.push_back({{"class", kClassNames[c]},
                   {"auc", roc[c].auc ? json(*roc[c].auc) : json(nullptr)},
                   {"points", roc_json(roc[c])}});
  }
  return out;
}

std::array<RocCurve, kNumClasses> roc_set_from(const json& j) {
  std::array<RocCurve, kNumClasses> roc;
  if (j.size() != kNumClasses) incomplete("roc needs one entry per class");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& e = j.at(c);
    if (!e.at("auc").is_null()) roc[c].auc = e.at("auc").get<double>();
    for (const auto& p : e.at("points")) {
      roc[c].points.push_back({threshold_from(p.at(0)), p.at(1).get<double>(), p.at(2).get<double>()});
    }
  }
  return roc;
}

}  // namespace

// ---- JSON -----------------------------------------------------------------

json to_json(const TrainConfig& c) {
  const auto& a = c.augmentation;
  return {{"epochs", c.epochs},
          {"batch_mode", batch_mode_name(c.batch_mode)},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"optimizer",
           {{"alpha", c.optimizer.alpha},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon}}},
          {"scheduler",
           {{"factor", c.scheduler.factor},
            {"patience", c.scheduler.patience},
            {"min_delta", c.scheduler.min_delta},
            {"min_lr", c.scheduler.min_lr}}},
          {"augmentation",
           {{"rotation_max_deg", a.rotation_max_deg},
            {"shear_max", a.shear_max},
            {"crop_fraction", a.crop_fraction},
            {"hflip_probability", a.hflip_probability}}},
          {"augmentation_mode", augmentation_mode_name(c.augmentation_mode)},
          {"offline_copies", c.offline_copies},
          {"feature_cache", c.feature_cache}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_mode = parse_batch_mode(j.at("batch_mode").get<std::string>());
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& o = j.at("optimizer");
  c.optimizer = {o.at("alpha").get<double>(), o.at("beta1").get<double>(),
                 o.at("beta2").get<double>(), o.at("epsilon").get<double>()};
  const auto& s = j.at("scheduler");
  c.scheduler = {s.at("factor").get<double>(), s.at("patience").get<int>(),
                 s.at("min_delta").get<double>(), s.at("min_lr").get<double>()};
  const auto& a = j.at("augmentation");
  c.augmentation = {a.at("rotation_max_deg").get<double>(), a.at("shear_max").get<double>(),
                    a.at("crop_fraction").get<double>(), a.at("hflip_probability").get<double>()};
  c.augmentation_mode = parse_augmentation_mode(j.at("augmentation_mode").get<std::string>());
  c.offline_copies = j.at("offline_copies").get<std::size_t>();
  c.feature_cache = j.at("feature_cache").get<bool>();
  return c;
}

json roc_json(const RocCurve& curve) {
  json points = json::array();
  for (const auto& p : curve.points) points.push_back({threshold_json(p.threshold), p.fpr, p.tpr});
  return points;
}

json to_json(const ExperimentRecord& r) {
  json history = json::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_acc", e.train_accuracy},
                       {"val_loss", e.val_loss},
                       {"val_acc", e.val_accuracy},
                       {"lr", e.learning_rate_after}});
  }
  return {{"run_id", r.run_id},
          {"model_name", r.model_name},
          {"config",
           {{"training", to_json(r.train_config)},
            {"backbone", backbone_json(r.backbone)},
            {"stub",
             {{"feature_dim", r.stub.feature_dim},
              {"identity", r.stub.identity},
              {"input_h", r.stub.input_h},
              {"input_w", r.stub.input_w}}},
            {"head", {{"layer_widths", r.head.layer_widths}}},
            {"init_seed", r.init_seed},
            {"config_hash", r.config_hash},
            {"dataset_fingerprint", r.dataset_fingerprint}}},
          {"history", history},
          {"confusion", r.confusion.counts},
          {"metrics", metrics_json(r.metrics)},
          {"roc", roc_set_json(r.roc)},
          {"artifact_paths", r.artifact_paths},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at}};
}

ExperimentRecord record_from_json(const json& j) {
  ExperimentRecord r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.model_name = j.at("model_name").get<std::string>();
    const auto& c = j.at("config");
    r.train_config = train_config_from_json(c.at("training"));
    r.backbone = backbone_from(c.at("backbone"));
    const auto& s = c.at("stub");
    r.stub = {s.at("feature_dim").get<std::size_t>(), s.at("identity").get<bool>(),
              s.at("input_h").get<std::size_t>(), s.at("input_w").get<std::size_t>()};
    r.head.layer_widths = c.at("head").at("layer_widths").get<std::vector<std::size_t>>();
    r.init_seed = c.at("init_seed").get<std::uint64_t>();
    r.config_hash = c.at("config_hash").get<std::string>();
    r.dataset_fingerprint = c.at("dataset_fingerprint").get<std::string>();
    for (const auto& e : j.at("history")) {
      r.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                           e.at("train_acc").get<double>(), e.at("val_loss").get<double>(),
                           e.at("val_acc").get<double>(), e.at("lr").get<double>()});
    }
    r.confusion.counts = j.at("confusion").get<decltype(r.confusion.counts)>();
    r.metrics = metrics_from(j.at("metrics"));
    r.roc = roc_set_from(j.at("roc"));
    r.artifact_paths = j.at("artifact_paths").get<std::map<std::string, std::string>>();
    r.started_at = j.at("started_at").get<std::string>();
    r.finished_at = j.at("finished_at").get<std::string>();
  } catch (const json::exception& e) {
    incomplete(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IncompleteRecord) throw;
    incomplete(e.what());
  }
  return r;
}

void save_record(const ExperimentRecord& r, const std::filesystem::path& path) {
  write_text(path, to_json(r).dump(2) + "\n");
}

ExperimentRecord load_record(const std::filesystem::path& path) {
  const auto text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    incomplete(path.string() + ": " + e.what());
  }
  return record_from_json(j);
}

// ---- Sidecars -------------------------------------------------------------

namespace {

std::string metrics_header() {
  std::vector<std::string> cols = {"model", "metric"};
  cols.insert(cols.end(), kClassNames.begin(), kClassNames.end());
  return csv::join(cols) + "\n";
}

std::string metrics_rows(const std::string& model_name, const MetricsTable& table) {
  std::string out;
  for (Metric m : kAllMetrics) {
    std::vector<std::string> cols = {model_name, std::string(metric_name(m))};
    for (const auto& row : table.rows) cols.push_back(fmt::format("{:.2f}", row[m]));
    out += csv::join(cols) + "\n";
  }
  return out;
}

}  // namespace

std::string metrics_csv(const std::string& model_name, const MetricsTable& table) {
  return metrics_header() + metrics_rows(model_name, table);
}

json metrics_full_json(const std::string& model_name, const MetricsTable& table,
                       const ConfusionMatrix& cm,
                       const std::array<RocCurve, kNumClasses>& roc) {
  json j = metrics_json(table);
  j["model"] = model_name;
  j["confusion"] = cm.counts;
  j["class_order"] = kClassNames;
  j["roc"] = roc_set_json(roc);
  return j;
}

std::string history_csv(const TrainingHistory& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  for (const auto& e : history) {
    out += fmt::format("{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_accuracy,
                       e.val_loss, e.val_accuracy, e.learning_rate_after);
  }
  return out;
}

TrainingHistory parse_history_csv(const std::string& text) {
  TrainingHistory h;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || line.empty()) continue;
    const auto cols = csv::split_line(line);
    if (!cols || cols->size() != 6) {
      throw Error(ErrorCode::MalformedRow, "history line " + std::to_string(line_no));
    }
    try {
      EpochRecord e;
      e.epoch = std::stoul((*cols)[0]);
      e.train_loss = std::stod((*cols)[1]);
      e.train_accuracy = std::stod((*cols)[2]);
      e.val_loss = std::stod((*cols)[3]);
      e.val_accuracy = std::stod((*cols)[4]);
      e.learning_rate_after = std::stod((*cols)[5]);
      h.push_back(e);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedRow, "history line " + std::to_string(line_no));
    }
  }
  return h;
}

// ---- Figures --------------------------------------------------------------

namespace {

const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrey(170, 170, 170);
const cv::Scalar kWhite(255, 255, 255);
constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

// BGR, one per class.
const std::array<cv::Scalar, kNumClasses> kClassColors = {
    cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),
    cv::Scalar(40, 39, 214), cv::Scalar(189, 103, 148)};

void save_png(const cv::Mat& img, const std::filesystem::path& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw Error(ErrorCode::IoFailure, path.string());
}

void put_text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45,
              const cv::Scalar& color = kBlack, bool centered = false) {
  if (centered) {
    int baseline = 0;
    const auto size = cv::getTextSize(s, kFont, scale, 1, &baseline);
    at.x -= size.width / 2;
    at.y += size.height / 2;
  }
  cv::putText(img, s, at, kFont, scale, color, 1, cv::LINE_AA);
}

/// Axes frame mapping data coordinates into a pixel rectangle.
struct Axes {
  cv::Rect area;
  double x0, x1, y0, y1;

  cv::Point map(double x, double y) const {
    const double fx = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
    const double fy = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
    return {area.x + static_cast<int>(std::lround(fx * area.width)),
            area.y + area.height - static_cast<int>(std::lround(fy * area.height))};
  }
};

cv::Mat blank(int w, int h) { return cv::Mat(h, w, CV_8UC3, kWhite); }

void draw_frame(cv::Mat& img, const Axes& ax, const std::string& title, const std::string& xlabel,
                const std::string& ylabel, const std::vector<double>& xticks,
                const std::vector<double>& yticks, const char* yfmt) {
  for (double y : yticks) {
    const auto p = ax.map(ax.x0, y);
    cv::line(img, {ax.area.x, p.y}, {ax.area.x + ax.area.width, p.y}, cv::Scalar(235, 235, 235));
    put_text(img, fmt::format(fmt::runtime(yfmt), y), {ax.area.x - 50, p.y + 4}, 0.4);
  }
  for (double x : xticks) {
    const auto p = ax.map(x, ax.y0);
    cv::line(img, p, {p.x, p.y + 5}, kBlack);
    put_text(img, fmt::format("{:g}", x), {p.x, p.y + 18}, 0.4, kBlack, true);
  }
  cv::rectangle(img, ax.area, kBlack);
  put_text(img, title, {ax.area.x + ax.area.width / 2, 22}, 0.6, kBlack, true);
  put_text(img, xlabel, {ax.area.x + ax.area.width / 2, ax.area.y + ax.area.height + 42}, 0.5,
           kBlack, true);
  put_text(img, ylabel, {8, ax.area.y - 12}, 0.5);
}

void draw_series(cv::Mat& img, const Axes& ax, const std::vector<cv::Point2d>& pts,
                 const cv::Scalar& color) {
  for (std::size_t i = 1; i < pts.size(); ++i) {
    cv::line(img, ax.map(pts[i - 1].x, pts[i - 1].y), ax.map(pts[i].x, pts[i].y), color, 2,
             cv::LINE_AA);
  }
  for (const auto& p : pts) cv::circle(img, ax.map(p.x, p.y), 3, color, cv::FILLED, cv::LINE_AA);
}

void draw_legend(cv::Mat& img, cv::Point at, const std::vector<std::string>& labels,
                 const std::vector<cv::Scalar>& colors) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = at.y + static_cast<int>(i) * 18;
    cv::line(img, {at.x, y}, {at.x + 20, y}, colors[i], 2, cv::LINE_AA);
    put_text(img, labels[i], {at.x + 26, y + 4}, 0.42);
  }
}

std::vector<double> epoch_ticks(std::size_t n) {
  std::vector<double> ticks;
  const std::size_t step = n <= 15 ? 1 : (n + 14) / 15;
  for (std::size_t e = 1; e <= n; e += step) ticks.push_back(static_cast<double>(e));
  return ticks;
}

void plot_curve_pair(const TrainingHistory& h, bool accuracy, const std::filesystem::path& path) {
  cv::Mat img = blank(640, 440);
  std::vector<cv::Point2d> train, val;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& e : h) {
    const double x = static_cast<double>(e.epoch);
    const double t = accuracy ? e.train_accuracy : e.train_loss;
    const double v = accuracy ? e.val_accuracy : e.val_loss;
    train.push_back({x, t});
    val.push_back({x, v});
    lo = std::min({lo, t, v});
    hi = std::max({hi, t, v});
  }
  if (accuracy) {
    lo = 0.0;
    hi = 1.0;
  } else {
    lo = std::min(0.0, lo);
    hi = hi > lo ? hi * 1.05 : lo + 1.0;
  }
  const double first = static_cast<double>(h.front().epoch);
  const double last = static_cast<double>(h.back().epoch);
  Axes ax{cv::Rect(70, 40, 540, 330), first == last ? first - 1 : first,
          first == last ? last + 1 : last, lo, hi};
  std::vector<double> yticks;
  for (int i = 0; i <= 5; ++i) yticks.push_back(lo + (hi - lo) * i / 5.0);
  std::vector<double> xticks;
  for (double t : epoch_ticks(h.size())) xticks.push_back(first + t - 1);
  draw_frame(img, ax,
             accuracy ? "Training and Validation Accuracy" : "Training and Validation Loss",
             "Epoch", accuracy ? "Accuracy" : "Loss", xticks, yticks, "{:.2f}");
  draw_series(img, ax, train, kClassColors[0]);
  draw_series(img, ax, val, kClassColors[1]);
  draw_legend(img, {ax.area.x + ax.area.width - 150, ax.area.y + 20},
              {accuracy ? "train accuracy" : "train loss", accuracy ? "val accuracy" : "val loss"},
              {kClassColors[0], kClassColors[1]});
  save_png(img, path);
}

}  // namespace

CurveFigures plot_training_curves(const TrainingHistory& history,
                                  const std::filesystem::path& out_dir) {
  if (history.empty()) throw Error(ErrorCode::EmptyHistory, "no epochs to plot");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, out_dir.string() + ": " + ec.message());
  CurveFigures f{out_dir / "fig_acc.png", out_dir / "fig_loss.png"};
  plot_curve_pair(history, true, f.accuracy);
  plot_curve_pair(history, false, f.loss);
  return f;
}

void plot_confusion_matrix(const ConfusionMatrix& cm, const std::filesystem::path& out_path) {
  constexpr int kCell = 90;
  constexpr int kLeft = 130;
  constexpr int kTop = 50;
  cv::Mat img = blank(kLeft + kCell * static_cast<int>(kNumClasses) + 30,
                      kTop + kCell * static_cast<int>(kNumClasses) + 80);
  std::uint64_t peak = 1;
  for (const auto& row : cm.counts) {
    for (auto v : row) peak = std::max(peak, v);
  }
  put_text(img, "Confusion Matrix", {img.cols / 2, 20}, 0.6, kBlack, true);
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    for (std::size_t p = 0; p < kNumClasses; ++p) {
      const double f = static_cast<double>(cm.counts[t][p]) / static_cast<double>(peak);
      // White to dark blue.
      const cv::Scalar fill(255 - 80 * f, 255 - 200 * f, 255 - 230 * f);
      const cv::Rect cell(kLeft + static_cast<int>(p) * kCell, kTop + static_cast<int>(t) * kCell,
                          kCell, kCell);
      cv::rectangle(img, cell, fill, cv::FILLED);
      cv::rectangle(img, cell, kGrey);
      put_text(img, std::to_string(cm.counts[t][p]),
               {cell.x + kCell / 2, cell.y + kCell / 2}, 0.6, f > 0.5 ? kWhite : kBlack, true);
    }
    const std::string name(kClassNames[t]);
    put_text(img, name, {8, kTop + static_cast<int>(t) * kCell + kCell / 2 + 4}, 0.42);
    put_text(img, name,
             {kLeft + static_cast<int>(t) * kCell + kCell / 2,
              kTop + kCell * static_cast<int>(kNumClasses) + 16},
             0.36, kBlack, true);
  }
  put_text(img, "Predicted", {kLeft + kCell * static_cast<int>(kNumClasses) / 2, img.rows - 20},
           0.5, kBlack, true);
  put_text(img, "True", {8, kTop - 10}, 0.5);
  save_png(img, out_path);
}

std::array<std::string, kNumClasses> roc_legend(const std::array<RocCurve, kNumClasses>& curves) {
  std::array<std::string, kNumClasses> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    out[c] = curves[c].auc ? fmt::format("{} (AUC {:.3f})", kClassNames[c], *curves[c].auc)
                           : fmt::format("{} (AUC n/a)", kClassNames[c]);
  }
  return out;
}

void plot_roc(const std::array<RocCurve, kNumClasses>& curves,
              const std::filesystem::path& out_path) {
  cv::Mat img = blank(560, 520);
  const Axes ax{cv::Rect(70, 40, 420, 400), 0.0, 1.0, 0.0, 1.0};
  const std::vector<double> ticks = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  draw_frame(img, ax, "ROC curve", "False Positive Rate", "True Positive Rate", ticks, ticks,
             "{:.1f}");
  // Dashed chance diagonal.
  for (int i = 0; i < 40; i += 2) {
    cv::line(img, ax.map(i / 40.0, i / 40.0), ax.map((i + 1) / 40.0, (i + 1) / 40.0), kGrey, 1,
             cv::LINE_AA);
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& pts = curves[c].points;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      cv::line(img, ax.map(pts[i - 1].fpr, pts[i - 1].tpr), ax.map(pts[i].fpr, pts[i].tpr),
               kClassColors[c], 2, cv::LINE_AA);
    }
  }
  const auto legend = roc_legend(curves);
  draw_legend(img, {ax.area.x + ax.area.width - 200, ax.area.y + ax.area.height - 100},
              {legend.begin(), legend.end()}, {kClassColors.begin(), kClassColors.end()});
  save_png(img, out_path);
}

// ---- Bundles --------------------------------------------------------------

ExperimentRecord emit_report(ExperimentRecord record, const std::filesystem::path& out_dir) {
  if (record.run_id.empty()) incomplete("run_id");
  if (record.model_name.empty()) incomplete("model_name");
  if (record.history.empty()) incomplete("history");
  if (record.confusion.total() == 0) incomplete("confusion matrix");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, out_dir.string() + ": " + ec.message());

  for (const char* name : kBundleFiles) {
    std::string key(name);
    key = key.substr(0, key.find('.'));
    record.artifact_paths[key] = name;
  }

  write_text(out_dir / "metrics.csv", metrics_csv(record.model_name, record.metrics));
  write_text(out_dir / "metrics_full.json",
             metrics_full_json(record.model_name, record.metrics, record.confusion, record.roc)
                     .dump(2) +
                 "\n");
  write_text(out_dir / "history.csv", history_csv(record.history));
  plot_confusion_matrix(record.confusion, out_dir / "fig_confusion.png");
  plot_roc(record.roc, out_dir / "fig_roc.png");
  plot_training_curves(record.history, out_dir);
  save_record(record, out_dir / "record.json");
  return record;
}

namespace {

int canonical_rank(BackboneId id) {
  switch (id) {
    case BackboneId::VGG16: return 0;
    case BackboneId::EfficientNetB0: return 1;
    case BackboneId::ResNet50V2: return 2;
    case BackboneId::StubBackbone: return 3;
  }
  return 4;
}

}  // namespace

Comparison compare_runs(const std::vector<ExperimentRecord>& records) {
  if (records.empty()) incomplete("nothing to compare");
  Comparison out;
  for (const auto& r : records) {
    if (r.run_id.empty() || r.model_name.empty()) incomplete("record without run_id or model");
    out.order.push_back(&r);
  }
  std::sort(out.order.begin(), out.order.end(), [](const auto* a, const auto* b) {
    const int ra = canonical_rank(a->backbone.id);
    const int rb = canonical_rank(b->backbone.id);
    if (ra != rb) return ra < rb;
    return a->run_id < b->run_id;
  });

  std::map<std::string, int> name_uses;
  std::set<std::string> fingerprints;
  for (const auto* r : out.order) {
    ++name_uses[r->model_name];
    fingerprints.insert(r->dataset_fingerprint);
  }
  out.mixed_datasets = fingerprints.size() > 1;

  const auto label = [&](const ExperimentRecord& r) {
    return name_uses[r.model_name] > 1 ? r.model_name + " [" + r.run_id + "]" : r.model_name;
  };

  out.table_csv = metrics_header();
  for (const auto* r : out.order) out.table_csv += metrics_rows(label(*r), r->metrics);

  out.best_csv = "metric,class,model,run_id,value\n";
  for (Metric m : kAllMetrics) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const ExperimentRecord* best = nullptr;
      for (const auto* r : out.order) {
        if (best == nullptr) {
          best = r;
          continue;
        }
        const double v = r->metrics.rows[c][m];
        const double b = best->metrics.rows[c][m];
        const bool better = lower_is_better(m) ? v < b : v > b;
        if (better || (v == b && r->run_id < best->run_id)) best = r;
      }
      out.best.push_back({m, c, label(*best), best->run_id, best->metrics.rows[c][m]});
      out.best_csv += csv::join({std::string(metric_name(m)), std::string(kClassNames[c]),
                                 label(*best), best->run_id,
                                 fmt::format("{}", best->metrics.rows[c][m])}) +
                      "\n";
    }
  }
  return out;
}

void write_comparison(const Comparison& comparison, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, out_dir.string() + ": " + ec.message());
  write_text(out_dir / "comparison.csv", comparison.table_csv);
  write_text(out_dir / "best_models.csv", comparison.best_csv);

  json runs = json::array();
  for (const auto* r : comparison.order) {
    runs.push_back({{"run_id", r->run_id},
                    {"model", r->model_name},
                    {"dataset_fingerprint", r->dataset_fingerprint},
                    {"overall_accuracy", r->metrics.overall_accuracy}});
  }
  json best = json::array();
  for (const auto& b : comparison.best) {
    best.push_back({{"metric", metric_name(b.metric)},
                    {"class", kClassNames[b.class_index]},
                    {"model", b.model_name},
                    {"run_id", b.run_id},
                    {"value", b.value}});
  }
  const json j = {{"runs", runs}, {"best", best}, {"mixed_datasets", comparison.mixed_datasets}};
  write_text(out_dir / "comparison.json", j.dump(2) + "\n");
}

// ---- Run directories ------------------------------------------------------

namespace {

std::tm utc(std::chrono::system_clock::time_point when) {
  const std::time_t t = std::chrono::system_clock::to_time_t(when);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return tm;
}

long long millis_of(std::chrono::system_clock::time_point when) {
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(when.time_since_epoch()).count();
  return ((ms % 1000) + 1000) % 1000;
}

}  // namespace

std::string iso_timestamp(std::chrono::system_clock::time_point when) {
  const std::tm tm = utc(when);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900,
                     tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                     millis_of(when));
}

std::string make_run_id(const std::string& config_hash, const std::string& dataset_fingerprint,
                        std::chrono::system_clock::time_point when) {
  const std::tm tm = utc(when);
  const std::string digest = sha256_hex(config_hash + "\n" + dataset_fingerprint);
  return fmt::format("{}-{:04}{:02}{:02}T{:02}{:02}{:02}{:03}Z", digest.substr(0, 12),
                     tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min,
                     tm.tm_sec, millis_of(when));
}

RunDirLock::RunDirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, dir.string() + ": " + ec.message());
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    if (errno == EEXIST) throw Error(ErrorCode::RunDirLocked, dir.string());
    throw Error(ErrorCode::IoFailure, path_.string());
  }
  std::fclose(f);
}

RunDirLock::~RunDirLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace retino
