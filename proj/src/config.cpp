#include "retino/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "retino/error.hpp"
#include "retino/hash.hpp"
#include "retino/report.hpp"

namespace retino {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) invalid(key + ": not an integer: '" + s + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    invalid(key + ": not a finite number: '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  invalid(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<std::size_t>(key, trim(item)));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"dataset",
       {{"manifest", [](RunConfig& c, auto&, auto& v) { c.dataset.manifest = v; }},
        {"train_fraction",
         [](RunConfig& c, auto& k, auto& v) { c.dataset.train_fraction = parse_double(k, v); }},
        {"split_seed",
         [](RunConfig& c, auto& k, auto& v) {
           c.dataset.split_seed = parse_integer<std::uint64_t>(k, v);
         }}}},
      {"preprocessing",
       {{"augmentation",
         [](RunConfig& c, auto& k, auto& v) {
           if (v == "online") {
             c.preprocessing.mode = AugmentationMode::Online;
           } else if (v == "offline") {
             c.preprocessing.mode = AugmentationMode::Offline;
           } else if (v == "none") {
             c.preprocessing.mode = AugmentationMode::None;
           } else {
             invalid(k + ": expected online, offline or none");
           }
         }},
        {"offline_copies",
         [](RunConfig& c, auto& k, auto& v) {
           c.preprocessing.offline_copies = parse_integer<std::size_t>(k, v);
         }},
        {"rotation_max_deg",
         [](RunConfig& c, auto& k, auto& v) {
           c.preprocessing.policy.rotation_max_deg = parse_double(k, v);
         }},
        {"shear_max",
         [](RunConfig& c, auto& k, auto& v) { c.preprocessing.policy.shear_max = parse_double(k, v); }},
        {"crop_fraction",
         [](RunConfig& c, auto& k, auto& v) {
           c.preprocessing.policy.crop_fraction = parse_double(k, v);
         }},
        {"hflip_probability",
         [](RunConfig& c, auto& k, auto& v) {
           c.preprocessing.policy.hflip_probability = parse_double(k, v);
         }}}},
      {"model",
       {{"backbone",
         [](RunConfig& c, auto& k, auto& v) {
           try {
             c.model.backbone = parse_backbone(v);
           } catch (const Error&) {
             invalid(k + ": unknown backbone '" + v + "'");
           }
         }},
        {"weight_source",
         [](RunConfig& c, auto& k, auto& v) {
           if (v == "auto") {
             c.model.weight_source.reset();
           } else if (v == "portable-checkpoint") {
             c.model.weight_source = WeightSource::Kind::PortableCheckpoint;
           } else if (v == "random-seeded") {
             c.model.weight_source = WeightSource::Kind::RandomSeeded;
           } else if (v == "stub") {
             c.model.weight_source = WeightSource::Kind::Stub;
           } else {
             invalid(k + ": expected auto, portable-checkpoint, random-seeded or stub");
           }
         }},
        {"weights_path", [](RunConfig& c, auto&, auto& v) { c.model.weights_path = v; }},
        {"weights_seed",
         [](RunConfig& c, auto& k, auto& v) {
           c.model.weights_seed = parse_integer<std::uint64_t>(k, v);
         }},
        {"ingress",
         [](RunConfig& c, auto& k, auto& v) {
           if (v == "keras") {
             c.model.ingress = Ingress::Keras;
           } else if (v == "none") {
             c.model.ingress = Ingress::None;
           } else {
             invalid(k + ": expected keras or none");
           }
         }},
        {"head_widths",
         [](RunConfig& c, auto& k, auto& v) { c.model.head.layer_widths = parse_widths(k, v); }},
        {"init_seed",
         [](RunConfig& c, auto& k, auto& v) {
           c.model.init_seed = parse_integer<std::uint64_t>(k, v);
         }},
        {"stub_feature_dim",
         [](RunConfig& c, auto& k, auto& v) {
           c.model.stub.feature_dim = parse_integer<std::size_t>(k, v);
         }},
        {"stub_identity",
         [](RunConfig& c, auto& k, auto& v) { c.model.stub.identity = parse_bool(k, v); }},
        {"stub_input_size",
         [](RunConfig& c, auto& k, auto& v) {
           c.model.stub.input_h = c.model.stub.input_w = parse_integer<std::size_t>(k, v);
         }}}},
      {"optimizer",
       {{"alpha", [](RunConfig& c, auto& k, auto& v) { c.optimizer.alpha = parse_double(k, v); }},
        {"beta1", [](RunConfig& c, auto& k, auto& v) { c.optimizer.beta1 = parse_double(k, v); }},
        {"beta2", [](RunConfig& c, auto& k, auto& v) { c.optimizer.beta2 = parse_double(k, v); }},
        {"epsilon",
         [](RunConfig& c, auto& k, auto& v) { c.optimizer.epsilon = parse_double(k, v); }}}},
      {"scheduler",
       {{"factor", [](RunConfig& c, auto& k, auto& v) { c.scheduler.factor = parse_double(k, v); }},
        {"patience",
         [](RunConfig& c, auto& k, auto& v) { c.scheduler.patience = parse_integer<int>(k, v); }},
        {"min_delta",
         [](RunConfig& c, auto& k, auto& v) { c.scheduler.min_delta = parse_double(k, v); }},
        {"min_lr",
         [](RunConfig& c, auto& k, auto& v) { c.scheduler.min_lr = parse_double(k, v); }}}},
      {"training",
       {{"epochs",
         [](RunConfig& c, auto& k, auto& v) {
           c.training.epochs = parse_integer<std::size_t>(k, v);
         }},
        {"batch_mode",
         [](RunConfig& c, auto& k, auto& v) {
           if (v == "full") {
             c.training.batch_mode = BatchMode::FullBatch;
           } else if (v == "mini") {
             c.training.batch_mode = BatchMode::MiniBatch;
           } else {
             invalid(k + ": expected full or mini");
           }
         }},
        {"batch_size",
         [](RunConfig& c, auto& k, auto& v) {
           c.training.batch_size = parse_integer<std::size_t>(k, v);
         }},
        {"seed",
         [](RunConfig& c, auto& k, auto& v) { c.training.seed = parse_integer<std::uint64_t>(k, v); }},
        {"feature_cache",
         [](RunConfig& c, auto& k, auto& v) { c.training.feature_cache = parse_bool(k, v); }}}},
      {"output", {{"runs_dir", [](RunConfig& c, auto&, auto& v) { c.output.runs_dir = v; }}}},
  };
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

void validate(const RunConfig& c) {
  if (!(c.dataset.train_fraction > 0.0 && c.dataset.train_fraction < 1.0)) {
    invalid("dataset.train_fraction must be in (0, 1)");
  }
  try {
    c.model.head.validate();
  } catch (const Error& e) {
    invalid(std::string("model.head_widths: ") + e.what());
  }
  if (c.model.stub.feature_dim == 0 || c.model.stub.input_h == 0) {
    invalid("model.stub_feature_dim and model.stub_input_size must be >= 1");
  }
  c.train_config().validate();
}

}  // namespace

WeightSource RunConfig::weight_source() const {
  const auto kind = model.weight_source.value_or(model.backbone == BackboneId::StubBackbone
                                                     ? WeightSource::Kind::Stub
                                                     : WeightSource::Kind::PortableCheckpoint);
  switch (kind) {
    case WeightSource::Kind::PortableCheckpoint: {
      auto path = model.weights_path;
      if (path.empty()) path = std::filesystem::path("weights") / (std::string(backbone_name(model.backbone)) + ".rtck");
      return WeightSource::checkpoint(resolve(base_dir, path));
    }
    case WeightSource::Kind::RandomSeeded:
      return WeightSource::random(model.weights_seed);
    case WeightSource::Kind::Stub:
      break;
  }
  return WeightSource::stub(model.weights_seed);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = training.epochs;
  t.batch_mode = training.batch_mode;
  t.batch_size = training.batch_size;
  t.seed = training.seed;
  t.optimizer = optimizer;
  t.scheduler = scheduler;
  t.augmentation = preprocessing.policy;
  t.augmentation_mode = preprocessing.mode;
  t.offline_copies = preprocessing.offline_copies;
  t.feature_cache = training.feature_cache;
  return t;
}

nlohmann::json RunConfig::to_json() const {
  auto ws = retino::to_json(weight_source());
  return {{"dataset",
           {{"manifest", resolve(base_dir, dataset.manifest).lexically_normal().string()},
            {"train_fraction", dataset.train_fraction},
            {"split_seed", dataset.split_seed}}},
          {"model",
           {{"backbone", backbone_name(model.backbone)},
            {"weight_source", ws},
            {"ingress", model.ingress == Ingress::Keras ? "keras" : "none"},
            {"head_widths", model.head.layer_widths},
            {"init_seed", model.init_seed},
            {"stub",
             {{"feature_dim", model.stub.feature_dim},
              {"identity", model.stub.identity},
              {"input_h", model.stub.input_h},
              {"input_w", model.stub.input_w}}}}},
          {"training", retino::to_json(train_config())}};
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    invalid(e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  RunConfig c;
  c.base_dir = base_dir;
  const auto& sections = schema();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) invalid("key outside any section: " + section);
    const auto s = sections.find(section);
    if (s == sections.end()) invalid("unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const auto k = s->second.find(key);
      const std::string name = section + "." + key;
      if (k == s->second.end()) invalid("unknown key " + name);
      k->second(c, name, trim(value.data()));
    }
  }
  c.dataset.manifest = resolve(base_dir, c.dataset.manifest);
  c.output.runs_dir = resolve(base_dir, c.output.runs_dir);
  if (!c.model.weights_path.empty()) c.model.weights_path = resolve(base_dir, c.model.weights_path);
  validate(c);
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingPath, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace retino
