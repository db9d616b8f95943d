// Compares native backbone features against reference vectors recorded by
// tools/convert_keras_weights.py. Exits 77 when no goldens are present.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "retino/image.hpp"
#include "retino/model.hpp"

using namespace retino;
namespace fs = std::filesystem;

namespace {

constexpr double kTolerance = 1e-4;

std::vector<float> read_floats(const fs::path& p, std::size_t n) {
  std::vector<float> v(n);
  std::ifstream in(p, std::ios::binary);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw std::runtime_error("short golden file " + p.string());
  return v;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: golden <dir>\n");
    return 1;
  }
  const fs::path dir = argv[1];
  if (!fs::exists(dir / "manifest.json")) {
    fmt::print("no goldens in {}; skipping\n", dir.string());
    return 77;
  }
  int failures = 0;
  std::map<std::string, std::shared_ptr<const Backbone>> cache;
  const auto manifest = read_json(dir / "manifest.json");
  for (const auto& stem : manifest.at("goldens")) {
    const auto meta = read_json(dir / (stem.get<std::string>() + ".json"));
    const auto name = meta.at("backbone").get<std::string>();
    const auto archive = dir / meta.at("archive").get<std::string>();
    auto& bb = cache[archive.string()];
    if (!bb) bb = Backbone::create(parse_backbone(name), WeightSource::checkpoint(archive));

    const auto input = meta.at("input").get<std::string>();
    const auto image = input == "zero" ? ImageTensor(224, 224) : read_image(dir / input);
    const auto got = bb->extract(image);
    const auto want = read_floats(dir / (stem.get<std::string>() + ".bin"),
                                  meta.at("feature_dim").get<std::size_t>());

    double diff = 0.0, scale = 0.0;
    bool sized = got.size() == want.size();
    for (std::size_t i = 0; sized && i < want.size(); ++i) {
      diff = std::max(diff, std::abs(double(got[i]) - want[i]));
      scale = std::max(scale, std::abs(double(want[i])));
    }
    const double rel = scale > 0 ? diff / scale : diff;
    const bool ok = sized && std::isfinite(rel) && rel <= kTolerance;
    failures += !ok;
    fmt::print("{:<24} {}  max|d|={:.3e} max|ref|={:.3e} rel={:.3e}\n", stem.get<std::string>(),
               ok ? "PASS" : "FAIL", diff, scale, rel);
  }
  return failures ? 1 : 0;
}
