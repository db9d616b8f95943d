#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "retino/dataset.hpp"
#include "retino/image.hpp"

namespace test_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("retino-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Raw 0..255 image with integer pixel values drawn from `gen`.
inline retino::ImageTensor random_raw_image(std::size_t h, std::size_t w, std::mt19937_64& gen) {
  retino::ImageTensor img(h, w, retino::ValueDomain::Raw0To255);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data()) v = static_cast<float>(d(gen));
  return img;
}

inline retino::ImageTensor random_unit_image(std::size_t h, std::size_t w, std::mt19937_64& gen) {
  retino::ImageTensor img(h, w, retino::ValueDomain::Unit0To1);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (auto& v : img.data()) v = d(gen);
  return img;
}

struct SyntheticSet {
  std::vector<retino::ImageTensor> images;
  std::vector<retino::GradeLabel> labels;
};

/// Linearly separable 1x2 RGB images (6 features): class c lifts channel
/// value c to about 0.9, the rest sit near 0.1.
inline SyntheticSet separable_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
  SyntheticSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % retino::kNumClasses;
    retino::ImageTensor img(1, 2, retino::ValueDomain::Unit0To1);
    for (std::size_t j = 0; j < 6; ++j) img.data()[j] = (j == c ? 0.9f : 0.1f) + jitter(gen);
    s.images.push_back(std::move(img));
    s.labels.push_back(retino::label_from_index(c));
  }
  return s;
}

/// Writes `per_class` PNGs per grade under `dir/images` and a manifest CSV
/// at `dir/manifest.csv`. Each class gets its own mean brightness per
/// channel plus noise, so the classes are separable.
inline fs::path write_image_corpus(const fs::path& dir, std::size_t per_class, std::size_t size,
                                   std::uint64_t seed = 1) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> noise(0.0f, 12.0f);
  std::string csv = "image_path,label\n";
  for (std::size_t c = 0; c < retino::kNumClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      retino::ImageTensor img(size, size, retino::ValueDomain::Raw0To255);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const float base = 40.0f + 40.0f * static_cast<float>((c + ch * 2) % 5);
            const float v = base + noise(gen);
            img.at(y, x, ch) = std::clamp(std::round(v), 0.0f, 255.0f);
          }
        }
      }
      const std::string name = "images/c" + std::to_string(c) + "_" + std::to_string(i) + ".png";
      fs::create_directories((dir / name).parent_path());
      retino::write_png(img, dir / name);
      csv += name + "," + std::string(retino::kClassNames[c]) + "\n";
    }
  }
  write_file(dir / "manifest.csv", csv);
  return dir / "manifest.csv";
}

}  // namespace test_support
