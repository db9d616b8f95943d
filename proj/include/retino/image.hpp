#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace retino {

enum class ValueDomain { Raw0To255, Unit0To1 };

/// Row-major H x W x 3 float image (RGB, channel fastest).
class ImageTensor {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width,
              ValueDomain domain = ValueDomain::Raw0To255, float fill = 0.0f);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  ValueDomain domain() const { return domain_; }
  void set_domain(ValueDomain d) { domain_ = d; }

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * width_ + x) * kChannels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * kChannels + c];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  ValueDomain domain_ = ValueDomain::Raw0To255;
  std::vector<float> data_;
};

/// Decodes PNG or JPEG to RGB in the raw 0..255 domain. Grayscale and
/// palette images are expanded to three channels; alpha is dropped.
ImageTensor read_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG (values are clamped to the domain range).
void write_png(const ImageTensor& image, const std::filesystem::path& path);

}  // namespace retino
