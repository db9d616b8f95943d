#include "retino/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "retino/error.hpp"

namespace retino {

ImageTensor::ImageTensor(std::size_t height, std::size_t width,
                         ValueDomain domain, float fill)
    : height_(height),
      width_(width),
      domain_(domain),
      data_(height * width * kChannels, fill) {}

ImageTensor read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingPath, path.string());
  }
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    throw Error(ErrorCode::ImageDecode, path.string());
  }
  ImageTensor out(static_cast<std::size_t>(bgr.rows),
                  static_cast<std::size_t>(bgr.cols), ValueDomain::Raw0To255);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>(row[x][2 - c]);
      }
    }
  }
  return out;
}

void write_png(const ImageTensor& image, const std::filesystem::path& path) {
  const float scale = image.domain() == ValueDomain::Unit0To1 ? 255.0f : 1.0f;
  cv::Mat bgr(static_cast<int>(image.height()), static_cast<int>(image.width()),
              CV_8UC3);
  for (int y = 0; y < bgr.rows; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(y, x, c) * scale, 0.0f, 255.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v));
      }
    }
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorCode::IoFailure, path.string());
  }
}

}  // namespace retino
