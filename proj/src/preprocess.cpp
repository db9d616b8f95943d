#include "retino/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "retino/error.hpp"
#include "retino/rng.hpp"

namespace retino {

void AugmentationPolicy::validate() const {
  const auto bad = [](const char* what) {
    throw Error(ErrorCode::InvalidPolicy, what);
  };
  if (!std::isfinite(rotation_max_deg) || rotation_max_deg < 0.0) bad("rotation_max_deg < 0");
  if (!std::isfinite(shear_max) || shear_max < 0.0) bad("shear_max < 0");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) bad("crop_fraction not in (0,1]");
  if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0)) bad("hflip_probability not in [0,1]");
}

namespace {

float domain_max(ValueDomain d) {
  return d == ValueDomain::Raw0To255 ? 255.0f : 1.0f;
}

std::ptrdiff_t clamp_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  return std::clamp<std::ptrdiff_t>(i, 0, n - 1);
}

// Half-sample symmetric reflection: ... c b a | a b c | c b a ...
std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

enum class Border { Clamp, Reflect };

// Bilinear sample at continuous pixel-center coordinates (sy, sx), written as
// nested lerps so integer coordinates and constant neighborhoods reproduce
// the source value exactly.
template <Border B>
void sample_bilinear(const ImageTensor& src, double sy, double sx, float* out) {
  const auto h = static_cast<std::ptrdiff_t>(src.height());
  const auto w = static_cast<std::ptrdiff_t>(src.width());
  const double fy0 = std::floor(sy);
  const double fx0 = std::floor(sx);
  const double ty = sy - fy0;
  const double tx = sx - fx0;
  auto y0 = static_cast<std::ptrdiff_t>(fy0);
  auto x0 = static_cast<std::ptrdiff_t>(fx0);
  std::ptrdiff_t y1 = y0 + 1;
  std::ptrdiff_t x1 = x0 + 1;
  if constexpr (B == Border::Clamp) {
    y0 = clamp_index(y0, h);
    y1 = clamp_index(y1, h);
    x0 = clamp_index(x0, w);
    x1 = clamp_index(x1, w);
  } else {
    y0 = reflect_index(y0, h);
    y1 = reflect_index(y1, h);
    x0 = reflect_index(x0, w);
    x1 = reflect_index(x1, w);
  }
  for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) {
    const double a = src.at(y0, x0, c);
    const double b = src.at(y0, x1, c);
    const double d = src.at(y1, x0, c);
    const double e = src.at(y1, x1, c);
    const double top = a + (b - a) * tx;
    const double bottom = d + (e - d) * tx;
    out[c] = static_cast<float>(top + (bottom - top) * ty);
  }
}

void clip_to_domain(ImageTensor& image) {
  const float hi = domain_max(image.domain());
  for (float& v : image.data()) v = std::clamp(v, 0.0f, hi);
}

ImageTensor crop_and_resize(const ImageTensor& src, const AugmentationDraw& d) {
  ImageTensor out(src.height(), src.width(), src.domain());
  for (std::size_t y = 0; y < src.height(); ++y) {
    const double sy = d.crop_y + (static_cast<double>(y) + 0.5) * d.crop_h - 0.5;
    for (std::size_t x = 0; x < src.width(); ++x) {
      const double sx = d.crop_x + (static_cast<double>(x) + 0.5) * d.crop_w - 0.5;
      sample_bilinear<Border::Clamp>(src, sy, sx, &out.at(y, x, 0));
    }
  }
  return out;
}

// Forward map around the center is rotate(shear(p)); sampling needs the
// inverse, shear^-1(rotate^-1(q)).
ImageTensor shear_and_rotate(const ImageTensor& src, double shear, double deg) {
  const double theta = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (static_cast<double>(src.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(src.width()) - 1.0) / 2.0;
  ImageTensor out(src.height(), src.width(), src.domain());
  for (std::size_t y = 0; y < src.height(); ++y) {
    const double dy = static_cast<double>(y) - cy;
    for (std::size_t x = 0; x < src.width(); ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double u = cs * dx + sn * dy;
      const double v = -sn * dx + cs * dy;
      const double sx = cx + (u - shear * v);
      const double sy = cy + v;
      sample_bilinear<Border::Reflect>(src, sy, sx, &out.at(y, x, 0));
    }
  }
  return out;
}

}  // namespace

ImageTensor resize(const ImageTensor& image, std::size_t target_h,
                   std::size_t target_w) {
  if (target_h == 0 || target_w == 0) {
    throw Error(ErrorCode::ZeroDimension, "resize target");
  }
  if (image.height() == 0 || image.width() == 0) {
    throw Error(ErrorCode::ZeroDimension, "resize source");
  }
  if (image.height() == target_h && image.width() == target_w) return image;

  ImageTensor out(target_h, target_w, image.domain());
  const double scale_y = static_cast<double>(image.height()) / static_cast<double>(target_h);
  const double scale_x = static_cast<double>(image.width()) / static_cast<double>(target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    const double sy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
    for (std::size_t x = 0; x < target_w; ++x) {
      const double sx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
      sample_bilinear<Border::Clamp>(image, sy, sx, &out.at(y, x, 0));
    }
  }
  return out;
}

ImageTensor normalize(const ImageTensor& image) {
  if (image.domain() == ValueDomain::Unit0To1) {
    throw Error(ErrorCode::AlreadyNormalized, "image is already in [0,1]");
  }
  ImageTensor out = image;
  for (float& v : out.data()) v /= 255.0f;
  out.set_domain(ValueDomain::Unit0To1);
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out(image.height(), image.width(), image.domain());
  const std::size_t w = image.width();
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ImageTensor::kChannels; ++c) {
        out.at(y, x, c) = image.at(y, w - 1 - x, c);
      }
    }
  }
  return out;
}

AugmentationDraw draw_augmentation(const AugmentationPolicy& policy,
                                   std::size_t height, std::size_t width,
                                   std::uint64_t rng_seed) {
  policy.validate();
  Rng rng(derive_seed(rng_seed, 0));
  AugmentationDraw d;
  d.crop_h = rng.uniform(policy.crop_fraction, 1.0);
  d.crop_w = rng.uniform(policy.crop_fraction, 1.0);
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  d.crop_y = rng.uniform01() * (h - d.crop_h * h);
  d.crop_x = rng.uniform01() * (w - d.crop_w * w);
  d.shear = rng.uniform(-policy.shear_max, policy.shear_max);
  d.rotation_deg = rng.uniform(-policy.rotation_max_deg, policy.rotation_max_deg);
  d.flip = rng.uniform01() < policy.hflip_probability;
  return d;
}

ImageTensor apply_augmentation(const ImageTensor& image,
                               const AugmentationDraw& draw) {
  ImageTensor out = image;
  if (draw.crop_h != 1.0 || draw.crop_w != 1.0) {
    out = crop_and_resize(out, draw);
  }
  if (draw.shear != 0.0 || draw.rotation_deg != 0.0) {
    out = shear_and_rotate(out, draw.shear, draw.rotation_deg);
  }
  if (draw.flip) out = flip_horizontal(out);
  clip_to_domain(out);
  return out;
}

std::pair<ImageTensor, GradeLabel> augment(const ImageTensor& image,
                                           GradeLabel label,
                                           const AugmentationPolicy& policy,
                                           std::uint64_t rng_seed) {
  const auto draw = draw_augmentation(policy, image.height(), image.width(), rng_seed);
  return {apply_augmentation(image, draw), label};
}

ImageTensor load_preprocessed(const std::filesystem::path& path,
                              std::size_t target_h, std::size_t target_w) {
  return normalize(resize(read_image(path), target_h, target_w));
}

}  // namespace retino
