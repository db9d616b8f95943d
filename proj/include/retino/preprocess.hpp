#pragma once

#include <cstdint>
#include <utility>

#include "retino/dataset.hpp"
#include "retino/image.hpp"

namespace retino {

struct AugmentationPolicy {
  double rotation_max_deg = 15.0;
  double shear_max = 0.1;
  double crop_fraction = 0.9;
  double hflip_probability = 0.5;

  /// No-op policy: 0 degrees, no shear, full crop, never flip.
  static AugmentationPolicy identity() { return {0.0, 0.0, 1.0, 0.0}; }

  /// Throws InvalidPolicy when a field is outside its range or not finite.
  void validate() const;

  bool operator==(const AugmentationPolicy&) const = default;
};

/// Bilinear resize with half-pixel centers and edge clamping.
ImageTensor resize(const ImageTensor& image, std::size_t target_h,
                   std::size_t target_w);

/// Raw 0..255 -> unit 0..1 by division by 255.
ImageTensor normalize(const ImageTensor& image);

ImageTensor flip_horizontal(const ImageTensor& image);

/// The random draws behind one augment() call, exposed for inspection.
struct AugmentationDraw {
  double crop_h = 1.0;  // crop side as a fraction of the image side
  double crop_w = 1.0;
  double crop_y = 0.0;  // top-left corner in pixels
  double crop_x = 0.0;
  double shear = 0.0;
  double rotation_deg = 0.0;
  bool flip = false;
};

/// Draws are taken in a fixed order from Rng(derive_seed(rng_seed, 0)):
/// crop_h, crop_w, crop_y, crop_x, shear, rotation, flip.
AugmentationDraw draw_augmentation(const AugmentationPolicy& policy,
                                   std::size_t height, std::size_t width,
                                   std::uint64_t rng_seed);

/// Crop (then resize back), shear, rotate (both around the image center with
/// reflect padding), horizontal flip. Shape, label and value domain are
/// preserved; outputs are clipped to the domain range.
std::pair<ImageTensor, GradeLabel> augment(const ImageTensor& image,
                                           GradeLabel label,
                                           const AugmentationPolicy& policy,
                                           std::uint64_t rng_seed);

/// Applies a fixed draw; augment() is draw_augmentation() + this.
ImageTensor apply_augmentation(const ImageTensor& image,
                               const AugmentationDraw& draw);

/// Decode, resize to target size, normalize.
ImageTensor load_preprocessed(const std::filesystem::path& path,
                              std::size_t target_h = 224,
                              std::size_t target_w = 224);

}  // namespace retino
