#include <doctest.h>

#include <cmath>
#include <numbers>

#include "retino/error.hpp"
#include "retino/preprocess.hpp"
#include "support.hpp"

using namespace retino;

namespace {

// Plain bilinear at pixel-center coordinates with edge clamping, written
// with the four-weight formula.
double bilinear_ref(const ImageTensor& img, double sy, double sx, std::size_t c) {
  const auto h = static_cast<long>(img.height());
  const auto w = static_cast<long>(img.width());
  const long y0 = static_cast<long>(std::floor(sy));
  const long x0 = static_cast<long>(std::floor(sx));
  const double ty = sy - static_cast<double>(y0);
  const double tx = sx - static_cast<double>(x0);
  const auto px = [&](long y, long x) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    return static_cast<double>(img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c));
  };
  return (1 - ty) * (1 - tx) * px(y0, x0) + (1 - ty) * tx * px(y0, x0 + 1) +
         ty * (1 - tx) * px(y0 + 1, x0) + ty * tx * px(y0 + 1, x0 + 1);
}

ImageTensor ramp(std::size_t h, std::size_t w) {
  ImageTensor img(h, w, ValueDomain::Raw0To255);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(2 * x + 10 + c);
    }
  }
  return img;
}

}  // namespace

TEST_CASE("resize shape, identity and constants") {
  std::mt19937_64 gen(3);
  for (auto [h, w] : {std::pair{300, 400}, std::pair{100, 50}, std::pair{224, 224}, std::pair{1, 1}}) {
    const auto img = test_support::random_raw_image(h, w, gen);
    const auto out = resize(img, 224, 224);
    CHECK(out.height() == 224);
    CHECK(out.width() == 224);
    CHECK(out.size() == 224 * 224 * 3);
    CHECK(out.domain() == img.domain());
  }
  const auto same = test_support::random_raw_image(224, 224, gen);
  CHECK(resize(same, 224, 224) == same);

  for (auto [h, w] : {std::pair{17, 33}, std::pair{500, 3}}) {
    ImageTensor c(h, w, ValueDomain::Raw0To255, 77.25f);
    const auto out = resize(c, 224, 224);
    for (float v : out.data()) REQUIRE(v == 77.25f);
  }

  ImageTensor some(4, 4);
  CHECK_THROWS_AS(resize(some, 0, 5), Error);
  try {
    resize(some, 5, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroDimension);
  }
}

TEST_CASE("resize agrees with a four-weight bilinear reference") {
  std::mt19937_64 gen(11);
  const auto img = test_support::random_raw_image(37, 53, gen);
  const std::size_t th = 24, tw = 71;
  const auto out = resize(img, th, tw);
  const double sy_scale = 37.0 / th, sx_scale = 53.0 / tw;
  for (std::size_t y = 0; y < th; ++y) {
    for (std::size_t x = 0; x < tw; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double ref = bilinear_ref(img, (y + 0.5) * sy_scale - 0.5, (x + 0.5) * sx_scale - 0.5, c);
        REQUIRE(out.at(y, x, c) == doctest::Approx(ref).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("normalize") {
  ImageTensor img(1, 3, ValueDomain::Raw0To255);
  img.at(0, 0, 0) = 255;
  img.at(0, 1, 0) = 0;
  img.at(0, 2, 0) = 128;
  const auto n = normalize(img);
  CHECK(n.domain() == ValueDomain::Unit0To1);
  CHECK(n.at(0, 0, 0) == 1.0f);
  CHECK(n.at(0, 1, 0) == 0.0f);
  CHECK(n.at(0, 2, 0) == doctest::Approx(0.50196).epsilon(1e-5));
  CHECK_THROWS_AS(normalize(n), Error);
  try {
    normalize(n);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlreadyNormalized);
  }
  std::mt19937_64 gen(1);
  const auto r = normalize(test_support::random_raw_image(50, 60, gen));
  for (float v : r.data()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("flip_horizontal") {
  ImageTensor ab(1, 2, ValueDomain::Raw0To255);
  for (std::size_t c = 0; c < 3; ++c) {
    ab.at(0, 0, c) = 1.0f + c;
    ab.at(0, 1, c) = 9.0f + c;
  }
  const auto ba = flip_horizontal(ab);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(ba.at(0, 0, c) == 9.0f + c);
    CHECK(ba.at(0, 1, c) == 1.0f + c);
  }
  std::mt19937_64 gen(2);
  const auto img = test_support::random_raw_image(31, 40, gen);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);

  ImageTensor sym(3, 4, ValueDomain::Raw0To255);
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      for (std::size_t c = 0; c < 3; ++c) sym.at(y, x, c) = static_cast<float>(y * 10 + std::min(x, 3 - x));
    }
  }
  CHECK(flip_horizontal(sym) == sym);
}

TEST_CASE("augment with the identity policy is exact") {
  std::mt19937_64 gen(4);
  const auto policy = AugmentationPolicy::identity();
  CHECK(policy.rotation_max_deg == 0.0);
  CHECK(policy.shear_max == 0.0);
  CHECK(policy.crop_fraction == 1.0);
  CHECK(policy.hflip_probability == 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = test_support::random_unit_image(30, 20, gen);
    const auto [out, label] = augment(img, GradeLabel::ProliferateDR, policy, seed);
    CHECK(out == img);
    CHECK(label == GradeLabel::ProliferateDR);
  }
}

TEST_CASE("augment preserves shape, label and domain and is seeded") {
  std::mt19937_64 gen(5);
  const AugmentationPolicy policy;  // defaults
  const auto img = test_support::random_unit_image(40, 48, gen);
  std::size_t differing = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto label = label_from_index(seed % 5);
    const auto a = augment(img, label, policy, seed);
    const auto b = augment(img, label, policy, seed);
    CHECK(a.first == b.first);
    CHECK(a.second == label);
    CHECK(a.first.height() == 40);
    CHECK(a.first.width() == 48);
    CHECK(a.first.domain() == ValueDomain::Unit0To1);
    for (float v : a.first.data()) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
    const auto c = augment(img, label, policy, seed + 1000);
    differing += !(c.first == a.first);
  }
  CHECK(differing == 100);

  ImageTensor raw(10, 10, ValueDomain::Raw0To255, 255.0f);
  const auto r = augment(raw, GradeLabel::NoDR, policy, 9).first;
  CHECK(r.domain() == ValueDomain::Raw0To255);
  for (float v : r.data()) REQUIRE(v == 255.0f);
}

TEST_CASE("augmentation draws stay within the policy") {
  AugmentationPolicy policy;
  policy.rotation_max_deg = 20;
  policy.shear_max = 0.2;
  policy.crop_fraction = 0.8;
  policy.hflip_probability = 0.5;
  std::size_t flips = 0;
  const std::size_t n = 4000;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const auto d = draw_augmentation(policy, 100, 120, seed);
    CHECK(d.crop_h >= 0.8);
    CHECK(d.crop_h <= 1.0);
    CHECK(d.crop_w >= 0.8);
    CHECK(d.crop_h * d.crop_w >= 0.8 * 0.8 - 1e-12);
    CHECK(d.crop_y >= 0.0);
    CHECK(d.crop_y + d.crop_h * 100 <= 100.0 + 1e-9);
    CHECK(d.crop_x + d.crop_w * 120 <= 120.0 + 1e-9);
    CHECK(std::abs(d.shear) <= 0.2);
    CHECK(std::abs(d.rotation_deg) <= 20.0);
    flips += d.flip;
  }
  // Binomial(4000, 0.5): 6 sigma is about 190.
  CHECK(flips > 1810);
  CHECK(flips < 2190);

  policy.hflip_probability = 1.0;
  policy.rotation_max_deg = 0;
  policy.shear_max = 0;
  policy.crop_fraction = 1.0;
  std::mt19937_64 gen(6);
  const auto img = test_support::random_unit_image(12, 9, gen);
  CHECK(augment(img, GradeLabel::MildDR, policy, 3).first == flip_horizontal(img));
}

TEST_CASE("invalid policies are rejected") {
  const auto bad = [](AugmentationPolicy p) {
    ImageTensor img(4, 4, ValueDomain::Unit0To1);
    try {
      augment(img, GradeLabel::NoDR, p, 0);
    } catch (const Error& e) {
      return e.code() == ErrorCode::InvalidPolicy;
    }
    return false;
  };
  AugmentationPolicy p;
  p.rotation_max_deg = -1;
  CHECK(bad(p));
  p = {};
  p.shear_max = -0.1;
  CHECK(bad(p));
  p = {};
  p.crop_fraction = 0.0;
  CHECK(bad(p));
  p = {};
  p.crop_fraction = 1.5;
  CHECK(bad(p));
  p = {};
  p.hflip_probability = 1.01;
  CHECK(bad(p));
}

TEST_CASE("geometric transforms against closed forms") {
  SUBCASE("zero rotation and shear is identity") {
    std::mt19937_64 gen(8);
    const auto img = test_support::random_raw_image(15, 16, gen);
    AugmentationDraw d;
    CHECK(apply_augmentation(img, d) == img);
  }
  SUBCASE("180 degree rotation equals flipping both axes") {
    std::mt19937_64 gen(9);
    const auto img = test_support::random_raw_image(14, 11, gen);
    AugmentationDraw d;
    d.rotation_deg = 180.0;
    const auto out = apply_augmentation(img, d);
    for (std::size_t y = 0; y < 14; ++y) {
      for (std::size_t x = 0; x < 11; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(out.at(y, x, c) == doctest::Approx(img.at(13 - y, 10 - x, c)).epsilon(1e-4));
        }
      }
    }
  }
  SUBCASE("90 degree rotation of a square image permutes pixels") {
    std::mt19937_64 gen(10);
    const auto img = test_support::random_raw_image(9, 9, gen);
    AugmentationDraw d;
    d.rotation_deg = 90.0;
    const auto out = apply_augmentation(img, d);
    // Output pixel (y, x) reads source (x', y') with the inverse rotation
    // about the center (4, 4): u = dy, v = -dx.
    for (std::size_t y = 0; y < 9; ++y) {
      for (std::size_t x = 0; x < 9; ++x) {
        const std::size_t sy = 8 - x;
        const std::size_t sx = y;
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(out.at(y, x, c) == doctest::Approx(img.at(sy, sx, c)).epsilon(1e-4));
        }
      }
    }
  }
  SUBCASE("shear of a horizontal ramp shifts rows linearly") {
    const auto img = ramp(21, 40);
    AugmentationDraw d;
    d.shear = 0.1;
    const auto out = apply_augmentation(img, d);
    const double cy = 10.0;
    for (std::size_t y = 0; y < 21; ++y) {
      for (std::size_t x = 5; x < 35; ++x) {
        const double sx = static_cast<double>(x) - 0.1 * (static_cast<double>(y) - cy);
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(out.at(y, x, c) == doctest::Approx(2 * sx + 10 + c).epsilon(1e-5));
        }
      }
    }
  }
  SUBCASE("crop of a ramp resamples the crop box") {
    const auto img = ramp(20, 40);
    AugmentationDraw d;
    d.crop_h = 0.5;
    d.crop_w = 0.5;
    d.crop_y = 3.0;
    d.crop_x = 7.0;
    const auto out = apply_augmentation(img, d);
    for (std::size_t y = 0; y < 20; ++y) {
      for (std::size_t x = 0; x < 40; ++x) {
        const double sx = 7.0 + (x + 0.5) * 0.5 - 0.5;
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(out.at(y, x, c) == doctest::Approx(2 * sx + 10 + c).epsilon(1e-5));
        }
      }
    }
  }
  SUBCASE("rotation pads by reflection, not zeros") {
    ImageTensor img(20, 20, ValueDomain::Raw0To255, 100.0f);
    AugmentationDraw d;
    d.rotation_deg = 30.0;
    const auto out = apply_augmentation(img, d);
    for (float v : out.data()) REQUIRE(v == doctest::Approx(100.0f));
  }
}

TEST_CASE("load_preprocessed decodes, resizes and normalizes") {
  test_support::TempDir dir;
  std::mt19937_64 gen(12);
  const auto img = test_support::random_raw_image(60, 80, gen);
  write_png(img, dir / "a.png");
  const auto back = read_image(dir / "a.png");
  CHECK(back == img);
  const auto p = load_preprocessed(dir / "a.png");
  CHECK(p.height() == 224);
  CHECK(p.width() == 224);
  CHECK(p.domain() == ValueDomain::Unit0To1);

  test_support::write_file(dir / "junk.png", "not an image");
  try {
    read_image(dir / "junk.png");
    FAIL("expected ImageDecode");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ImageDecode);
  }
  try {
    read_image(dir / "absent.png");
    FAIL("expected MissingPath");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPath);
  }
}
