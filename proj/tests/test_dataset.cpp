#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "retino/dataset.hpp"
#include "retino/error.hpp"
#include "retino/rng.hpp"
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

DatasetManifest balanced(std::size_t per_class) {
  DatasetManifest m;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      m.records.push_back({"img_" + std::to_string(c) + "_" + std::to_string(i) + ".png",
                           label_from_index(c), Split::Unassigned});
    }
  }
  return m;
}

// Reference split written straight from the documented rule with its own
// shuffle over the raw engine.
std::vector<Split> reference_split(const DatasetManifest& m, double fraction, std::uint64_t seed) {
  std::vector<Split> out(m.records.size(), Split::Validation);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      if (label_index(m.records[i].label) == c) idx.push_back(i);
    }
    std::mt19937_64 eng(derive_seed(seed, c));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % i);
      std::uint64_t r;
      do {
        r = eng();
      } while (r >= limit);
      std::swap(idx[i - 1], idx[r % i]);
    }
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(idx.size()) * fraction + 0.5));
    for (std::size_t k = 0; k < n_train && k < idx.size(); ++k) out[idx[k]] = Split::Train;
  }
  return out;
}

}  // namespace

TEST_CASE("label names map both ways") {
  CHECK(parse_label("No DR") == GradeLabel::NoDR);
  CHECK(parse_label("Mild DR") == GradeLabel::MildDR);
  CHECK(parse_label("Severe DR") == GradeLabel::SevereDR);
  CHECK_FALSE(parse_label("no dr"));
  CHECK_FALSE(parse_label("Cataract"));
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CHECK(label_index(label_from_index(c)) == c);
    CHECK(parse_label(label_name(label_from_index(c))) == label_from_index(c));
  }
  CHECK(label_index(GradeLabel::NoDR) == 2);
}

TEST_CASE("csv manifest ingestion") {
  test_support::TempDir dir;
  test_support::write_file(dir / "m.csv", "image_path,label\nimg1.png,No DR\nsub/img2.png,Mild DR\n");
  const auto m = load_manifest(dir / "m.csv");
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].label == GradeLabel::NoDR);
  CHECK(m.records[0].split == Split::Unassigned);
  CHECK(m.records[0].image_path == dir.path() / "img1.png");
  CHECK(m.records[1].image_path == dir.path() / "sub/img2.png");
  CHECK(m.class_names.size() == 5);

  SUBCASE("BOM and CRLF are tolerated") {
    test_support::write_file(dir / "b.csv", "\xEF\xBB\xBFimage_path,label\r\na.png,Severe DR\r\n");
    const auto b = load_manifest(dir / "b.csv", ManifestFormat::Csv);
    REQUIRE(b.records.size() == 1);
    CHECK(b.records[0].label == GradeLabel::SevereDR);
  }
  SUBCASE("unknown label") {
    test_support::write_file(dir / "u.csv", "image_path,label\nimg9.png,Cataract\n");
    CHECK(code_of([&] { load_manifest(dir / "u.csv"); }) == ErrorCode::UnknownLabel);
  }
  SUBCASE("malformed row names its line") {
    test_support::write_file(dir / "x.csv", "image_path,label\na.png,No DR\nb.png\n");
    try {
      load_manifest(dir / "x.csv");
      FAIL("expected MalformedRow");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MalformedRow);
      CHECK(std::string(e.what()).find('3') != std::string::npos);
    }
  }
  SUBCASE("wrong header") {
    test_support::write_file(dir / "h.csv", "path,grade\na.png,No DR\n");
    CHECK(code_of([&] { load_manifest(dir / "h.csv"); }) == ErrorCode::MalformedRow);
  }
  SUBCASE("empty manifest") {
    test_support::write_file(dir / "e.csv", "image_path,label\n");
    CHECK(code_of([&] { load_manifest(dir / "e.csv"); }) == ErrorCode::EmptyManifest);
  }
  SUBCASE("missing path") {
    CHECK(code_of([&] { load_manifest(dir / "none.csv"); }) == ErrorCode::MissingPath);
  }
}

TEST_CASE("directory tree ingestion") {
  test_support::TempDir dir;
  for (const auto& name : kClassNames) {
    for (int i = 0; i < 2; ++i) {
      test_support::write_file(dir / "tree" / std::string(name) / ("i" + std::to_string(i) + ".png"), "x");
    }
  }
  test_support::write_file(dir / "tree/No DR/notes.txt", "ignored");
  const auto m = load_manifest(dir / "tree");
  CHECK(m.records.size() == 10);
  const auto counts = class_distribution(m);
  for (auto n : counts) CHECK(n == 2);

  test_support::write_file(dir / "bad/Cataract/a.png", "x");
  CHECK(code_of([&] { load_manifest(dir / "bad", ManifestFormat::DirectoryTree); }) ==
        ErrorCode::UnknownLabel);
}

TEST_CASE("split persists and reloads") {
  test_support::TempDir dir;
  const auto m = stratified_split(balanced(4), 0.5, 3);
  save_split_csv(m, dir / "split.csv");
  const auto back = load_manifest(dir / "split.csv");
  REQUIRE(back.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].label == m.records[i].label);
    CHECK(back.records[i].split == m.records[i].split);
  }
}

TEST_CASE("train_count rounds half up") {
  CHECK(train_count(200, 0.8) == 160);
  CHECK(train_count(2, 0.8) == 2);
  CHECK(train_count(5, 0.5) == 3);
  CHECK(train_count(3, 0.5) == 2);
  CHECK(train_count(1, 0.4) == 0);
  CHECK(train_count(0, 0.8) == 0);
}

TEST_CASE("stratified split of 1000 balanced records is exactly 800/200") {
  const auto m = stratified_split(balanced(200), 0.8, 0);
  const auto train = class_distribution(m, SplitSelector::Train);
  const auto val = class_distribution(m, SplitSelector::Validation);
  std::size_t nt = 0, nv = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CHECK(train[c] == 160);
    CHECK(val[c] == 40);
    nt += train[c];
    nv += val[c];
  }
  CHECK(nt == 800);
  CHECK(nv == 200);
  CHECK(class_distribution(m, SplitSelector::Unassigned) == ClassCounts{});
}

TEST_CASE("split matches an independent reference and is deterministic") {
  std::mt19937_64 gen(5);
  DatasetManifest m;
  for (int i = 0; i < 137; ++i) {
    m.records.push_back({"f" + std::to_string(i), label_from_index(gen() % 5), Split::Unassigned});
  }
  for (std::uint64_t seed : {0ULL, 7ULL, 12345ULL}) {
    for (double f : {0.8, 0.5, 0.33}) {
      const auto s = stratified_split(m, f, seed);
      const auto ref = reference_split(m, f, seed);
      for (std::size_t i = 0; i < m.records.size(); ++i) {
        CHECK(s.records[i].split == ref[i]);
        CHECK(s.records[i].image_path == m.records[i].image_path);
      }
      CHECK(manifest_fingerprint(s) == manifest_fingerprint(stratified_split(m, f, seed)));
    }
  }
  CHECK(manifest_fingerprint(stratified_split(m, 0.8, 1)) !=
        manifest_fingerprint(stratified_split(m, 0.8, 2)));
}

TEST_CASE("ten records, two per class, fraction 0.8, seed 7") {
  const auto m = balanced(2);
  const auto a = stratified_split(m, 0.8, 7);
  const auto b = stratified_split(m, 0.8, 7);
  const auto ref = reference_split(m, 0.8, 7);
  const auto train = class_distribution(a, SplitSelector::Train);
  for (auto n : train) CHECK(n == 2);
  CHECK(class_distribution(a, SplitSelector::Validation) == ClassCounts{});
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(a.records[i] == b.records[i]);
    CHECK(a.records[i].split == ref[i]);
  }
}

TEST_CASE("split errors and partition property") {
  CHECK(code_of([] { stratified_split(DatasetManifest{}, 0.8, 0); }) == ErrorCode::EmptyManifest);
  CHECK(code_of([] { stratified_split(balanced(2), 0.0, 0); }) == ErrorCode::DegenerateFraction);
  CHECK(code_of([] { stratified_split(balanced(2), 1.0, 0); }) == ErrorCode::DegenerateFraction);
  CHECK(code_of([] { stratified_split(balanced(2), -0.5, 0); }) == ErrorCode::DegenerateFraction);

  const auto full = balanced(13);
  const auto s = stratified_split(full, 0.7, 99);
  const auto all = class_distribution(full);
  const auto t = class_distribution(s, SplitSelector::Train);
  const auto v = class_distribution(s, SplitSelector::Validation);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CHECK(t[c] + v[c] == all[c]);
    CHECK(t[c] == train_count(13, 0.7));
  }
  for (const auto& r : s.records) CHECK(r.split != Split::Unassigned);
  CHECK(s.subset(Split::Train).records.size() + s.subset(Split::Validation).records.size() ==
        full.records.size());
}
