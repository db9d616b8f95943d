#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace retino {

inline constexpr std::size_t kNumClasses = 5;

/// The five DR grades. Index order is alphabetical by display name, which is
/// also the column order of the per-class metric tables.
enum class GradeLabel : std::uint8_t {
  MildDR = 0,
  ModerateDR = 1,
  NoDR = 2,
  ProliferateDR = 3,
  SevereDR = 4,
};

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Mild DR", "Moderate DR", "No DR", "Proliferate DR", "Severe DR"};

std::string_view label_name(GradeLabel label);
/// Case-sensitive lookup by display name.
std::optional<GradeLabel> parse_label(std::string_view name);
/// Throws IndexOutOfRange for index >= kNumClasses.
GradeLabel label_from_index(std::size_t index);
constexpr std::size_t label_index(GradeLabel label) {
  return static_cast<std::size_t>(label);
}

enum class Split : std::uint8_t { Unassigned, Train, Validation };

std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view name);

struct ImageRecord {
  std::filesystem::path image_path;
  GradeLabel label = GradeLabel::MildDR;
  Split split = Split::Unassigned;

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;  // ingestion order
  std::vector<std::string> class_names{kClassNames.begin(), kClassNames.end()};
  std::string source_id;

  /// Copy holding only the records assigned to `split`.
  DatasetManifest subset(Split split) const;
};

enum class ManifestFormat { Csv, DirectoryTree };

/// CSV: header `image_path,label` (an extra `split` column is accepted, so a
/// persisted split reloads). Relative image paths resolve against the CSV's
/// directory. Directory tree: one subdirectory per class display name.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              ManifestFormat format);

/// Guesses the format from the path (directory vs file).
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes `image_path,label,split`.
void save_split_csv(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

/// Number of records of a class that go to train: floor(n * fraction + 1/2).
std::size_t train_count(std::size_t class_size, double train_fraction);

/// Per class: collect that class's records in manifest order, shuffle them
/// with Rng(derive_seed(seed, class_index)), mark the first train_count() as
/// Train and the rest Validation. Record order in the output is unchanged.
DatasetManifest stratified_split(const DatasetManifest& manifest,
                                 double train_fraction = 0.8,
                                 std::uint64_t seed = 0);

enum class SplitSelector { All, Train, Validation, Unassigned };

using ClassCounts = std::array<std::size_t, kNumClasses>;

ClassCounts class_distribution(const DatasetManifest& manifest,
                               SplitSelector split = SplitSelector::All);

/// SHA-256 over (path, label, split) of every record, hex encoded.
std::string manifest_fingerprint(const DatasetManifest& manifest);

}  // namespace retino
