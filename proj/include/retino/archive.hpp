#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace retino {

enum class DType { Float32, Float64 };

/// One named, row-major array.
struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  DType dtype = DType::Float32;
  std::vector<std::byte> payload;

  std::size_t element_count() const;

  static NamedArray from_floats(std::string name, std::vector<std::size_t> shape,
                                std::span<const float> values);
  static NamedArray from_doubles(std::string name, std::vector<std::size_t> shape,
                                 std::span<const double> values);

  /// Converting readers; Float64 -> float narrows.
  std::vector<float> to_floats() const;
  std::vector<double> to_doubles() const;
};

/// Portable named-array container.
///
/// Layout (all integers little-endian):
///   bytes 0..3   magic "RTCK"
///   bytes 4..7   uint32 format version (1)
///   bytes 8..15  uint64 header length N
///   next N bytes UTF-8 JSON header
///   payload      arrays back to back, offsets relative to payload start
///
/// Header: {"backbone": str, "layer_order": [str], "meta": {...},
///          "arrays": [{"name", "shape", "dtype": "float32"|"float64",
///                      "offset", "nbytes"}]}
struct Archive {
  std::string backbone;
  std::vector<std::string> layer_order;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  /// Throws CorruptCheckpoint when absent.
  const NamedArray& at(std::string_view name) const;
  void add(NamedArray array);
};

void write_archive(const Archive& archive, const std::filesystem::path& path);

/// Throws MissingPath (absent file) or CorruptCheckpoint (bad magic, header,
/// or truncated payload).
Archive read_archive(const std::filesystem::path& path);

}  // namespace retino
