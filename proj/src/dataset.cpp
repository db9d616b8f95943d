#include "retino/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "retino/csv.hpp"
#include "retino/error.hpp"
#include "retino/hash.hpp"
#include "retino/rng.hpp"

namespace fs = std::filesystem;

namespace retino {

std::string_view label_name(GradeLabel label) {
  return kClassNames.at(label_index(label));
}

std::optional<GradeLabel> parse_label(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<GradeLabel>(i);
  }
  return std::nullopt;
}

GradeLabel label_from_index(std::size_t index) {
  if (index >= kNumClasses) {
    throw Error(ErrorCode::IndexOutOfRange,
                "class index " + std::to_string(index));
  }
  return static_cast<GradeLabel>(index);
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Unassigned: break;
  }
  return "unassigned";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "unassigned" || name.empty()) return Split::Unassigned;
  return std::nullopt;
}

DatasetManifest DatasetManifest::subset(Split split) const {
  DatasetManifest out;
  out.class_names = class_names;
  out.source_id = source_id;
  for (const auto& r : records) {
    if (r.split == split) out.records.push_back(r);
  }
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string strip_line_ending(std::string line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
    line.pop_back();
  }
  return line;
}

DatasetManifest load_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingPath, path.string());

  DatasetManifest manifest;
  manifest.source_id = path.string();
  const fs::path base = path.parent_path();

  std::string line;
  std::size_t line_no = 0;
  bool has_split_column = false;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_line_ending(std::move(line));
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!header_seen) {
      if (line == "image_path,label") {
        has_split_column = false;
      } else if (line == "image_path,label,split") {
        has_split_column = true;
      } else {
        throw Error(ErrorCode::MalformedRow,
                    "line 1: expected header `image_path,label`");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;

    const auto fields = csv::split_line(line);
    const std::size_t expected = has_split_column ? 3 : 2;
    if (!fields || fields->size() != expected || (*fields)[0].empty()) {
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(line_no));
    }
    const auto label = parse_label((*fields)[1]);
    if (!label) throw Error(ErrorCode::UnknownLabel, (*fields)[1]);

    ImageRecord record;
    fs::path image = (*fields)[0];
    record.image_path = image.is_relative() ? base / image : image;
    record.label = *label;
    if (has_split_column) {
      const auto split = parse_split((*fields)[2]);
      if (!split) {
        throw Error(ErrorCode::MalformedRow,
                    "line " + std::to_string(line_no) + ": bad split");
      }
      record.split = *split;
    }
    manifest.records.push_back(std::move(record));
  }
  if (!header_seen) {
    throw Error(ErrorCode::MalformedRow, "line 1: missing header");
  }
  if (manifest.records.empty()) {
    throw Error(ErrorCode::EmptyManifest, path.string());
  }
  return manifest;
}

DatasetManifest load_tree(const fs::path& root) {
  DatasetManifest manifest;
  manifest.source_id = root.string();

  std::vector<std::pair<GradeLabel, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    const auto label = parse_label(name);
    if (!label) throw Error(ErrorCode::UnknownLabel, name);
    for (const auto& file : fs::directory_iterator(entry.path())) {
      if (file.is_regular_file() && is_image_file(file.path())) {
        found.emplace_back(*label, file.path());
      }
    }
  }
  // Directory iteration order is unspecified; pin it.
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  for (auto& [label, p] : found) {
    manifest.records.push_back({std::move(p), label, Split::Unassigned});
  }
  if (manifest.records.empty()) {
    throw Error(ErrorCode::EmptyManifest, root.string());
  }
  return manifest;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, ManifestFormat format) {
  if (path.empty() || !fs::exists(path)) {
    throw Error(ErrorCode::MissingPath, path.string());
  }
  return format == ManifestFormat::Csv ? load_csv(path) : load_tree(path);
}

DatasetManifest load_manifest(const fs::path& path) {
  if (path.empty() || !fs::exists(path)) {
    throw Error(ErrorCode::MissingPath, path.string());
  }
  return load_manifest(path, fs::is_directory(path) ? ManifestFormat::DirectoryTree
                                                    : ManifestFormat::Csv);
}

void save_split_csv(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
  out << "image_path,label,split\n";
  for (const auto& r : manifest.records) {
    out << csv::join({r.image_path.string(), std::string(label_name(r.label)),
                      std::string(split_name(r.split))})
        << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
}

std::size_t train_count(std::size_t class_size, double train_fraction) {
  // The small epsilon keeps products like 5 * 0.7 (3.4999...) on the
  // half-up side they are meant to be on.
  const double exact = static_cast<double>(class_size) * train_fraction;
  const auto n = static_cast<std::size_t>(std::floor(exact + 0.5 + 1e-9));
  return std::min(n, class_size);
}

DatasetManifest stratified_split(const DatasetManifest& manifest,
                                 double train_fraction, std::uint64_t seed) {
  if (manifest.records.empty()) {
    throw Error(ErrorCode::EmptyManifest, manifest.source_id);
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::DegenerateFraction, std::to_string(train_fraction));
  }

  DatasetManifest out = manifest;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      if (label_index(out.records[i].label) == c) members.push_back(i);
    }
    Rng rng(derive_seed(seed, c));
    rng.shuffle(std::span(members));
    const std::size_t n_train = train_count(members.size(), train_fraction);
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.records[members[k]].split = k < n_train ? Split::Train : Split::Validation;
    }
  }
  return out;
}

ClassCounts class_distribution(const DatasetManifest& manifest,
                               SplitSelector split) {
  ClassCounts counts{};
  for (const auto& r : manifest.records) {
    const bool take = split == SplitSelector::All ||
                      (split == SplitSelector::Train && r.split == Split::Train) ||
                      (split == SplitSelector::Validation && r.split == Split::Validation) ||
                      (split == SplitSelector::Unassigned && r.split == Split::Unassigned);
    if (take) ++counts[label_index(r.label)];
  }
  return counts;
}

std::string manifest_fingerprint(const DatasetManifest& manifest) {
  Sha256 h;
  for (const auto& r : manifest.records) {
    h.update(r.image_path.string());
    h.update("\x1f");
    h.update(label_name(r.label));
    h.update("\x1f");
    h.update(split_name(r.split));
    h.update("\n");
  }
  return h.hex_digest();
}

}  // namespace retino
