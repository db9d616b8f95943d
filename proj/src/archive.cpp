#include "retino/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "retino/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive payloads are written in native (little-endian) order");

namespace retino {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::size_t dtype_size(DType t) { return t == DType::Float32 ? 4 : 8; }

std::string dtype_name(DType t) { return t == DType::Float32 ? "float32" : "float64"; }

template <typename T>
std::vector<std::byte> to_bytes(std::span<const T> values) {
  std::vector<std::byte> out(values.size_bytes());
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": " + why);
}

}  // namespace

std::size_t NamedArray::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

NamedArray NamedArray::from_floats(std::string name, std::vector<std::size_t> shape,
                                   std::span<const float> values) {
  NamedArray a{std::move(name), std::move(shape), DType::Float32, to_bytes(values)};
  if (a.element_count() != values.size()) {
    throw Error(ErrorCode::ShapeMismatch, a.name);
  }
  return a;
}

NamedArray NamedArray::from_doubles(std::string name, std::vector<std::size_t> shape,
                                    std::span<const double> values) {
  NamedArray a{std::move(name), std::move(shape), DType::Float64, to_bytes(values)};
  if (a.element_count() != values.size()) {
    throw Error(ErrorCode::ShapeMismatch, a.name);
  }
  return a;
}

std::vector<float> NamedArray::to_floats() const {
  const std::size_t n = element_count();
  std::vector<float> out(n);
  if (dtype == DType::Float32) {
    std::memcpy(out.data(), payload.data(), n * sizeof(float));
  } else {
    const auto d = to_doubles();
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(d[i]);
  }
  return out;
}

std::vector<double> NamedArray::to_doubles() const {
  const std::size_t n = element_count();
  std::vector<double> out(n);
  if (dtype == DType::Float64) {
    std::memcpy(out.data(), payload.data(), n * sizeof(double));
  } else {
    std::vector<float> f(n);
    std::memcpy(f.data(), payload.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) out[i] = f[i];
  }
  return out;
}

const NamedArray* Archive::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Archive::at(std::string_view name) const {
  const NamedArray* a = find(name);
  if (a == nullptr) {
    throw Error(ErrorCode::CorruptCheckpoint, "missing array " + std::string(name));
  }
  return *a;
}

void Archive::add(NamedArray array) { arrays.push_back(std::move(array)); }

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  nlohmann::json header;
  header["backbone"] = archive.backbone;
  header["layer_order"] = archive.layer_order;
  header["meta"] = archive.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : archive.arrays) {
    if (a.payload.size() != a.element_count() * dtype_size(a.dtype)) {
      throw Error(ErrorCode::ShapeMismatch, a.name);
    }
    header["arrays"].push_back({{"name", a.name},
                                {"shape", a.shape},
                                {"dtype", dtype_name(a.dtype)},
                                {"offset", offset},
                                {"nbytes", a.payload.size()}});
    offset += a.payload.size();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
  const std::uint64_t header_len = text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays) {
    out.write(reinterpret_cast<const char*>(a.payload.data()),
              static_cast<std::streamsize>(a.payload.size()));
  }
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingPath, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, path.string());
  const auto file_size = std::filesystem::file_size(path);

  char magic[4] = {};
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) corrupt(path, "bad magic");
  if (version != kVersion) corrupt(path, "unsupported version");
  if (header_len > file_size - 16) corrupt(path, "header length");

  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  const std::uint64_t payload_start = 16 + header_len;

  Archive archive;
  try {
    const auto header = nlohmann::json::parse(text);
    archive.backbone = header.at("backbone").get<std::string>();
    archive.layer_order = header.at("layer_order").get<std::vector<std::string>>();
    archive.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto dt = entry.at("dtype").get<std::string>();
      if (dt == "float32") {
        a.dtype = DType::Float32;
      } else if (dt == "float64") {
        a.dtype = DType::Float64;
      } else {
        corrupt(path, "dtype " + dt);
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (nbytes != a.element_count() * dtype_size(a.dtype)) {
        corrupt(path, "size of " + a.name);
      }
      if (payload_start + offset + nbytes > file_size) {
        corrupt(path, "truncated payload for " + a.name);
      }
      a.payload.resize(nbytes);
      in.seekg(static_cast<std::streamoff>(payload_start + offset));
      in.read(reinterpret_cast<char*>(a.payload.data()),
              static_cast<std::streamsize>(nbytes));
      if (!in) corrupt(path, "read " + a.name);
      archive.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("header: ") + e.what());
  }
  return archive;
}

}  // namespace retino
