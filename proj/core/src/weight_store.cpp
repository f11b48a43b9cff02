#include "dtp/weight_store.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

namespace dtp {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'T', 'P', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
bool get_le(std::istream& in, U& v) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(bytes[i]) << (8 * i));
  return true;
}

std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

FormatError truncated(const std::string& what) {
  return FormatError(FormatErrorKind::kTruncated, what);
}

// Bytes left in a seekable stream; unbounded when the stream cannot seek.
std::size_t remaining(std::istream& in) {
  auto here = in.tellg();
  if (here == std::streampos(-1)) return static_cast<std::size_t>(-1);
  in.seekg(0, std::ios::end);
  auto end = in.tellg();
  in.seekg(here);
  return static_cast<std::size_t>(end - here);
}

}  // namespace

std::string dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

template <typename T>
Tensor<T> StoredTensor::to_tensor() const {
  std::vector<T> out;
  if (dtype == DType::kF32) {
    out.assign(f32.begin(), f32.end());
  } else {
    out.reserve(f64.size());
    for (double v : f64) out.push_back(static_cast<T>(v));
  }
  return Tensor<T>(shape, std::move(out));
}

template Tensor<float> StoredTensor::to_tensor<float>() const;
template Tensor<double> StoredTensor::to_tensor<double>() const;

void WeightStore::add(const std::string& name, const Tensor<float>& t) {
  StoredTensor s;
  s.shape = t.shape();
  s.dtype = DType::kF32;
  s.f32.assign(t.data().begin(), t.data().end());
  add(name, std::move(s));
}

void WeightStore::add(const std::string& name, const Tensor<double>& t) {
  StoredTensor s;
  s.shape = t.shape();
  s.dtype = DType::kF64;
  s.f64.assign(t.data().begin(), t.data().end());
  add(name, std::move(s));
}

void WeightStore::add(const std::string& name, StoredTensor t) {
  if (contains(name)) {
    throw FormatError(FormatErrorKind::kDuplicateName, "duplicate tensor name \"" + name + "\"");
  }
  if (name.empty() || name.size() > 0xFFFF) {
    throw ContractError("tensor name length must be in [1, 65535]");
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(t));
}

const StoredTensor& WeightStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw FormatError(FormatErrorKind::kMissingTensor, "missing tensor \"" + name + "\"");
  }
  return entries_[it->second].second;
}

void write_weights(const WeightStore& store, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    if (t.dtype == DType::kF32) {
      for (float v : t.f32) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    } else {
      for (double v : t.f64) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw IoError("failed writing weight stream");
}

WeightStore read_weights(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw truncated("truncated header");
  if (magic != kMagic) {
    throw FormatError(FormatErrorKind::kBadMagic,
                      "bad magic \"" + std::string(magic.data(), magic.size()) +
                          "\", expected \"DTPW\"");
  }
  std::uint32_t version = 0, count = 0;
  if (!get_le(in, version)) throw truncated("truncated header");
  if (version != kVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion,
                      "unsupported version " + std::to_string(version));
  }
  if (!get_le(in, count)) throw truncated("truncated header");

  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    std::uint16_t name_len = 0;
    if (!get_le(in, name_len)) throw truncated("truncated header at " + where);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw truncated("truncated name at " + where);
    std::uint8_t dtype = 0, ndim = 0;
    if (!get_le(in, dtype) || !get_le(in, ndim)) {
      throw truncated("truncated header at tensor " + name);
    }
    if (dtype > 1) {
      throw FormatError(FormatErrorKind::kUnsupportedDtype,
                        "unsupported dtype " + std::to_string(dtype) + " at tensor " + name);
    }
    if (ndim > 4) {
      throw FormatError(FormatErrorKind::kShapeMismatch,
                        "rank " + std::to_string(ndim) + " > 4 at tensor " + name);
    }
    StoredTensor t;
    t.dtype = static_cast<DType>(dtype);
    for (std::uint8_t d = 0; d < ndim; ++d) {
      std::uint32_t extent = 0;
      if (!get_le(in, extent)) throw truncated("truncated header at tensor " + name);
      t.shape.push_back(extent);
    }
    const std::size_t n = shape_numel(t.shape);
    if (remaining(in) < n * dtype_size(t.dtype)) {
      throw truncated("truncated payload at tensor " + name);
    }
    std::vector<char> raw(n * dtype_size(t.dtype));
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
      throw truncated("truncated payload at tensor " + name);
    }
    if (t.dtype == DType::kF32) {
      t.f32.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        std::uint32_t bits = 0;
        for (std::size_t b = 0; b < 4; ++b) {
          bits |= std::uint32_t(static_cast<unsigned char>(raw[4 * j + b])) << (8 * b);
        }
        t.f32[j] = std::bit_cast<float>(bits);
      }
    } else {
      t.f64.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        std::uint64_t bits = 0;
        for (std::size_t b = 0; b < 8; ++b) {
          bits |= std::uint64_t(static_cast<unsigned char>(raw[8 * j + b])) << (8 * b);
        }
        t.f64[j] = std::bit_cast<double>(bits);
      }
    }
    store.add(name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(FormatErrorKind::kTruncated,
                      "payload length mismatch: trailing bytes after " + std::to_string(count) +
                          " tensors");
  }
  return store;
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_weights(store, out);
}

WeightStore load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_weights(in);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace dtp
