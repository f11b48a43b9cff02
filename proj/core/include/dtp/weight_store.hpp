#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dtp/tensor.hpp"

namespace dtp {

// .dtpw layout, little-endian throughout:
//   "DTPW" | u32 version = 1 | u32 tensor_count |
//   per tensor: u16 name_len | name (UTF-8) | u8 dtype | u8 ndim |
//               u32 dims[ndim] | payload, row-major
// dtype 0 is 32-bit float. dtype 1 (64-bit float) is an extension used for
// gradient-check fixtures; the exporter only ever writes dtype 0.

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

std::string dtype_name(DType d);

struct StoredTensor {
  Shape shape;
  DType dtype = DType::kF32;
  std::vector<float> f32;
  std::vector<double> f64;

  template <typename T>
  Tensor<T> to_tensor() const;
};

/// Name -> tensor map that remembers insertion (file) order.
class WeightStore {
 public:
  using Entry = std::pair<std::string, StoredTensor>;

  void add(const std::string& name, const Tensor<float>& t);
  void add(const std::string& name, const Tensor<double>& t);
  void add(const std::string& name, StoredTensor t);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const StoredTensor& at(const std::string& name) const;

  /// Tensor converted to T; throws FormatError(kMissingTensor) if absent.
  template <typename T>
  Tensor<T> get(const std::string& name) const {
    return at(name).template to_tensor<T>();
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

void write_weights(const WeightStore& store, std::ostream& out);
WeightStore read_weights(std::istream& in);

void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

/// CRC-32 (zlib polynomial) of the raw file bytes.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace dtp
