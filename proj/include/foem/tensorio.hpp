#pragma once

// safetensors-layout containers: an 8-byte little-endian header length, a
// JSON header (one entry per tensor plus a free-form "__metadata__" map of
// strings), then the contiguous row-major payloads.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "foem/quantizer.hpp"
#include "foem/types.hpp"

namespace foem::io {

enum class ElementKind { f32, f64, i8, i16, i32, i64 };

std::size_t element_width(ElementKind kind);
std::string_view dtype_name(ElementKind kind);
ElementKind parse_dtype(std::string_view name);  // throws FormatError on unsupported kinds

struct TensorEntry {
  std::vector<std::int64_t> shape;
  ElementKind kind = ElementKind::f64;
  std::vector<std::byte> payload;

  std::int64_t element_count() const;
};

class TensorFile {
 public:
  static TensorFile read(const std::filesystem::path& path);
  static TensorFile parse(const std::vector<std::byte>& bytes);

  void write(const std::filesystem::path& path) const;
  std::vector<std::byte> serialize() const;

  bool contains(std::string_view name) const;
  const TensorEntry& entry(std::string_view name) const;
  std::vector<std::string> names() const;

  // Throws FormatError on a duplicate name.
  void add(std::string name, TensorEntry entry);
  void add_matrix(std::string name, const DenseMatrix& m, ElementKind kind = ElementKind::f64);
  void add_int_matrix(std::string name, const IntMatrix& m, ElementKind kind = ElementKind::i32);

  std::map<std::string, std::string> metadata;

 private:
  std::map<std::string, TensorEntry, std::less<>> entries_;
};

// Rank-2 tensors load as (rows, cols); rank 1 as a column; rank 0 as 1x1.
// Integer kinds are converted to double.
DenseMatrix load_tensor(const TensorFile& file, std::string_view name);
IntMatrix load_int_tensor(const TensorFile& file, std::string_view name);

// One quantized layer: codes, scales and zero points plus run metadata.
struct QuantMetadata {
  std::string layer;
  std::string engine;
  double beta = 0.0;
  double damping_ratio = 0.0;
  int block_size = 0;
  std::string config_json;  // full effective engine config, for reproduction
};

struct QuantizedLayerFile {
  quant::QuantizedLayer layer;
  QuantMetadata meta;
};

void save_quantized(const QuantizedLayerFile& q, const std::filesystem::path& path);
QuantizedLayerFile load_quantized(const std::filesystem::path& path);

}  // namespace foem::io
