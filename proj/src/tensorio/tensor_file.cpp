#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "foem/errors.hpp"
#include "foem/tensorio.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "tensor payloads are read as little-endian");

namespace foem::io {
namespace {

using json = nlohmann::json;

constexpr std::string_view kMetadataKey = "__metadata__";

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void check_payload(std::string_view name, const TensorEntry& e) {
  for (auto d : e.shape) {
    if (d < 0) throw FormatError("tensor '" + std::string(name) + "': negative dimension");
  }
  const auto expected = static_cast<std::size_t>(e.element_count()) * element_width(e.kind);
  if (e.payload.size() != expected) {
    throw FormatError("tensor '" + std::string(name) + "': payload of " + std::to_string(e.payload.size()) +
                      " bytes does not match shape " + shape_string(e.shape) + " of " +
                      std::string(dtype_name(e.kind)) + " (" + std::to_string(expected) + " bytes)");
  }
}

template <typename T>
T read_element(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double element_as_double(const TensorEntry& e, std::size_t i) {
  const std::byte* p = e.payload.data() + i * element_width(e.kind);
  switch (e.kind) {
    case ElementKind::f32: return static_cast<double>(read_element<float>(p));
    case ElementKind::f64: return read_element<double>(p);
    case ElementKind::i8: return read_element<std::int8_t>(p);
    case ElementKind::i16: return read_element<std::int16_t>(p);
    case ElementKind::i32: return read_element<std::int32_t>(p);
    case ElementKind::i64: return static_cast<double>(read_element<std::int64_t>(p));
  }
  return 0.0;
}

std::pair<Index, Index> matrix_dims(std::string_view name, const TensorEntry& e) {
  switch (e.shape.size()) {
    case 0: return {1, 1};
    case 1: return {e.shape[0], 1};
    case 2: return {e.shape[0], e.shape[1]};
    default:
      throw FormatError("tensor '" + std::string(name) + "': rank " + std::to_string(e.shape.size()) +
                        " is not supported (expected <= 2)");
  }
}

template <typename T, typename Source>
void append_values(std::vector<std::byte>& out, const Source& m) {
  // Row-major, as the container requires.
  out.reserve(static_cast<std::size_t>(m.size()) * sizeof(T));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      const T v = static_cast<T>(m(r, c));
      const auto* b = reinterpret_cast<const std::byte*>(&v);
      out.insert(out.end(), b, b + sizeof(T));
    }
  }
}

}  // namespace

std::size_t element_width(ElementKind kind) {
  switch (kind) {
    case ElementKind::f32: return 4;
    case ElementKind::f64: return 8;
    case ElementKind::i8: return 1;
    case ElementKind::i16: return 2;
    case ElementKind::i32: return 4;
    case ElementKind::i64: return 8;
  }
  return 0;
}

std::string_view dtype_name(ElementKind kind) {
  switch (kind) {
    case ElementKind::f32: return "F32";
    case ElementKind::f64: return "F64";
    case ElementKind::i8: return "I8";
    case ElementKind::i16: return "I16";
    case ElementKind::i32: return "I32";
    case ElementKind::i64: return "I64";
  }
  return "?";
}

ElementKind parse_dtype(std::string_view name) {
  for (auto k : {ElementKind::f32, ElementKind::f64, ElementKind::i8, ElementKind::i16, ElementKind::i32,
                 ElementKind::i64}) {
    if (dtype_name(k) == name) return k;
  }
  throw FormatError("unsupported element kind '" + std::string(name) + "'");
}

std::int64_t TensorEntry::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

TensorFile TensorFile::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("short read on '" + path.string() + "'");
  try {
    return parse(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TensorFile TensorFile::parse(const std::vector<std::byte>& bytes) {
  if (bytes.size() < 8) throw FormatError("file shorter than the 8-byte header length");
  const auto header_len = read_element<std::uint64_t>(bytes.data());
  if (header_len > bytes.size() - 8) throw FormatError("header length exceeds file size");

  json header;
  try {
    const auto* begin = reinterpret_cast<const char*>(bytes.data() + 8);
    header = json::parse(begin, begin + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("JSON header is not an object");

  const std::size_t data_start = 8 + header_len;
  const std::size_t data_size = bytes.size() - data_start;

  TensorFile file;
  for (const auto& [key, info] : header.items()) {
    if (key == kMetadataKey) {
      if (!info.is_object()) throw FormatError("__metadata__ is not an object");
      for (const auto& [mk, mv] : info.items()) {
        if (!mv.is_string()) throw FormatError("__metadata__ value '" + mk + "' is not a string");
        file.metadata[mk] = mv.get<std::string>();
      }
      continue;
    }
    try {
      TensorEntry e;
      e.kind = parse_dtype(info.at("dtype").get<std::string>());
      e.shape = info.at("shape").get<std::vector<std::int64_t>>();
      const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size) {
        throw FormatError("tensor '" + key + "': data_offsets out of range");
      }
      auto first = bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offsets[0]);
      e.payload.assign(first, first + static_cast<std::ptrdiff_t>(offsets[1] - offsets[0]));
      check_payload(key, e);
      file.entries_.emplace(key, std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError("tensor '" + key + "': malformed entry: " + ex.what());
    }
  }
  return file;
}

std::vector<std::byte> TensorFile::serialize() const {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    header[name] = {{"dtype", dtype_name(e.kind)},
                    {"shape", e.shape},
                    {"data_offsets", {offset, offset + e.payload.size()}}};
    offset += e.payload.size();
  }
  if (!metadata.empty()) header[std::string(kMetadataKey)] = metadata;

  std::string text = header.dump();
  // Pad so the payload starts 8-byte aligned.
  text.append((8 - (8 + text.size()) % 8) % 8, ' ');

  std::vector<std::byte> out(8);
  const std::uint64_t len = text.size();
  std::memcpy(out.data(), &len, 8);
  const auto* t = reinterpret_cast<const std::byte*>(text.data());
  out.insert(out.end(), t, t + text.size());
  for (const auto& [name, e] : entries_) out.insert(out.end(), e.payload.begin(), e.payload.end());
  return out;
}

void TensorFile::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

bool TensorFile::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

const TensorEntry& TensorFile::entry(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw MissingTensorError("tensor '" + std::string(name) + "' not found");
  return it->second;
}

std::vector<std::string> TensorFile::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& kv : entries_) out.push_back(kv.first);
  return out;
}

void TensorFile::add(std::string name, TensorEntry entry) {
  if (name == kMetadataKey) throw FormatError("'__metadata__' is reserved");
  check_payload(name, entry);
  if (contains(name)) throw FormatError("duplicate tensor name '" + name + "'");
  entries_.emplace(std::move(name), std::move(entry));
}

void TensorFile::add_matrix(std::string name, const DenseMatrix& m, ElementKind kind) {
  TensorEntry e;
  e.kind = kind;
  e.shape = {m.rows(), m.cols()};
  switch (kind) {
    case ElementKind::f32: append_values<float>(e.payload, m); break;
    case ElementKind::f64: append_values<double>(e.payload, m); break;
    default: throw FormatError("add_matrix: real matrices must be stored as F32 or F64");
  }
  add(std::move(name), std::move(e));
}

void TensorFile::add_int_matrix(std::string name, const IntMatrix& m, ElementKind kind) {
  TensorEntry e;
  e.kind = kind;
  e.shape = {m.rows(), m.cols()};
  const auto [lo, hi] = m.size() ? std::pair<std::int64_t, std::int64_t>{m.minCoeff(), m.maxCoeff()}
                                 : std::pair<std::int64_t, std::int64_t>{0, 0};
  auto fits = [&](std::int64_t min, std::int64_t max) { return lo >= min && hi <= max; };
  switch (kind) {
    case ElementKind::i8:
      if (!fits(INT8_MIN, INT8_MAX)) throw FormatError("add_int_matrix: values exceed I8");
      append_values<std::int8_t>(e.payload, m);
      break;
    case ElementKind::i16:
      if (!fits(INT16_MIN, INT16_MAX)) throw FormatError("add_int_matrix: values exceed I16");
      append_values<std::int16_t>(e.payload, m);
      break;
    case ElementKind::i32: append_values<std::int32_t>(e.payload, m); break;
    case ElementKind::i64: append_values<std::int64_t>(e.payload, m); break;
    default: throw FormatError("add_int_matrix: integer matrices must use an integer kind");
  }
  add(std::move(name), std::move(e));
}

DenseMatrix load_tensor(const TensorFile& file, std::string_view name) {
  const auto& e = file.entry(name);
  check_payload(name, e);
  const auto [rows, cols] = matrix_dims(name, e);
  DenseMatrix m(rows, cols);
  std::size_t i = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = element_as_double(e, i++);
  }
  return m;
}

IntMatrix load_int_tensor(const TensorFile& file, std::string_view name) {
  const auto& e = file.entry(name);
  check_payload(name, e);
  if (e.kind == ElementKind::f32 || e.kind == ElementKind::f64) {
    throw FormatError("tensor '" + std::string(name) + "': expected an integer element kind");
  }
  const auto [rows, cols] = matrix_dims(name, e);
  IntMatrix m(rows, cols);
  std::size_t i = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const double v = element_as_double(e, i++);
      if (v < INT32_MIN || v > INT32_MAX) throw FormatError("tensor '" + std::string(name) + "': value exceeds I32");
      m(r, c) = static_cast<std::int32_t>(v);
    }
  }
  return m;
}

}  // namespace foem::io
