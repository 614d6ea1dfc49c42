#include <cstring>
#include <fstream>

#include "doctest.h"
#include "foem/errors.hpp"
#include "foem/tensorio.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace foem;
using namespace foem::io;

namespace {

// Hand-built container bytes: independent of TensorFile::serialize.
std::vector<std::byte> raw_container(const nlohmann::json& header, const std::vector<std::byte>& data) {
  const std::string h = header.dump();
  std::vector<std::byte> out(8);
  const std::uint64_t len = h.size();
  std::memcpy(out.data(), &len, 8);
  for (char c : h) out.push_back(static_cast<std::byte>(c));
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

template <typename T>
std::vector<std::byte> bytes_of(const std::vector<T>& v) {
  std::vector<std::byte> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

quant::QuantizedLayer small_layer() {
  quant::QuantizedLayer q;
  q.grid = quant::QuantGrid::make(4, 4, true);
  q.codes.resize(4, 8);
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 8; ++c) q.codes(r, c) = static_cast<int>((r * 8 + c) % 15) - 7;
  q.scales = test_util::random_matrix(4, 2, 3).cwiseAbs().array() + 0.1;
  q.zero_points = IntMatrix::Zero(4, 2);
  return q;
}

}  // namespace

TEST_CASE("2x2 matrix round-trips through a file") {
  test_util::TempDir dir("tio");
  DenseMatrix m(2, 2);
  m << 1.5, -2.25, 3.125, 1e-300;
  TensorFile f;
  f.add_matrix("w", m);
  f.write(dir.path() / "a.safetensors");
  const auto g = TensorFile::read(dir.path() / "a.safetensors");
  CHECK(load_tensor(g, "w") == m);
}

TEST_CASE("every element kind round-trips values and shapes") {
  DenseMatrix m(3, 5);
  for (Index i = 0; i < m.size(); ++i) m(i) = static_cast<double>(i) - 7.0;
  for (auto kind : {ElementKind::f32, ElementKind::f64, ElementKind::i8, ElementKind::i16, ElementKind::i32,
                    ElementKind::i64}) {
    TensorFile f;
    if (kind == ElementKind::f32 || kind == ElementKind::f64) f.add_matrix("t", m, kind);
    else f.add_int_matrix("t", m.cast<int>(), kind);
    const auto g = TensorFile::parse(f.serialize());
    CAPTURE(std::string(dtype_name(kind)));
    CHECK(g.entry("t").shape == std::vector<std::int64_t>{3, 5});
    CHECK(g.entry("t").kind == kind);
    CHECK(load_tensor(g, "t") == m);
    if (kind != ElementKind::f32 && kind != ElementKind::f64) CHECK(load_int_tensor(g, "t") == m.cast<int>());
  }
}

TEST_CASE("integer values outside the target kind are refused") {
  TensorFile f;
  IntMatrix big = IntMatrix::Constant(1, 1, 300);
  CHECK_THROWS_AS(f.add_int_matrix("t", big, ElementKind::i8), FormatError);
  CHECK_THROWS_AS(f.add_matrix("t", DenseMatrix::Ones(1, 1), ElementKind::i32), FormatError);
}

TEST_CASE("absent name raises a missing-tensor error") {
  TensorFile f;
  f.add_matrix("w", DenseMatrix::Ones(2, 2));
  CHECK_THROWS_AS(load_tensor(f, "qkv"), MissingTensorError);
  CHECK_THROWS_AS(f.entry("qkv"), MissingTensorError);
}

TEST_CASE("payload shorter than the declared shape is rejected") {
  // 3x5 declared F64 needs 120 bytes; give 60.
  const std::vector<float> payload(15, 1.0f);
  nlohmann::json header = {{"x", {{"dtype", "F64"}, {"shape", {3, 5}}, {"data_offsets", {0, 60}}}}};
  CHECK_THROWS_AS(TensorFile::parse(raw_container(header, bytes_of(payload))), FormatError);

  TensorEntry e{{3, 5}, ElementKind::f64, bytes_of(payload)};
  TensorFile f;
  CHECK_THROWS_AS(f.add("x", e), FormatError);
}

TEST_CASE("hand-built container parses; float32 widens exactly") {
  const std::vector<float> payload{0.5f, -1.25f, 3.0f, 0.1f};
  nlohmann::json header = {{"__metadata__", {{"note", "hi"}}},
                           {"x", {{"dtype", "F32"}, {"shape", {2, 2}}, {"data_offsets", {0, 16}}}}};
  const auto f = TensorFile::parse(raw_container(header, bytes_of(payload)));
  const DenseMatrix m = load_tensor(f, "x");
  CHECK(m(0, 0) == 0.5);
  CHECK(m(0, 1) == -1.25);
  CHECK(m(1, 0) == 3.0);
  CHECK(m(1, 1) == static_cast<double>(0.1f));
  CHECK(f.metadata.at("note") == "hi");
}

TEST_CASE("unsupported dtype, bad offsets and truncated files are format errors") {
  const std::vector<std::int32_t> payload{1, 2};
  nlohmann::json bf16 = {{"x", {{"dtype", "BF16"}, {"shape", {2}}, {"data_offsets", {0, 4}}}}};
  CHECK_THROWS_AS(TensorFile::parse(raw_container(bf16, bytes_of(payload))), FormatError);

  nlohmann::json beyond = {{"x", {{"dtype", "I32"}, {"shape", {4}}, {"data_offsets", {0, 16}}}}};
  CHECK_THROWS_AS(TensorFile::parse(raw_container(beyond, bytes_of(payload))), FormatError);

  std::vector<std::byte> tiny(4);
  CHECK_THROWS_AS(TensorFile::parse(tiny), FormatError);

  std::vector<std::byte> bad_json(8);
  const std::uint64_t len = 1000;
  std::memcpy(bad_json.data(), &len, 8);
  CHECK_THROWS_AS(TensorFile::parse(bad_json), FormatError);
}

TEST_CASE("rank-3 tensors are refused by the matrix loader") {
  TensorFile f;
  f.add("cube", TensorEntry{{2, 2, 2}, ElementKind::f64, std::vector<std::byte>(64)});
  CHECK_THROWS_AS(load_tensor(f, "cube"), FormatError);
}

TEST_CASE("duplicate names are refused") {
  TensorFile f;
  f.add_matrix("w", DenseMatrix::Ones(1, 1));
  CHECK_THROWS_AS(f.add_matrix("w", DenseMatrix::Ones(1, 1)), FormatError);
}

TEST_CASE("serialization is deterministic and header is 8-byte aligned") {
  TensorFile f;
  f.add_matrix("b", test_util::random_matrix(3, 4, 1));
  f.add_matrix("a", test_util::random_matrix(2, 2, 2));
  f.metadata["k"] = "v";
  const auto s1 = f.serialize();
  const auto s2 = TensorFile::parse(s1).serialize();
  CHECK(s1 == s2);
  std::uint64_t len = 0;
  std::memcpy(&len, s1.data(), 8);
  CHECK(len % 8 == 0);
}

TEST_CASE("reading a missing file is an I/O error") {
  CHECK_THROWS_AS(TensorFile::read("/nonexistent/dir/x.safetensors"), IoError);
}

TEST_CASE("quantized layer round trip on a 4x8, 4-bit, group-4 layer") {
  test_util::TempDir dir("tioq");
  QuantizedLayerFile q{small_layer(), {"blk.0", "foem@minus", 3e-4, 0.01, 128, R"({"bits":4})"}};
  save_quantized(q, dir.path() / "q.safetensors");
  const auto r = load_quantized(dir.path() / "q.safetensors");
  CHECK(r.layer.codes == q.layer.codes);
  CHECK(r.layer.scales == q.layer.scales);
  CHECK(r.layer.zero_points == q.layer.zero_points);
  CHECK(r.layer.grid.bits == 4);
  CHECK(r.layer.grid.group_size == 4);
  CHECK(r.layer.grid.symmetric);
  CHECK(r.meta.layer == "blk.0");
  CHECK(r.meta.engine == "foem@minus");
  CHECK(r.meta.beta == 3e-4);
  CHECK(r.meta.damping_ratio == 0.01);
  CHECK(r.meta.block_size == 128);
  CHECK(r.meta.config_json == q.meta.config_json);
  // Dequantized reconstruction from the file equals the in-memory one.
  CHECK((r.layer.dequantize() - q.layer.dequantize()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("out-of-range code is refused before anything is written") {
  test_util::TempDir dir("tiobad");
  QuantizedLayerFile q{small_layer(), {}};
  q.layer.codes(1, 2) = 9;  // 4-bit symmetric range is [-7, 7]
  const auto path = dir.path() / "q.safetensors";
  CHECK_THROWS_AS(save_quantized(q, path), FormatError);
  CHECK_FALSE(std::filesystem::exists(path));
}

TEST_CASE("zero-row layer writes a valid empty file") {
  test_util::TempDir dir("tioempty");
  QuantizedLayerFile q;
  q.layer.grid = quant::QuantGrid::make(4, 4, true);
  q.layer.codes.resize(0, 8);
  q.layer.scales.resize(0, 2);
  q.layer.zero_points.resize(0, 2);
  save_quantized(q, dir.path() / "e.safetensors");
  const auto r = load_quantized(dir.path() / "e.safetensors");
  CHECK(r.layer.codes.rows() == 0);
  CHECK(r.layer.codes.cols() == 8);
}

TEST_CASE("a tensor file without quantization metadata is not a quantized layer") {
  test_util::TempDir dir("tionometa");
  TensorFile f;
  f.add_matrix("w", DenseMatrix::Ones(2, 2));
  f.write(dir.path() / "w.safetensors");
  CHECK_THROWS_AS(load_quantized(dir.path() / "w.safetensors"), FormatError);
}
