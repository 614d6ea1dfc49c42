#include <charconv>

#include "foem/errors.hpp"
#include "foem/tensorio.hpp"
#include "json.hpp"

namespace foem::io {
namespace {

constexpr const char* kFormatTag = "foem-quantized-v1";

std::string number_text(double v) { return nlohmann::json(v).dump(); }

const std::string& require(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("quantized file: missing metadata '" + key + "'");
  return it->second;
}

long parse_int(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto& s = require(meta, key);
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("quantized file: bad integer '" + key + "'");
  return v;
}

double parse_real(const std::map<std::string, std::string>& meta, const std::string& key) {
  try {
    return nlohmann::json::parse(require(meta, key)).get<double>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("quantized file: bad number '" + key + "'");
  }
}

}  // namespace

void save_quantized(const QuantizedLayerFile& q, const std::filesystem::path& path) {
  q.layer.validate();  // refuse before touching the filesystem

  TensorFile file;
  file.add_int_matrix("codes", q.layer.codes);
  file.add_matrix("scales", q.layer.scales);
  file.add_int_matrix("zero_points", q.layer.zero_points);

  const auto& g = q.layer.grid;
  file.metadata = {
      {"format", kFormatTag},
      {"layer", q.meta.layer},
      {"engine", q.meta.engine},
      {"bits", std::to_string(g.bits)},
      {"group_size", std::to_string(g.group_size)},
      {"symmetric", g.symmetric ? "true" : "false"},
      {"beta", number_text(q.meta.beta)},
      {"damping_ratio", number_text(q.meta.damping_ratio)},
      {"block_size", std::to_string(q.meta.block_size)},
  };
  if (!q.meta.config_json.empty()) file.metadata["config"] = q.meta.config_json;
  file.write(path);
}

QuantizedLayerFile load_quantized(const std::filesystem::path& path) {
  const auto file = TensorFile::read(path);
  const auto& meta = file.metadata;
  if (require(meta, "format") != kFormatTag) throw FormatError(path.string() + ": not a quantized-layer file");

  QuantizedLayerFile q;
  const auto& sym = require(meta, "symmetric");
  if (sym != "true" && sym != "false") throw FormatError("quantized file: bad 'symmetric' flag");
  q.layer.grid = quant::QuantGrid::make(static_cast<int>(parse_int(meta, "bits")),
                                        static_cast<int>(parse_int(meta, "group_size")), sym == "true");
  q.layer.codes = load_int_tensor(file, "codes");
  q.layer.scales = load_tensor(file, "scales");
  q.layer.zero_points = load_int_tensor(file, "zero_points");

  q.meta.layer = require(meta, "layer");
  q.meta.engine = require(meta, "engine");
  q.meta.beta = parse_real(meta, "beta");
  q.meta.damping_ratio = parse_real(meta, "damping_ratio");
  q.meta.block_size = static_cast<int>(parse_int(meta, "block_size"));
  if (auto it = meta.find("config"); it != meta.end()) q.meta.config_json = it->second;

  q.layer.validate();
  return q;
}

}  // namespace foem::io
