#include <cstdlib>

#include "foem/cli.hpp"
#include "foem/errors.hpp"
#include "foem/tensorio.hpp"

namespace foem::cli {
namespace {

constexpr const char* kHessianFormat = "foem-hessian-v1";

std::vector<std::string> path_strings(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) out.push_back(p.string());
  return out;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kNumericalFailure;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const IoError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
    return kConfigError;
  }
  return kFailure;
}

void RunConfig::validate_sources(bool require) const {
  const bool has_acts = !activations.empty();
  const bool has_synth = synthetic.has_value();
  if (has_acts && has_synth) throw ConfigError("supply either activation files or a synthetic spec, not both");
  if (require && !has_acts && !has_synth) throw ConfigError("supply activation files or a synthetic spec");
  if (has_synth && weights.empty()) throw ConfigError("synthetic calibration needs --weights to size each layer");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"weights", c.weights.string()},
                      {"activations", path_strings(c.activations)},
                      {"hessians", c.hessians.string()},
                      {"output_dir", c.output_dir.string()},
                      {"layers", c.layer_filters},
                      {"engine", engines::to_json(c.engine)},
                      {"engines", c.engines},
                      {"baseline", c.baseline},
                      {"jobs", c.jobs}};
  if (c.synthetic) {
    j["synthetic"] = {{"n_tokens", c.synthetic->n_tokens}, {"rho", c.synthetic->rho}, {"seed", c.synthetic->seed}};
  } else {
    j["synthetic"] = nullptr;
  }
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "weights") base.weights = v.get<std::string>();
      else if (key == "activations") {
        base.activations.clear();
        for (const auto& p : v.get<std::vector<std::string>>()) base.activations.emplace_back(p);
      } else if (key == "synthetic") {
        if (v.is_null()) {
          base.synthetic.reset();
          continue;
        }
        SyntheticOptions s = base.synthetic.value_or(SyntheticOptions{});
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "n_tokens") s.n_tokens = sv.get<Index>();
          else if (sk == "rho") s.rho = sv.get<double>();
          else if (sk == "seed") s.seed = sv.get<std::uint64_t>();
          else throw ConfigError("unknown synthetic key '" + sk + "'");
        }
        base.synthetic = s;
      } else if (key == "hessians") base.hessians = v.get<std::string>();
      else if (key == "output_dir") base.output_dir = v.get<std::string>();
      else if (key == "layers") base.layer_filters = v.get<std::vector<std::string>>();
      else if (key == "engine") base.engine = engines::config_from_json(v, base.engine);
      else if (key == "engines") base.engines = v.get<std::vector<std::string>>();
      else if (key == "baseline") base.baseline = v.get<std::string>();
      else if (key == "jobs") base.jobs = v.get<int>();
      else if (key == "command") continue;  // recorded by persisted configs
      else throw ConfigError("unknown run config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return base;
}

RunConfig default_run_config() {
  RunConfig c;
  const char* env = std::getenv(kOutputDirEnv);
  c.output_dir = (env && *env) ? std::filesystem::path(env) : std::filesystem::path("foem_out");
  return c;
}

std::filesystem::path hessian_path(const std::filesystem::path& dir, const std::string& layer) {
  return dir / (layer + ".hessian.safetensors");
}

std::filesystem::path quantized_path(const std::filesystem::path& dir, const std::string& layer) {
  return dir / (layer + ".quant.safetensors");
}

std::filesystem::path report_path(const std::filesystem::path& dir, const std::string& layer) {
  return dir / (layer + ".report.json");
}

void save_hessian(const linalg::HessianState& h, const std::string& layer, double damping_ratio,
                  const std::filesystem::path& path) {
  if (h.damped()) throw StateError("Hessian files hold the undamped matrix");
  io::TensorFile file;
  file.add_matrix("hessian", h.matrix());
  file.metadata = {{"format", kHessianFormat},
                   {"layer", layer},
                   {"n_samples", std::to_string(h.n_samples())},
                   {"damping_ratio", nlohmann::json(damping_ratio).dump()}};
  file.write(path);
}

linalg::HessianState load_hessian(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing Hessian file '" + path.string() + "'");
  const auto file = io::TensorFile::read(path);
  auto it = file.metadata.find("format");
  if (it == file.metadata.end() || it->second != kHessianFormat) {
    throw FormatError(path.string() + ": not a Hessian file");
  }
  long n = 0;
  try {
    n = std::stol(file.metadata.at("n_samples"));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad n_samples");
  }
  return linalg::HessianState::from_matrix(io::load_tensor(file, "hessian"), n);
}

}  // namespace foem::cli
