#include <fstream>
#include <regex>
#include <set>

#include "foem/calib.hpp"
#include "foem/cli.hpp"
#include "foem/errors.hpp"
#include "foem/tensorio.hpp"

namespace foem::cli {
namespace {

constexpr std::string_view kWeightSuffix = ".weight";

std::vector<std::string> weight_layers(const io::TensorFile& file) {
  std::vector<std::string> out;
  for (const auto& name : file.names()) {
    if (name.size() > kWeightSuffix.size() && name.ends_with(kWeightSuffix)) {
      out.push_back(name.substr(0, name.size() - kWeightSuffix.size()));
    }
  }
  return out;
}

std::vector<std::string> select_layers(const std::vector<std::string>& candidates,
                                       const std::vector<std::string>& filters) {
  std::vector<std::regex> patterns;
  for (const auto& f : filters) {
    try {
      patterns.emplace_back(f);
    } catch (const std::regex_error& e) {
      throw ConfigError("invalid layer filter '" + f + "': " + e.what());
    }
  }
  std::vector<std::string> out;
  for (const auto& name : candidates) {
    const bool keep = patterns.empty() || std::any_of(patterns.begin(), patterns.end(), [&](const std::regex& re) {
                        return std::regex_match(name, re);
                      });
    if (keep) out.push_back(name);
  }
  if (out.empty()) throw ConfigError("no layers matched the layer filters");
  return out;
}

// FNV-1a, so per-layer synthetic streams do not depend on the std::hash implementation.
std::uint64_t layer_seed(std::uint64_t seed, const std::string& layer) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : layer) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return seed ^ h;
}

linalg::HessianState build_hessian(const RunConfig& config, const std::string& layer, Index d_in) {
  linalg::HessianState h(d_in);
  if (config.synthetic) {
    calib::SyntheticSpec spec{d_in, config.synthetic->n_tokens, config.synthetic->rho,
                              layer_seed(config.synthetic->seed, layer)};
    h.accumulate(calib::generate_synthetic(spec), config.engine.backend);
  } else {
    calib::accumulate_shards(h, config.activations, layer, config.engine.backend);
  }
  if (h.n_samples() == 0) throw ConfigError("no calibration tokens found for layer '" + layer + "'");
  return h;
}

Index first_shard_rows(const std::vector<std::filesystem::path>& files, const std::string& layer) {
  for (const auto& path : files) {
    const auto file = io::TensorFile::read(path);
    const auto shards = calib::shard_names(file.names(), layer);
    if (!shards.empty()) {
      const auto& shape = file.entry(shards.front()).shape;
      if (shape.size() != 2) throw FormatError("activation '" + shards.front() + "' must be rank 2 (d_in x tokens)");
      return shape[0];
    }
  }
  throw ConfigError("no activation shards for layer '" + layer + "'");
}

linalg::HessianState obtain_hessian(const RunConfig& config, const std::string& layer, Index d_in) {
  if (config.synthetic || !config.activations.empty()) return build_hessian(config, layer, d_in);
  auto h = load_hessian(hessian_path(config.hessian_dir(), layer));
  if (h.dim() != d_in) {
    throw ShapeError("Hessian for layer '" + layer + "' has dimension " + std::to_string(h.dim()) +
                     ", weights have d_in " + std::to_string(d_in));
  }
  return h;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

void persist_config(const RunConfig& config, const std::string& command) {
  auto j = to_json(config);
  j["command"] = command;
  write_text(config.output_dir / "run_config.json", j.dump(2) + "\n");
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

// Runs fn(i) for every i in [0, n) on up to `jobs` threads; rethrows the first failure.
template <typename Fn>
void for_each_layer(std::size_t n, int jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for num_threads(jobs) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<std::string> cmd_calibrate(const RunConfig& config) {
  config.validate_sources(true);
  config.engine.validate();

  std::vector<std::string> candidates;
  std::optional<io::TensorFile> weights;
  if (!config.weights.empty()) weights = io::TensorFile::read(config.weights);
  if (config.synthetic) {
    candidates = weight_layers(*weights);
  } else {
    std::set<std::string> all;
    for (const auto& path : config.activations) {
      for (auto& l : calib::activation_layers(io::TensorFile::read(path).names())) all.insert(std::move(l));
    }
    candidates.assign(all.begin(), all.end());
  }
  const auto layers = select_layers(candidates, config.layer_filters);
  ensure_dir(config.output_dir);

  for_each_layer(layers.size(), config.jobs, [&](std::size_t i) {
    const auto& layer = layers[i];
    Index d_in = 0;
    if (config.synthetic) {
      d_in = io::load_tensor(*weights, layer + std::string(kWeightSuffix)).cols();
    } else {
      d_in = first_shard_rows(config.activations, layer);
      if (weights && weights->contains(layer + std::string(kWeightSuffix))) {
        const auto& shape = weights->entry(layer + std::string(kWeightSuffix)).shape;
        if (shape.size() != 2 || shape[1] != d_in) {
          throw ShapeError("layer '" + layer + "': activation channels do not match the weight's d_in");
        }
      }
    }
    const auto h = build_hessian(config, layer, d_in);
    save_hessian(h, layer, config.engine.damping_ratio, hessian_path(config.output_dir, layer));
  });
  persist_config(config, "calibrate");
  return layers;
}

std::vector<report::LayerReport> cmd_quantize(const RunConfig& config) {
  if (config.weights.empty()) throw ConfigError("quantize needs --weights");
  config.validate_sources(false);
  config.engine.validate();

  const auto weights = io::TensorFile::read(config.weights);
  const auto layers = select_layers(weight_layers(weights), config.layer_filters);
  ensure_dir(config.output_dir);
  const std::string engine_json = engines::to_json(config.engine).dump();

  std::vector<report::LayerReport> reports(layers.size());
  for_each_layer(layers.size(), config.jobs, [&](std::size_t i) {
    const auto& layer = layers[i];
    engines::LayerBundle bundle(io::load_tensor(weights, layer + std::string(kWeightSuffix)));
    const auto hessian = obtain_hessian(config, layer, bundle.d_in());
    auto result = engines::run_engine(layer, bundle, hessian, config.engine);

    io::QuantizedLayerFile q{std::move(result.quantized),
                             {layer, config.engine.label(), config.engine.beta, config.engine.damping_ratio,
                              config.engine.block_size, engine_json}};
    io::save_quantized(q, quantized_path(config.output_dir, layer));
    write_text(report_path(config.output_dir, layer), report::to_json(result.report).dump(2) + "\n");
    reports[i] = std::move(result.report);
  });
  persist_config(config, "quantize");
  return reports;
}

report::ComparisonArtifact cmd_compare(const RunConfig& config) {
  if (config.weights.empty()) throw ConfigError("compare needs --weights");
  if (config.engines.size() < 2) throw ConfigError("compare needs at least two engines");
  config.validate_sources(false);

  std::vector<engines::EngineConfig> variants;
  std::set<std::string> labels;
  for (const auto& label : config.engines) {
    auto cfg = engines::config_from_label(label, config.engine);
    cfg.validate();
    if (!labels.insert(cfg.label()).second) throw ConfigError("engine '" + cfg.label() + "' listed twice");
    variants.push_back(cfg);
  }

  const auto weights = io::TensorFile::read(config.weights);
  const auto layers = select_layers(weight_layers(weights), config.layer_filters);
  ensure_dir(config.output_dir);

  std::vector<std::vector<report::LayerReport>> per_layer(layers.size());
  for_each_layer(layers.size(), config.jobs, [&](std::size_t i) {
    const auto& layer = layers[i];
    engines::LayerBundle bundle(io::load_tensor(weights, layer + std::string(kWeightSuffix)));
    const auto hessian = obtain_hessian(config, layer, bundle.d_in());
    for (const auto& cfg : variants) per_layer[i].push_back(engines::run_engine(layer, bundle, hessian, cfg).report);
  });

  std::vector<report::LayerReport> all;
  for (auto& v : per_layer) all.insert(all.end(), v.begin(), v.end());
  std::string baseline = config.baseline;
  if (!baseline.empty()) baseline = engines::config_from_label(baseline, config.engine).label();
  auto artifact = report::compare_table(std::move(all), baseline);
  write_text(config.output_dir / "compare.csv", artifact.csv);
  write_text(config.output_dir / "compare_summary.json", artifact.summary.dump(2) + "\n");
  persist_config(config, "compare");
  return artifact;
}

}  // namespace foem::cli
