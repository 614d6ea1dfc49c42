#include <cmath>

#include "foem/engines.hpp"
#include "foem/errors.hpp"

namespace foem::engines {
namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::pair<Enum, std::string_view> (&table)[N], const char* what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  std::string options;
  for (const auto& [value, name] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of: " + options + ")");
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::pair<Enum, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

const std::pair<EngineKind, std::string_view> kEngines[] = {{EngineKind::rtn, "rtn"},
                                                            {EngineKind::obs_oracle, "obs_oracle"},
                                                            {EngineKind::gptq, "gptq"},
                                                            {EngineKind::foem, "foem"},
                                                            {EngineKind::foem_plus, "foem_plus"}};
const std::pair<FirstOrderSign, std::string_view> kSigns[] = {{FirstOrderSign::minus, "minus"},
                                                              {FirstOrderSign::plus, "plus"}};
const std::pair<ScaleSource, std::string_view> kSources[] = {{ScaleSource::latent, "latent"},
                                                             {ScaleSource::original, "original"}};
const std::pair<HessianNorm, std::string_view> kNorms[] = {{HessianNorm::mean_diagonal, "mean_diagonal"},
                                                           {HessianNorm::sample_mean, "sample_mean"},
                                                           {HessianNorm::raw_sum, "raw_sum"}};

}  // namespace

std::string_view to_string(EngineKind k) { return enum_name(k, kEngines); }
std::string_view to_string(FirstOrderSign s) { return enum_name(s, kSigns); }
std::string_view to_string(ScaleSource s) { return enum_name(s, kSources); }
std::string_view to_string(HessianNorm n) { return enum_name(n, kNorms); }
EngineKind parse_engine_kind(std::string_view s) { return parse_enum(s, kEngines, "engine"); }
FirstOrderSign parse_first_order_sign(std::string_view s) { return parse_enum(s, kSigns, "first-order sign"); }
ScaleSource parse_scale_source(std::string_view s) { return parse_enum(s, kSources, "scale source"); }
HessianNorm parse_hessian_norm(std::string_view s) { return parse_enum(s, kNorms, "Hessian normalization"); }

void EngineConfig::validate() const {
  (void)grid();
  if (block_size < 1) throw ConfigError("block size must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and >= 0");
  if (!(damping_ratio >= 0.0) || !std::isfinite(damping_ratio)) {
    throw ConfigError("damping ratio must be finite and >= 0");
  }
}

quant::QuantGrid EngineConfig::grid() const { return quant::QuantGrid::make(bits, group_size, symmetric); }

std::string EngineConfig::label() const {
  std::string s(to_string(engine));
  if (uses_first_order()) s += "@" + std::string(to_string(first_order_sign));
  return s;
}

nlohmann::json to_json(const EngineConfig& c) {
  return {{"engine", to_string(c.engine)},
          {"bits", c.bits},
          {"group_size", c.group_size},
          {"symmetric", c.symmetric},
          {"block_size", c.block_size},
          {"beta", c.beta},
          {"damping_ratio", c.damping_ratio},
          {"first_order_sign", to_string(c.first_order_sign)},
          {"scale_source", to_string(c.scale_source)},
          {"hessian_norm", to_string(c.hessian_norm)}};
}

EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base) {
  if (!j.is_object()) throw ConfigError("engine config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "engine") base.engine = parse_engine_kind(v.get<std::string>());
      else if (key == "bits") base.bits = v.get<int>();
      else if (key == "group_size") base.group_size = v.get<int>();
      else if (key == "symmetric") base.symmetric = v.get<bool>();
      else if (key == "block_size") base.block_size = v.get<int>();
      else if (key == "beta") base.beta = v.get<double>();
      else if (key == "damping_ratio") base.damping_ratio = v.get<double>();
      else if (key == "first_order_sign") base.first_order_sign = parse_first_order_sign(v.get<std::string>());
      else if (key == "scale_source") base.scale_source = parse_scale_source(v.get<std::string>());
      else if (key == "hessian_norm") base.hessian_norm = parse_hessian_norm(v.get<std::string>());
      else throw ConfigError("unknown engine config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("engine config: ") + e.what());
  }
  return base;
}

EngineConfig config_from_label(std::string_view label, EngineConfig base) {
  const auto at = label.find('@');
  base.engine = parse_engine_kind(label.substr(0, at));
  if (at != std::string_view::npos) {
    if (!base.uses_first_order()) throw ConfigError("sign suffix only applies to foem engines: '" + std::string(label) + "'");
    base.first_order_sign = parse_first_order_sign(label.substr(at + 1));
  }
  return base;
}

}  // namespace foem::engines
