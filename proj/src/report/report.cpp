#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "foem/errors.hpp"
#include "foem/report.hpp"

namespace foem::report {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const LayerReport& r) {
  return {{"layer", r.layer},         {"engine", r.engine},         {"bits", r.bits},
          {"group_size", r.group_size}, {"beta", r.beta},             {"block_size", r.block_size},
          {"proxy_loss", r.proxy_loss}, {"rtn_relative", r.rtn_relative}, {"wall_time_s", r.wall_time_s},
          {"drift_max", r.drift_max},   {"drift_mean", r.drift_mean}};
}

LayerReport report_from_json(const nlohmann::json& j) {
  LayerReport r;
  try {
    r.layer = j.at("layer").get<std::string>();
    r.engine = j.at("engine").get<std::string>();
    r.bits = j.at("bits").get<int>();
    r.group_size = j.at("group_size").get<int>();
    r.beta = j.at("beta").get<double>();
    r.block_size = j.at("block_size").get<int>();
    r.proxy_loss = j.at("proxy_loss").get<double>();
    r.rtn_relative = j.at("rtn_relative").get<double>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.drift_max = j.at("drift_max").get<double>();
    r.drift_mean = j.at("drift_mean").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("layer report: ") + e.what());
  }
  return r;
}

double proxy_loss(const DenseMatrix& w_deq, const DenseMatrix& w_orig, const DenseMatrix& H) {
  if (w_deq.rows() != w_orig.rows() || w_deq.cols() != w_orig.cols()) {
    throw ShapeError("proxy_loss: dequantized and original weights differ in shape");
  }
  if (H.rows() != w_deq.cols() || H.cols() != w_deq.cols()) throw ShapeError("proxy_loss: Hessian dimension mismatch");
  if (w_deq.size() == 0) return 0.0;
  const DenseMatrix delta = w_deq - w_orig;
  const DenseMatrix dh = delta * H.selfadjointView<Eigen::Upper>();
  return std::max(0.0, dh.cwiseProduct(delta).sum());
}

ComparisonArtifact compare_table(std::vector<LayerReport> reports, std::string baseline) {
  std::sort(reports.begin(), reports.end(), [](const LayerReport& a, const LayerReport& b) {
    return std::tie(a.layer, a.engine) < std::tie(b.layer, b.engine);
  });

  ComparisonArtifact out;
  std::string& csv = out.csv;
  csv += kCsvSchema;
  csv += "\nlayer,engine,bits,group_size,beta,block_size,proxy_loss,rtn_relative,wall_time_s,drift_max,drift_mean\n";
  for (const auto& r : reports) {
    csv += r.layer + "," + r.engine + "," + std::to_string(r.bits) + "," + std::to_string(r.group_size) + "," +
           fmt(r.beta) + "," + std::to_string(r.block_size) + "," + fmt(r.proxy_loss) + "," + fmt(r.rtn_relative) +
           "," + fmt(r.wall_time_s) + "," + fmt(r.drift_max) + "," + fmt(r.drift_mean) + "\n";
  }

  // loss[engine][layer]
  std::map<std::string, std::map<std::string, double>> loss;
  std::set<std::string> layers;
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& r : reports) {
    if (!loss[r.engine].emplace(r.layer, r.proxy_loss).second) {
      warnings.push_back("duplicate report for layer '" + r.layer + "' engine '" + r.engine + "'");
    }
    layers.insert(r.layer);
  }
  bool consistent = true;
  for (const auto& [engine, per_layer] : loss) {
    if (per_layer.size() != layers.size()) {
      consistent = false;
      warnings.push_back("engine '" + engine + "' covers " + std::to_string(per_layer.size()) + " of " +
                         std::to_string(layers.size()) + " layers");
    }
  }
  if (baseline.empty() && !loss.empty()) baseline = loss.count("gptq") ? "gptq" : loss.begin()->first;

  std::map<std::string, int> wins, ties;
  for (const auto& layer : layers) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [engine, per_layer] : loss) {
      if (auto it = per_layer.find(layer); it != per_layer.end()) best = std::min(best, it->second);
    }
    std::vector<std::string> at_best;
    for (const auto& [engine, per_layer] : loss) {
      if (auto it = per_layer.find(layer); it != per_layer.end() && it->second == best) at_best.push_back(engine);
    }
    if (at_best.size() == 1) ++wins[at_best.front()];
    else for (const auto& e : at_best) ++ties[e];
  }

  nlohmann::json per_engine = nlohmann::json::object();
  nlohmann::json versus = nlohmann::json::object();
  const auto base_it = loss.find(baseline);
  for (const auto& [engine, per_layer] : loss) {
    double sum_loss = 0.0, sum_rel = 0.0;
    for (const auto& r : reports) {
      if (r.engine == engine) {
        sum_loss += r.proxy_loss;
        sum_rel += r.rtn_relative;
      }
    }
    const double count = static_cast<double>(per_layer.size());
    per_engine[engine] = {{"n_layers", per_layer.size()},
                          {"mean_proxy_loss", sum_loss / count},
                          {"mean_rtn_relative", sum_rel / count},
                          {"wins", wins[engine]},
                          {"ties", ties[engine]}};

    if (base_it == loss.end()) continue;
    std::vector<double> ratios;
    int better = 0, equal = 0, worse = 0;
    for (const auto& [layer, value] : per_layer) {
      auto b = base_it->second.find(layer);
      if (b == base_it->second.end()) continue;
      if (b->second == 0.0) {
        if (value != 0.0) warnings.push_back("baseline loss is zero on layer '" + layer + "'; ratio skipped");
        else {
          ratios.push_back(1.0);
          ++equal;
        }
        continue;
      }
      ratios.push_back(value / b->second);
      value < b->second ? ++better : value == b->second ? ++equal : ++worse;
    }
    const double n = static_cast<double>(ratios.size());
    double mean = 0.0;
    for (double r : ratios) mean += r;
    versus[engine] = {{"n", ratios.size()},
                      {"mean_ratio", n ? mean / n : 0.0},
                      {"win_fraction", n ? better / n : 0.0},
                      {"tie_fraction", n ? equal / n : 0.0},
                      {"loss_fraction", n ? worse / n : 0.0},
                      {"ratios", ratios}};
  }

  out.summary = {{"schema", "foem-compare-summary v1"},
                 {"baseline", baseline},
                 {"layers", std::vector<std::string>(layers.begin(), layers.end())},
                 {"consistent_layer_sets", consistent},
                 {"warnings", warnings},
                 {"per_engine", per_engine},
                 {"vs_baseline", versus}};
  return out;
}

}  // namespace foem::report
