#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "foem/calib.hpp"
#include "foem/cli.hpp"
#include "foem/errors.hpp"
#include "foem/tensorio.hpp"

namespace foem::cli {
namespace {

// Flags shared by calibrate, quantize and compare. Everything is captured
// into plain fields first and only applied when the flag was given, so a
// --config file sits between built-in defaults and the command line.
struct CommonFlags {
  std::string config_file;
  std::string weights;
  std::vector<std::string> activations;
  bool synthetic = false;
  Index tokens = 512;
  double rho = 0.9;
  std::uint64_t seed = 0;
  std::string hessians;
  std::string out;
  std::vector<std::string> layers;
  std::string engine;
  int bits = 4;
  std::string group_size;
  bool asymmetric = false;
  int block_size = 128;
  double beta = 3e-4;
  double damping = 0.01;
  std::string sign;
  std::string scale_source;
  std::string hessian_norm;
  int jobs = 1;
  std::string backend;
  std::string engines;
  std::string baseline;

  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* app, bool compare) {
    opts["config"] = app->add_option("--config", config_file, "JSON run config")->check(CLI::ExistingFile);
    opts["weights"] = app->add_option("--weights", weights, "weight tensor file");
    opts["activations"] = app->add_option("--activations", activations, "activation shard files");
    opts["synthetic"] = app->add_flag("--synthetic", synthetic, "calibrate on seeded synthetic activations");
    opts["tokens"] = app->add_option("--tokens", tokens, "synthetic tokens per layer");
    opts["rho"] = app->add_option("--rho", rho, "synthetic singular-value decay");
    opts["seed"] = app->add_option("--seed", seed, "synthetic seed");
    opts["hessians"] = app->add_option("--hessians", hessians, "Hessian directory");
    opts["out"] = app->add_option("--out", out, "output directory");
    opts["layers"] = app->add_option("--layers", layers, "layer name regexes (full match)");
    opts["engine"] = app->add_option("--engine", engine, "rtn | obs_oracle | gptq | foem | foem_plus");
    opts["bits"] = app->add_option("--bits", bits, "bit width");
    opts["group_size"] = app->add_option("--group-size", group_size, "columns per scale group, or 'row'");
    opts["asymmetric"] = app->add_flag("--asymmetric", asymmetric, "asymmetric grid with zero points");
    opts["block_size"] = app->add_option("--block-size", block_size, "lazy-update block size");
    opts["beta"] = app->add_option("--beta", beta, "first-order gradient scale");
    opts["damping"] = app->add_option("--damping", damping, "damping ratio of the mean diagonal");
    opts["sign"] = app->add_option("--sign", sign, "first-order sign: minus | plus");
    opts["scale_source"] = app->add_option("--scale-source", scale_source, "latent | original");
    opts["hessian_norm"] = app->add_option("--hessian-norm", hessian_norm, "mean_diagonal | sample_mean | raw_sum");
    opts["jobs"] = app->add_option("--jobs", jobs, "layers processed concurrently");
    opts["backend"] = app->add_option("--backend", backend, "parallel | serial");
    if (compare) {
      opts["engines"] = app->add_option("--engines", engines, "comma-separated engine labels")->required();
      opts["baseline"] = app->add_option("--baseline", baseline, "baseline engine label");
    }
  }

  bool given(const std::string& name) const {
    auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }

  RunConfig resolve() const {
    RunConfig c = default_run_config();
    if (given("config")) {
      std::ifstream in(config_file);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(config_file + ": " + e.what());
      }
      c = run_config_from_json(j, c);
    }
    if (given("weights")) c.weights = weights;
    if (given("activations")) c.activations.assign(activations.begin(), activations.end());
    if (given("synthetic") || given("tokens") || given("rho") || given("seed")) {
      SyntheticOptions s = c.synthetic.value_or(SyntheticOptions{});
      if (given("tokens")) s.n_tokens = tokens;
      if (given("rho")) s.rho = rho;
      if (given("seed")) s.seed = seed;
      c.synthetic = s;
    }
    if (given("hessians")) c.hessians = hessians;
    if (given("out")) c.output_dir = out;
    if (given("layers")) c.layer_filters = layers;
    auto& e = c.engine;
    if (given("engine")) e = engines::config_from_label(engine, e);
    if (given("bits")) e.bits = bits;
    if (given("group_size")) {
      if (group_size == "row") {
        e.group_size = 0;
      } else {
        try {
          std::size_t used = 0;
          e.group_size = std::stoi(group_size, &used);
          if (used != group_size.size()) throw std::invalid_argument(group_size);
        } catch (const std::logic_error&) {
          throw ConfigError("--group-size expects an integer or 'row', got '" + group_size + "'");
        }
      }
    }
    if (given("asymmetric")) e.symmetric = !asymmetric;
    if (given("block_size")) e.block_size = block_size;
    if (given("beta")) e.beta = beta;
    if (given("damping")) e.damping_ratio = damping;
    if (given("sign")) e.first_order_sign = engines::parse_first_order_sign(sign);
    if (given("scale_source")) e.scale_source = engines::parse_scale_source(scale_source);
    if (given("hessian_norm")) e.hessian_norm = engines::parse_hessian_norm(hessian_norm);
    if (given("backend")) {
      if (backend == "parallel") e.backend = Backend::parallel;
      else if (backend == "serial") e.backend = Backend::serial;
      else throw ConfigError("--backend expects parallel or serial, got '" + backend + "'");
    }
    if (given("jobs")) c.jobs = jobs;
    if (given("engines")) {
      c.engines.clear();
      std::stringstream ss(engines);
      for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) c.engines.push_back(item);
      }
    }
    if (given("baseline")) c.baseline = baseline;
    e.validate();
    return c;
  }
};

struct SynthFlags {
  std::string out = "synthetic";
  int layers = 2;
  Index d_out = 64;
  Index d_in = 128;
  Index tokens = 512;
  int shards = 2;
  double rho = 0.9;
  std::uint64_t seed = 0;
};

void run_synth(const SynthFlags& f) {
  if (f.layers < 1 || f.d_out < 1 || f.d_in < 1 || f.shards < 1 || f.tokens < f.shards) {
    throw ConfigError("synth: sizes must be positive and tokens >= shards");
  }
  std::filesystem::create_directories(f.out);
  io::TensorFile weights;
  std::vector<io::TensorFile> shards(static_cast<std::size_t>(f.shards));
  for (int l = 0; l < f.layers; ++l) {
    const std::string name = "layer" + std::to_string(l);
    const std::uint64_t seed = f.seed * 1000003ULL + static_cast<std::uint64_t>(l);
    weights.add_matrix(name + ".weight", calib::synthetic_weights(f.d_out, f.d_in, seed), io::ElementKind::f32);
    const DenseMatrix X = calib::generate_synthetic({f.d_in, f.tokens, f.rho, seed});
    Index begin = 0;
    for (int k = 0; k < f.shards; ++k) {
      const Index end = f.tokens * (k + 1) / f.shards;
      shards[static_cast<std::size_t>(k)].add_matrix(name + ".input", X.middleCols(begin, end - begin),
                                                      io::ElementKind::f32);
      begin = end;
    }
  }
  weights.write(std::filesystem::path(f.out) / "weights.safetensors");
  for (int k = 0; k < f.shards; ++k) {
    shards[static_cast<std::size_t>(k)].write(std::filesystem::path(f.out) /
                                              ("activations." + std::to_string(k) + ".safetensors"));
  }
}

void print_check(const CheckResult& r) {
  std::printf("%s %-34s measured=%.3e %s %.3e  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured,
              r.lower_is_better ? "<=" : ">", r.tolerance, r.detail.c_str());
}

nlohmann::json checks_to_json(const std::vector<CheckResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) {
    arr.push_back({{"name", r.name},
                   {"measured", r.measured},
                   {"tolerance", r.tolerance},
                   {"lower_is_better", r.lower_is_better},
                   {"passed", r.passed},
                   {"detail", r.detail}});
  }
  return arr;
}

}  // namespace

int run_main(int argc, char** argv) {
  CLI::App app{"Post-training weight quantization with first-order error compensation"};
  app.require_subcommand(1);

  CommonFlags cal_flags, quant_flags, cmp_flags;
  auto* calibrate = app.add_subcommand("calibrate", "accumulate and store per-layer Hessians");
  cal_flags.attach(calibrate, false);
  auto* quantize = app.add_subcommand("quantize", "quantize layers with one engine");
  quant_flags.attach(quantize, false);
  auto* compare = app.add_subcommand("compare", "run several engines and tabulate proxy losses");
  cmp_flags.attach(compare, true);

  VerifyOptions vopts;
  std::vector<std::string> tol_pairs;
  std::string verify_sign, verify_report;
  bool list_checks = false;
  auto* verify = app.add_subcommand("verify", "run the built-in numerical self-checks");
  verify->add_option("--tol-scale", vopts.tolerance_scale, "multiplier on every tolerance");
  verify->add_option("--tol", tol_pairs, "per-check tolerance override NAME=VALUE");
  verify->add_flag("--inject-sign-flip", vopts.inject_sign_flip, "mutation test for the optimality check");
  verify->add_option("--sign", verify_sign, "first-order sign under test: minus | plus");
  verify->add_option("--seed", vopts.seed, "seed for the check fixtures");
  verify->add_option("--report", verify_report, "write results as JSON");
  verify->add_flag("--list", list_checks, "print check names and exit");

  SynthFlags sflags;
  auto* synth = app.add_subcommand("synth", "write a synthetic weights/activations fixture");
  synth->add_option("--out", sflags.out, "output directory");
  synth->add_option("--layers", sflags.layers, "number of layers");
  synth->add_option("--d-out", sflags.d_out, "output channels");
  synth->add_option("--d-in", sflags.d_in, "input channels");
  synth->add_option("--tokens", sflags.tokens, "tokens per layer");
  synth->add_option("--shards", sflags.shards, "activation shard files");
  synth->add_option("--rho", sflags.rho, "singular-value decay");
  synth->add_option("--seed", sflags.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kSuccess : kConfigError;
  }

  try {
    if (calibrate->parsed()) {
      for (const auto& layer : cmd_calibrate(cal_flags.resolve())) std::cout << "calibrated " << layer << "\n";
    } else if (quantize->parsed()) {
      for (const auto& r : cmd_quantize(quant_flags.resolve())) {
        std::printf("%-24s %-12s proxy_loss=%.6e rtn_relative=%.4f time=%.3fs\n", r.layer.c_str(), r.engine.c_str(),
                    r.proxy_loss, r.rtn_relative, r.wall_time_s);
      }
    } else if (compare->parsed()) {
      const auto artifact = cmd_compare(cmp_flags.resolve());
      std::cout << artifact.csv;
      std::cout << artifact.summary.dump(2) << "\n";
    } else if (verify->parsed()) {
      if (list_checks) {
        for (const auto& n : verify_check_names()) std::cout << n << "\n";
        return kSuccess;
      }
      if (!verify_sign.empty()) vopts.sign = engines::parse_first_order_sign(verify_sign);
      for (const auto& pair : tol_pairs) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) throw ConfigError("--tol expects NAME=VALUE, got '" + pair + "'");
        try {
          vopts.tolerance_overrides[pair.substr(0, eq)] = std::stod(pair.substr(eq + 1));
        } catch (const std::logic_error&) {
          throw ConfigError("--tol value is not a number in '" + pair + "'");
        }
      }
      const auto results = cmd_verify(vopts);
      bool ok = true;
      for (const auto& r : results) {
        print_check(r);
        ok = ok && r.passed;
      }
      if (!verify_report.empty()) {
        std::ofstream out(verify_report);
        if (!out) throw IoError("cannot write " + verify_report);
        out << checks_to_json(results).dump(2) << "\n";
      }
      return ok ? kSuccess : kVerificationFailure;
    } else if (synth->parsed()) {
      run_synth(sflags);
      std::cout << "wrote " << sflags.out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kSuccess;
}

}  // namespace foem::cli
