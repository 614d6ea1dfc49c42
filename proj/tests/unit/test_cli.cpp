#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "foem/calib.hpp"
#include "foem/cli.hpp"
#include "foem/errors.hpp"
#include "foem/oracle.hpp"
#include "foem/tensorio.hpp"
#include "test_util.hpp"

using namespace foem;
using namespace foem::cli;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "foem");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Two layers of weights plus their activations split over two files.
struct Fixture {
  test_util::TempDir dir{"cli"};
  fs::path weights = dir.path() / "weights.safetensors";
  fs::path acts0 = dir.path() / "acts0.safetensors";
  fs::path acts1 = dir.path() / "acts1.safetensors";
  fs::path acts_all = dir.path() / "acts_all.safetensors";

  Fixture() {
    io::TensorFile w, a0, a1, all;
    for (int l = 0; l < 2; ++l) {
      const std::string name = "blk" + std::to_string(l);
      w.add_matrix(name + ".weight", test_util::random_matrix(8, 16, 10 + l), io::ElementKind::f32);
      const DenseMatrix X = calib::generate_synthetic({16, 48, 0.9, static_cast<std::uint64_t>(l)});
      a0.add_matrix(name + ".input", X.leftCols(20));
      a1.add_matrix(name + ".input", X.rightCols(28));
      all.add_matrix(name + ".input", X);
    }
    w.write(weights);
    a0.write(acts0);
    a1.write(acts1);
    all.write(acts_all);
  }

  RunConfig config(const std::string& out) const {
    RunConfig c;
    c.weights = weights;
    c.output_dir = dir.path() / out;
    c.engine.block_size = 4;
    c.engine.group_size = 8;
    return c;
  }
};

}  // namespace

TEST_CASE("run config JSON round trip and unknown keys") {
  RunConfig c;
  c.weights = "w.safetensors";
  c.activations = {"a.safetensors", "b.safetensors"};
  c.output_dir = "out";
  c.layer_filters = {"blk\\d+"};
  c.engines = {"gptq", "foem@plus"};
  c.baseline = "gptq";
  c.jobs = 3;
  c.engine.bits = 3;
  const auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(run_config_from_json({{"weigths", "x"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"engine", {{"bits", 1}}}}).engine.validate(), ConfigError);
}

TEST_CASE("calibration source rules") {
  RunConfig c;
  CHECK_THROWS_AS(c.validate_sources(true), ConfigError);
  CHECK_NOTHROW(c.validate_sources(false));
  c.activations = {"a"};
  c.synthetic = SyntheticOptions{};
  CHECK_THROWS_AS(c.validate_sources(false), ConfigError);
}

TEST_CASE("exit codes by error class") {
  CHECK(exit_code_for(ConfigError("x")) == kConfigError);
  CHECK(exit_code_for(FormatError("x")) == kConfigError);
  CHECK(exit_code_for(NumericalError("x")) == kNumericalFailure);
  CHECK(exit_code_for(FactorizationError("x", 1)) == kNumericalFailure);
  CHECK(exit_code_for(std::runtime_error("x")) == kFailure);
}

TEST_CASE("calibrate: one file per layer; shards add up to the concatenated run") {
  Fixture fx;
  auto split = fx.config("split");
  split.activations = {fx.acts0, fx.acts1};
  CHECK(cmd_calibrate(split) == std::vector<std::string>{"blk0", "blk1"});
  auto whole = fx.config("whole");
  whole.activations = {fx.acts_all};
  whole.layer_filters = {"blk1"};
  CHECK(cmd_calibrate(whole) == std::vector<std::string>{"blk1"});
  CHECK_FALSE(fs::exists(hessian_path(whole.output_dir, "blk0")));

  const auto a = load_hessian(hessian_path(split.output_dir, "blk1"));
  const auto b = load_hessian(hessian_path(whole.output_dir, "blk1"));
  CHECK(a.n_samples() == 48);
  CHECK_FALSE(a.damped());
  CHECK(oracle::relative_frobenius(a.matrix(), b.matrix()) <= 1e-14);
  const auto meta = io::TensorFile::read(hessian_path(split.output_dir, "blk1")).metadata;
  CHECK(meta.at("n_samples") == "48");
  CHECK(meta.count("damping_ratio") == 1);
  CHECK(fs::exists(split.output_dir / "run_config.json"));
}

TEST_CASE("calibrate: no matching layers is an explicit error") {
  Fixture fx;
  auto c = fx.config("none");
  c.activations = {fx.acts0};
  c.layer_filters = {"attn.*"};
  CHECK_THROWS_WITH_AS(cmd_calibrate(c), doctest::Contains("no layers"), ConfigError);
  c.layer_filters = {"("};
  CHECK_THROWS_AS(cmd_calibrate(c), ConfigError);
}

TEST_CASE("quantize from stored Hessians; foem with beta 0 writes gptq's codes") {
  Fixture fx;
  auto cal = fx.config("q");
  cal.activations = {fx.acts_all};
  cmd_calibrate(cal);

  auto gptq = fx.config("q");
  gptq.engine.engine = engines::EngineKind::gptq;
  const auto reports = cmd_quantize(gptq);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].layer == "blk0");
  CHECK(reports[0].rtn_relative <= 1.0);
  const auto gptq_file = io::TensorFile::read(quantized_path(gptq.output_dir, "blk0"));

  auto foem = fx.config("q");
  foem.output_dir = fx.dir.path() / "q_foem";
  foem.hessians = fx.dir.path() / "q";
  foem.engine.beta = 0.0;
  cmd_quantize(foem);
  const auto foem_file = io::TensorFile::read(quantized_path(foem.output_dir, "blk0"));
  CHECK(foem_file.entry("codes").payload == gptq_file.entry("codes").payload);
  CHECK(foem_file.entry("scales").payload == gptq_file.entry("scales").payload);

  const auto report = nlohmann::json::parse(slurp(report_path(gptq.output_dir, "blk1")));
  CHECK(report["engine"] == "gptq");
}

TEST_CASE("quantize: in-memory calibration equals the stored-Hessian route") {
  Fixture fx;
  auto cal = fx.config("a");
  cal.activations = {fx.acts0, fx.acts1};
  cmd_calibrate(cal);
  auto stored = fx.config("a");
  cmd_quantize(stored);
  auto direct = fx.config("b");
  direct.activations = {fx.acts0, fx.acts1};
  cmd_quantize(direct);
  CHECK(slurp(quantized_path(stored.output_dir, "blk0")) == slurp(quantized_path(direct.output_dir, "blk0")));
}

TEST_CASE("quantize: embedded config reproduces the artifact") {
  Fixture fx;
  auto c = fx.config("emb");
  c.synthetic = SyntheticOptions{64, 0.8, 5};
  c.engine.first_order_sign = engines::FirstOrderSign::plus;
  c.engine.bits = 3;
  cmd_quantize(c);
  const auto q = io::load_quantized(quantized_path(c.output_dir, "blk1"));
  auto again = fx.config("emb2");
  again.synthetic = c.synthetic;
  again.engine = engines::config_from_json(nlohmann::json::parse(q.meta.config_json));
  CHECK(again.engine.bits == 3);
  cmd_quantize(again);
  CHECK(slurp(quantized_path(c.output_dir, "blk1")) == slurp(quantized_path(again.output_dir, "blk1")));
  // The persisted run config also round-trips.
  const auto persisted = nlohmann::json::parse(slurp(c.output_dir / "run_config.json"));
  CHECK(persisted["command"] == "quantize");
  CHECK(to_json(run_config_from_json(persisted)) == to_json(c));
}

TEST_CASE("quantize: missing Hessian and mismatched dimensions") {
  Fixture fx;
  auto c = fx.config("missing");
  CHECK_THROWS_AS(cmd_quantize(c), IoError);
  fs::create_directories(c.output_dir);
  save_hessian(linalg::HessianState::from_matrix(DenseMatrix::Identity(5, 5), 5), "blk0", 0.01,
               hessian_path(c.output_dir, "blk0"));
  c.layer_filters = {"blk0"};
  CHECK_THROWS_AS(cmd_quantize(c), ShapeError);
}

TEST_CASE("compare: rtn and gptq tie under an identity Hessian") {
  Fixture fx;
  auto c = fx.config("cmp");
  fs::create_directories(c.output_dir);
  for (const char* l : {"blk0", "blk1"}) {
    save_hessian(linalg::HessianState::from_matrix(DenseMatrix::Identity(16, 16), 16), l, 0.01,
                 hessian_path(c.output_dir, l));
  }
  c.engines = {"rtn", "gptq"};
  const auto a = cmd_compare(c);
  CHECK(a.summary["per_engine"]["gptq"]["ties"] == 2);
  CHECK(a.summary["vs_baseline"]["rtn"]["tie_fraction"].get<double>() == 1.0);
  CHECK(fs::exists(c.output_dir / "compare.csv"));
  CHECK(fs::exists(c.output_dir / "compare_summary.json"));
}

TEST_CASE("compare: sign ablation table and argument checks") {
  Fixture fx;
  auto c = fx.config("abl");
  c.synthetic = SyntheticOptions{64, 0.9, 1};
  c.engines = {"gptq", "foem@minus", "foem@plus"};
  const auto a = cmd_compare(c);
  CHECK(a.summary["baseline"] == "gptq");
  CHECK(a.summary["vs_baseline"]["foem@minus"]["ratios"].size() == 2);
  CHECK(a.summary["vs_baseline"]["foem@plus"]["ratios"].size() == 2);

  c.engines = {"gptq"};
  CHECK_THROWS_AS(cmd_compare(c), ConfigError);
  c.engines = {"gptq", "gptq"};
  CHECK_THROWS_AS(cmd_compare(c), ConfigError);
}

TEST_CASE("jobs > 1 gives the same artifacts") {
  Fixture fx;
  auto one = fx.config("j1");
  one.synthetic = SyntheticOptions{64, 0.9, 2};
  cmd_quantize(one);
  auto two = fx.config("j2");
  two.synthetic = one.synthetic;
  two.jobs = 2;
  cmd_quantize(two);
  for (const char* l : {"blk0", "blk1"}) {
    CHECK(slurp(quantized_path(one.output_dir, l)) == slurp(quantized_path(two.output_dir, l)));
  }
}

TEST_CASE("command line: flags override the config file") {
  Fixture fx;
  const auto cfg_path = fx.dir.path() / "cfg.json";
  RunConfig file_cfg = fx.config("flags");
  file_cfg.synthetic = SyntheticOptions{64, 0.9, 3};
  file_cfg.engine.bits = 8;
  file_cfg.engine.engine = engines::EngineKind::gptq;
  std::ofstream(cfg_path) << to_json(file_cfg).dump();

  CHECK(run({"quantize", "--config", cfg_path.string(), "--bits", "3", "--layers", "blk0"}) == kSuccess);
  const auto q = io::load_quantized(quantized_path(file_cfg.output_dir, "blk0"));
  CHECK(q.layer.grid.bits == 3);
  CHECK(q.meta.engine == "gptq");
  CHECK_FALSE(fs::exists(quantized_path(file_cfg.output_dir, "blk1")));
}

TEST_CASE("command line: error exit codes") {
  Fixture fx;
  const auto out = (fx.dir.path() / "x").string();
  CHECK(run({"quantize", "--weights", fx.weights.string(), "--synthetic", "--bits", "1", "--out", out}) ==
        kConfigError);
  CHECK(run({"quantize", "--weights", fx.weights.string(), "--synthetic", "--group-size", "abc", "--out", out}) ==
        kConfigError);
  CHECK(run({"frobnicate"}) == kConfigError);
  CHECK(run({"compare", "--weights", fx.weights.string(), "--synthetic", "--engines", "gptq", "--out", out}) ==
        kConfigError);
  CHECK(run({"quantize", "--weights", fx.weights.string(), "--synthetic", "--group-size", "row", "--out", out}) ==
        kSuccess);
  CHECK(io::load_quantized(quantized_path(out, "blk0")).layer.grid.group_size == 0);
}

TEST_CASE("command line: synth writes a usable fixture") {
  test_util::TempDir dir("synth");
  const auto out = (dir.path() / "fx").string();
  CHECK(run({"synth", "--out", out, "--layers", "2", "--d-out", "4", "--d-in", "8", "--tokens", "30", "--shards",
             "3"}) == kSuccess);
  CHECK(run({"calibrate", "--weights", out + "/weights.safetensors", "--activations",
             out + "/activations.0.safetensors", out + "/activations.1.safetensors",
             out + "/activations.2.safetensors", "--out", out + "/h"}) == kSuccess);
  CHECK(load_hessian(hessian_path(out + "/h", "layer1")).n_samples() == 30);
}

TEST_CASE("verify: all checks pass; overrides and mutation are reflected") {
  const auto names = verify_check_names();
  CHECK(names.size() >= 10);
  const auto results = cmd_verify({});
  for (const auto& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.passed);
  }

  VerifyOptions strict;
  strict.tolerance_overrides["linalg.inverse_cholesky"] = 1e-30;
  for (const auto& r : cmd_verify(strict)) {
    if (r.name == "linalg.inverse_cholesky") {
      CHECK(r.tolerance == 1e-30);
      CHECK_FALSE(r.passed);
    }
  }

  VerifyOptions mutated;
  mutated.inject_sign_flip = true;
  for (const auto& r : cmd_verify(mutated)) {
    if (r.name == "engines.lagrangian_optimality") CHECK_FALSE(r.passed);
  }
  CHECK(run({"verify", "--inject-sign-flip"}) == kVerificationFailure);
  CHECK(run({"verify", "--tol", "linalg.iterative_route=1e-3"}) == kSuccess);
  CHECK(run({"verify", "--tol", "no.such.check=1"}) == kConfigError);
}

TEST_CASE("output directory defaults to the environment variable") {
  setenv(kOutputDirEnv, "/tmp/foem_env_out", 1);
  CHECK(default_run_config().output_dir == fs::path("/tmp/foem_env_out"));
  unsetenv(kOutputDirEnv);
  CHECK(default_run_config().output_dir == fs::path("foem_out"));
}
