#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "foem/calib.hpp"
#include "foem/cli.hpp"
#include "foem/errors.hpp"
#include "foem/fixtures.hpp"
#include "foem/oracle.hpp"
#include "foem/quantizer.hpp"

namespace foem::cli {
namespace {

using engines::EngineConfig;
using engines::EngineKind;

struct CheckSpec {
  std::string name;
  double tolerance;
  bool lower_is_better;
  std::function<std::pair<double, std::string>(const VerifyOptions&)> measure;
};

long count_mismatches(const IntMatrix& a, const IntMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<long>::max();
  return static_cast<long>((a.array() != b.array()).count());
}

EngineConfig small_config(EngineKind kind, int block, int group) {
  EngineConfig c;
  c.engine = kind;
  c.bits = 4;
  c.block_size = block;
  c.group_size = group;
  return c;
}

IntMatrix run_codes(fixtures::SyntheticLayer& s, const EngineConfig& c) {
  return engines::run_engine("verify", s.layer, s.hessian, c).quantized.codes;
}

std::pair<double, std::string> check_inverse_cholesky(const VerifyOptions& o) {
  double worst = 0.0;
  for (unsigned k = 0; k < 5; ++k) {
    auto s = fixtures::make_synthetic_layer(4, 64, 256, 0.9, o.seed + k);
    auto h = s.hessian;
    h.dampen(0.01);
    const auto f = linalg::inverse_cholesky(h);
    const DenseMatrix r = f.T.transpose() * f.T * h.matrix() - DenseMatrix::Identity(64, 64);
    worst = std::max(worst, r.norm() / std::sqrt(64.0));
  }
  return {worst, "||T^T T H - I||_F / sqrt(d), d = 64, 5 seeds"};
}

std::pair<double, std::string> check_submatrix_recovery(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(4, 64, 256, 0.9, o.seed);
  auto h = s.hessian;
  h.dampen(0.01);
  const auto f = linalg::inverse_cholesky(h);
  double worst = 0.0;
  for (Index q = 0; q + 1 < 64; ++q) {
    const Index k = 64 - q - 1;
    const DenseMatrix prod = linalg::recover_inverse_submatrix(f, q) * h.matrix().bottomRightCorner(k, k);
    worst = std::max(worst, (prod - DenseMatrix::Identity(k, k)).norm() / std::sqrt(static_cast<double>(k)));
  }
  return {worst, "trailing-block recovery vs identity, every q, d = 64"};
}

std::pair<double, std::string> check_iterative_route(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(4, 32, 256, 0.9, o.seed);
  auto h = s.hessian;
  h.dampen(0.01);
  const auto f = linalg::inverse_cholesky(h);
  DenseMatrix hinv = oracle::dense_inverse(h.matrix());
  double worst = 0.0;
  for (Index q = 0; q + 1 < 32; ++q) {
    hinv = linalg::iterative_inverse_update(hinv, 0);
    worst = std::max(worst, oracle::relative_frobenius(hinv, linalg::recover_inverse_submatrix(f, q)));
  }
  return {worst, "repeated removal of index 0 vs factor recovery, d = 32"};
}

std::pair<double, std::string> check_gptq_vs_obc(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(32, 32, 256, 0.9, o.seed);
  auto cfg = small_config(EngineKind::gptq, 8, 16);
  auto damped = s.hessian;
  damped.dampen(cfg.damping_ratio);
  const auto f = linalg::inverse_cholesky(damped);
  s.layer.reset();
  engines::ColumnwiseCompensator comp(s.layer, f, s.hessian, cfg);
  comp.record_trace(true);
  comp.run();
  const auto gptq_codes = comp.quantized().codes;
  const DenseMatrix gptq_trace = comp.latent_at_quant();
  s.layer.reset();
  const auto obc = engines::run_obc_oracle(s.layer, damped.matrix(), cfg);
  const long mism = count_mismatches(gptq_codes, obc.quantized.codes);
  if (mism) return {std::numeric_limits<double>::infinity(), std::to_string(mism) + " code mismatches"};
  return {oracle::relative_max(gptq_trace, obc.latent_at_quant), "32x32, B = 8, group 16; codes identical"};
}

std::pair<double, std::string> check_reduction(const VerifyOptions& o) {
  long total = 0;
  for (int block : {1, 8, 32}) {
    auto s = fixtures::make_synthetic_layer(24, 48, 256, 0.9, o.seed + static_cast<unsigned>(block));
    auto foem = small_config(EngineKind::foem, block, 16);
    foem.beta = 0.0;
    total += count_mismatches(run_codes(s, foem), run_codes(s, small_config(EngineKind::gptq, block, 16)));
  }
  return {static_cast<double>(total), "code mismatches, foem(beta = 0) vs gptq, B in {1, 8, 32}"};
}

std::pair<double, std::string> check_block_invariance(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(24, 64, 256, 0.9, o.seed);
  const auto ref = run_codes(s, small_config(EngineKind::gptq, 1, 16));
  long total = 0;
  for (int block : {5, 16, 64}) total += count_mismatches(run_codes(s, small_config(EngineKind::gptq, block, 16)), ref);
  return {static_cast<double>(total), "code mismatches, gptq B in {5, 16, 64} vs B = 1"};
}

std::pair<double, std::string> check_identity_decoupling(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(16, 32, 64, 0.9, o.seed);
  const auto identity = linalg::HessianState::from_matrix(DenseMatrix::Identity(32, 32), 64);
  const auto gptq = engines::run_engine("v", s.layer, identity, small_config(EngineKind::gptq, 8, 16));
  const auto rtn = engines::run_engine("v", s.layer, identity, small_config(EngineKind::rtn, 8, 16));
  return {static_cast<double>(count_mismatches(gptq.quantized.codes, rtn.quantized.codes)),
          "code mismatches, gptq vs rtn under H = I"};
}

std::pair<double, std::string> check_scale_invariance(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(16, 32, 128, 0.9, o.seed);
  const auto scaled = linalg::HessianState::from_matrix(s.hessian.matrix() * 37.5, s.hessian.n_samples());
  long total = 0;
  for (auto kind : {EngineKind::gptq, EngineKind::foem}) {
    const auto cfg = small_config(kind, 8, 16);
    total += count_mismatches(run_codes(s, cfg), engines::run_engine("v", s.layer, scaled, cfg).quantized.codes);
  }
  return {static_cast<double>(total), "code mismatches, gptq and foem with H scaled by 37.5"};
}

std::pair<double, std::string> check_lagrangian(const VerifyOptions& o) {
  double sign = o.sign == engines::FirstOrderSign::minus ? -1.0 : 1.0;
  if (o.inject_sign_flip) sign = -sign;
  double worst = 0.0;
  for (unsigned k = 0; k < 50; ++k) {
    const unsigned seed = static_cast<unsigned>(o.seed) * 1000u + k;
    const Index n = 8;
    const DenseMatrix H = oracle::random_spd(n, seed);
    const auto f = linalg::inverse_cholesky(H);
    std::mt19937 rng(seed);
    std::normal_distribution<double> normal;
    RowVector w(n), g(n);
    for (Index i = 0; i < n; ++i) {
      w(i) = normal(rng);
      g(i) = normal(rng);
    }
    const Index q = static_cast<Index>(k % (n - 1));
    const double deq = std::round(w(q) * 4.0) / 4.0;
    const RowVector analytic = engines::first_order_update(w, f, q, deq, g, sign);
    const Index m = n - q;
    const RowVector kkt = oracle::kkt_solve(H.bottomRightCorner(m, m), g.tail(m), 0, deq - w(q));
    worst = std::max(worst, oracle::relative_max(analytic, kkt.tail(m - 1)));
  }
  return {worst, "first-order update vs dense KKT solve, n = 8, 50 seeds"};
}

std::pair<double, std::string> check_finite_difference(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(8, 8, 64, 0.8, o.seed);
  fixtures::advance_columns(s, small_config(EngineKind::gptq, 4, 0), 4);
  const DenseMatrix& H = s.hessian.matrix();
  const DenseMatrix& orig = s.layer.original();
  const DenseMatrix exact = calib::exact_proxy_gradient(s.layer, H);
  const auto loss = [&](const DenseMatrix& w) {
    const DenseMatrix d = w - orig;
    return (d * H).cwiseProduct(d).sum();
  };
  const DenseMatrix fd = oracle::finite_difference_gradient(loss, s.layer.latent(), 1e-5);
  return {oracle::relative_frobenius(exact, fd), "2 (W - W_orig) H vs central differences, 8x8"};
}

std::pair<double, std::string> check_alignment(const VerifyOptions& o) {
  double worst = 1.0;
  std::size_t rows = 0;
  for (unsigned k = 0; k < 20; ++k) {
    auto s = fixtures::make_synthetic_layer(8, 16, 64, 0.9, o.seed * 100 + k);
    fixtures::advance_columns(s, small_config(EngineKind::gptq, 4, 0), 8);
    const auto d = calib::gradient_alignment(s.layer, s.hessian.matrix(), 3e-4);
    if (d.defined_rows) worst = std::min(worst, d.min_cosine);
    rows += d.defined_rows;
  }
  return {worst, "min cosine over " + std::to_string(rows) + " drifted rows, 20 seeds"};
}

std::pair<double, std::string> check_proxy_two_route(const VerifyOptions& o) {
  auto s = fixtures::make_synthetic_layer(16, 24, 96, 0.9, o.seed);
  const auto r = engines::run_engine("v", s.layer, s.hessian, small_config(EngineKind::gptq, 4, 0));
  const DenseMatrix deq = r.quantized.dequantize();
  const double direct = ((deq - s.layer.original()) * s.X).squaredNorm();
  return {std::abs(r.report.proxy_loss - direct) / direct, "trace(D H D^T) vs ||D X||_F^2"};
}

std::pair<double, std::string> check_half_step(const VerifyOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal;
  double worst = -std::numeric_limits<double>::infinity();
  for (int bits : {3, 4, 8}) {
    const auto grid = quant::QuantGrid::make(bits, 0, true);
    RowVector group(64);
    for (int rep = 0; rep < 200; ++rep) {
      for (Index i = 0; i < group.size(); ++i) group(i) = normal(rng);
      const auto gs = quant::fit_scales(group, grid);
      for (Index i = 0; i < group.size(); ++i) {
        const auto v = quant::quantize_value(group(i), gs, grid);
        if (v.code == grid.q_min || v.code == grid.q_max) continue;
        worst = std::max(worst, (std::abs(v.deq - group(i)) - gs.scale / 2) / gs.scale);
      }
    }
  }
  return {worst, "max (|deq - w| - scale/2) / scale over unclamped values"};
}

const std::vector<CheckSpec>& checks() {
  static const std::vector<CheckSpec> all = {
      {"linalg.inverse_cholesky", 1e-8, true, check_inverse_cholesky},
      {"linalg.submatrix_recovery", 1e-8, true, check_submatrix_recovery},
      {"linalg.iterative_route", 1e-7, true, check_iterative_route},
      {"engines.gptq_vs_obc", 1e-6, true, check_gptq_vs_obc},
      {"engines.foem_beta0_reduction", 0.0, true, check_reduction},
      {"engines.gptq_block_invariance", 0.0, true, check_block_invariance},
      {"engines.identity_decoupling", 0.0, true, check_identity_decoupling},
      {"engines.hessian_scale_invariance", 0.0, true, check_scale_invariance},
      {"engines.lagrangian_optimality", 1e-8, true, check_lagrangian},
      {"calib.finite_difference", 1e-6, true, check_finite_difference},
      {"calib.alignment_positive", 0.0, false, check_alignment},
      {"report.proxy_two_route", 1e-10, true, check_proxy_two_route},
      {"quantizer.half_step", 1e-12, true, check_half_step},
  };
  return all;
}

}  // namespace

std::vector<std::string> verify_check_names() {
  std::vector<std::string> out;
  for (const auto& c : checks()) out.push_back(c.name);
  return out;
}

std::vector<CheckResult> cmd_verify(const VerifyOptions& options) {
  if (!(options.tolerance_scale > 0.0)) throw ConfigError("tolerance scale must be > 0");
  const auto names = verify_check_names();
  for (const auto& [name, value] : options.tolerance_overrides) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw ConfigError("unknown verification check '" + name + "'");
    }
  }
  std::vector<CheckResult> results;
  for (const auto& spec : checks()) {
    CheckResult r;
    r.name = spec.name;
    r.lower_is_better = spec.lower_is_better;
    r.tolerance = spec.tolerance * (spec.lower_is_better ? options.tolerance_scale : 1.0);
    if (auto it = options.tolerance_overrides.find(spec.name); it != options.tolerance_overrides.end()) {
      r.tolerance = it->second;
    }
    try {
      auto [measured, detail] = spec.measure(options);
      r.measured = measured;
      r.detail = std::move(detail);
      r.passed = spec.lower_is_better ? measured <= r.tolerance : measured > r.tolerance;
    } catch (const std::exception& e) {
      r.measured = std::numeric_limits<double>::quiet_NaN();
      r.detail = std::string("error: ") + e.what();
      r.passed = false;
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace foem::cli
