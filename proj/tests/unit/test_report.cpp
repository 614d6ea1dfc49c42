#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "foem/errors.hpp"
#include "foem/oracle.hpp"
#include "foem/report.hpp"
#include "test_util.hpp"

using namespace foem;
using namespace foem::report;

namespace {

LayerReport make(const std::string& layer, const std::string& engine, double loss, double rtn_rel = 1.0) {
  LayerReport r;
  r.layer = layer;
  r.engine = engine;
  r.bits = 3;
  r.group_size = 128;
  r.proxy_loss = loss;
  r.rtn_relative = rtn_rel;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("proxy loss examples") {
  const DenseMatrix w = test_util::random_matrix(4, 6, 1);
  CHECK(proxy_loss(w, w, oracle::random_spd(6, 2)) == 0.0);
  const DenseMatrix w2 = w + test_util::random_matrix(4, 6, 3);
  CHECK(proxy_loss(w2, w, DenseMatrix::Identity(6, 6)) == doctest::Approx((w2 - w).squaredNorm()).epsilon(1e-14));
  CHECK_THROWS_AS(proxy_loss(w, DenseMatrix::Zero(4, 5), DenseMatrix::Identity(6, 6)), ShapeError);
  CHECK_THROWS_AS(proxy_loss(w, w, DenseMatrix::Identity(5, 5)), ShapeError);
}

TEST_CASE("proxy loss trace route equals the explicit-input route") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const DenseMatrix X = test_util::random_matrix(8, 20, seed);
    const DenseMatrix w = test_util::random_matrix(8, 8, seed + 50);
    const DenseMatrix q = w + test_util::random_matrix(8, 8, seed + 90, 0.1);
    const double direct = ((q - w) * X).squaredNorm();
    CHECK(std::abs(proxy_loss(q, w, X * X.transpose()) - direct) / direct <= 1e-10);
  }
}

TEST_CASE("layer report JSON round trip") {
  auto r = make("blk.3", "foem@plus", 1.5, 0.75);
  r.beta = 3e-4;
  r.block_size = 64;
  r.wall_time_s = 0.25;
  r.drift_max = 0.1;
  r.drift_mean = 0.01;
  const auto back = report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  CHECK_THROWS_AS(report_from_json(nlohmann::json{{"layer", "x"}}), FormatError);
}

TEST_CASE("single engine table keeps the rtn_relative column") {
  const auto a = compare_table({make("l0", "gptq", 1.0, 0.5)});
  const auto ls = lines(a.csv);
  REQUIRE(ls.size() == 3);
  CHECK(ls[0] == kCsvSchema);
  CHECK(ls[1].find("rtn_relative") != std::string::npos);
  CHECK(a.summary["per_engine"]["gptq"]["n_layers"] == 1);
}

TEST_CASE("identical losses are ties") {
  const auto a = compare_table({make("l0", "rtn", 2.0), make("l0", "gptq", 2.0)});
  CHECK(a.summary["per_engine"]["gptq"]["ties"] == 1);
  CHECK(a.summary["per_engine"]["rtn"]["ties"] == 1);
  CHECK(a.summary["per_engine"]["gptq"]["wins"] == 0);
  const auto& vs = a.summary["vs_baseline"]["rtn"];
  CHECK(vs["tie_fraction"].get<double>() == 1.0);
}

TEST_CASE("ratios, wins and win fraction against the baseline") {
  std::vector<LayerReport> rs;
  for (int i = 0; i < 4; ++i) {
    const std::string l = "layer" + std::to_string(i);
    rs.push_back(make(l, "gptq", 2.0));
    rs.push_back(make(l, "foem@minus", i < 3 ? 1.0 : 4.0));
  }
  const auto a = compare_table(rs);
  CHECK(a.summary["baseline"] == "gptq");
  const auto& vs = a.summary["vs_baseline"]["foem@minus"];
  CHECK(vs["n"] == 4);
  CHECK(vs["mean_ratio"].get<double>() == doctest::Approx((0.5 * 3 + 2.0) / 4));
  CHECK(vs["win_fraction"].get<double>() == doctest::Approx(0.75));
  CHECK(vs["loss_fraction"].get<double>() == doctest::Approx(0.25));
  CHECK(vs["ratios"].size() == 4);
  CHECK(a.summary["per_engine"]["foem@minus"]["wins"] == 3);
  CHECK(a.summary["per_engine"]["gptq"]["wins"] == 1);
  CHECK(a.summary["consistent_layer_sets"] == true);
}

TEST_CASE("output is sorted and independent of input order") {
  std::vector<LayerReport> rs{make("b", "gptq", 1), make("a", "rtn", 2), make("a", "gptq", 3), make("b", "rtn", 4)};
  const auto a = compare_table(rs);
  std::reverse(rs.begin(), rs.end());
  const auto b = compare_table(rs);
  CHECK(a.csv == b.csv);
  CHECK(a.summary == b.summary);
  const auto ls = lines(a.csv);
  CHECK(ls[2].rfind("a,gptq,", 0) == 0);
  CHECK(ls[3].rfind("a,rtn,", 0) == 0);
  CHECK(ls[4].rfind("b,gptq,", 0) == 0);
}

TEST_CASE("inconsistent layer sets are flagged") {
  const auto a = compare_table({make("a", "gptq", 1), make("b", "gptq", 1), make("a", "rtn", 2)});
  CHECK(a.summary["consistent_layer_sets"] == false);
  CHECK_FALSE(a.summary["warnings"].empty());
}

TEST_CASE("explicit baseline") {
  const auto a = compare_table({make("a", "gptq", 1), make("a", "rtn", 2)}, "rtn");
  CHECK(a.summary["baseline"] == "rtn");
  CHECK(a.summary["vs_baseline"]["gptq"]["mean_ratio"].get<double>() == doctest::Approx(0.5));
}
