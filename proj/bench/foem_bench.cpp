#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"
#include "foem/engines.hpp"
#include "foem/kernels.hpp"
#include "foem/linalg.hpp"
#include "foem/oracle.hpp"

using namespace foem;

namespace {

double median_seconds(int reps, const std::function<void()>& body) {
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    body();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

DenseMatrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  DenseMatrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

void row(const char* what, Index n, double serial, double parallel) {
  std::printf("%-22s %6ld %12.4f %12.4f %8.2fx\n", what, static_cast<long>(n), serial, parallel, serial / parallel);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel and engine timings"};
  Index dim = 1024;
  Index tokens = 2048;
  int reps = 3;
  bool skip_kernels = false, skip_engines = false;
  app.add_option("--dim", dim, "layer width (d_out = d_in)");
  app.add_option("--tokens", tokens, "calibration tokens for the Gram benchmark");
  app.add_option("--reps", reps, "repetitions; the median is reported");
  app.add_flag("--skip-kernels", skip_kernels, "only time the engines");
  app.add_flag("--skip-engines", skip_engines, "only time the kernels");
  CLI11_PARSE(app, argc, argv);

  std::printf("threads: %d\n", omp_get_max_threads());
  const DenseMatrix X = random_matrix(dim, tokens, 1);

  if (!skip_kernels) {
    std::printf("%-22s %6s %12s %12s %9s\n", "kernel", "n", "serial_s", "parallel_s", "speedup");
    DenseMatrix H = DenseMatrix::Zero(dim, dim);
    row("gram_update", dim, median_seconds(reps, [&] { kernels::serial::gram_update(H, X); }),
        median_seconds(reps, [&] { kernels::parallel::gram_update(H, X); }));

    DenseMatrix W = random_matrix(dim, dim, 2);
    const DenseMatrix E = random_matrix(dim, 128, 3);
    const DenseMatrix F = random_matrix(128, dim, 4);
    row("subtract_product", dim, median_seconds(reps, [&] { kernels::serial::subtract_product(W, E, F); }),
        median_seconds(reps, [&] { kernels::parallel::subtract_product(W, E, F); }));

    const DenseMatrix U = DenseMatrix(random_matrix(dim, dim, 5).triangularView<Eigen::Upper>());
    const DenseMatrix D = random_matrix(dim, dim, 6);
    row("add_upper_gram_product", dim,
        median_seconds(reps, [&] { kernels::serial::add_upper_gram_product(W, D, U, 1e-3); }),
        median_seconds(reps, [&] { kernels::parallel::add_upper_gram_product(W, D, U, 1e-3); }));
  }

  if (!skip_engines) {
    linalg::HessianState h(dim);
    h.accumulate(X);
    engines::LayerBundle layer(random_matrix(dim, dim, 7));
    std::printf("%-22s %6s %12s\n", "engine", "n", "seconds");
    double gptq_s = 0.0;
    for (auto kind : {engines::EngineKind::rtn, engines::EngineKind::gptq, engines::EngineKind::foem}) {
      engines::EngineConfig c;
      c.engine = kind;
      const double s = median_seconds(reps, [&] { engines::run_engine("bench", layer, h, c); });
      if (kind == engines::EngineKind::gptq) gptq_s = s;
      std::printf("%-22s %6ld %12.4f", std::string(engines::to_string(kind)).c_str(), static_cast<long>(dim), s);
      if (kind == engines::EngineKind::foem) std::printf("   foem/gptq %.2f", s / gptq_s);
      std::printf("\n");
    }
  }
  return 0;
}
