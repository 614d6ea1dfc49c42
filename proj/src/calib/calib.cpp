#include "foem/calib.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "foem/errors.hpp"
#include "foem/tensorio.hpp"

namespace foem::calib {
namespace {

DenseMatrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix g(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) g(r, c) = normal(rng);
  }
  return g;
}

DenseMatrix random_orthogonal(Index d, std::mt19937_64& rng) {
  const DenseMatrix g = gaussian(d, d, rng);
  Eigen::HouseholderQR<DenseMatrix> qr(g);
  DenseMatrix q = qr.householderQ();
  // Fix column signs so the draw is Haar distributed.
  const DenseMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index k = 0; k < d; ++k) {
    if (r(k, k) < 0) q.col(k) *= -1.0;
  }
  return q;
}

void check_bundle(const engines::LayerBundle& layer) {
  if (layer.latent().rows() != layer.d_out() || layer.latent().cols() != layer.d_in()) {
    throw ShapeError("layer bundle: latent and original weights differ in shape");
  }
}

// Parses "<layer>.input" / "<layer>.input.<k>"; k = -1 for the unsharded form.
std::optional<std::pair<std::string, long>> parse_activation_name(const std::string& name) {
  static const std::string tag = ".input";
  const auto pos = name.rfind(tag);
  if (pos == std::string::npos || pos == 0) return std::nullopt;
  const std::string layer = name.substr(0, pos);
  const std::string rest = name.substr(pos + tag.size());
  if (rest.empty()) return std::make_pair(layer, -1L);
  if (rest[0] != '.' || rest.size() == 1) return std::nullopt;
  long k = 0;
  auto [p, ec] = std::from_chars(rest.data() + 1, rest.data() + rest.size(), k);
  if (ec != std::errc() || p != rest.data() + rest.size() || k < 0) return std::nullopt;
  return std::make_pair(layer, k);
}

}  // namespace

DenseMatrix synthetic_mixing(const SyntheticSpec& spec) {
  if (spec.d_in < 1) throw ConfigError("synthetic d_in must be >= 1");
  if (!(spec.rho >= 0.0 && spec.rho < 1.0)) throw ConfigError("synthetic rho must lie in [0, 1)");
  std::mt19937_64 rng(spec.seed);
  const DenseMatrix u = random_orthogonal(spec.d_in, rng);
  const DenseMatrix v = random_orthogonal(spec.d_in, rng);
  Vector s(spec.d_in);
  double sv = 1.0;
  for (Index k = 0; k < spec.d_in; ++k) {
    s(k) = std::max(sv, kSingularValueFloor);
    sv *= spec.rho;
  }
  return u * s.asDiagonal() * v.transpose();
}

DenseMatrix generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_tokens < 1) throw ConfigError("synthetic n_tokens must be >= 1");
  const DenseMatrix a = synthetic_mixing(spec);
  // Token noise uses a stream independent of the mixing draw.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  return a * gaussian(spec.d_in, spec.n_tokens, rng);
}

DenseMatrix synthetic_weights(Index d_out, Index d_in, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  return scale * gaussian(d_out, d_in, rng);
}

DenseMatrix approx_gradient(const engines::LayerBundle& layer, double beta) {
  check_bundle(layer);
  return beta * (layer.latent() - layer.original());
}

DenseMatrix exact_proxy_gradient(const engines::LayerBundle& layer, const DenseMatrix& H) {
  check_bundle(layer);
  if (H.rows() != layer.d_in() || H.cols() != layer.d_in()) throw ShapeError("exact_proxy_gradient: H dimension mismatch");
  return 2.0 * (layer.latent() - layer.original()) * H;
}

GradientDiagnostics gradient_alignment(const engines::LayerBundle& layer, const DenseMatrix& H, double beta,
                                       Index col_begin, Index col_end) {
  if (col_end < 0) col_end = layer.d_in();
  if (col_begin < 0 || col_begin > col_end || col_end > layer.d_in()) throw ShapeError("gradient_alignment: bad column range");
  const DenseMatrix approx = approx_gradient(layer, beta);
  const DenseMatrix exact = exact_proxy_gradient(layer, H);
  const DenseMatrix drift = layer.latent() - layer.original();

  GradientDiagnostics d;
  d.col_begin = col_begin;
  d.col_end = col_end;
  const Index width = col_end - col_begin;
  double cos_sum = 0.0, ratio_sum = 0.0;
  d.min_cosine = 1.0;
  for (Index r = 0; r < layer.d_out(); ++r) {
    const auto a = approx.row(r).segment(col_begin, width);
    const auto e = exact.row(r).segment(col_begin, width);
    const double na = a.norm();
    const double ne = e.norm();
    if (drift.row(r).segment(col_begin, width).squaredNorm() == 0.0 || na == 0.0 || ne == 0.0) {
      d.cosine.emplace_back();
      d.magnitude_ratio.emplace_back();
      continue;
    }
    const double c = std::clamp(a.dot(e) / (na * ne), -1.0, 1.0);
    d.cosine.emplace_back(c);
    d.magnitude_ratio.emplace_back(na / ne);
    cos_sum += c;
    ratio_sum += na / ne;
    d.min_cosine = std::min(d.min_cosine, c);
    ++d.defined_rows;
  }
  if (d.defined_rows) {
    d.mean_cosine = cos_sum / static_cast<double>(d.defined_rows);
    d.mean_magnitude_ratio = ratio_sum / static_cast<double>(d.defined_rows);
  } else {
    d.min_cosine = 0.0;
  }
  return d;
}

std::vector<std::string> shard_names(const std::vector<std::string>& tensor_names, const std::string& layer) {
  std::vector<std::pair<long, std::string>> found;
  for (const auto& name : tensor_names) {
    auto parsed = parse_activation_name(name);
    if (parsed && parsed->first == layer) found.emplace_back(parsed->second, name);
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> out;
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

std::vector<std::string> activation_layers(const std::vector<std::string>& tensor_names) {
  std::set<std::string> layers;
  for (const auto& name : tensor_names) {
    if (auto parsed = parse_activation_name(name)) layers.insert(parsed->first);
  }
  return {layers.begin(), layers.end()};
}

std::size_t accumulate_shards(linalg::HessianState& state, const std::vector<std::filesystem::path>& files,
                              const std::string& layer, Backend backend) {
  std::size_t count = 0;
  for (const auto& path : files) {
    const auto file = io::TensorFile::read(path);
    for (const auto& name : shard_names(file.names(), layer)) {
      const DenseMatrix x = io::load_tensor(file, name);
      if (x.rows() != state.dim()) {
        throw ShapeError(path.string() + ": shard '" + name + "' has " + std::to_string(x.rows()) +
                         " channels, expected " + std::to_string(state.dim()));
      }
      state.accumulate(x, backend);
      ++count;
    }
  }
  return count;
}

}  // namespace foem::calib
