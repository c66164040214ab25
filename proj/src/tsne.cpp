#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tripspeed/explain.hpp"
#include "tripspeed/util.hpp"

namespace tripspeed {

namespace {

constexpr double kEntropyTol = 1e-5;
constexpr int kMaxBisection = 200;
constexpr int kMomentumSwitch = 250;
constexpr double kMinGain = 0.01;

void check_input(std::span<const double> data, std::size_t rows, std::size_t dims) {
  if (rows < 3) throw ExplainError("t-SNE needs at least 3 rows, got " + std::to_string(rows));
  if (dims == 0 || data.size() != rows * dims) throw ExplainError("t-SNE input shape mismatch");
  for (double v : data)
    if (!std::isfinite(v)) throw ExplainError("t-SNE input contains non-finite values");
}

double effective_perplexity(double perplexity, std::size_t rows, std::vector<std::string>* warnings) {
  if (!(perplexity > 0.0)) throw ExplainError("perplexity must be positive");
  const double cap = static_cast<double>(rows - 1) / 3.0;
  if (perplexity > cap) {
    if (warnings)
      warnings->push_back("perplexity " + fmt_double(perplexity) + " too large for " + std::to_string(rows) +
                          " rows; using " + fmt_double(cap));
    return cap;
  }
  return perplexity;
}

// Rows identical to an earlier row get a tiny seeded offset so their
// affinities stay well defined.
std::vector<double> jitter_duplicates(std::span<const double> data, std::size_t rows, std::size_t dims,
                                      std::uint64_t seed, std::vector<std::string>* warnings) {
  std::vector<double> x(data.begin(), data.end());
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto row_less = [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(x.begin() + a * dims, x.begin() + (a + 1) * dims, x.begin() + b * dims,
                                        x.begin() + (b + 1) * dims);
  };
  std::stable_sort(order.begin(), order.end(), row_less);
  std::vector<char> dup(rows, 0);
  std::size_t n_dup = 0;
  for (std::size_t i = 1; i < rows; ++i)
    if (!row_less(order[i - 1], order[i]) && !row_less(order[i], order[i - 1])) {
      dup[order[i]] = 1;
      ++n_dup;
    }
  if (n_dup == 0) return x;

  double spread = 0.0;
  for (std::size_t j = 0; j < dims; ++j) {
    double lo = x[j], hi = x[j];
    for (std::size_t i = 1; i < rows; ++i) {
      lo = std::min(lo, x[i * dims + j]);
      hi = std::max(hi, x[i * dims + j]);
    }
    spread = std::max(spread, hi - lo);
  }
  const double eps = 1e-6 * (spread > 0.0 ? spread : 1.0);
  std::mt19937_64 rng(mix_seed(seed, 0x6a177e4));
  for (std::size_t i = 0; i < rows; ++i)
    if (dup[i])
      for (std::size_t j = 0; j < dims; ++j) x[i * dims + j] += eps * normal01(rng);
  if (warnings) warnings->push_back(std::to_string(n_dup) + " duplicate rows jittered");
  return x;
}

// Symmetrized joint affinities P (rows x rows, zero diagonal, sums to 1).
std::vector<double> joint_affinities(const std::vector<double>& x, std::size_t rows, std::size_t dims,
                                     double perplexity, bool parallel) {
  const std::size_t n = rows;
  std::vector<double> cond(n * n, 0.0);
  const double target = std::log(perplexity);
#pragma omp parallel if (parallel)
  {
    std::vector<double> d(n);
#pragma omp for schedule(dynamic, 16)
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.data() + i * dims;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        const double* xj = x.data() + j * dims;
        for (std::size_t k = 0; k < dims; ++k) s += (xi[k] - xj[k]) * (xi[k] - xj[k]);
        d[j] = s;
        if (j != i) dmin = std::min(dmin, s);
      }
      double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
      double* p = cond.data() + i * n;
      for (int it = 0; it < kMaxBisection; ++it) {
        double sum = 0.0, wsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) {
            p[j] = 0.0;
            continue;
          }
          p[j] = std::exp(-(d[j] - dmin) * beta);
          sum += p[j];
          wsum += (d[j] - dmin) * p[j];
        }
        const double h = std::log(sum) + beta * wsum / sum;
        const double diff = h - target;
        if (std::fabs(diff) < kEntropyTol) break;
        if (diff > 0.0) {
          lo = beta;
          beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
        } else {
          hi = beta;
          beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
        }
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += p[j];
      for (std::size_t j = 0; j < n; ++j) p[j] /= sum;
    }
  }
  std::vector<double> P(n * n, 0.0);
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) P[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * inv;
  return P;
}

double kl_divergence(const std::vector<double>& P, const std::vector<double>& Y, std::size_t n, bool parallel) {
  std::vector<double> zrow(n, 0.0), klrow(n, 0.0);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = Y[2 * i] - Y[2 * j], dy = Y[2 * i + 1] - Y[2 * j + 1];
      z += 1.0 / (1.0 + dx * dx + dy * dy);
    }
    zrow[i] = z;
  }
  const double Z = std::accumulate(zrow.begin(), zrow.end(), 0.0);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < n; ++i) {
    double kl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = P[i * n + j];
      if (j == i || p <= 0.0) continue;
      const double dx = Y[2 * i] - Y[2 * j], dy = Y[2 * i + 1] - Y[2 * j + 1];
      const double q = 1.0 / (1.0 + dx * dx + dy * dy) / Z;
      kl += p * std::log(p / std::max(q, 1e-300));
    }
    klrow[i] = kl;
  }
  return std::accumulate(klrow.begin(), klrow.end(), 0.0);
}

Embedding2D embed(std::span<const double> data, std::size_t rows, std::size_t dims, const TsneParams& params,
                  bool parallel) {
  check_input(data, rows, dims);
  if (params.iterations < 0) throw ExplainError("iterations must be >= 0");
  Embedding2D e;
  e.perplexity = effective_perplexity(params.perplexity, rows, &e.warnings);
  const std::vector<double> x = jitter_duplicates(data, rows, dims, params.seed, &e.warnings);
  const std::size_t n = rows;
  const std::vector<double> P = joint_affinities(x, rows, dims, e.perplexity, parallel);

  std::mt19937_64 rng(params.seed);
  std::vector<double> Y(2 * n);
  for (double& v : Y) v = 1e-2 * normal01(rng);
  std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n, 0.0), zrow(n, 0.0);
  e.kl_initial = kl_divergence(P, Y, n, parallel);

  for (int it = 0; it < params.iterations; ++it) {
    const double exag = it < params.exaggeration_iters ? params.early_exaggeration : 1.0;
    const double momentum = it < kMomentumSwitch ? 0.5 : 0.8;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx = Y[2 * i] - Y[2 * j], dy = Y[2 * i + 1] - Y[2 * j + 1];
        z += 1.0 / (1.0 + dx * dx + dy * dy);
      }
      zrow[i] = z;
    }
    const double Z = std::accumulate(zrow.begin(), zrow.end(), 0.0);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx = Y[2 * i] - Y[2 * j], dy = Y[2 * i + 1] - Y[2 * j + 1];
        const double num = 1.0 / (1.0 + dx * dx + dy * dy);
        const double m = (exag * P[i * n + j] - num / Z) * num;
        gx += m * dx;
        gy += m * dy;
      }
      grad[2 * i] = 4.0 * gx;
      grad[2 * i + 1] = 4.0 * gy;
    }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      gains[k] = (grad[k] > 0.0) != (update[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], kMinGain);
      update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
      Y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += Y[2 * i];
      my += Y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      Y[2 * i] -= mx;
      Y[2 * i + 1] -= my;
    }
  }
  e.kl_final = kl_divergence(P, Y, n, parallel);
  e.coords = std::move(Y);
  return e;
}

}  // namespace

Embedding2D tsne_embed(std::span<const double> data, std::size_t rows, std::size_t dims, const TsneParams& params) {
  return embed(data, rows, dims, params, true);
}

Embedding2D tsne_embed_serial(std::span<const double> data, std::size_t rows, std::size_t dims,
                              const TsneParams& params) {
  return embed(data, rows, dims, params, false);
}

double tsne_kl(std::span<const double> data, std::size_t rows, std::size_t dims, std::span<const double> coords,
               double perplexity) {
  check_input(data, rows, dims);
  if (coords.size() != 2 * rows) throw ExplainError("embedding shape mismatch");
  const double perp = effective_perplexity(perplexity, rows, nullptr);
  const std::vector<double> x(data.begin(), data.end());
  const auto P = joint_affinities(x, rows, dims, perp, true);
  return kl_divergence(P, std::vector<double>(coords.begin(), coords.end()), rows, true);
}

}  // namespace tripspeed
