#include "cal/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace cal {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2 pi)

double gaussian_log_density(const Vec2& x, const Vec2& mean, const Eigen::Matrix2d& cov) {
  const double a = cov(0, 0), b = cov(0, 1), c = cov(1, 1);
  const double det = a * c - b * b;
  const Vec2 d = x - mean;
  const double q = (c * d.x() * d.x() - 2.0 * b * d.x() * d.y() + a * d.y() * d.y()) / det;
  return -kLog2Pi - 0.5 * std::log(det) - 0.5 * q;
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Lexicographic copy, so every later step is independent of input order.
std::vector<Vec2> canonical_order(std::span<const DisplacementSample> samples) {
  std::vector<Vec2> xs(samples.begin(), samples.end());
  std::sort(xs.begin(), xs.end(), [](const Vec2& p, const Vec2& q) {
    return p.x() != q.x() ? p.x() < q.x() : p.y() < q.y();
  });
  return xs;
}

struct Moments {
  Vec2 mean = Vec2::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();  // maximum likelihood (1/n)
};

Moments moments(const std::vector<Vec2>& xs) {
  Moments m;
  for (const auto& x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) {
    const Vec2 d = x - m.mean;
    m.cov += d * d.transpose();
  }
  m.cov /= static_cast<double>(xs.size());
  return m;
}

std::vector<Vec2> kmeans_pp_seeds(const std::vector<Vec2>& xs, int k, std::mt19937_64& rng) {
  std::vector<Vec2> seeds;
  seeds.reserve(k);
  std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
  seeds.push_back(xs[pick(rng)]);
  std::vector<double> d2(xs.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(seeds.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      d2[i] = std::min(d2[i], (xs[i] - seeds.back()).squaredNorm());
      total += d2[i];
    }
    if (!(total > 0.0)) {
      seeds.push_back(xs[pick(rng)]);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    const double r = u(rng);
    double acc = 0.0;
    std::size_t chosen = xs.size() - 1;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      acc += d2[i];
      if (acc >= r && d2[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    seeds.push_back(xs[chosen]);
  }
  return seeds;
}

}  // namespace

double GaussianMixture::log_density(const Vec2& x) const {
  std::vector<double> terms;
  terms.reserve(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] <= 0.0) continue;
    terms.push_back(std::log(weights[j]) + gaussian_log_density(x, means[j], covariances[j]));
  }
  return log_sum_exp(terms);
}

double GaussianMixture::density(const Vec2& x) const { return std::exp(log_density(x)); }

double GaussianMixture::log_likelihood(std::span<const DisplacementSample> xs) const {
  double ll = 0.0;
  for (const auto& x : xs) ll += log_density(x);
  return ll;
}

void GaussianMixture::validate(double covariance_floor) const {
  if (weights.empty()) throw std::invalid_argument("GaussianMixture: no components");
  if (means.size() != weights.size() || covariances.size() != weights.size())
    throw std::invalid_argument("GaussianMixture: component arrays differ in length");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("GaussianMixture: weights do not sum to 1");
  for (const auto& c : covariances) {
    if (std::abs(c(0, 1) - c(1, 0)) > 1e-12 * (1.0 + c.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("GaussianMixture: covariance not symmetric");
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
    if (!(es.eigenvalues().minCoeff() > 0.0) ||
        es.eigenvalues().minCoeff() < covariance_floor * (1.0 - 1e-9))
      throw std::invalid_argument("GaussianMixture: covariance below the floor");
  }
}

EmFit em_fit_traced(std::span<const DisplacementSample> samples, int k, const EmConfig& config) {
  if (k < 1) throw std::invalid_argument("em_fit: k must be >= 1");
  if (samples.size() < 10u * static_cast<std::size_t>(k))
    throw TooFewSamples("em_fit: " + std::to_string(samples.size()) + " samples for k=" +
                        std::to_string(k) + " (need " + std::to_string(10 * k) + ")");
  for (const auto& s : samples)
    if (!s.allFinite()) throw std::invalid_argument("em_fit: non-finite displacement");

  const std::vector<Vec2> xs = canonical_order(samples);
  const std::size_t n = xs.size();
  const Eigen::Matrix2d floor = config.covariance_floor * Eigen::Matrix2d::Identity();
  const Moments pooled = moments(xs);

  EmFit fit;
  GaussianMixture& g = fit.mixture;
  if (k == 1) {
    g.weights = {1.0};
    g.means = {pooled.mean};
    g.covariances = {pooled.cov + floor};
    fit.log_likelihood.push_back(g.log_likelihood(xs));
    fit.converged = true;
    return fit;
  }

  std::mt19937_64 rng(config.seed);
  g.means = kmeans_pp_seeds(xs, k, rng);
  g.weights.assign(k, 1.0 / k);
  g.covariances.assign(k, pooled.cov + floor);

  Eigen::MatrixXd resp(n, k);
  std::vector<double> logp(k);
  double previous = 0.0;
  for (int iter = 0;; ++iter) {
    // E-step; also yields the log-likelihood of the current parameters.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        logp[j] = g.weights[j] > 0.0
                      ? std::log(g.weights[j]) + gaussian_log_density(xs[i], g.means[j], g.covariances[j])
                      : -std::numeric_limits<double>::infinity();
      }
      const double lse = log_sum_exp(logp);
      ll += lse;
      for (int j = 0; j < k; ++j) resp(i, j) = std::exp(logp[j] - lse);
    }
    fit.log_likelihood.push_back(ll);
    if (iter > 0 && std::abs(ll - previous) < config.tolerance) {
      fit.converged = true;
      break;
    }
    if (iter == config.max_iterations) break;
    previous = ll;

    // M-step.
    for (int j = 0; j < k; ++j) {
      const double nk = resp.col(j).sum();
      if (!(nk > 1e-12 * static_cast<double>(n))) {
        g.weights[j] = 0.0;  // collapsed; keep its last mean and covariance
        continue;
      }
      Vec2 mean = Vec2::Zero();
      for (std::size_t i = 0; i < n; ++i) mean += resp(i, j) * xs[i];
      mean /= nk;
      Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2 d = xs[i] - mean;
        cov += resp(i, j) * (d * d.transpose());
      }
      cov /= nk;
      cov(1, 0) = cov(0, 1);
      g.weights[j] = nk / static_cast<double>(n);
      g.means[j] = mean;
      g.covariances[j] = cov + floor;
    }
    double wsum = 0.0;
    for (double w : g.weights) wsum += w;
    for (double& w : g.weights) w /= wsum;
    fit.iterations = iter + 1;
  }
  return fit;
}

GaussianMixture em_fit(std::span<const DisplacementSample> samples, int k, const EmConfig& config) {
  return em_fit_traced(samples, k, config).mixture;
}

int default_component_count(const GridSpec& grid) {
  const Vec2 extent = grid.input_extent();
  return std::min(extent.x(), extent.y()) <= 128.0 ? 1 : 2;
}

MaskStencil sample_stencil(const GaussianMixture& gmm, int radius) {
  if (radius < 1) throw std::invalid_argument("sample_stencil: radius must be >= 1");
  if (gmm.components() < 1) throw std::invalid_argument("sample_stencil: empty mixture");
  MaskStencil st;
  st.radius = radius;
  const int side = 2 * radius + 1;
  // Work in log space so narrow components do not underflow to a flat zero map.
  Grid<double> logd(side, side);
  for (int v = -radius; v <= radius; ++v)
    for (int u = -radius; u <= radius; ++u) logd(v + radius, u + radius) = gmm.log_density(Vec2(u, v));
  const double top = logd.maxCoeff();
  st.values = (logd - top).exp();
  const double lo = st.values.minCoeff(), hi = st.values.maxCoeff();
  if (hi > lo) {
    st.values = (st.values - lo) / (hi - lo);
  } else {
    // Flat density: fall back to a unit impulse at the centre.
    st.values.setZero();
    st.values(radius, radius) = 1.0;
  }
  return st;
}

Grid<double> place_stencil(const MaskStencil& stencil, const Cell& center, const GridSpec& grid) {
  Grid<double> m = Grid<double>::Zero(grid.height, grid.width);
  const int r = stencil.radius;
  const int y0 = std::max(0, center.y - r), y1 = std::min(grid.height - 1, center.y + r);
  const int x0 = std::max(0, center.x - r), x1 = std::min(grid.width - 1, center.x + r);
  if (y0 > y1 || x0 > x1) return m;
  m.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) =
      stencil.values.block(y0 - center.y + r, x0 - center.x + r, y1 - y0 + 1, x1 - x0 + 1);
  return m;
}

MaskSet make_mask_set(const MaskStencil& stencil, const Batch& batch) {
  batch.validate();
  MaskSet ms;
  ms.grid = batch.grid;
  ms.joints = batch.joint_count();
  ms.masks.reserve(batch.size() * ms.joints);
  for (const Sample& s : batch.samples) {
    for (const JointTarget& j : s.joints) {
      if (j.usable() && batch.grid.contains(j.position))
        ms.masks.push_back(place_stencil(stencil, GridSpec::nearest_cell(j.position), batch.grid));
      else
        ms.masks.push_back(Grid<double>::Zero(batch.grid.height, batch.grid.width));
    }
  }
  return ms;
}

std::vector<DisplacementSample> collect_displacements(std::span<const Heatmap> predicted,
                                                      const Batch& batch) {
  batch.validate();
  const int k = batch.joint_count();
  if (predicted.size() != batch.size() * k)
    throw std::invalid_argument("collect_displacements: expected one heatmap per joint slot");
  std::vector<DisplacementSample> out;
  out.reserve(predicted.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int j = 0; j < k; ++j) {
      const JointTarget& jt = batch.joint(i, j);
      if (!jt.usable()) continue;
      const Cell c = decode_argmax(predicted[i * k + j]).cell;
      out.emplace_back(Vec2(c.x, c.y) - jt.position);
    }
  }
  return out;
}

}  // namespace cal
