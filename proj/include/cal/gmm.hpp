#pragma once

#include "cal/codec.hpp"
#include "cal/geometry.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cal {

// Coarse prediction minus ground truth, in heatmap cells.
using DisplacementSample = Vec2;

class TooFewSamples : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vec2> means;
  std::vector<Eigen::Matrix2d> covariances;

  int components() const { return static_cast<int>(weights.size()); }

  double log_density(const Vec2& x) const;
  double density(const Vec2& x) const;
  // Sum of log densities.
  double log_likelihood(std::span<const DisplacementSample> xs) const;

  // Throws if weights or covariances violate the mixture invariants.
  void validate(double covariance_floor = 0.0) const;
};

struct EmConfig {
  int max_iterations = 200;
  double tolerance = 1e-6;        // on the change in total log-likelihood
  double covariance_floor = 1e-4; // added to every covariance as eps * I
  std::uint64_t seed = 0;
};

struct EmFit {
  GaussianMixture mixture;
  // Log-likelihood of each parameter set visited, starting with the initialization.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
};

// Needs at least 10 * k samples. k = 1 is solved in closed form; k >= 2 runs EM
// from a k-means++ seeding drawn with config.seed. The fit does not depend on
// the order of the samples.
EmFit em_fit_traced(std::span<const DisplacementSample> samples, int k, const EmConfig& config = {});
GaussianMixture em_fit(std::span<const DisplacementSample> samples, int k, const EmConfig& config = {});

// Component count used when none is configured: 1 for inputs whose shorter side
// is at most 128 px, 2 otherwise.
int default_component_count(const GridSpec& grid);

// Mixture density on the (2R+1)^2 integer stencil, min-max normalized.
struct MaskStencil {
  int radius = 0;
  Grid<double> values;  // row v + R, column u + R

  double at(int u, int v) const { return values(v + radius, u + radius); }
  int side() const { return 2 * radius + 1; }
};

MaskStencil sample_stencil(const GaussianMixture& gmm, int radius);

// One mask grid per joint slot, flattened sample-major like BatchTargets.
struct MaskSet {
  GridSpec grid;
  int joints = 0;
  std::string batch_id;
  std::vector<Grid<double>> masks;

  const Grid<double>& mask(std::size_t sample, int joint) const { return masks[sample * joints + joint]; }
  std::size_t size() const { return masks.size(); }
};

// The stencil centred on each joint's nearest cell. Unusable joints get zeros.
MaskSet make_mask_set(const MaskStencil& stencil, const Batch& batch);

// Stencil shifted so its centre sits on `center`, clipped to the grid.
Grid<double> place_stencil(const MaskStencil& stencil, const Cell& center, const GridSpec& grid);

// argmax(predicted) - y for every usable joint; `predicted` is flattened i * K + k.
std::vector<DisplacementSample> collect_displacements(std::span<const Heatmap> predicted,
                                                      const Batch& batch);

}  // namespace cal
