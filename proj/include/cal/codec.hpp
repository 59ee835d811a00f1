#pragma once

#include "cal/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace cal {

enum class HeatmapType { binary, gaussian_weighted, plain_gaussian };

std::string_view to_string(HeatmapType t);
HeatmapType parse_heatmap_type(std::string_view s);

// Gaussian spread and disc radius, both in heatmap cells.
struct EncodeParams {
  double sigma = 2.0;
  double radius = 4.0;
};

// exp(-||p - y||^2 / (2 sigma^2)) at every cell. Unlabeled joints give zeros.
template <typename Scalar = double>
BasicHeatmap<Scalar> encode_gaussian(const JointTarget& joint, const GridSpec& grid, Scalar sigma) {
  if (!(sigma > Scalar(0))) throw std::invalid_argument("encode_gaussian: sigma must be positive");
  auto hm = BasicHeatmap<Scalar>::zeros(grid);
  if (!joint.labeled()) return hm;
  const Scalar inv = Scalar(1) / (Scalar(2) * sigma * sigma);
  // The kernel is separable: C(x, y) = gy(y) * gx(x).
  using Col = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Col xs = Col::LinSpaced(grid.width, Scalar(0), Scalar(grid.width - 1)) - Scalar(joint.position.x());
  const Col ys = Col::LinSpaced(grid.height, Scalar(0), Scalar(grid.height - 1)) - Scalar(joint.position.y());
  const Col gx = (-xs.square() * inv).exp();
  const Col gy = (-ys.square() * inv).exp();
  hm.values = (gy.matrix() * gx.matrix().transpose()).array();
  return hm;
}

// 1 on the clipped R-disc around the joint, 0 elsewhere.
template <typename Scalar = double>
BasicHeatmap<Scalar> encode_binary(const JointTarget& joint, const GridSpec& grid, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("encode_binary: radius must be positive");
  auto hm = BasicHeatmap<Scalar>::zeros(grid);
  if (!joint.labeled()) return hm;
  for (const Cell& c : clip_disc(joint.position, radius, grid)) hm(c) = Scalar(1);
  return hm;
}

// y - p on the disc, zero outside.
template <typename Scalar = double>
BasicOffsetField<Scalar> encode_offsets(const JointTarget& joint, const GridSpec& grid, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("encode_offsets: radius must be positive");
  auto of = BasicOffsetField<Scalar>::zeros(grid);
  if (!joint.labeled()) return of;
  for (const Cell& c : clip_disc(joint.position, radius, grid)) {
    of.dx(c.y, c.x) = Scalar(joint.position.x() - c.x);
    of.dy(c.y, c.x) = Scalar(joint.position.y() - c.y);
  }
  return of;
}

// Binary disc scaled by the Gaussian: G = B * C.
template <typename Scalar = double>
BasicHeatmap<Scalar> encode_weighted(const JointTarget& joint, const GridSpec& grid, Scalar sigma,
                                     double radius) {
  auto hm = encode_binary<Scalar>(joint, grid, radius);
  hm.values *= encode_gaussian<Scalar>(joint, grid, sigma).values;
  return hm;
}

template <typename Scalar = double>
BasicHeatmap<Scalar> encode_heatmap(HeatmapType type, const JointTarget& joint, const GridSpec& grid,
                                    const EncodeParams& params) {
  switch (type) {
    case HeatmapType::binary:
      return encode_binary<Scalar>(joint, grid, params.radius);
    case HeatmapType::gaussian_weighted:
      return encode_weighted<Scalar>(joint, grid, Scalar(params.sigma), params.radius);
    case HeatmapType::plain_gaussian:
      return encode_gaussian<Scalar>(joint, grid, Scalar(params.sigma));
  }
  throw std::invalid_argument("encode_heatmap: unknown heatmap type");
}

// A joint produces a training target when it is labeled, inside the grid, and
// its disc covers at least one cell.
inline bool is_active_target(const JointTarget& joint, const GridSpec& grid, double radius) {
  return joint.usable() && !clip_disc(joint.position, radius, grid).empty();
}

struct ArgmaxResult {
  Cell cell;
  double score = 0.0;
};

// Maximum cell; ties go to the smallest row-major index. NaN cells are skipped.
template <typename Scalar>
ArgmaxResult decode_argmax(const BasicHeatmap<Scalar>& hm) {
  if (hm.values.size() == 0) throw std::invalid_argument("decode_argmax: empty heatmap");
  ArgmaxResult best{{-1, -1}, -std::numeric_limits<double>::infinity()};
  bool found = false;
  for (Eigen::Index y = 0; y < hm.values.rows(); ++y) {
    for (Eigen::Index x = 0; x < hm.values.cols(); ++x) {
      const double v = static_cast<double>(hm.values(y, x));
      if (std::isnan(v)) continue;
      if (!found || v > best.score) {
        best = {{static_cast<int>(x), static_cast<int>(y)}, v};
        found = true;
      }
    }
  }
  if (!found) throw std::domain_error("decode_argmax: heatmap is all NaN");
  return best;
}

struct DecodedJoint {
  Vec2 position = Vec2::Zero();  // heatmap-cell units
  double score = 0.0;
  Cell cell;  // the argmax cell
};

// argmax(hm) + offset(argmax(hm)).
template <typename Scalar>
DecodedJoint decode_with_offset(const BasicHeatmap<Scalar>& hm, const BasicOffsetField<Scalar>& of) {
  if (!(hm.grid == of.grid) || !hm.shape_matches() || !of.shape_matches())
    throw std::invalid_argument("decode_with_offset: heatmap and offset field grids differ");
  const ArgmaxResult peak = decode_argmax(hm);
  const Vec2 base(peak.cell.x, peak.cell.y);
  return {base + of(peak.cell).template cast<double>(), peak.score, peak.cell};
}

template <typename Scalar>
DecodedJoint decode_argmax_only(const BasicHeatmap<Scalar>& hm) {
  const ArgmaxResult peak = decode_argmax(hm);
  return {Vec2(peak.cell.x, peak.cell.y), peak.score, peak.cell};
}

// Per-joint targets for a whole batch, flattened sample-major (i * K + k).
struct BatchTargets {
  GridSpec grid;
  int joints = 0;
  HeatmapType type = HeatmapType::gaussian_weighted;
  EncodeParams params;
  std::vector<Heatmap> heatmaps;  // the regression target of the chosen type
  std::vector<Heatmap> binary;    // disc indicator B
  std::vector<OffsetField> offsets;
  std::vector<std::uint8_t> active;

  std::size_t index(std::size_t sample, int joint) const { return sample * joints + joint; }
  std::size_t size() const { return heatmaps.size(); }
  int active_count() const;
};

BatchTargets encode_batch(const Batch& batch, HeatmapType type, const EncodeParams& params);

// Predicted maps, flattened like BatchTargets. Heatmaps hold logits when the
// target type is binary.
struct BatchPrediction {
  std::vector<Heatmap> heatmaps;
  std::vector<OffsetField> offsets;

  static BatchPrediction zeros(const GridSpec& grid, std::size_t count);
  std::size_t size() const { return heatmaps.size(); }
};

enum class DecodeMode { argmax_only, with_offset };

// Decode errors over random joints, in input pixels.
struct QuantizationStats {
  int trials = 0;
  double mean_abs_x = 0.0;
  double mean_abs_y = 0.0;
  double mean_abs_axis = 0.0;  // average of the two axes
  double max_abs_axis = 0.0;
  double mean_euclidean = 0.0;
  double max_euclidean = 0.0;
};

// Draws joints uniformly over [1, W-2] x [1, H-2], encodes and decodes them.
QuantizationStats quantization_error_stats(const GridSpec& grid, int n_trials, DecodeMode mode,
                                           std::uint64_t seed = 0, const EncodeParams& params = {});

}  // namespace cal
