#include "cal/codec.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace cal {

std::string_view to_string(HeatmapType t) {
  switch (t) {
    case HeatmapType::binary: return "binary";
    case HeatmapType::gaussian_weighted: return "gaussian-weighted";
    case HeatmapType::plain_gaussian: return "plain-gaussian";
  }
  return "unknown";
}

HeatmapType parse_heatmap_type(std::string_view s) {
  if (s == "binary") return HeatmapType::binary;
  if (s == "gaussian-weighted") return HeatmapType::gaussian_weighted;
  if (s == "plain-gaussian") return HeatmapType::plain_gaussian;
  throw std::invalid_argument("unknown heatmap type '" + std::string(s) + "'");
}

int BatchTargets::active_count() const {
  int n = 0;
  for (auto a : active) n += a ? 1 : 0;
  return n;
}

BatchTargets encode_batch(const Batch& batch, HeatmapType type, const EncodeParams& params) {
  batch.validate();
  BatchTargets t;
  t.grid = batch.grid;
  t.joints = batch.joint_count();
  t.type = type;
  t.params = params;
  const std::size_t count = batch.size() * t.joints;
  t.heatmaps.reserve(count);
  t.binary.reserve(count);
  t.offsets.reserve(count);
  t.active.reserve(count);
  for (const Sample& s : batch.samples) {
    for (const JointTarget& j : s.joints) {
      if (is_active_target(j, batch.grid, params.radius)) {
        t.heatmaps.push_back(encode_heatmap(type, j, batch.grid, params));
        t.binary.push_back(encode_binary(j, batch.grid, params.radius));
        t.offsets.push_back(encode_offsets(j, batch.grid, params.radius));
        t.active.push_back(1);
      } else {
        t.heatmaps.push_back(Heatmap::zeros(batch.grid));
        t.binary.push_back(Heatmap::zeros(batch.grid));
        t.offsets.push_back(OffsetField::zeros(batch.grid));
        t.active.push_back(0);
      }
    }
  }
  return t;
}

BatchPrediction BatchPrediction::zeros(const GridSpec& grid, std::size_t count) {
  BatchPrediction p;
  p.heatmaps.assign(count, Heatmap::zeros(grid));
  p.offsets.assign(count, OffsetField::zeros(grid));
  return p;
}

QuantizationStats quantization_error_stats(const GridSpec& grid, int n_trials, DecodeMode mode,
                                           std::uint64_t seed, const EncodeParams& params) {
  grid.validate();
  if (n_trials < 1) throw std::invalid_argument("quantization_error_stats: n_trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(1.0, grid.width - 2.0);
  std::uniform_real_distribution<double> uy(1.0, grid.height - 2.0);

  QuantizationStats st;
  st.trials = n_trials;
  double sum_x = 0, sum_y = 0, sum_e = 0;
  for (int t = 0; t < n_trials; ++t) {
    JointTarget j;
    j.visibility = Visibility::labeled_visible;
    j.position = {ux(rng), uy(rng)};
    Vec2 decoded;
    if (mode == DecodeMode::argmax_only) {
      decoded = decode_argmax_only(encode_gaussian(j, grid, params.sigma)).position;
    } else {
      decoded = decode_with_offset(encode_weighted(j, grid, params.sigma, params.radius),
                                   encode_offsets(j, grid, params.radius))
                    .position;
    }
    const Vec2 err = to_input_coords(decoded - j.position, grid);
    const double ex = std::abs(err.x()), ey = std::abs(err.y()), e = err.norm();
    sum_x += ex;
    sum_y += ey;
    sum_e += e;
    st.max_abs_axis = std::max({st.max_abs_axis, ex, ey});
    st.max_euclidean = std::max(st.max_euclidean, e);
  }
  st.mean_abs_x = sum_x / n_trials;
  st.mean_abs_y = sum_y / n_trials;
  st.mean_abs_axis = 0.5 * (st.mean_abs_x + st.mean_abs_y);
  st.mean_euclidean = sum_e / n_trials;
  return st;
}

}  // namespace cal
