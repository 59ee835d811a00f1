#pragma once

#include "cal/codec.hpp"
#include "cal/gmm.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace cal {

enum class OffsetLoss { l1, smooth_l1, l2, none };

std::string_view to_string(OffsetLoss l);
OffsetLoss parse_offset_loss(std::string_view s);

// Added to the mask mass before dividing.
inline constexpr double kMaskMassEpsilon = 1e-12;
// SmoothL1 switches from quadratic to linear at this residual (heatmap cells).
inline constexpr double kSmoothL1Beta = 1.0;

struct HeatmapLossValue {
  double value = 0.0;
  Grid<double> gradient;
};

struct OffsetLossValue {
  double value = 0.0;
  Grid<double> grad_dx;
  Grid<double> grad_dy;
};

// mean((pred - target)^2) over cells.
HeatmapLossValue heatmap_l2(const Heatmap& target, const Heatmap& pred);

// Mean per-cell Bernoulli cross-entropy on sigmoid(logits).
HeatmapLossValue binary_ce(const Heatmap& target, const Heatmap& logits);

// sum_p mask(p) * (rho(d_x) + rho(d_y)) / (sum_p mask(p) + 1e-12), with
// d = pred - target and rho the per-channel penalty.
OffsetLossValue offset_l1_masked(const OffsetField& target, const OffsetField& pred, const Grid<double>& mask);
OffsetLossValue offset_smooth_l1_masked(const OffsetField& target, const OffsetField& pred,
                                        const Grid<double>& mask);
OffsetLossValue offset_l2_masked(const OffsetField& target, const OffsetField& pred, const Grid<double>& mask);
OffsetLossValue offset_loss_masked(OffsetLoss kind, const OffsetField& target, const OffsetField& pred,
                                   const Grid<double>& mask);

struct LossOptions {
  double alpha = 1.0;
  OffsetLoss offset = OffsetLoss::l1;
};

// total = heatmap_term + alpha * offset_term. The terms are averaged over the
// active joint slots; gradients are of `total` and zero on inactive slots.
struct LossReport {
  double total = 0.0;
  double heatmap_term = 0.0;
  double offset_term = 0.0;
  int active = 0;
  std::vector<Grid<double>> grad_heatmap;
  std::vector<Grid<double>> grad_dx;
  std::vector<Grid<double>> grad_dy;
};

// Heatmap term is L2, or cross-entropy on logits when targets are binary.
// `masks` holds one offset weight grid per joint slot.
LossReport weighted_loss(const BatchTargets& targets, const BatchPrediction& preds,
                         std::span<const Grid<double>> masks, const LossOptions& options);

// Offset weight = the target heatmap.
LossReport stage1_loss(const BatchTargets& targets, const BatchPrediction& preds, const LossOptions& options);

// Offset weight = the mixed Gaussian masks.
LossReport stage2_loss(const BatchTargets& targets, const BatchPrediction& preds, const MaskSet& masks,
                       const LossOptions& options);

}  // namespace cal
