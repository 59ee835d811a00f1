#include "cal/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cal {
namespace {

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

void require_shape(const Grid<double>& g, const GridSpec& grid, const char* what) {
  if (g.rows() != grid.height || g.cols() != grid.width)
    throw std::invalid_argument(std::string(what) + ": array shape does not match grid");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename Penalty>
OffsetLossValue masked_offset(const OffsetField& target, const OffsetField& pred, const Grid<double>& mask,
                              Penalty penalty, const char* what) {
  require_same_grid(target.grid, pred.grid, what);
  require_shape(mask, pred.grid, what);
  if (!target.shape_matches() || !pred.shape_matches())
    throw std::invalid_argument(std::string(what) + ": offset field shape does not match grid");
  if ((mask < 0.0).any()) throw std::invalid_argument(std::string(what) + ": negative mask value");

  const double norm = mask.sum() + kMaskMassEpsilon;
  OffsetLossValue out;
  out.grad_dx = Grid<double>::Zero(mask.rows(), mask.cols());
  out.grad_dy = Grid<double>::Zero(mask.rows(), mask.cols());
  double acc = 0.0;
  for (Eigen::Index y = 0; y < mask.rows(); ++y) {
    for (Eigen::Index x = 0; x < mask.cols(); ++x) {
      const double m = mask(y, x);
      if (m == 0.0) continue;
      const auto [vx, gx] = penalty(pred.dx(y, x) - target.dx(y, x));
      const auto [vy, gy] = penalty(pred.dy(y, x) - target.dy(y, x));
      acc += m * (vx + vy);
      out.grad_dx(y, x) = m * gx / norm;
      out.grad_dy(y, x) = m * gy / norm;
    }
  }
  out.value = acc / norm;
  return out;
}

struct PenaltyValue {
  double value;
  double slope;
};

PenaltyValue l1_penalty(double d) {
  return {std::abs(d), d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)};
}

PenaltyValue smooth_l1_penalty(double d) {
  const double a = std::abs(d);
  if (a < kSmoothL1Beta) return {0.5 * d * d / kSmoothL1Beta, d / kSmoothL1Beta};
  return {a - 0.5 * kSmoothL1Beta, d > 0.0 ? 1.0 : -1.0};
}

PenaltyValue l2_penalty(double d) { return {d * d, 2.0 * d}; }

}  // namespace

std::string_view to_string(OffsetLoss l) {
  switch (l) {
    case OffsetLoss::l1: return "L1";
    case OffsetLoss::smooth_l1: return "SmoothL1";
    case OffsetLoss::l2: return "L2";
    case OffsetLoss::none: return "none";
  }
  return "unknown";
}

OffsetLoss parse_offset_loss(std::string_view s) {
  if (s == "L1" || s == "l1") return OffsetLoss::l1;
  if (s == "SmoothL1" || s == "smooth-l1" || s == "smoothl1") return OffsetLoss::smooth_l1;
  if (s == "L2" || s == "l2") return OffsetLoss::l2;
  if (s == "none") return OffsetLoss::none;
  throw std::invalid_argument("unknown offset loss '" + std::string(s) + "'");
}

HeatmapLossValue heatmap_l2(const Heatmap& target, const Heatmap& pred) {
  require_same_grid(target.grid, pred.grid, "heatmap_l2");
  require_shape(target.values, target.grid, "heatmap_l2");
  require_shape(pred.values, pred.grid, "heatmap_l2");
  const double n = static_cast<double>(pred.values.size());
  const Grid<double> diff = pred.values - target.values;
  return {diff.square().sum() / n, (2.0 / n) * diff};
}

HeatmapLossValue binary_ce(const Heatmap& target, const Heatmap& logits) {
  require_same_grid(target.grid, logits.grid, "binary_ce");
  require_shape(target.values, target.grid, "binary_ce");
  require_shape(logits.values, logits.grid, "binary_ce");
  const double n = static_cast<double>(logits.values.size());
  HeatmapLossValue out;
  out.gradient.resize(logits.values.rows(), logits.values.cols());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.values.size(); ++i) {
    const double z = logits.values.data()[i];
    const double t = target.values.data()[i];
    // softplus form: max(z, 0) - z t + log(1 + exp(-|z|))
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    out.gradient.data()[i] = (sigmoid(z) - t) / n;
  }
  out.value = acc / n;
  return out;
}

OffsetLossValue offset_l1_masked(const OffsetField& target, const OffsetField& pred, const Grid<double>& mask) {
  return masked_offset(target, pred, mask, l1_penalty, "offset_l1_masked");
}

OffsetLossValue offset_smooth_l1_masked(const OffsetField& target, const OffsetField& pred,
                                        const Grid<double>& mask) {
  return masked_offset(target, pred, mask, smooth_l1_penalty, "offset_smooth_l1_masked");
}

OffsetLossValue offset_l2_masked(const OffsetField& target, const OffsetField& pred, const Grid<double>& mask) {
  return masked_offset(target, pred, mask, l2_penalty, "offset_l2_masked");
}

OffsetLossValue offset_loss_masked(OffsetLoss kind, const OffsetField& target, const OffsetField& pred,
                                   const Grid<double>& mask) {
  switch (kind) {
    case OffsetLoss::l1: return offset_l1_masked(target, pred, mask);
    case OffsetLoss::smooth_l1: return offset_smooth_l1_masked(target, pred, mask);
    case OffsetLoss::l2: return offset_l2_masked(target, pred, mask);
    case OffsetLoss::none: break;
  }
  require_same_grid(target.grid, pred.grid, "offset_loss_masked");
  return {0.0, Grid<double>::Zero(pred.grid.height, pred.grid.width),
          Grid<double>::Zero(pred.grid.height, pred.grid.width)};
}

LossReport weighted_loss(const BatchTargets& targets, const BatchPrediction& preds,
                         std::span<const Grid<double>> masks, const LossOptions& options) {
  const std::size_t count = targets.size();
  if (preds.heatmaps.size() != count || preds.offsets.size() != count || masks.size() != count)
    throw std::invalid_argument("weighted_loss: targets, predictions and masks differ in length");
  if (!(options.alpha > 0.0)) throw std::invalid_argument("weighted_loss: alpha must be positive");
  const int active = targets.active_count();
  if (active == 0) throw std::invalid_argument("weighted_loss: no labeled joints in batch");

  const GridSpec& grid = targets.grid;
  const double inv = 1.0 / active;
  LossReport r;
  r.active = active;
  r.grad_heatmap.assign(count, Grid<double>::Zero(grid.height, grid.width));
  r.grad_dx.assign(count, Grid<double>::Zero(grid.height, grid.width));
  r.grad_dy.assign(count, Grid<double>::Zero(grid.height, grid.width));
  for (std::size_t j = 0; j < count; ++j) {
    if (!targets.active[j]) continue;
    const HeatmapLossValue h = targets.type == HeatmapType::binary
                                   ? binary_ce(targets.heatmaps[j], preds.heatmaps[j])
                                   : heatmap_l2(targets.heatmaps[j], preds.heatmaps[j]);
    r.heatmap_term += h.value;
    r.grad_heatmap[j] = inv * h.gradient;
    if (options.offset == OffsetLoss::none) continue;
    const OffsetLossValue o = offset_loss_masked(options.offset, targets.offsets[j], preds.offsets[j], masks[j]);
    r.offset_term += o.value;
    r.grad_dx[j] = (options.alpha * inv) * o.grad_dx;
    r.grad_dy[j] = (options.alpha * inv) * o.grad_dy;
  }
  r.heatmap_term *= inv;
  r.offset_term *= inv;
  r.total = r.heatmap_term + options.alpha * r.offset_term;
  return r;
}

LossReport stage1_loss(const BatchTargets& targets, const BatchPrediction& preds, const LossOptions& options) {
  std::vector<Grid<double>> masks;
  masks.reserve(targets.size());
  for (const auto& h : targets.heatmaps) masks.push_back(h.values);
  return weighted_loss(targets, preds, masks, options);
}

LossReport stage2_loss(const BatchTargets& targets, const BatchPrediction& preds, const MaskSet& masks,
                       const LossOptions& options) {
  if (!(masks.grid == targets.grid) || masks.joints != targets.joints)
    throw std::invalid_argument("stage2_loss: masks come from a different batch layout");
  return weighted_loss(targets, preds, masks.masks, options);
}

}  // namespace cal
