#pragma once

#include "cal/geometry.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace cal {

// Per-joint OKS constants for the 17 COCO person keypoints, in COCO order
// (nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles).
const std::vector<double>& coco_kappas();

// COCO constants when K = 17, otherwise a uniform 0.1 per joint.
std::vector<double> default_kappas(int joints);

// Thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> default_oks_thresholds();

// OKS of one instance. `pred` and the distances are in input pixels; the ground
// truth sample is in heatmap cells of `grid`. Throws when no joint is labeled.
double oks(std::span<const Vec2> pred, const Sample& gt, const GridSpec& grid, double bbox_area,
           std::span<const double> kappas);

struct InstanceEval {
  std::string id;
  double oks = 0.0;
  std::vector<double> per_joint_distance;  // input px; NaN for unlabeled joints
  int labeled_count = 0;
};

// Uses gt.bbox_area as the instance scale.
InstanceEval evaluate_instance(std::span<const Vec2> pred, const Sample& gt, const GridSpec& grid,
                               std::span<const double> kappas);

struct ApArReport {
  double ap = 0.0;
  double ar = 0.0;
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<double> recall;
};

// One prediction per ground-truth instance: at threshold t both precision and
// recall are the fraction of instances with OKS > t.
ApArReport ap_ar(std::span<const InstanceEval> evals, std::span<const double> thresholds);
ApArReport ap_ar(std::span<const InstanceEval> evals);

// CSV: schema_version,id,oks,labeled,d0,...,d{K-1}
void write_eval_csv(std::ostream& os, std::span<const InstanceEval> evals);

}  // namespace cal
