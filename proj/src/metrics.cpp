#include "cal/metrics.hpp"

#include "cal/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace cal {

const std::vector<double>& coco_kappas() {
  static const std::vector<double> k = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
                                        0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
  return k;
}

std::vector<double> default_kappas(int joints) {
  if (joints == kDefaultJointCount) return coco_kappas();
  return std::vector<double>(static_cast<std::size_t>(joints), 0.1);
}

std::vector<double> default_oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

namespace {

void check_instance(std::span<const Vec2> pred, const Sample& gt, double bbox_area,
                    std::span<const double> kappas) {
  if (!(bbox_area > 0.0)) throw std::invalid_argument("oks: bbox area must be positive");
  if (pred.size() != gt.joints.size()) throw std::invalid_argument("oks: prediction/ground-truth joint count mismatch");
  if (kappas.size() != gt.joints.size()) throw std::invalid_argument("oks: one kappa per joint required");
  for (double k : kappas)
    if (!(k > 0.0)) throw std::invalid_argument("oks: kappas must be positive");
  if (gt.labeled_count() == 0) throw std::domain_error("oks: no labeled joints");
}

}  // namespace

double oks(std::span<const Vec2> pred, const Sample& gt, const GridSpec& grid, double bbox_area,
           std::span<const double> kappas) {
  check_instance(pred, gt, bbox_area, kappas);
  const double s2 = bbox_area;  // S^2 with S = sqrt(area)
  double acc = 0.0;
  int n = 0;
  for (std::size_t j = 0; j < gt.joints.size(); ++j) {
    if (!gt.joints[j].labeled()) continue;
    const double d2 = (pred[j] - to_input_coords(gt.joints[j].position, grid)).squaredNorm();
    acc += std::exp(-d2 / (2.0 * s2 * kappas[j] * kappas[j]));
    ++n;
  }
  return acc / n;
}

InstanceEval evaluate_instance(std::span<const Vec2> pred, const Sample& gt, const GridSpec& grid,
                               std::span<const double> kappas) {
  InstanceEval e;
  e.id = gt.source_id;
  e.oks = oks(pred, gt, grid, gt.bbox_area, kappas);
  e.labeled_count = gt.labeled_count();
  e.per_joint_distance.reserve(gt.joints.size());
  for (std::size_t j = 0; j < gt.joints.size(); ++j) {
    e.per_joint_distance.push_back(gt.joints[j].labeled()
                                       ? (pred[j] - to_input_coords(gt.joints[j].position, grid)).norm()
                                       : std::numeric_limits<double>::quiet_NaN());
  }
  return e;
}

ApArReport ap_ar(std::span<const InstanceEval> evals, std::span<const double> thresholds) {
  if (evals.empty()) throw std::invalid_argument("ap_ar: no instances");
  if (thresholds.empty()) throw std::invalid_argument("ap_ar: no thresholds");
  ApArReport r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    std::size_t hits = 0;
    for (const auto& e : evals) hits += e.oks > t ? 1 : 0;
    const double frac = static_cast<double>(hits) / static_cast<double>(evals.size());
    r.precision.push_back(frac);
    r.recall.push_back(frac);
    r.ap += frac;
    r.ar += frac;
  }
  r.ap /= static_cast<double>(thresholds.size());
  r.ar /= static_cast<double>(thresholds.size());
  return r;
}

ApArReport ap_ar(std::span<const InstanceEval> evals) {
  const auto t = default_oks_thresholds();
  return ap_ar(evals, t);
}

void write_eval_csv(std::ostream& os, std::span<const InstanceEval> evals) {
  std::size_t k = 0;
  for (const auto& e : evals) k = std::max(k, e.per_joint_distance.size());
  os << "schema_version,id,oks,labeled";
  for (std::size_t j = 0; j < k; ++j) os << ",d" << j;
  os << '\n';
  for (const auto& e : evals) {
    os << kSchemaVersion << ',' << csv_escape(e.id) << ',' << format_double(e.oks) << ',' << e.labeled_count;
    for (std::size_t j = 0; j < k; ++j) {
      os << ',';
      if (j < e.per_joint_distance.size() && !std::isnan(e.per_joint_distance[j]))
        os << format_double(e.per_joint_distance[j]);
    }
    os << '\n';
  }
}

}  // namespace cal
