#pragma once

#include "cal/codec.hpp"
#include "cal/gmm.hpp"
#include "cal/ingest.hpp"
#include "cal/loss.hpp"
#include "cal/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cal {

// Offset weight used in the second stage.
enum class MaskType { binary, target, mgm };

std::string_view to_string(MaskType m);
MaskType parse_mask_type(std::string_view s);

struct PipelineConfig {
  GridSpec grid{32, 24, 4.0};
  double sigma = 2.0;
  double radius = 4.0;
  double alpha = 1.0;
  HeatmapType heatmap_type = HeatmapType::gaussian_weighted;
  OffsetLoss offset_loss = OffsetLoss::l1;
  MaskType offset_mask = MaskType::mgm;
  int gmm_components = 0;  // 0 selects default_component_count(grid)
  int stage1_steps = 1500;
  int stage2_steps = 500;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  int snapshot_every = 100;  // mixture snapshot cadence in stage 2; 0 keeps only the last

  void validate() const;
  int components() const { return gmm_components > 0 ? gmm_components : default_component_count(grid); }
  int stencil_radius() const;
  EncodeParams encode_params() const { return {sigma, radius}; }
  LossOptions loss_options() const { return {alpha, offset_loss}; }
};

struct StepRecord {
  int step = 0;
  int stage = 1;
  double total = 0.0;
  double heatmap_term = 0.0;
  double offset_term = 0.0;
  int displacements = 0;  // stage 2 only
  bool mask_fallback = false;
};

struct MixtureSnapshot {
  int step = 0;
  GaussianMixture mixture;
};

// Decode errors over the active joints.
struct DecodeSummary {
  int joints = 0;
  double mean_error_px = 0.0;  // Euclidean, input pixels
  double median_error_px = 0.0;
  double max_error_px = 0.0;
  double mean_axis_error_px = 0.0;  // mean |dx|, |dy| over both axes
  // |O(c) - (y - c)| at the argmax cell c, heatmap cells. Zero-offset modes
  // report the coarse error |c - y|.
  double mean_offset_error = 0.0;
  double median_offset_error = 0.0;
};

struct RunReport {
  PipelineConfig config;
  std::vector<StepRecord> steps;
  DecodeSummary final_decode;
  std::vector<InstanceEval> evals;
  ApArReport ap;
  double mean_oks = 0.0;
  std::vector<MixtureSnapshot> mixtures;
  int mask_fallbacks = 0;
  BatchPrediction final_predictions;
  double wall_seconds = 0.0;
};

// Optimizes free prediction tensors on the two-stage objective, starting from
// `init`. Each step is a preconditioned descent step: the batch and per-cell
// averaging of the heatmap term is undone, and L1 offsets take the proximal step
// of their masked term, so offsets settle instead of oscillating around the kink.
RunReport train_toy(const Batch& batch, const BatchPrediction& init, const PipelineConfig& cfg);
// Starts from all-zero predictions.
RunReport train_toy(const Batch& batch, const PipelineConfig& cfg);

DecodeSummary summarize_decoding(const Batch& batch, const BatchTargets& targets, const BatchPrediction& preds,
                                 bool use_offsets);

// Synthetic data shared by sweeps and ablations.
struct SceneOptions {
  int samples = 64;
  int joints = kDefaultJointCount;
  Eigen::Matrix2d noise_cov = Eigen::Matrix2d::Identity();
  double pixel_noise = 0.05;
  double offset_noise = 0.25;
};

SyntheticScene make_scene(const PipelineConfig& cfg, const SceneOptions& scene);

struct Resolution {
  int width = 0;  // input pixels
  int height = 0;
};

Resolution parse_resolution(std::string_view s);  // "WxH"

// Pipeline variants compared by the resolution sweep.
//   heatmap: plain Gaussian targets, no offsets, argmax decoding
//   udp:     binary targets with cross-entropy, SmoothL1 offsets on the binary disc, one stage
//   cal:     Gaussian-weighted targets, L1 offsets, target mask then mixed Gaussian masks
PipelineConfig apply_mode(PipelineConfig cfg, std::string_view mode);

struct SweepRow {
  Resolution input;
  GridSpec grid;
  std::string mode;
  double mean_error_px = 0.0;
  double mean_axis_error_px = 0.0;
  double mean_oks = 0.0;
  double ap = 0.0;
};

// Heatmaps are input / heatmap_stride cells; errors are measured in pixels of
// the largest input resolution so rows are comparable.
std::vector<SweepRow> sweep_resolution(const PipelineConfig& base, std::span<const Resolution> resolutions,
                                       std::span<const std::string> modes, const SceneOptions& scene,
                                       int heatmap_stride = 4);

enum class AblationAxis { mask_type, heatmap_type, loss_type, strategy, components };

std::string_view to_string(AblationAxis a);
AblationAxis parse_ablation_axis(std::string_view s);

struct Variant {
  std::string label;
  PipelineConfig config;
};

std::vector<Variant> ablation_variants(AblationAxis axis, const PipelineConfig& base);

struct AblationRow {
  std::string axis;
  std::string variant;
  double mean_error_px = 0.0;
  double mean_offset_error = 0.0;
  double mean_oks = 0.0;
  double ap = 0.0;
  double final_loss = 0.0;
};

// Every variant runs on the same synthetic scene.
std::vector<AblationRow> run_variants(std::string_view axis, std::span<const Variant> variants,
                                      const SceneOptions& scene);
std::vector<AblationRow> run_ablation(AblationAxis axis, const PipelineConfig& base, const SceneOptions& scene);

nlohmann::json to_json(const PipelineConfig& cfg);
// Wall-clock time is left out unless include_timing, keeping reports reproducible.
nlohmann::json report_to_json(const RunReport& r, bool include_timing = false);
void write_losses_csv(std::ostream& os, const RunReport& r);
void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows);
void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);

}  // namespace cal
