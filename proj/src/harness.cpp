#include "cal/harness.hpp"

#include "cal/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace cal {

std::string_view to_string(MaskType m) {
  switch (m) {
    case MaskType::binary: return "binary";
    case MaskType::target: return "target-G";
    case MaskType::mgm: return "MGM";
  }
  return "unknown";
}

MaskType parse_mask_type(std::string_view s) {
  if (s == "binary") return MaskType::binary;
  if (s == "target-G" || s == "target") return MaskType::target;
  if (s == "MGM" || s == "mgm") return MaskType::mgm;
  throw std::invalid_argument("unknown mask type '" + std::string(s) + "'");
}

void PipelineConfig::validate() const {
  grid.validate();
  if (!(sigma > 0.0)) throw std::invalid_argument("config: sigma must be positive");
  if (!(radius > 0.0)) throw std::invalid_argument("config: radius must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("config: alpha must be positive");
  if (stage1_steps < 0 || stage2_steps < 0) throw std::invalid_argument("config: steps must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be positive");
  if (gmm_components < 0) throw std::invalid_argument("config: gmm_components must be >= 0");
  if (snapshot_every < 0) throw std::invalid_argument("config: snapshot_every must be >= 0");
  if (offset_mask == MaskType::mgm && offset_loss == OffsetLoss::none)
    throw std::invalid_argument("config: the MGM offset mask requires an offset loss");
}

int PipelineConfig::stencil_radius() const { return std::max(1, static_cast<int>(std::ceil(radius))); }

namespace {

struct Box {
  Eigen::Index y0 = 0, x0 = 0, rows = 0, cols = 0;
};

// Bounding box of the positive cells of a mask.
Box support_box(const Grid<double>& m) {
  Eigen::Index y0 = m.rows(), y1 = -1, x0 = m.cols(), x1 = -1;
  for (Eigen::Index y = 0; y < m.rows(); ++y) {
    for (Eigen::Index x = 0; x < m.cols(); ++x) {
      if (!(m(y, x) > 0.0)) continue;
      y0 = std::min(y0, y);
      y1 = y;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  if (y1 < 0) return {};
  return {y0, x0, y1 - y0 + 1, x1 - x0 + 1};
}

std::vector<Box> support_boxes(std::span<const Grid<double>> masks) {
  std::vector<Box> boxes;
  boxes.reserve(masks.size());
  for (const auto& m : masks) boxes.push_back(support_box(m));
  return boxes;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double soft_threshold(double d, double w) {
  const double a = std::abs(d) - w;
  return a > 0.0 ? std::copysign(a, d) : 0.0;
}

struct StepTerms {
  double heatmap = 0.0;
  double offset = 0.0;
};

// Evaluates the loss at the current predictions and applies one update in
// place. The returned terms match weighted_loss() on the same state.
StepTerms descend(const BatchTargets& targets, BatchPrediction& preds, std::span<const Grid<double>> masks,
                  std::span<const Box> boxes, const PipelineConfig& cfg) {
  const double lr = cfg.learning_rate;
  const double alpha = cfg.alpha;
  StepTerms terms;
  int active = 0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (!targets.active[j]) continue;
    ++active;
    Grid<double>& p = preds.heatmaps[j].values;
    const Grid<double>& t = targets.heatmaps[j].values;
    if (targets.type == HeatmapType::binary) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < p.size(); ++c) {
        const double z = p.data()[c], y = t.data()[c];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        p.data()[c] = z - lr * (sigmoid(z) - y);
      }
      terms.heatmap += acc / static_cast<double>(p.size());
    } else {
      const Grid<double> d = p - t;
      terms.heatmap += d.square().mean();
      p -= (2.0 * lr) * d;
    }

    if (cfg.offset_loss == OffsetLoss::none) continue;
    const Grid<double>& m = masks[j];
    const double norm = m.sum() + kMaskMassEpsilon;
    const Box& box = boxes[j];
    OffsetField& o = preds.offsets[j];
    const OffsetField& ot = targets.offsets[j];
    double acc = 0.0;
    for (Eigen::Index y = box.y0; y < box.y0 + box.rows; ++y) {
      for (Eigen::Index x = box.x0; x < box.x0 + box.cols; ++x) {
        const double w = m(y, x);
        if (w <= 0.0) continue;
        const double ex = o.dx(y, x) - ot.dx(y, x);
        const double ey = o.dy(y, x) - ot.dy(y, x);
        const double step = lr * alpha * w / norm;
        switch (cfg.offset_loss) {
          case OffsetLoss::l1:
            acc += w * (std::abs(ex) + std::abs(ey));
            o.dx(y, x) = ot.dx(y, x) + soft_threshold(ex, step);
            o.dy(y, x) = ot.dy(y, x) + soft_threshold(ey, step);
            break;
          case OffsetLoss::smooth_l1: {
            auto rho = [](double e) { return std::abs(e) < kSmoothL1Beta ? 0.5 * e * e / kSmoothL1Beta
                                                                          : std::abs(e) - 0.5 * kSmoothL1Beta; };
            auto slope = [](double e) {
              return std::abs(e) < kSmoothL1Beta ? e / kSmoothL1Beta : (e > 0.0 ? 1.0 : -1.0);
            };
            acc += w * (rho(ex) + rho(ey));
            o.dx(y, x) -= step * slope(ex);
            o.dy(y, x) -= step * slope(ey);
            break;
          }
          case OffsetLoss::l2:
            acc += w * (ex * ex + ey * ey);
            o.dx(y, x) -= step * 2.0 * ex;
            o.dy(y, x) -= step * 2.0 * ey;
            break;
          case OffsetLoss::none:
            break;
        }
      }
    }
    terms.offset += acc / norm;
  }
  terms.heatmap /= active;
  terms.offset /= active;
  return terms;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DecodeSummary summarize_decoding(const Batch& batch, const BatchTargets& targets, const BatchPrediction& preds,
                                 bool use_offsets) {
  DecodeSummary s;
  std::vector<double> errors, offset_errors;
  double axis_sum = 0.0;
  const int k = batch.joint_count();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int j = 0; j < k; ++j) {
      const std::size_t idx = i * k + j;
      if (!targets.active[idx]) continue;
      const Vec2 y = batch.joint(i, j).position;
      const DecodedJoint d = use_offsets ? decode_with_offset(preds.heatmaps[idx], preds.offsets[idx])
                                         : decode_argmax_only(preds.heatmaps[idx]);
      const Vec2 err = to_input_coords(d.position - y, batch.grid);
      errors.push_back(err.norm());
      axis_sum += std::abs(err.x()) + std::abs(err.y());
      offset_errors.push_back((d.position - y).norm());
    }
  }
  s.joints = static_cast<int>(errors.size());
  if (s.joints == 0) return s;
  double sum = 0.0, osum = 0.0;
  for (double e : errors) sum += e;
  for (double e : offset_errors) osum += e;
  s.mean_error_px = sum / s.joints;
  s.max_error_px = *std::max_element(errors.begin(), errors.end());
  s.mean_axis_error_px = axis_sum / (2.0 * s.joints);
  s.mean_offset_error = osum / s.joints;
  s.median_error_px = median(std::move(errors));
  s.median_offset_error = median(std::move(offset_errors));
  return s;
}

RunReport train_toy(const Batch& batch, const BatchPrediction& init, const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  batch.validate();
  if (!(batch.grid == cfg.grid)) throw std::invalid_argument("train_toy: batch grid differs from config grid");
  const BatchTargets targets = encode_batch(batch, cfg.heatmap_type, cfg.encode_params());
  if (targets.active_count() == 0) throw std::invalid_argument("train_toy: no labeled joints in batch");
  if (init.heatmaps.size() != targets.size() || init.offsets.size() != targets.size())
    throw std::invalid_argument("train_toy: initial predictions do not match the batch");
  for (std::size_t j = 0; j < init.size(); ++j)
    if (!init.heatmaps[j].shape_matches() || !init.offsets[j].shape_matches() || !(init.heatmaps[j].grid == cfg.grid))
      throw std::invalid_argument("train_toy: initial prediction shape does not match the grid");

  RunReport report;
  report.config = cfg;
  report.final_predictions = init;
  BatchPrediction& preds = report.final_predictions;

  std::vector<Grid<double>> target_masks, binary_masks;
  target_masks.reserve(targets.size());
  for (const auto& h : targets.heatmaps) target_masks.push_back(h.values);
  if (cfg.offset_mask == MaskType::binary) {
    binary_masks.reserve(targets.size());
    for (const auto& b : targets.binary) binary_masks.push_back(b.values);
  }
  const std::vector<Box> target_boxes = support_boxes(target_masks);
  const std::vector<Box> binary_boxes = support_boxes(binary_masks);
  std::vector<Box> mgm_boxes;

  const int k = cfg.components();
  const int total_steps = cfg.stage1_steps + cfg.stage2_steps;
  report.steps.reserve(total_steps);
  MaskSet mgm;
  for (int step = 0; step < total_steps; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.stage = step < cfg.stage1_steps ? 1 : 2;
    std::span<const Grid<double>> masks = target_masks;
    std::span<const Box> boxes = target_boxes;
    if (rec.stage == 2) {
      if (cfg.offset_mask == MaskType::binary) {
        masks = binary_masks;
        boxes = binary_boxes;
      } else if (cfg.offset_mask == MaskType::mgm) {
        const auto disps = collect_displacements(preds.heatmaps, batch);
        rec.displacements = static_cast<int>(disps.size());
        if (disps.size() < 10u * static_cast<std::size_t>(k)) {
          rec.mask_fallback = true;
          ++report.mask_fallbacks;
        } else {
          EmConfig em;
          em.seed = cfg.seed * 1000003u + static_cast<std::uint64_t>(step);
          const GaussianMixture g = em_fit(disps, k, em);
          mgm = make_mask_set(sample_stencil(g, cfg.stencil_radius()), batch);
          masks = mgm.masks;
          mgm_boxes = support_boxes(mgm.masks);
          boxes = mgm_boxes;
          const bool first = step == cfg.stage1_steps, last = step + 1 == total_steps;
          const bool periodic = cfg.snapshot_every > 0 && (step - cfg.stage1_steps) % cfg.snapshot_every == 0;
          if (first || last || periodic) report.mixtures.push_back({step, g});
        }
      }
    }
    const StepTerms terms = descend(targets, preds, masks, boxes, cfg);
    rec.heatmap_term = terms.heatmap;
    rec.offset_term = terms.offset;
    rec.total = terms.heatmap + cfg.alpha * terms.offset;
    if (!std::isfinite(rec.total))
      throw std::runtime_error("train_toy: loss diverged at step " + std::to_string(step));
    report.steps.push_back(rec);
  }

  const bool use_offsets = cfg.offset_loss != OffsetLoss::none;
  report.final_decode = summarize_decoding(batch, targets, preds, use_offsets);

  const auto kappas = default_kappas(batch.joint_count());
  const int kj = batch.joint_count();
  double oks_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.samples[i].labeled_count() == 0) continue;
    std::vector<Vec2> pred(kj);
    for (int j = 0; j < kj; ++j) {
      const std::size_t idx = i * kj + j;
      const DecodedJoint d = use_offsets ? decode_with_offset(preds.heatmaps[idx], preds.offsets[idx])
                                         : decode_argmax_only(preds.heatmaps[idx]);
      pred[j] = to_input_coords(d.position, batch.grid);
    }
    report.evals.push_back(evaluate_instance(pred, batch.samples[i], batch.grid, kappas));
    oks_sum += report.evals.back().oks;
  }
  if (!report.evals.empty()) {
    report.ap = ap_ar(report.evals);
    report.mean_oks = oks_sum / static_cast<double>(report.evals.size());
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

RunReport train_toy(const Batch& batch, const PipelineConfig& cfg) {
  batch.validate();
  return train_toy(batch, BatchPrediction::zeros(batch.grid, batch.size() * batch.joint_count()), cfg);
}

SyntheticScene make_scene(const PipelineConfig& cfg, const SceneOptions& scene) {
  SynthOptions so;
  so.joints = scene.joints;
  so.encode = cfg.encode_params();
  so.offset_noise = scene.offset_noise;
  return synth_scene(scene.samples, cfg.grid, scene.noise_cov, scene.pixel_noise, cfg.seed, so);
}

Resolution parse_resolution(std::string_view s) {
  const auto x = s.find('x');
  if (x == std::string_view::npos) throw std::invalid_argument("resolution must look like WxH");
  try {
    std::size_t used = 0;
    const std::string ws(s.substr(0, x)), hs(s.substr(x + 1));
    Resolution r{std::stoi(ws, &used), 0};
    if (used != ws.size()) throw std::invalid_argument("");
    r.height = std::stoi(hs, &used);
    if (used != hs.size()) throw std::invalid_argument("");
    if (r.width <= 0 || r.height <= 0) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad resolution '" + std::string(s) + "'");
  }
}

PipelineConfig apply_mode(PipelineConfig cfg, std::string_view mode) {
  if (mode == "heatmap") {
    cfg.heatmap_type = HeatmapType::plain_gaussian;
    cfg.offset_loss = OffsetLoss::none;
    cfg.offset_mask = MaskType::target;
  } else if (mode == "udp") {
    cfg.heatmap_type = HeatmapType::binary;
    cfg.offset_loss = OffsetLoss::smooth_l1;
    cfg.offset_mask = MaskType::binary;
  } else if (mode == "cal") {
    cfg.heatmap_type = HeatmapType::gaussian_weighted;
    cfg.offset_loss = OffsetLoss::l1;
    cfg.offset_mask = MaskType::mgm;
  } else {
    throw std::invalid_argument("unknown mode '" + std::string(mode) + "' (expected heatmap, udp or cal)");
  }
  return cfg;
}

std::vector<SweepRow> sweep_resolution(const PipelineConfig& base, std::span<const Resolution> resolutions,
                                       std::span<const std::string> modes, const SceneOptions& scene,
                                       int heatmap_stride) {
  if (resolutions.size() < 2) throw std::invalid_argument("sweep_resolution: need at least two resolutions");
  if (modes.empty()) throw std::invalid_argument("sweep_resolution: no modes");
  if (heatmap_stride < 1) throw std::invalid_argument("sweep_resolution: heatmap stride must be >= 1");
  int ref_width = 0;
  for (const auto& r : resolutions) {
    if (r.width % heatmap_stride || r.height % heatmap_stride)
      throw std::invalid_argument("sweep_resolution: resolution not divisible by the heatmap stride");
    ref_width = std::max(ref_width, r.width);
  }
  for (const auto& m : modes) (void)apply_mode(base, m);

  std::vector<SweepRow> rows;
  for (const auto& r : resolutions) {
    PipelineConfig cfg = base;
    const int gw = r.width / heatmap_stride;
    cfg.grid = GridSpec(gw, r.height / heatmap_stride, static_cast<double>(ref_width) / gw);
    const SyntheticScene sc = make_scene(cfg, scene);
    for (const auto& m : modes) {
      const RunReport rep = train_toy(sc.batch, sc.predictions, apply_mode(cfg, m));
      rows.push_back({r, cfg.grid, m, rep.final_decode.mean_error_px, rep.final_decode.mean_axis_error_px,
                      rep.mean_oks, rep.ap.ap});
    }
  }
  return rows;
}

std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::mask_type: return "mask-type";
    case AblationAxis::heatmap_type: return "heatmap-type";
    case AblationAxis::loss_type: return "loss-type";
    case AblationAxis::strategy: return "strategy";
    case AblationAxis::components: return "components";
  }
  return "unknown";
}

AblationAxis parse_ablation_axis(std::string_view s) {
  if (s == "mask-type") return AblationAxis::mask_type;
  if (s == "heatmap-type") return AblationAxis::heatmap_type;
  if (s == "loss-type") return AblationAxis::loss_type;
  if (s == "strategy") return AblationAxis::strategy;
  if (s == "components") return AblationAxis::components;
  throw std::invalid_argument("unknown ablation axis '" + std::string(s) + "'");
}

std::vector<Variant> ablation_variants(AblationAxis axis, const PipelineConfig& base) {
  std::vector<Variant> v;
  auto with = [&](std::string label, auto&& edit) {
    PipelineConfig c = base;
    edit(c);
    v.push_back({std::move(label), c});
  };
  switch (axis) {
    case AblationAxis::mask_type:
      with("binary", [](PipelineConfig& c) { c.offset_mask = MaskType::binary; });
      with("MGM", [](PipelineConfig& c) { c.offset_mask = MaskType::mgm; });
      break;
    case AblationAxis::heatmap_type:
      with("binary", [](PipelineConfig& c) { c.heatmap_type = HeatmapType::binary; });
      with("gaussian-weighted", [](PipelineConfig& c) { c.heatmap_type = HeatmapType::gaussian_weighted; });
      break;
    case AblationAxis::loss_type:
      with("L2", [](PipelineConfig& c) { c.offset_loss = OffsetLoss::l2; });
      with("SmoothL1", [](PipelineConfig& c) { c.offset_loss = OffsetLoss::smooth_l1; });
      with("L1", [](PipelineConfig& c) { c.offset_loss = OffsetLoss::l1; });
      break;
    case AblationAxis::strategy:
      with("one-stage", [](PipelineConfig& c) {
        c.stage2_steps += c.stage1_steps;
        c.stage1_steps = 0;
      });
      with("two-stage", [](PipelineConfig&) {});
      break;
    case AblationAxis::components:
      for (int k = 1; k <= 3; ++k)
        with(std::to_string(k), [k](PipelineConfig& c) { c.gmm_components = k; });
      break;
  }
  return v;
}

std::vector<AblationRow> run_variants(std::string_view axis, std::span<const Variant> variants,
                                      const SceneOptions& scene) {
  std::vector<AblationRow> rows;
  if (variants.empty()) return rows;
  const SyntheticScene sc = make_scene(variants.front().config, scene);
  for (const auto& v : variants) {
    if (!(v.config.grid == sc.batch.grid) || v.config.seed != variants.front().config.seed)
      throw std::invalid_argument("run_variants: variants must share grid and seed");
    const RunReport r = train_toy(sc.batch, sc.predictions, v.config);
    rows.push_back({std::string(axis), v.label, r.final_decode.mean_error_px, r.final_decode.mean_offset_error,
                    r.mean_oks, r.ap.ap, r.steps.empty() ? 0.0 : r.steps.back().total});
  }
  return rows;
}

std::vector<AblationRow> run_ablation(AblationAxis axis, const PipelineConfig& base, const SceneOptions& scene) {
  const auto variants = ablation_variants(axis, base);
  return run_variants(to_string(axis), variants, scene);
}

nlohmann::json to_json(const PipelineConfig& cfg) {
  return {{"grid", to_json(cfg.grid)},
          {"sigma", cfg.sigma},
          {"radius", cfg.radius},
          {"alpha", cfg.alpha},
          {"heatmap_type", to_string(cfg.heatmap_type)},
          {"offset_loss", to_string(cfg.offset_loss)},
          {"offset_mask", to_string(cfg.offset_mask)},
          {"gmm_components", cfg.components()},
          {"stage1_steps", cfg.stage1_steps},
          {"stage2_steps", cfg.stage2_steps},
          {"learning_rate", cfg.learning_rate},
          {"seed", cfg.seed}};
}

nlohmann::json report_to_json(const RunReport& r, bool include_timing) {
  const DecodeSummary& d = r.final_decode;
  nlohmann::json mixtures = nlohmann::json::array();
  for (const auto& m : r.mixtures) mixtures.push_back({{"step", m.step}, {"mixture", to_json(m.mixture)}});
  nlohmann::json j = {
      {"schema", "cal.run_report"},
      {"schema_version", kSchemaVersion},
      {"config", to_json(r.config)},
      {"steps", r.steps.size()},
      {"final_loss", r.steps.empty() ? 0.0 : r.steps.back().total},
      {"mask_fallbacks", r.mask_fallbacks},
      // How the loss terms are reduced; recorded so runs with other conventions are not mixed up.
      {"normalization",
       {{"heatmap", "mean over cells"}, {"offset", "masked sum / (mask mass + 1e-12)"}, {"joints", "mean over active"}}},
      {"decode",
       {{"joints", d.joints},
        {"mean_error_px", d.mean_error_px},
        {"median_error_px", d.median_error_px},
        {"max_error_px", d.max_error_px},
        {"mean_axis_error_px", d.mean_axis_error_px},
        {"mean_offset_error_cells", d.mean_offset_error},
        {"median_offset_error_cells", d.median_offset_error}}},
      {"oks", {{"mean", r.mean_oks}, {"ap", r.ap.ap}, {"ar", r.ap.ar}, {"thresholds", r.ap.thresholds},
               {"precision", r.ap.precision}, {"recall", r.ap.recall}}},
      {"mixtures", mixtures}};
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

void write_losses_csv(std::ostream& os, const RunReport& r) {
  os << "schema_version,step,stage,total,heatmap_term,offset_term,displacements,mask_fallback\n";
  for (const auto& s : r.steps) {
    os << kSchemaVersion << ',' << s.step << ',' << s.stage << ',' << format_double(s.total) << ','
       << format_double(s.heatmap_term) << ',' << format_double(s.offset_term) << ',' << s.displacements << ','
       << (s.mask_fallback ? 1 : 0) << '\n';
  }
}

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "schema_version,input_width,input_height,grid_width,grid_height,stride,mode,mean_error_px,"
        "mean_axis_error_px,mean_oks,ap\n";
  for (const auto& r : rows) {
    os << kSchemaVersion << ',' << r.input.width << ',' << r.input.height << ',' << r.grid.width << ','
       << r.grid.height << ',' << format_double(r.grid.stride) << ',' << csv_escape(r.mode) << ','
       << format_double(r.mean_error_px) << ',' << format_double(r.mean_axis_error_px) << ','
       << format_double(r.mean_oks) << ',' << format_double(r.ap) << '\n';
  }
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "schema_version,axis,variant,mean_error_px,mean_offset_error_cells,mean_oks,ap,final_loss\n";
  for (const auto& r : rows) {
    os << kSchemaVersion << ',' << csv_escape(r.axis) << ',' << csv_escape(r.variant) << ','
       << format_double(r.mean_error_px) << ',' << format_double(r.mean_offset_error) << ','
       << format_double(r.mean_oks) << ',' << format_double(r.ap) << ',' << format_double(r.final_loss) << '\n';
  }
}

}  // namespace cal
