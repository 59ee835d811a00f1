#include "cal/cli.hpp"

#include "cal/codec.hpp"
#include "cal/gmm.hpp"
#include "cal/harness.hpp"
#include "cal/ingest.hpp"
#include "cal/io.hpp"
#include "cal/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace cal {
namespace {

namespace fs = std::filesystem;

// Thrown for argument combinations CLI11 cannot check on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OutputSink {
  std::string dir;
  std::ostream* out = nullptr;

  std::optional<fs::path> resolve() const {
    if (!dir.empty()) return fs::path(dir);
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return fs::path(env);
    return std::nullopt;
  }

  // Writes `name` under the output directory, or prints it when there is none.
  void emit(const std::string& name, const std::string& text, bool print_if_no_dir = true) const {
    if (const auto d = resolve()) {
      write_text_file(*d / name, text);
    } else if (print_if_no_dir) {
      *out << text;
    }
  }
};

struct GridFlags {
  int width = 32;
  int height = 24;
  double stride = 4.0;

  void add(CLI::App* app) {
    app->add_option("--width", width, "Heatmap width in cells")->capture_default_str();
    app->add_option("--height", height, "Heatmap height in cells")->capture_default_str();
    app->add_option("--stride", stride, "Input pixels per heatmap cell")->capture_default_str();
  }
  GridSpec grid() const { return GridSpec(width, height, stride); }
};

struct PipelineFlags {
  GridFlags grid;
  double sigma = 2.0;
  double radius = 4.0;
  double alpha = 1.0;
  std::string heatmap_type = "gaussian-weighted";
  std::string offset_loss = "L1";
  std::string offset_mask = "MGM";
  int components = 0;
  int stage1_steps = 1500;
  int stage2_steps = 500;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  // scene
  int samples = 64;
  int joints = kDefaultJointCount;
  double noise_var = 1.0;
  double pixel_noise = 0.05;
  double offset_noise = 0.25;

  void add(CLI::App* app, bool with_grid = true) {
    if (with_grid) grid.add(app);
    app->add_option("--sigma", sigma, "Gaussian spread (cells)")->capture_default_str();
    app->add_option("--radius", radius, "Disc radius R (cells)")->capture_default_str();
    app->add_option("--alpha", alpha, "Offset loss weight")->capture_default_str();
    app->add_option("--heatmap-type", heatmap_type, "binary | gaussian-weighted | plain-gaussian")
        ->capture_default_str();
    app->add_option("--offset-loss", offset_loss, "L1 | SmoothL1 | L2 | none")->capture_default_str();
    app->add_option("--offset-mask", offset_mask, "binary | target-G | MGM")->capture_default_str();
    app->add_option("--components", components, "GMM components (0 = by resolution)")->capture_default_str();
    app->add_option("--stage1-steps", stage1_steps)->capture_default_str();
    app->add_option("--stage2-steps", stage2_steps)->capture_default_str();
    app->add_option("--lr", learning_rate, "Learning rate (both stages)")->capture_default_str();
    app->add_option("--seed", seed, "Seed for all randomness")->capture_default_str();
    app->add_option("--samples", samples, "Synthetic batch size")->capture_default_str();
    app->add_option("--joints", joints, "Joints per sample")->capture_default_str();
    app->add_option("--noise-var", noise_var, "Injected displacement variance per axis (cells^2)")
        ->capture_default_str();
    app->add_option("--pixel-noise", pixel_noise, "Uniform cell noise amplitude on predicted heatmaps")
        ->capture_default_str();
    app->add_option("--offset-noise", offset_noise, "Std of predicted offset noise (cells)")->capture_default_str();
  }

  PipelineConfig config() const {
    PipelineConfig c;
    c.grid = grid.grid();
    c.sigma = sigma;
    c.radius = radius;
    c.alpha = alpha;
    try {
      c.heatmap_type = parse_heatmap_type(heatmap_type);
      c.offset_loss = parse_offset_loss(offset_loss);
      c.offset_mask = parse_mask_type(offset_mask);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    c.gmm_components = components;
    c.stage1_steps = stage1_steps;
    c.stage2_steps = stage2_steps;
    c.learning_rate = learning_rate;
    c.seed = seed;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  SceneOptions scene() const {
    if (samples < 1 || joints < 1) throw UsageError("--samples and --joints must be >= 1");
    if (!(noise_var >= 0.0)) throw UsageError("--noise-var must be >= 0");
    SceneOptions s;
    s.samples = samples;
    s.joints = joints;
    s.noise_cov = noise_var * Eigen::Matrix2d::Identity();
    s.pixel_noise = pixel_noise;
    s.offset_noise = offset_noise;
    return s;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string json_line(const nlohmann::json& j) { return j.dump() + "\n"; }

// --- encode ----------------------------------------------------------------

struct EncodeCmd {
  GridFlags grid;
  double x = 0.0, y = 0.0;
  double sigma = 2.0, radius = 4.0;
  std::string type = "gaussian-weighted";

  void add(CLI::App* app) {
    grid.add(app);
    app->add_option("--x", x, "Joint x (heatmap cells)")->required();
    app->add_option("--y", y, "Joint y (heatmap cells)")->required();
    app->add_option("--sigma", sigma)->capture_default_str();
    app->add_option("--radius", radius)->capture_default_str();
    app->add_option("--type", type, "binary | gaussian-weighted | plain-gaussian")->capture_default_str();
  }

  void run(const OutputSink& sink) const {
    HeatmapType t;
    try {
      t = parse_heatmap_type(type);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (!(sigma > 0.0) || !(radius > 0.0)) throw UsageError("--sigma and --radius must be positive");
    const GridSpec g = grid.grid();
    JointTarget j;
    j.position = {x, y};
    j.visibility = Visibility::labeled_visible;
    const Heatmap hm = encode_heatmap(t, j, g, {sigma, radius});
    const OffsetField of = encode_offsets(j, g, radius);
    sink.emit("encoding.json", encoding_to_json(hm, of).dump(2) + "\n");
  }
};

// --- decode ----------------------------------------------------------------

struct DecodeCmd {
  std::string in;
  bool argmax_only = false;

  void add(CLI::App* app) {
    app->add_option("--in", in, "Encoding JSON (heatmap + offset field)")->required();
    app->add_flag("--argmax-only", argmax_only, "Ignore the offset field");
  }

  void run(const OutputSink& sink) const {
    const EncodedJoint e = encoding_from_json(read_json_file(in));
    const DecodedJoint d = argmax_only ? decode_argmax_only(e.heatmap) : decode_with_offset(e.heatmap, e.offsets);
    const Vec2 q = to_input_coords(d.position, e.heatmap.grid);
    const nlohmann::json j = {{"x", d.position.x()},   {"y", d.position.y()},
                              {"input_x", q.x()},      {"input_y", q.y()},
                              {"cell", {d.cell.x, d.cell.y}}, {"score", d.score}};
    *sink.out << json_line(j);
    if (sink.resolve()) sink.emit("decode.json", j.dump(2) + "\n", false);
  }
};

// --- fit-gmm ---------------------------------------------------------------

struct FitGmmCmd {
  std::string in;
  int k = 1;
  int stencil_radius = 4;
  std::uint64_t seed = 0;
  int max_iterations = 200;
  double tolerance = 1e-6;

  void add(CLI::App* app) {
    app->add_option("--in", in, "Displacement list JSON")->required();
    app->add_option("--k", k, "Mixture components")->capture_default_str();
    app->add_option("--stencil-radius", stencil_radius, "IMGM stencil radius")->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--max-iter", max_iterations)->capture_default_str();
    app->add_option("--tol", tolerance)->capture_default_str();
  }

  void run(const OutputSink& sink) const {
    if (k < 1 || stencil_radius < 1 || max_iterations < 0) throw UsageError("--k and --stencil-radius must be >= 1");
    const auto samples = displacements_from_json(read_json_file(in));
    EmConfig cfg;
    cfg.seed = seed;
    cfg.max_iterations = max_iterations;
    cfg.tolerance = tolerance;
    const EmFit fit = em_fit_traced(samples, k, cfg);
    const nlohmann::json j = {{"schema", "cal.gmm_fit"},
                              {"schema_version", kSchemaVersion},
                              {"samples", samples.size()},
                              {"k", k},
                              {"seed", seed},
                              {"iterations", fit.iterations},
                              {"converged", fit.converged},
                              {"log_likelihood", fit.log_likelihood},
                              {"mixture", to_json(fit.mixture)},
                              {"stencil", to_json(sample_stencil(fit.mixture, stencil_radius))}};
    sink.emit("mixture.json", j.dump(2) + "\n");
  }
};

// --- train-toy -------------------------------------------------------------

struct TrainCmd {
  PipelineFlags flags;
  std::string coco;
  std::size_t limit = 0;
  bool timing = false;

  void add(CLI::App* app) {
    flags.add(app);
    app->add_option("--coco", coco, "Train on COCO keypoint annotations instead of a synthetic scene");
    app->add_option("--limit", limit, "Maximum annotations to load (0 = all)");
    app->add_flag("--timing", timing, "Include wall-clock time in the report");
  }

  void run(const OutputSink& sink) const {
    const PipelineConfig cfg = flags.config();
    Batch batch;
    BatchPrediction init;
    if (!coco.empty()) {
      batch.grid = cfg.grid;
      batch.samples = load_coco_keypoints(coco, cfg.grid, limit ? std::optional(limit) : std::nullopt, flags.joints);
      if (batch.samples.empty()) throw std::runtime_error("no usable annotations in '" + coco + "'");
      init = BatchPrediction::zeros(cfg.grid, batch.size() * batch.joint_count());
    } else {
      SyntheticScene sc = make_scene(cfg, flags.scene());
      batch = std::move(sc.batch);
      init = std::move(sc.predictions);
    }
    const RunReport r = train_toy(batch, init, cfg);

    std::ostringstream losses;
    write_losses_csv(losses, r);
    // Prediction ids follow the exported annotation ids so `eval` can pair them.
    const nlohmann::json gt = to_coco_document(batch.samples, cfg.grid);
    PredictionSet preds;
    preds.grid = cfg.grid;
    const int k = batch.joint_count();
    const bool offsets = cfg.offset_loss != OffsetLoss::none;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      preds.ids.push_back(std::to_string(gt["annotations"][i]["id"].get<std::int64_t>()));
      std::vector<Vec2> js;
      for (int j = 0; j < k; ++j) {
        const std::size_t idx = i * k + j;
        js.push_back(offsets ? decode_with_offset(r.final_predictions.heatmaps[idx], r.final_predictions.offsets[idx]).position
                             : decode_argmax_only(r.final_predictions.heatmaps[idx]).position);
      }
      preds.joints.push_back(std::move(js));
    }
    sink.emit("report.json", report_to_json(r, timing).dump(2) + "\n");
    sink.emit("losses.csv", losses.str(), false);
    sink.emit("predictions.json", predictions_to_json(preds).dump(2) + "\n", false);
    sink.emit("ground_truth.json", gt.dump(2) + "\n", false);
  }
};

// --- sweep -----------------------------------------------------------------

struct SweepCmd {
  PipelineFlags flags;
  std::string resolutions = "64x48,128x96,256x192";
  std::string modes = "heatmap,cal";
  int heatmap_stride = 4;

  void add(CLI::App* app) {
    flags.samples = 16;
    flags.stage1_steps = 600;
    flags.stage2_steps = 200;
    flags.add(app, false);
    app->add_option("--resolutions", resolutions, "Comma-separated input sizes WxH")->capture_default_str();
    app->add_option("--modes", modes, "Comma-separated subset of heatmap,udp,cal")->capture_default_str();
    app->add_option("--heatmap-stride", heatmap_stride, "Input pixels per heatmap cell")->capture_default_str();
  }

  void run(const OutputSink& sink) const {
    std::vector<Resolution> res;
    try {
      for (const auto& s : split_list(resolutions)) res.push_back(parse_resolution(s));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto mode_list = split_list(modes);
    PipelineConfig base = flags.config();
    for (const auto& m : mode_list) {
      try {
        (void)apply_mode(base, m);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    if (res.size() < 2) throw UsageError("--resolutions needs at least two entries");
    const auto rows = sweep_resolution(base, res, mode_list, flags.scene(), heatmap_stride);
    std::ostringstream os;
    write_sweep_csv(os, rows);
    sink.emit("sweep.csv", os.str());
  }
};

// --- ablate ----------------------------------------------------------------

struct AblateCmd {
  PipelineFlags flags;
  std::string axis;

  void add(CLI::App* app) {
    flags.samples = 16;
    flags.stage1_steps = 600;
    flags.stage2_steps = 200;
    flags.add(app);
    app->add_option("--axis", axis, "mask-type | heatmap-type | loss-type | strategy | components")->required();
  }

  void run(const OutputSink& sink) const {
    AblationAxis a;
    try {
      a = parse_ablation_axis(axis);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto rows = run_ablation(a, flags.config(), flags.scene());
    std::ostringstream os;
    write_ablation_csv(os, rows);
    sink.emit("ablation.csv", os.str());
  }
};

// --- eval ------------------------------------------------------------------

struct EvalCmd {
  std::string gt;
  std::string pred;
  int joints = kDefaultJointCount;
  std::string kappas;

  void add(CLI::App* app) {
    app->add_option("--gt", gt, "COCO keypoint annotations")->required();
    app->add_option("--pred", pred, "Predictions JSON (heatmap cells)")->required();
    app->add_option("--joints", joints)->capture_default_str();
    app->add_option("--kappas", kappas, "Comma-separated per-joint OKS constants");
  }

  void run(const OutputSink& sink) const {
    const PredictionSet p = predictions_from_json(read_json_file(pred));
    const auto samples = load_coco_keypoints(gt, p.grid, std::nullopt, joints);
    std::vector<double> k = default_kappas(joints);
    if (!kappas.empty()) {
      k.clear();
      try {
        for (const auto& s : split_list(kappas)) k.push_back(std::stod(s));
      } catch (const std::exception&) {
        throw UsageError("--kappas must be a list of numbers");
      }
    }
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < p.ids.size(); ++i) by_id[p.ids[i]] = i;
    std::vector<InstanceEval> evals;
    for (const Sample& s : samples) {
      const auto it = by_id.find(s.source_id);
      if (it == by_id.end()) throw std::runtime_error("no prediction for instance '" + s.source_id + "'");
      std::vector<Vec2> q;
      for (const auto& v : p.joints[it->second]) q.push_back(to_input_coords(v, p.grid));
      evals.push_back(evaluate_instance(q, s, p.grid, k));
    }
    const ApArReport r = ap_ar(evals);
    std::ostringstream csv;
    write_eval_csv(csv, evals);
    const nlohmann::json summary = {{"schema", "cal.eval_summary"},
                                    {"schema_version", kSchemaVersion},
                                    {"instances", evals.size()},
                                    {"ap", r.ap},
                                    {"ar", r.ar},
                                    {"thresholds", r.thresholds},
                                    {"precision", r.precision},
                                    {"recall", r.recall}};
    sink.emit("eval.csv", csv.str(), false);
    sink.emit("eval_summary.json", summary.dump(2) + "\n");
  }
};

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence-aware keypoint codec and toy trainer", "calkp"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI configuration file; flags override it");

  OutputSink sink;
  sink.out = &out;
  app.add_option("--out", sink.dir, std::string("Output directory (default: $") + kOutDirEnv + ", else stdout)");

  EncodeCmd encode;
  DecodeCmd decode;
  FitGmmCmd fit;
  TrainCmd train;
  SweepCmd sweep;
  AblateCmd ablate;
  EvalCmd eval;
  auto* c_encode = app.add_subcommand("encode", "Encode one joint into heatmap and offset targets");
  auto* c_decode = app.add_subcommand("decode", "Decode a serialized heatmap + offset pair");
  auto* c_fit = app.add_subcommand("fit-gmm", "Fit a Gaussian mixture to displacements and sample the IMGM");
  auto* c_train = app.add_subcommand("train-toy", "Two-stage toy training on free prediction tensors");
  auto* c_sweep = app.add_subcommand("sweep", "Decode error across input resolutions");
  auto* c_ablate = app.add_subcommand("ablate", "Compare pipeline variants along one axis");
  auto* c_eval = app.add_subcommand("eval", "OKS / AP / AR of predictions against COCO annotations");
  for (auto* c : {c_encode, c_decode, c_fit, c_train, c_sweep, c_ablate, c_eval}) c->configurable();
  encode.add(c_encode);
  decode.add(c_decode);
  fit.add(c_fit);
  train.add(c_train);
  sweep.add(c_sweep);
  ablate.add(c_ablate);
  eval.add(c_eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << json_line({{"error", {{"exit_code", kExitUsage}, {"kind", "usage"}, {"message", e.what()}}}});
    return kExitUsage;
  }

  try {
    if (c_encode->parsed()) encode.run(sink);
    else if (c_decode->parsed()) decode.run(sink);
    else if (c_fit->parsed()) fit.run(sink);
    else if (c_train->parsed()) train.run(sink);
    else if (c_sweep->parsed()) sweep.run(sink);
    else if (c_ablate->parsed()) ablate.run(sink);
    else if (c_eval->parsed()) eval.run(sink);
  } catch (const UsageError& e) {
    err << json_line({{"error", {{"exit_code", kExitUsage}, {"kind", "usage"}, {"message", e.what()}}}});
    return kExitUsage;
  } catch (const std::exception& e) {
    err << json_line({{"error", {{"exit_code", kExitRuntime}, {"kind", "runtime"}, {"message", e.what()}}}});
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace cal
