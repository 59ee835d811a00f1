#include "cal/ingest.hpp"

#include <cmath>
#include <fstream>
#include <algorithm>
#include <random>
#include <set>

namespace cal {
namespace {

double number_at(const nlohmann::json& arr, std::size_t i, const std::string& record) {
  const auto& v = arr.at(i);
  if (!v.is_number()) throw ParseError(record, "element " + std::to_string(i) + " is not a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(record, "element " + std::to_string(i) + " is not finite");
  return d;
}

const nlohmann::json& require_field(const nlohmann::json& obj, const char* key, const std::string& record) {
  if (!obj.is_object()) throw ParseError(record, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(record, std::string("missing field '") + key + "'");
  return *it;
}

Visibility visibility_from_coco(double v, const std::string& record) {
  if (v == 0.0) return Visibility::unlabeled;
  if (v == 1.0) return Visibility::labeled_invisible;
  if (v == 2.0) return Visibility::labeled_visible;
  throw ParseError(record, "visibility flag must be 0, 1 or 2");
}

}  // namespace

std::vector<Sample> parse_coco_keypoints(const nlohmann::json& doc, const GridSpec& grid,
                                         std::optional<std::size_t> limit, int joints) {
  grid.validate();
  if (joints < 1) throw std::invalid_argument("parse_coco_keypoints: joints must be >= 1");
  if (!doc.is_object()) throw ParseError("document", "expected a JSON object");
  const auto& images = require_field(doc, "images", "document");
  const auto& annotations = require_field(doc, "annotations", "document");
  if (!images.is_array()) throw ParseError("images", "expected an array");
  if (!annotations.is_array()) throw ParseError("annotations", "expected an array");

  std::set<std::int64_t> image_ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string rec = "images[" + std::to_string(i) + "]";
    const auto& id = require_field(images[i], "id", rec);
    if (!id.is_number_integer()) throw ParseError(rec + ".id", "expected an integer");
    image_ids.insert(id.get<std::int64_t>());
  }

  const std::size_t expected = 3u * static_cast<std::size_t>(joints);
  const Vec2 extent = grid.input_extent();
  std::vector<Sample> out;
  for (std::size_t a = 0; a < annotations.size(); ++a) {
    if (limit && out.size() >= *limit) break;
    const std::string rec = "annotations[" + std::to_string(a) + "]";
    const auto& ann = annotations[a];
    const auto& image_id = require_field(ann, "image_id", rec);
    if (!image_id.is_number_integer()) throw ParseError(rec + ".image_id", "expected an integer");
    if (!image_ids.count(image_id.get<std::int64_t>()))
      throw ParseError(rec + ".image_id", "refers to an unknown image");
    const auto& kps = require_field(ann, "keypoints", rec);
    if (!kps.is_array() || kps.size() != expected)
      throw ParseError(rec + ".keypoints", "expected " + std::to_string(expected) + " numbers");
    const auto& bbox = require_field(ann, "bbox", rec);
    if (!bbox.is_array() || bbox.size() != 4) throw ParseError(rec + ".bbox", "expected [x, y, w, h]");
    CropBox box{number_at(bbox, 0, rec + ".bbox"), number_at(bbox, 1, rec + ".bbox"),
                number_at(bbox, 2, rec + ".bbox"), number_at(bbox, 3, rec + ".bbox")};
    if (!(box.w > 0.0) || !(box.h > 0.0)) throw ParseError(rec + ".bbox", "width and height must be positive");

    Sample s;
    s.image_id = image_id.get<std::int64_t>();
    if (const auto it = ann.find("id"); it != ann.end() && it->is_number_integer())
      s.source_id = std::to_string(it->get<std::int64_t>());
    else
      s.source_id = rec;
    s.crop = box;
    s.bbox_area = extent.x() * extent.y();
    s.joints.resize(joints);
    for (int k = 0; k < joints; ++k) {
      const std::string krec = rec + ".keypoints";
      JointTarget& j = s.joints[k];
      j.joint_index = k;
      const double x = number_at(kps, 3 * k, krec);
      const double y = number_at(kps, 3 * k + 1, krec);
      j.visibility = visibility_from_coco(number_at(kps, 3 * k + 2, krec), krec);
      if (!j.labeled()) continue;
      j.position = {(x - box.x) * grid.width / box.w, (y - box.y) * grid.height / box.h};
      j.in_bounds = grid.contains(j.position);
    }
    if (s.labeled_count() == 0) continue;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_coco_keypoints(const std::filesystem::path& path, const GridSpec& grid,
                                        std::optional<std::size_t> limit, int joints) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), e.what());
  }
  return parse_coco_keypoints(doc, grid, limit, joints);
}

nlohmann::json to_coco_document(std::span<const Sample> samples, const GridSpec& grid) {
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  std::set<std::int64_t> seen;
  std::int64_t next_id = 1;
  for (const Sample& s : samples) {
    if (!s.crop) throw std::invalid_argument("to_coco_document: sample '" + s.source_id + "' has no crop box");
    if (seen.insert(s.image_id).second) images.push_back({{"id", s.image_id}});
    const CropBox& box = *s.crop;
    nlohmann::json kps = nlohmann::json::array();
    int labeled = 0;
    for (const JointTarget& j : s.joints) {
      if (!j.labeled()) {
        kps.insert(kps.end(), {0.0, 0.0, 0});
        continue;
      }
      ++labeled;
      kps.push_back(box.x + j.position.x() * box.w / grid.width);
      kps.push_back(box.y + j.position.y() * box.h / grid.height);
      kps.push_back(static_cast<int>(j.visibility));
    }
    std::int64_t id = next_id;
    try {
      std::size_t used = 0;
      const long long parsed = std::stoll(s.source_id, &used);
      if (used == s.source_id.size()) id = parsed;
    } catch (const std::exception&) {
    }
    next_id = std::max(next_id, id) + 1;
    annotations.push_back({{"id", id},
                           {"image_id", s.image_id},
                           {"category_id", 1},
                           {"num_keypoints", labeled},
                           {"bbox", {box.x, box.y, box.w, box.h}},
                           {"keypoints", kps}});
  }
  return {{"images", images}, {"annotations", annotations}};
}

SyntheticScene synth_scene(int n, const GridSpec& grid, const Eigen::Matrix2d& noise_cov, double pixel_noise,
                           std::uint64_t seed, const SynthOptions& options) {
  grid.validate();
  if (n < 1) throw std::invalid_argument("synth_scene: n must be >= 1");
  if (options.joints < 1) throw std::invalid_argument("synth_scene: joints must be >= 1");
  if (!(pixel_noise >= 0.0) || !(options.offset_noise >= 0.0))
    throw std::invalid_argument("synth_scene: noise amplitudes must be non-negative");
  if (std::abs(noise_cov(0, 1) - noise_cov(1, 0)) > 1e-12)
    throw std::invalid_argument("synth_scene: noise covariance must be symmetric");
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(noise_cov);
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("synth_scene: noise covariance must be positive semi-definite");
  // delta = L z with L L^T = noise_cov; valid for singular covariances too.
  const Eigen::Matrix2d factor =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  // Positions and noise come from separate streams so the same seed places the
  // same relative joint layout on any grid.
  std::seed_seq position_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
  std::seed_seq noise_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 2u};
  std::mt19937_64 position_rng(position_seq);
  std::mt19937_64 noise_rng(noise_seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int k = options.joints;
  SyntheticScene scene;
  scene.batch.grid = grid;
  scene.batch.samples.resize(n);
  const Vec2 extent = grid.input_extent();
  for (int i = 0; i < n; ++i) {
    Sample& s = scene.batch.samples[i];
    s.source_id = "synth-" + std::to_string(i);
    s.image_id = i;
    s.bbox_area = extent.x() * extent.y();
    s.crop = CropBox{0.0, 0.0, extent.x(), extent.y()};
    s.joints.resize(k);
    for (int j = 0; j < k; ++j) {
      JointTarget& jt = s.joints[j];
      jt.joint_index = j;
      jt.visibility = Visibility::labeled_visible;
      const double u = unit(position_rng), v = unit(position_rng);
      jt.position = {1.0 + u * (grid.width - 3.0), 1.0 + v * (grid.height - 3.0)};
    }
  }

  scene.predictions.heatmaps.reserve(static_cast<std::size_t>(n) * k);
  scene.predictions.offsets.reserve(static_cast<std::size_t>(n) * k);
  scene.injected.reserve(static_cast<std::size_t>(n) * k);
  for (const Sample& s : scene.batch.samples) {
    for (const JointTarget& jt : s.joints) {
      const Vec2 z(normal(noise_rng), normal(noise_rng));
      const Vec2 delta = factor * z;
      scene.injected.push_back(delta);

      JointTarget shifted = jt;
      shifted.position += delta;
      Heatmap hm = encode_gaussian(shifted, grid, options.encode.sigma);
      if (pixel_noise > 0.0)
        for (Eigen::Index c = 0; c < hm.values.size(); ++c)
          hm.values.data()[c] += pixel_noise * (2.0 * unit(noise_rng) - 1.0);
      scene.predictions.heatmaps.push_back(std::move(hm));

      OffsetField of = encode_offsets(jt, grid, options.encode.radius);
      if (options.offset_noise > 0.0) {
        for (Eigen::Index c = 0; c < of.dx.size(); ++c) {
          of.dx.data()[c] += options.offset_noise * normal(noise_rng);
          of.dy.data()[c] += options.offset_noise * normal(noise_rng);
        }
      }
      scene.predictions.offsets.push_back(std::move(of));
    }
  }
  return scene;
}

}  // namespace cal
