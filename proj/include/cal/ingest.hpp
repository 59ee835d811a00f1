#pragma once

#include "cal/codec.hpp"
#include "cal/geometry.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cal {

// Malformed annotation document. `record` names the offending entry,
// e.g. "annotations[3].keypoints".
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string record, const std::string& message)
      : std::runtime_error(record + ": " + message), record_(std::move(record)) {}
  const std::string& record() const { return record_; }

 private:
  std::string record_;
};

// Each annotation is its own crop: the bbox maps linearly onto the grid,
// x_cell = (x - bbox_x) * W / bbox_w and likewise for y. Labeled joints whose
// nearest cell falls outside the grid keep their position and are flagged
// out-of-bounds. Annotations with no labeled keypoints are skipped.
std::vector<Sample> parse_coco_keypoints(const nlohmann::json& doc, const GridSpec& grid,
                                         std::optional<std::size_t> limit = std::nullopt,
                                         int joints = kDefaultJointCount);

std::vector<Sample> load_coco_keypoints(const std::filesystem::path& path, const GridSpec& grid,
                                        std::optional<std::size_t> limit = std::nullopt,
                                        int joints = kDefaultJointCount);

// Inverse of parse_coco_keypoints for samples that carry a crop box.
nlohmann::json to_coco_document(std::span<const Sample> samples, const GridSpec& grid);

struct SynthOptions {
  int joints = kDefaultJointCount;
  EncodeParams encode;         // sigma is also the rendering width of predictions
  double offset_noise = 0.25;  // std of the noise added to predicted offsets (cells)
};

struct SyntheticScene {
  Batch batch;
  // Noisy "network outputs", flattened i * K + k.
  BatchPrediction predictions;
  // The injected peak displacement for each joint slot.
  std::vector<Vec2> injected;
};

// Ground truth uniform over [1, W-2] x [1, H-2]; each sample's crop box is the
// whole input extent. Predicted heatmaps are Gaussians
// centred at y + delta, delta ~ N(0, noise_cov), plus uniform cell noise in
// [-pixel_noise, pixel_noise]. Predicted offsets are the true offsets plus
// N(0, offset_noise^2) per cell.
SyntheticScene synth_scene(int n, const GridSpec& grid, const Eigen::Matrix2d& noise_cov, double pixel_noise,
                           std::uint64_t seed, const SynthOptions& options = {});

}  // namespace cal
