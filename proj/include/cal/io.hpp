#pragma once

// Serialized forms shared by the CLI and the library.
//
//   encoding      {"schema": "cal.encoding", "schema_version": 1,
//                  "grid": {"width", "height", "stride"},
//                  "heatmap": [H*W row-major], "dx": [...], "dy": [...]}
//   displacements {"schema": "cal.displacements", "schema_version": 1,
//                  "samples": [[dx, dy], ...]}        (heatmap cells)
//   mixture       {"weights": [...], "means": [[x, y], ...],
//                  "covariances": [[[a, b], [b, c]], ...]}
//   stencil       {"radius": R, "values": [(2R+1)^2 row-major]}
//   predictions   {"schema": "cal.predictions", "schema_version": 1,
//                  "grid": {...}, "instances": [{"id": ..., "joints": [[x, y], ...]}]}
//                  (heatmap cells)

#include "cal/codec.hpp"
#include "cal/gmm.hpp"
#include "cal/geometry.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cal {

inline constexpr int kSchemaVersion = 1;

// Shortest decimal form that round-trips.
std::string format_double(double v);
std::string csv_escape(std::string_view s);

nlohmann::json to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::json& j);

nlohmann::json grid_values_to_json(const Grid<double>& g);
Grid<double> grid_values_from_json(const nlohmann::json& j, const GridSpec& grid, const char* what);

struct EncodedJoint {
  Heatmap heatmap;
  OffsetField offsets;
};

nlohmann::json encoding_to_json(const Heatmap& hm, const OffsetField& of);
EncodedJoint encoding_from_json(const nlohmann::json& j);

nlohmann::json displacements_to_json(std::span<const DisplacementSample> samples);
std::vector<DisplacementSample> displacements_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GaussianMixture& g);
GaussianMixture mixture_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MaskStencil& s);

struct PredictionSet {
  GridSpec grid;
  std::vector<std::string> ids;
  std::vector<std::vector<Vec2>> joints;  // heatmap cells
};

nlohmann::json predictions_to_json(const PredictionSet& p);
PredictionSet predictions_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace cal
