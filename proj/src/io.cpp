#include "cal/io.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace cal {
namespace {

void require_schema(const nlohmann::json& j, std::string_view schema) {
  if (!j.is_object() || !j.contains("schema") || j.at("schema") != schema)
    throw std::runtime_error("expected a '" + std::string(schema) + "' document");
  if (j.value("schema_version", 0) != kSchemaVersion)
    throw std::runtime_error("unsupported schema_version for '" + std::string(schema) + "'");
}

Vec2 vec2_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw std::runtime_error(std::string(what) + ": expected a [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

nlohmann::json to_json(const GridSpec& grid) {
  return {{"width", grid.width}, {"height", grid.height}, {"stride", grid.stride}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  try {
    return GridSpec(j.at("width").get<int>(), j.at("height").get<int>(), j.at("stride").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("grid: ") + e.what());
  }
}

nlohmann::json grid_values_to_json(const Grid<double>& g) {
  return nlohmann::json(std::vector<double>(g.data(), g.data() + g.size()));
}

Grid<double> grid_values_from_json(const nlohmann::json& j, const GridSpec& grid, const char* what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(grid.cells()))
    throw std::runtime_error(std::string(what) + ": expected " + std::to_string(grid.cells()) + " values");
  Grid<double> g(grid.height, grid.width);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw std::runtime_error(std::string(what) + ": non-numeric value");
    g.data()[i] = j[i].get<double>();
  }
  return g;
}

nlohmann::json encoding_to_json(const Heatmap& hm, const OffsetField& of) {
  if (!(hm.grid == of.grid)) throw std::invalid_argument("encoding_to_json: grid mismatch");
  return {{"schema", "cal.encoding"},
          {"schema_version", kSchemaVersion},
          {"grid", to_json(hm.grid)},
          {"heatmap", grid_values_to_json(hm.values)},
          {"dx", grid_values_to_json(of.dx)},
          {"dy", grid_values_to_json(of.dy)}};
}

EncodedJoint encoding_from_json(const nlohmann::json& j) {
  require_schema(j, "cal.encoding");
  const GridSpec grid = grid_from_json(j.at("grid"));
  EncodedJoint e;
  e.heatmap = {grid, grid_values_from_json(j.at("heatmap"), grid, "heatmap")};
  e.offsets = {grid, grid_values_from_json(j.at("dx"), grid, "dx"), grid_values_from_json(j.at("dy"), grid, "dy")};
  return e;
}

nlohmann::json displacements_to_json(std::span<const DisplacementSample> samples) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : samples) arr.push_back({d.x(), d.y()});
  return {{"schema", "cal.displacements"}, {"schema_version", kSchemaVersion}, {"samples", arr}};
}

std::vector<DisplacementSample> displacements_from_json(const nlohmann::json& j) {
  require_schema(j, "cal.displacements");
  const auto& arr = j.at("samples");
  if (!arr.is_array()) throw std::runtime_error("displacements: 'samples' must be an array");
  std::vector<DisplacementSample> out;
  out.reserve(arr.size());
  for (const auto& e : arr) out.push_back(vec2_from_json(e, "displacements"));
  return out;
}

nlohmann::json to_json(const GaussianMixture& g) {
  nlohmann::json means = nlohmann::json::array(), covs = nlohmann::json::array();
  for (const auto& m : g.means) means.push_back({m.x(), m.y()});
  for (const auto& c : g.covariances) covs.push_back({{c(0, 0), c(0, 1)}, {c(1, 0), c(1, 1)}});
  return {{"weights", g.weights}, {"means", means}, {"covariances", covs}};
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  GaussianMixture g;
  try {
    g.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& m : j.at("means")) g.means.push_back(vec2_from_json(m, "mixture.means"));
    for (const auto& c : j.at("covariances")) {
      Eigen::Matrix2d m;
      m << c.at(0).at(0).get<double>(), c.at(0).at(1).get<double>(), c.at(1).at(0).get<double>(),
          c.at(1).at(1).get<double>();
      g.covariances.push_back(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("mixture: ") + e.what());
  }
  g.validate();
  return g;
}

nlohmann::json to_json(const MaskStencil& s) {
  return {{"radius", s.radius}, {"values", grid_values_to_json(s.values)}};
}

nlohmann::json predictions_to_json(const PredictionSet& p) {
  nlohmann::json inst = nlohmann::json::array();
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    nlohmann::json js = nlohmann::json::array();
    for (const auto& v : p.joints[i]) js.push_back({v.x(), v.y()});
    inst.push_back({{"id", p.ids[i]}, {"joints", js}});
  }
  return {{"schema", "cal.predictions"},
          {"schema_version", kSchemaVersion},
          {"grid", to_json(p.grid)},
          {"instances", inst}};
}

PredictionSet predictions_from_json(const nlohmann::json& j) {
  require_schema(j, "cal.predictions");
  PredictionSet p;
  p.grid = grid_from_json(j.at("grid"));
  for (const auto& inst : j.at("instances")) {
    const auto& id = inst.at("id");
    p.ids.push_back(id.is_string() ? id.get<std::string>() : id.dump());
    std::vector<Vec2> js;
    for (const auto& v : inst.at("joints")) js.push_back(vec2_from_json(v, "predictions.joints"));
    p.joints.push_back(std::move(js));
  }
  return p;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("'" + path.string() + "': " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace cal
