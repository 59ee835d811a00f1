#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cal {

// Row-major dense grid; rows index y, columns index x.
template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec2 = Eigen::Vector2d;

// Integer lattice cell. (x, y) = (column, row).
struct Cell {
  int x = 0;
  int y = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

// Row-major order: by row first, then column.
inline bool operator<(const Cell& a, const Cell& b) {
  return a.y != b.y ? a.y < b.y : a.x < b.x;
}

// Heatmap lattice plus the stride linking cells to input pixels.
//
// Coordinates are in heatmap-cell units with integer values at cell centers:
// cell (x, y) is the point (x, y), and the input-space point is p * stride.
struct GridSpec {
  int width = 0;
  int height = 0;
  double stride = 1.0;

  GridSpec() = default;
  GridSpec(int w, int h, double s) : width(w), height(h), stride(s) { validate(); }

  void validate() const {
    if (width < 2 || height < 2)
      throw std::invalid_argument("GridSpec: width and height must be >= 2");
    if (!(stride > 0.0) || !std::isfinite(stride))
      throw std::invalid_argument("GridSpec: stride must be positive");
  }

  int cells() const { return width * height; }

  Vec2 input_extent() const { return {width * stride, height * stride}; }

  bool contains(const Cell& c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
  }

  // A continuous point is inside the grid when its nearest cell is.
  bool contains(const Vec2& p) const {
    if (!p.allFinite() || p.cwiseAbs().maxCoeff() > 1e9) return false;
    return contains(nearest_cell(p));
  }

  static Cell nearest_cell(const Vec2& p) {
    return {static_cast<int>(std::floor(p.x() + 0.5)),
            static_cast<int>(std::floor(p.y() + 0.5))};
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class Visibility : std::uint8_t {
  unlabeled = 0,
  labeled_invisible = 1,
  labeled_visible = 2,
};

struct JointTarget {
  int joint_index = 0;
  Vec2 position = Vec2::Zero();
  Visibility visibility = Visibility::unlabeled;
  // Cleared by loaders for labeled joints that map outside the grid.
  bool in_bounds = true;

  bool labeled() const { return visibility != Visibility::unlabeled; }
  // Labeled and inside the grid: the joint carries loss and displacement samples.
  bool usable() const { return labeled() && in_bounds; }
};

template <typename Scalar>
struct BasicHeatmap {
  GridSpec grid;
  Grid<Scalar> values;

  static BasicHeatmap zeros(const GridSpec& g) {
    return {g, Grid<Scalar>::Zero(g.height, g.width)};
  }

  Scalar& operator()(const Cell& c) { return values(c.y, c.x); }
  Scalar operator()(const Cell& c) const { return values(c.y, c.x); }

  bool shape_matches() const {
    return values.rows() == grid.height && values.cols() == grid.width;
  }
};

template <typename Scalar>
struct BasicOffsetField {
  GridSpec grid;
  Grid<Scalar> dx;
  Grid<Scalar> dy;

  static BasicOffsetField zeros(const GridSpec& g) {
    return {g, Grid<Scalar>::Zero(g.height, g.width), Grid<Scalar>::Zero(g.height, g.width)};
  }

  Eigen::Matrix<Scalar, 2, 1> operator()(const Cell& c) const {
    return {dx(c.y, c.x), dy(c.y, c.x)};
  }

  bool shape_matches() const {
    return dx.rows() == grid.height && dx.cols() == grid.width &&
           dy.rows() == grid.height && dy.cols() == grid.width;
  }
};

using Heatmap = BasicHeatmap<double>;
using OffsetField = BasicOffsetField<double>;

// Source crop in original-image pixels (COCO bbox convention: x, y, w, h).
struct CropBox {
  double x = 0, y = 0, w = 0, h = 0;
};

struct Sample {
  std::vector<JointTarget> joints;
  std::string source_id;
  // Instance scale for OKS, in input pixels squared.
  double bbox_area = 0.0;
  std::optional<CropBox> crop;
  std::int64_t image_id = 0;

  int labeled_count() const {
    int n = 0;
    for (const auto& j : joints) n += j.labeled() ? 1 : 0;
    return n;
  }
};

// Default joint count (COCO person keypoints).
inline constexpr int kDefaultJointCount = 17;

struct Batch {
  GridSpec grid;
  std::vector<Sample> samples;

  int joint_count() const {
    return samples.empty() ? 0 : static_cast<int>(samples.front().joints.size());
  }
  std::size_t size() const { return samples.size(); }

  const JointTarget& joint(std::size_t i, int k) const { return samples[i].joints[k]; }

  void validate() const {
    grid.validate();
    if (samples.empty()) throw std::invalid_argument("Batch: no samples");
    const auto k = samples.front().joints.size();
    if (k == 0) throw std::invalid_argument("Batch: samples have no joints");
    for (const auto& s : samples) {
      if (s.joints.size() != k)
        throw std::invalid_argument("Batch: sample '" + s.source_id + "' has a different joint count");
      for (std::size_t j = 0; j < k; ++j) {
        if (s.joints[j].joint_index != static_cast<int>(j))
          throw std::invalid_argument("Batch: joints of '" + s.source_id + "' are not indexed 0..K-1");
        if (!s.joints[j].position.allFinite())
          throw std::invalid_argument("Batch: non-finite joint position in '" + s.source_id + "'");
      }
    }
  }
};

template <typename Derived>
Vec2 to_input_coords(const Eigen::MatrixBase<Derived>& p, const GridSpec& grid) {
  return p.template cast<double>() * grid.stride;
}

template <typename Derived>
Vec2 to_heatmap_coords(const Eigen::MatrixBase<Derived>& q, const GridSpec& grid) {
  return q.template cast<double>() / grid.stride;
}

// Cells with ||p - center|| <= radius inside the grid, row-major.
inline std::vector<Cell> clip_disc(const Vec2& center, double radius, const GridSpec& grid) {
  if (!(radius > 0.0)) throw std::invalid_argument("clip_disc: radius must be positive");
  std::vector<Cell> out;
  if (!center.allFinite()) return out;
  const double r2 = radius * radius;
  const double y0 = std::max(0.0, std::ceil(center.y() - radius));
  const double y1 = std::min(grid.height - 1.0, std::floor(center.y() + radius));
  const double x0 = std::max(0.0, std::ceil(center.x() - radius));
  const double x1 = std::min(grid.width - 1.0, std::floor(center.x() + radius));
  if (y0 > y1 || x0 > x1) return out;
  for (int y = static_cast<int>(y0); y <= static_cast<int>(y1); ++y) {
    const double ddy = y - center.y();
    for (int x = static_cast<int>(x0); x <= static_cast<int>(x1); ++x) {
      const double ddx = x - center.x();
      if (ddx * ddx + ddy * ddy <= r2) out.push_back({x, y});
    }
  }
  return out;
}

}  // namespace cal
