#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>

#include <Eigen/Core>

namespace countgraph {

/// Axis-aligned bounding box in corner form. Coordinates are unitless
/// scene coordinates, typically inside the unit square, but IoU is
/// coordinate-free so boxes are never clipped to it.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  friend bool operator==(const Box&, const Box&) = default;
};

inline bool is_valid(const Box& b) {
  return b.x_min <= b.x_max && b.y_min <= b.y_max;
}

inline double area(const Box& b) {
  return (b.x_max - b.x_min) * (b.y_max - b.y_min);
}

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union, in [0,1]. A pair with zero union area
/// (two degenerate boxes) has IoU 0.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Pairwise distances D(i,j) = 1 - iou(boxes[i], boxes[j]).
/// Symmetric with an exactly zero diagonal.
inline Eigen::MatrixXd distance_matrix(std::span<const Box> boxes) {
  if (boxes.empty()) {
    throw std::invalid_argument("distance_matrix: need at least one box");
  }
  const auto n = static_cast<Eigen::Index>(boxes.size());
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = 1.0 - iou(boxes[i], boxes[j]);
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

}  // namespace countgraph
