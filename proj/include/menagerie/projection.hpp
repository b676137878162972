#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "menagerie/types.hpp"

namespace menagerie {

// Pinhole camera looking down +z; square pixels, no skew or distortion.
struct PerspectiveCamera {
  double focal = 1000.0;          // pixels
  Vec2 principal_point{512.0, 512.0};
  int image_width = 1024;
  int image_height = 1024;

  void validate() const {
    if (!(focal > 0.0)) throw std::invalid_argument("camera: focal must be positive");
    if (image_width <= 0 || image_height <= 0) {
      throw std::invalid_argument("camera: image size must be positive");
    }
    if (!std::isfinite(principal_point.x()) || !std::isfinite(principal_point.y())) {
      throw std::invalid_argument("camera: principal point must be finite");
    }
  }
};

// Axis-aligned box in normalized image coordinates (all four values in [0, 1]
// for boxes inside the image; width/height may be 0 for degenerate boxes).
struct BBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x_min() const { return cx - 0.5 * w; }
  double x_max() const { return cx + 0.5 * w; }
  double y_min() const { return cy - 0.5 * h; }
  double y_max() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static BBox from_corners(double x0, double y0, double x1, double y1) {
    BBox b;
    b.cx = 0.5 * (x0 + x1);
    b.cy = 0.5 * (y0 + y1);
    b.w = x1 - x0;
    b.h = y1 - y0;
    return b;
  }

  bool is_valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
           w >= 0.0 && h >= 0.0;
  }
};

struct ProjectedPoints {
  Points2 pixels;        // (N, 2); rows with valid == 0 are zeroed
  VisibilityMask valid;  // 1 iff the point had positive depth
};

// Perspective projection of camera-frame points. Points at or behind the
// camera plane (z <= 0) are flagged invalid rather than projected.
inline ProjectedPoints project(const Points3& points, const PerspectiveCamera& camera) {
  camera.validate();
  const int n = static_cast<int>(points.rows());
  ProjectedPoints out;
  out.pixels = Points2::Zero(n, 2);
  out.valid.assign(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const double z = points(i, 2);
    if (!(z > 0.0)) continue;
    out.pixels(i, 0) = camera.focal * points(i, 0) / z + camera.principal_point.x();
    out.pixels(i, 1) = camera.focal * points(i, 1) / z + camera.principal_point.y();
    out.valid[static_cast<size_t>(i)] = 1;
  }
  return out;
}

// Tight normalized box around the masked pixel points, clamped to the image.
// Empty selection (no valid points) yields nullopt; a single point yields a
// zero-area box.
inline std::optional<BBox> bbox_from_points(const Points2& pixels, const VisibilityMask& valid,
                                            const PerspectiveCamera& camera) {
  camera.validate();
  if (valid.size() != static_cast<size_t>(pixels.rows())) {
    throw std::invalid_argument("bbox_from_points: mask length mismatch");
  }
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  bool any = false;
  for (int i = 0; i < pixels.rows(); ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    any = true;
    x0 = std::min(x0, pixels(i, 0));
    x1 = std::max(x1, pixels(i, 0));
    y0 = std::min(y0, pixels(i, 1));
    y1 = std::max(y1, pixels(i, 1));
  }
  if (!any) return std::nullopt;
  const double w = static_cast<double>(camera.image_width);
  const double h = static_cast<double>(camera.image_height);
  x0 = std::clamp(x0 / w, 0.0, 1.0);
  x1 = std::clamp(x1 / w, 0.0, 1.0);
  y0 = std::clamp(y0 / h, 0.0, 1.0);
  y1 = std::clamp(y1 / h, 0.0, 1.0);
  return BBox::from_corners(x0, y0, x1, y1);
}

inline std::optional<BBox> bbox_from_points(const Points2& pixels,
                                            const PerspectiveCamera& camera) {
  return bbox_from_points(pixels, VisibilityMask(static_cast<size_t>(pixels.rows()), 1), camera);
}

}  // namespace menagerie
