#pragma once

#include <Eigen/Dense>

#include "isac/common.hpp"

namespace isac {

using Vec2 = Eigen::Vector2d;

/// Axis-aligned rectangle in meters.
struct Rect {
  Vec2 lo{0.0, 0.0};
  Vec2 hi{0.0, 0.0};

  bool contains(const Vec2& p) const {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
  }
  double width() const { return hi.x() - lo.x(); }
  double height() const { return hi.y() - lo.y(); }
  Vec2 center() const { return 0.5 * (lo + hi); }

  /// Euclidean distance from p to the rectangle (0 inside).
  double distance(const Vec2& p) const {
    double dx = std::max({lo.x() - p.x(), 0.0, p.x() - hi.x()});
    double dy = std::max({lo.y() - p.y(), 0.0, p.y() - hi.y()});
    return std::hypot(dx, dy);
  }
};

/// Global bearing of `to` as seen from `from`, in radians.
inline double bearing(const Vec2& from, const Vec2& to) {
  return std::atan2(to.y() - from.y(), to.x() - from.x());
}

inline Vec2 unit_vector(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Uniform linear array. `orientation` is the boresight (broadside) direction
/// in the global frame; steering angles are measured from boresight and are
/// meaningful in (-pi/2, pi/2).
struct ArrayConfig {
  int n_antennas = 1;
  double spacing = 0.0;    // element spacing, meters
  double orientation = 0.0;  // boresight direction, radians, global frame
};

/// Angle of `point` relative to the array boresight of a sensor at `pos`.
inline double local_angle(const Vec2& pos, double orientation, const Vec2& point) {
  return wrap_pi(bearing(pos, point) - orientation);
}

}  // namespace isac
