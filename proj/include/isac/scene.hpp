#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "isac/common.hpp"
#include "isac/geometry.hpp"
#include "isac/rng.hpp"

namespace isac {

enum class TargetClass { pedestrian, vehicle, uav, bird };

inline const char* to_string(TargetClass c) {
  switch (c) {
    case TargetClass::pedestrian: return "pedestrian";
    case TargetClass::vehicle: return "vehicle";
    case TargetClass::uav: return "uav";
    case TargetClass::bird: return "bird";
  }
  return "?";
}

/// One ISAC base station: a transmit (HU) and a co-located receive (RU) array.
struct BaseStation {
  Vec2 position{0.0, 0.0};
  ArrayConfig tx_array;   // hybrid unit, transmits sensing/comm beams
  ArrayConfig rx_array;   // radar unit, receives echoes
  double tx_power = 1.0;  // watts
  bool on = true;
};

struct UserEquipment {
  int id = 0;
  Vec2 position{0.0, 0.0};
};

/// Static environment scattering point: a single-bounce reflector.
struct ScatterPoint {
  Vec2 position{0.0, 0.0};
  cplx reflectivity{1.0, 0.0};  // dimensionless complex gain
};

struct DynamicTarget {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};  // m/s
  double rcs = 1.0;         // m^2
  TargetClass class_label = TargetClass::vehicle;
};

/// Regular grid of complex electromagnetic contrast chi = (eps_r - 1) - j*sigma/(w*eps0).
struct GridGeometry {
  Vec2 origin{0.0, 0.0};  // lower-left corner
  double cell_size = 1.0;
  int nx = 0, ny = 0;

  int n_cells() const { return nx * ny; }
  int cell_index(int ix, int iy) const { return iy * nx + ix; }
  Vec2 cell_center(int index) const {
    int iy = index / nx, ix = index % nx;
    return origin + Vec2{(ix + 0.5) * cell_size, (iy + 0.5) * cell_size};
  }
  Rect bounding_box() const {
    return Rect{origin, origin + Vec2{nx * cell_size, ny * cell_size}};
  }
};

struct MaterialGrid {
  GridGeometry geom;
  std::vector<cplx> contrast;  // chi per cell, row-major (iy * nx + ix)
};

/// Ground-truth world. Immutable value after construction; propagation
/// returns a new Scene.
struct Scene {
  std::vector<BaseStation> bs_list;
  std::vector<UserEquipment> ue_list;
  std::vector<ScatterPoint> sesp_list;
  std::vector<DynamicTarget> target_list;
  std::optional<MaterialGrid> material_grid;
  Rect bounds;
};

/// Randomized entity counts for scene construction. Positions are drawn
/// uniformly in `region` (scene bounds when unset).
struct RandomEntitySpec {
  int n_sesp = 0;
  int n_ue = 0;
  int n_targets = 0;
  std::optional<Rect> region;
  double reflectivity_min = 0.5, reflectivity_max = 1.5;
  double speed_min = 0.0, speed_max = 10.0;
  double rcs_min = 0.5, rcs_max = 5.0;
};

struct SceneConfig {
  std::vector<BaseStation> bs;
  std::vector<UserEquipment> ue;
  std::vector<ScatterPoint> sesp;
  std::vector<DynamicTarget> targets;
  std::optional<MaterialGrid> materials;
  Rect bounds{Vec2{-500.0, -500.0}, Vec2{500.0, 500.0}};
  RandomEntitySpec random;
};

inline void validate_scene(const Scene& s) {
  if (s.bs_list.empty()) throw validation_error("scene: bs_list is empty, at least one BS required");
  auto check_pos = [&](const Vec2& p, const std::string& what) {
    if (!std::isfinite(p.x()) || !std::isfinite(p.y()) || !s.bounds.contains(p))
      throw validation_error("scene: " + what + " at (" + std::to_string(p.x()) + ", " +
                             std::to_string(p.y()) + ") outside bounds");
  };
  for (std::size_t i = 0; i < s.bs_list.size(); ++i) {
    check_pos(s.bs_list[i].position, "bs[" + std::to_string(i) + "]");
    if (s.bs_list[i].tx_power < 0.0)
      throw validation_error("scene: bs[" + std::to_string(i) + "] has negative tx_power");
  }
  for (std::size_t i = 0; i < s.ue_list.size(); ++i)
    check_pos(s.ue_list[i].position, "ue[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < s.sesp_list.size(); ++i)
    check_pos(s.sesp_list[i].position, "sesp[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < s.target_list.size(); ++i) {
    const auto& t = s.target_list[i];
    check_pos(t.position, "target[" + std::to_string(i) + "]");
    if (!std::isfinite(t.velocity.x()) || !std::isfinite(t.velocity.y()))
      throw validation_error("scene: target[" + std::to_string(i) + "] has non-finite velocity");
    if (t.rcs <= 0.0)
      throw validation_error("scene: target[" + std::to_string(i) + "] rcs must be > 0");
  }
  if (s.material_grid) {
    const auto& g = *s.material_grid;
    if (g.geom.cell_size <= 0.0) throw validation_error("scene: material grid cell_size must be > 0");
    if (static_cast<int>(g.contrast.size()) != g.geom.n_cells())
      throw validation_error("scene: material grid contrast length != nx*ny");
  }
}

/// Build a Scene from a config. Pure function of (config, seed): explicit
/// entities are copied, randomized ones drawn from a stream derived from seed.
inline Scene build_scene(const SceneConfig& cfg, std::uint64_t seed = 0) {
  Scene s;
  s.bounds = cfg.bounds;
  s.bs_list = cfg.bs;
  s.ue_list = cfg.ue;
  s.sesp_list = cfg.sesp;
  s.target_list = cfg.targets;
  s.material_grid = cfg.materials;

  const Rect region = cfg.random.region.value_or(cfg.bounds);
  Rng root(seed);
  if (cfg.random.n_sesp > 0) {
    Rng r = root.child("sesp");
    for (int i = 0; i < cfg.random.n_sesp; ++i) {
      ScatterPoint p;
      p.position = {r.uniform(region.lo.x(), region.hi.x()), r.uniform(region.lo.y(), region.hi.y())};
      double mag = r.uniform(cfg.random.reflectivity_min, cfg.random.reflectivity_max);
      double ph = r.uniform(0.0, 2.0 * pi);
      p.reflectivity = std::polar(mag, ph);
      s.sesp_list.push_back(p);
    }
  }
  if (cfg.random.n_ue > 0) {
    Rng r = root.child("ue");
    int next_id = 0;
    for (const auto& u : s.ue_list) next_id = std::max(next_id, u.id + 1);
    for (int i = 0; i < cfg.random.n_ue; ++i) {
      UserEquipment u;
      u.id = next_id++;
      u.position = {r.uniform(region.lo.x(), region.hi.x()), r.uniform(region.lo.y(), region.hi.y())};
      s.ue_list.push_back(u);
    }
  }
  if (cfg.random.n_targets > 0) {
    Rng r = root.child("targets");
    for (int i = 0; i < cfg.random.n_targets; ++i) {
      DynamicTarget t;
      t.position = {r.uniform(region.lo.x(), region.hi.x()), r.uniform(region.lo.y(), region.hi.y())};
      double speed = r.uniform(cfg.random.speed_min, cfg.random.speed_max);
      double heading = r.uniform(0.0, 2.0 * pi);
      t.velocity = speed * unit_vector(heading);
      t.rcs = r.uniform(cfg.random.rcs_min, cfg.random.rcs_max);
      t.class_label = static_cast<TargetClass>(r.uniform_int(0, 3));
      s.target_list.push_back(t);
    }
  }

  validate_scene(s);
  return s;
}

/// Advance dynamic targets by constant-velocity kinematics. Static entities
/// are unchanged. Exact composition: propagate(s, a+b) == propagate(propagate(s, a), b).
inline Scene propagate(const Scene& scene, double dt) {
  if (dt < 0.0) throw std::invalid_argument("propagate: dt must be >= 0");
  Scene out = scene;
  for (auto& t : out.target_list) t.position += t.velocity * dt;
  return out;
}

}  // namespace isac
