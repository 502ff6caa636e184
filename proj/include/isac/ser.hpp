#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "isac/common.hpp"
#include "isac/estimation.hpp"
#include "isac/geometry.hpp"

namespace isac {

/// Weighted 2D point cloud in the global frame; the SER output.
struct PointCloudMap {
  struct Point {
    Vec2 position{0.0, 0.0};
    double confidence = 0.0;  // in [0, 1]
    double power_db = 0.0;
  };
  std::vector<Point> points;
};

/// Per-cell Dempster-Shafer masses over {occupied, empty}; m_unknown is the
/// mass on the whole frame. Each cell is a simplex.
struct EvidenceGrid {
  struct Mass {
    double m_occupied = 0.0;
    double m_empty = 0.0;
    double m_unknown = 1.0;
  };
  GridGeometry geom;
  std::vector<Mass> cells;

  explicit EvidenceGrid(const GridGeometry& g = {}) : geom(g), cells(g.nx * g.ny > 0 ? g.nx * g.ny : 0) {}
};

struct VirtualUeTrajectory {
  std::vector<int> ue_ids;
  std::vector<Vec2> positions;
  double max_gap = 0.0;
};

/// Closed-form intersection of the bistatic ellipse (focus points bs/ue, path
/// length c*delay) with the departure ray from the BS. The returned point s
/// satisfies |s - bs| + |s - ue| = c*delay and lies on the ray at angle `aod`
/// (global frame).
inline Vec2 invert_sesp(const Vec2& bs_pos, const Vec2& ue_pos, double aod, double delay) {
  const double d = speed_of_light * delay;
  const Vec2 offset = ue_pos - bs_pos;
  const double baseline = offset.norm();
  if (d <= baseline)
    throw infeasible_path_error("invert_sesp: path length " + std::to_string(d) +
                                " m does not exceed the LoS baseline " + std::to_string(baseline) + " m");
  const Vec2 u = unit_vector(aod);
  const double denom = d - u.dot(offset);
  if (denom <= 0.0) throw infeasible_geometry_error("invert_sesp: ray never meets the ellipse");
  const double r = (d * d - baseline * baseline) / (2.0 * denom);
  if (r <= 0.0) throw infeasible_geometry_error("invert_sesp: non-positive range along the ray");
  return bs_pos + r * u;
}

struct ReconstructionResult {
  PointCloudMap map;
  int dropped = 0;  // paths with infeasible geometry
};

/// Invert every first-order NLoS path into a SESP position. Path angles are
/// boresight-relative at the BS array, so the array orientation globalizes
/// them. LoS paths are skipped; infeasible paths are dropped and counted.
/// Confidence is |gain| normalized to the strongest bounce.
inline ReconstructionResult reconstruct_from_ue(const Vec2& bs_pos, const Vec2& ue_pos,
                                                const std::vector<PathEstimate>& paths,
                                                double array_orientation) {
  ReconstructionResult out;
  double max_gain = 0.0;
  for (const auto& p : paths)
    if (p.order == PathOrder::nlos1) max_gain = std::max(max_gain, std::abs(p.gain));
  if (max_gain == 0.0) return out;

  for (const auto& p : paths) {
    if (p.order != PathOrder::nlos1) continue;
    try {
      PointCloudMap::Point pt;
      pt.position = invert_sesp(bs_pos, ue_pos, array_orientation + p.aod, p.delay);
      pt.confidence = std::abs(p.gain) / max_gain;
      pt.power_db = pow_to_db(std::norm(p.gain));
      out.map.points.push_back(pt);
    } catch (const infeasible_path_error&) {
      ++out.dropped;
    } catch (const infeasible_geometry_error&) {
      ++out.dropped;
    }
  }
  return out;
}

/// Greedy nearest-neighbor chain over UEs, starting at the UE closest to the
/// BS. UEs farther than max_gap from the running chain end are excluded.
/// Ties break toward the lower id.
inline VirtualUeTrajectory select_virtual_ue(const std::vector<UserEquipment>& ues,
                                             const Vec2& bs_pos, double max_gap) {
  if (ues.empty()) throw std::invalid_argument("select_virtual_ue: empty UE list");
  VirtualUeTrajectory traj;
  traj.max_gap = max_gap;

  std::vector<std::size_t> remaining(ues.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  auto take_nearest = [&](const Vec2& ref) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    int best_id = std::numeric_limits<int>::max();
    for (std::size_t idx = 0; idx < remaining.size(); ++idx) {
      const auto& ue = ues[remaining[idx]];
      const double d = (ue.position - ref).norm();
      if (d < best_d - 1e-12 || (std::abs(d - best_d) <= 1e-12 && ue.id < best_id)) {
        best = idx;
        best_d = d;
        best_id = ue.id;
      }
    }
    return std::pair<std::size_t, double>{best, best_d};
  };

  auto [first, first_d] = take_nearest(bs_pos);
  traj.ue_ids.push_back(ues[remaining[first]].id);
  traj.positions.push_back(ues[remaining[first]].position);
  remaining.erase(remaining.begin() + first);

  while (!remaining.empty()) {
    auto [next, gap] = take_nearest(traj.positions.back());
    if (gap > max_gap) break;  // everything reachable is exhausted
    traj.ue_ids.push_back(ues[remaining[next]].id);
    traj.positions.push_back(ues[remaining[next]].position);
    remaining.erase(remaining.begin() + next);
  }
  return traj;
}

namespace detail {

inline EvidenceGrid::Mass dempster_combine(const EvidenceGrid::Mass& a,
                                           const EvidenceGrid::Mass& b) {
  const double conflict = a.m_occupied * b.m_empty + a.m_empty * b.m_occupied;
  const double norm = 1.0 - conflict;
  if (norm <= 0.0)
    throw std::invalid_argument("dempster_combine: total conflict between masses");
  EvidenceGrid::Mass out;
  out.m_occupied =
      (a.m_occupied * b.m_occupied + a.m_occupied * b.m_unknown + a.m_unknown * b.m_occupied) / norm;
  out.m_empty = (a.m_empty * b.m_empty + a.m_empty * b.m_unknown + a.m_unknown * b.m_empty) / norm;
  out.m_unknown = (a.m_unknown * b.m_unknown) / norm;
  return out;
}

}  // namespace detail

/// Fold occupancy observations into the grid with Dempster's rule. Each
/// observation is a simple support mass {occupied: m_occ, unknown: 1 - m_occ},
/// so combination is commutative and associative and order never matters.
inline EvidenceGrid fuse_evidence(const EvidenceGrid& grid,
                                  const std::vector<std::pair<int, double>>& observations) {
  EvidenceGrid out = grid;
  for (const auto& [cell, m_occ] : observations) {
    if (cell < 0 || cell >= static_cast<int>(out.cells.size()))
      throw std::invalid_argument("fuse_evidence: cell index " + std::to_string(cell) +
                                  " out of range");
    if (!(m_occ >= 0.0 && m_occ <= 1.0))
      throw std::invalid_argument("fuse_evidence: observation mass must be in [0, 1]");
    EvidenceGrid::Mass obs;
    obs.m_occupied = m_occ;
    obs.m_unknown = 1.0 - m_occ;
    out.cells[cell] = detail::dempster_combine(out.cells[cell], obs);
  }
  return out;
}

struct MultiBsFuseParams {
  std::vector<Vec2> bs_positions;  // one per local map, same order
  double coverage_range = 200.0;   // BS max sensing range for the ghost test
  double confidence_threshold = 0.05;
  double merge_radius = 0.5;  // default 2 x range resolution in callers
};

/// Multi-BS map fusion: (1) align power medians to the first map, (2) drop
/// low-confidence points, (3) drop single-observer points inside multi-BS
/// coverage (ghosts), (4) merge neighborhoods into confidence-weighted
/// centroids.
inline PointCloudMap fuse_maps_multibs(const std::vector<PointCloudMap>& local_maps,
                                       const MultiBsFuseParams& params) {
  if (local_maps.empty()) throw std::invalid_argument("fuse_maps_multibs: empty map list");
  if (params.bs_positions.size() != local_maps.size())
    throw std::invalid_argument("fuse_maps_multibs: one BS position per local map required");

  // (1) power alignment: shift each map's dB powers so medians match map 0
  auto median_power = [](const PointCloudMap& m) {
    if (m.points.empty()) return 0.0;
    std::vector<double> v;
    v.reserve(m.points.size());
    for (const auto& p : m.points) v.push_back(p.power_db);
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  std::vector<PointCloudMap> aligned = local_maps;
  const double ref_median = median_power(aligned.front());
  for (std::size_t i = 1; i < aligned.size(); ++i) {
    const double shift = ref_median - median_power(aligned[i]);
    for (auto& p : aligned[i].points) p.power_db += shift;
  }

  // (2) noise suppression + (3) ghost elimination
  struct Tagged {
    PointCloudMap::Point pt;
    int source_bs;
  };
  std::vector<Tagged> kept;
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    for (const auto& p : aligned[i].points) {
      if (p.confidence < params.confidence_threshold) continue;
      int covering = 0;
      for (const auto& bs : params.bs_positions)
        if ((p.position - bs).norm() <= params.coverage_range) ++covering;
      int observers = 0;
      for (std::size_t j = 0; j < aligned.size(); ++j) {
        bool seen = false;
        for (const auto& q : aligned[j].points)
          if ((q.position - p.position).norm() <= params.merge_radius) { seen = true; break; }
        if (seen) ++observers;
      }
      if (covering >= 2 && observers <= 1) continue;  // ghost
      kept.push_back({p, static_cast<int>(i)});
    }
  }

  // (4) merge: strongest-first clustering into weighted centroids
  std::sort(kept.begin(), kept.end(),
            [](const Tagged& a, const Tagged& b) { return a.pt.confidence > b.pt.confidence; });
  std::vector<bool> used(kept.size(), false);
  PointCloudMap fused;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (used[i]) continue;
    Vec2 acc = kept[i].pt.confidence * kept[i].pt.position;
    double wsum = kept[i].pt.confidence;
    double conf = kept[i].pt.confidence;
    double power = kept[i].pt.power_db;
    used[i] = true;
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (used[j]) continue;
      if ((kept[j].pt.position - kept[i].pt.position).norm() <= params.merge_radius) {
        acc += kept[j].pt.confidence * kept[j].pt.position;
        wsum += kept[j].pt.confidence;
        conf = std::max(conf, kept[j].pt.confidence);
        power = std::max(power, kept[j].pt.power_db);
        used[j] = true;
      }
    }
    PointCloudMap::Point p;
    p.position = acc / wsum;
    p.confidence = conf;
    p.power_db = power;
    fused.points.push_back(p);
  }
  return fused;
}

}  // namespace isac
