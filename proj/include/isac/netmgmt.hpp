#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <vector>

#include "isac/common.hpp"
#include "isac/geometry.hpp"
#include "isac/phy.hpp"
#include "isac/scene.hpp"

namespace isac {

/// Pairwise cross-BS interference power, watts; diagonal zero.
struct InterferenceMatrix {
  Eigen::MatrixXd watts;
};

/// Resource assignment: one comm beam and one sensing beam per BS, plus a
/// single sub-band index each.
struct Allocation {
  Eigen::VectorXd comm_power;   // watts per BS
  Eigen::VectorXd sense_power;  // watts per BS
  std::vector<int> band;        // sub-band per BS

  double total_power(int i) const { return comm_power(i) + sense_power(i); }
};

inline double friis_gain(double wavelength, double distance) {
  const double x = wavelength / (4.0 * pi * std::max(distance, 1e-3));
  return x * x;
}

/// Sensing-beam interference between active BSs:
/// I[i][j] = P_sense_j * G_j(theta j->i) * G_i(theta i->j) * (lambda/4 pi d)^2
/// when i and j share a sub-band, else zero. `beams` carries one sensing beam
/// angle (boresight-relative) per active BS.
inline InterferenceMatrix interference_matrix(const Scene& scene, const std::vector<int>& active_bs,
                                              const std::vector<double>& beams,
                                              const Allocation& alloc, const OfdmConfig& ofdm) {
  if (active_bs.empty()) throw std::invalid_argument("interference_matrix: no active BSs");
  if (beams.size() != active_bs.size() ||
      alloc.sense_power.size() != static_cast<Eigen::Index>(active_bs.size()) ||
      alloc.band.size() != active_bs.size())
    throw std::invalid_argument("interference_matrix: beams/alloc size mismatch");
  const double lambda = ofdm.wavelength();
  const int n = static_cast<int>(active_bs.size());

  InterferenceMatrix out;
  out.watts = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const BaseStation& bi = scene.bs_list.at(active_bs[i]);
    for (int j = 0; j < n; ++j) {
      if (i == j || alloc.band[i] != alloc.band[j]) continue;
      const BaseStation& bj = scene.bs_list.at(active_bs[j]);
      const double d = (bi.position - bj.position).norm();
      const double gain_j =
          beam_gain(bj.tx_array, beams[j],
                    local_angle(bj.position, bj.tx_array.orientation, bi.position), lambda);
      const double gain_i =
          beam_gain(bi.tx_array, beams[i],
                    local_angle(bi.position, bi.tx_array.orientation, bj.position), lambda);
      out.watts(i, j) = alloc.sense_power(j) * gain_j * gain_i * friis_gain(lambda, d);
    }
  }
  return out;
}

struct PlanningParams {
  double coverage_range = 150.0;   // meters
  double w_interference = 1.0;     // objective weight on pairwise interference
  double wavelength = speed_of_light / 5.5e9;
  double tx_power = 1.0;
  int coverage_grid = 24;          // coverage sampled on an n x n grid of the bounds
};

/// Planning objective for a candidate subset: covered-area fraction minus the
/// weighted sum of pairwise Friis interference terms. Shared by the greedy
/// selector and the exhaustive test oracles.
inline double placement_objective(const std::vector<int>& selected,
                                  const std::vector<Vec2>& candidates, const Rect& bounds,
                                  const PlanningParams& params) {
  if (selected.empty()) return 0.0;
  const int n = params.coverage_grid;
  int covered = 0;
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      const Vec2 p{bounds.lo.x() + (ix + 0.5) * bounds.width() / n,
                   bounds.lo.y() + (iy + 0.5) * bounds.height() / n};
      for (int s : selected)
        if ((candidates[s] - p).norm() <= params.coverage_range) {
          ++covered;
          break;
        }
    }
  double interference = 0.0;
  for (std::size_t a = 0; a < selected.size(); ++a)
    for (std::size_t b = a + 1; b < selected.size(); ++b) {
      const double d = (candidates[selected[a]] - candidates[selected[b]]).norm();
      interference += params.tx_power * friis_gain(params.wavelength, d);
    }
  return static_cast<double>(covered) / (n * n) - params.w_interference * interference;
}

struct PlacementResult {
  std::vector<int> selected;
  std::vector<double> objective_trace;  // after each greedy addition
};

/// Greedy forward site selection maximizing coverage minus weighted
/// interference, followed by single-site swap refinement until no swap
/// improves. Ties break toward the lower candidate index; the objective is
/// non-decreasing along the whole trace.
inline PlacementResult place_bs(const std::vector<Vec2>& candidates, int k, const Rect& bounds,
                                const PlanningParams& params = {}) {
  if (k < 1 || k > static_cast<int>(candidates.size()))
    throw std::invalid_argument("place_bs: k must be in [1, n_candidates]");
  PlacementResult res;
  std::vector<bool> chosen(candidates.size(), false);
  double current = 0.0;
  while (static_cast<int>(res.selected.size()) < k) {
    int best = -1;
    double best_obj = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (chosen[c]) continue;
      std::vector<int> trial = res.selected;
      trial.push_back(static_cast<int>(c));
      const double obj = placement_objective(trial, candidates, bounds, params);
      if (obj > best_obj + 1e-15) {
        best_obj = obj;
        best = static_cast<int>(c);
      }
    }
    chosen[best] = true;
    res.selected.push_back(best);
    res.objective_trace.push_back(best_obj);
    current = best_obj;
  }

  // swap refinement: replace one selected site by one unselected candidate
  // while that improves the objective
  for (int pass = 0; pass < 64; ++pass) {
    int best_out = -1, best_in = -1;
    double best_obj = current;
    for (std::size_t s = 0; s < res.selected.size(); ++s) {
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (chosen[c]) continue;
        std::vector<int> trial = res.selected;
        trial[s] = static_cast<int>(c);
        const double obj = placement_objective(trial, candidates, bounds, params);
        if (obj > best_obj + 1e-12) {
          best_obj = obj;
          best_out = static_cast<int>(s);
          best_in = static_cast<int>(c);
        }
      }
    }
    if (best_out < 0) break;
    chosen[res.selected[best_out]] = false;
    chosen[best_in] = true;
    res.selected[best_out] = best_in;
    current = best_obj;
    res.objective_trace.push_back(current);
  }
  return res;
}

struct OnOffResult {
  std::vector<bool> on;
  std::vector<double> objective_trace;  // initial value, then after each accepted switch-off
};

/// On-off objective: covered demand weight minus weighted interference minus
/// per-BS energy cost.
inline double onoff_objective(const std::vector<bool>& on, const std::vector<Vec2>& bs_positions,
                              const std::vector<std::pair<Vec2, double>>& demand,
                              double energy_cost, const PlanningParams& params) {
  double covered = 0.0;
  for (const auto& [p, w] : demand) {
    for (std::size_t b = 0; b < bs_positions.size(); ++b)
      if (on[b] && (bs_positions[b] - p).norm() <= params.coverage_range) {
        covered += w;
        break;
      }
  }
  double interference = 0.0;
  int n_on = 0;
  for (std::size_t a = 0; a < bs_positions.size(); ++a) {
    if (!on[a]) continue;
    ++n_on;
    for (std::size_t b = a + 1; b < bs_positions.size(); ++b)
      if (on[b])
        interference += params.tx_power *
                        friis_gain(params.wavelength, (bs_positions[a] - bs_positions[b]).norm());
  }
  return covered - params.w_interference * interference - energy_cost * n_on;
}

/// Greedy switch-off baseline: repeatedly turn off the BS whose removal
/// improves the objective the most, while at least one BS stays on.
inline OnOffResult onoff_schedule(const std::vector<Vec2>& bs_positions,
                                  const std::vector<std::pair<Vec2, double>>& demand,
                                  double energy_cost, const PlanningParams& params = {}) {
  if (bs_positions.empty()) throw std::invalid_argument("onoff_schedule: no base stations");
  OnOffResult res;
  res.on.assign(bs_positions.size(), true);
  double current = onoff_objective(res.on, bs_positions, demand, energy_cost, params);
  res.objective_trace.push_back(current);

  int n_on = static_cast<int>(bs_positions.size());
  while (n_on > 1) {
    int best = -1;
    double best_obj = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < bs_positions.size(); ++b) {
      if (!res.on[b]) continue;
      res.on[b] = false;
      const double obj = onoff_objective(res.on, bs_positions, demand, energy_cost, params);
      res.on[b] = true;
      if (obj > best_obj + 1e-15) {
        best_obj = obj;
        best = static_cast<int>(b);
      }
    }
    if (best < 0 || best_obj < current) break;
    res.on[best] = false;
    --n_on;
    current = best_obj;
    res.objective_trace.push_back(current);
  }
  return res;
}

struct AllocParams {
  double noise = 1e-13;  // watts
  double wavelength = speed_of_light / 5.5e9;
  double w_sense = 0.5;
  Vec2 sense_focus{0.0, 0.0};  // cell the sensing beams should insonify
  int pg_iterations = 60;
  int max_rounds = 8;
};

/// Network utility for a power/band assignment: sum-log comm rate over the
/// BS->UE links under co-band interference, plus weighted sensing power
/// delivered to the focus cell.
inline double allocation_utility(const Allocation& alloc, const std::vector<Vec2>& bs_positions,
                                 const std::vector<Vec2>& ue_positions, const AllocParams& params) {
  const int n = static_cast<int>(bs_positions.size());
  double util = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g_own = friis_gain(params.wavelength, (bs_positions[i] - ue_positions[i]).norm());
    double interference = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i || alloc.band[j] != alloc.band[i]) continue;
      interference += alloc.total_power(j) *
                      friis_gain(params.wavelength, (ue_positions[i] - bs_positions[j]).norm());
    }
    const double sinr = alloc.comm_power(i) * g_own / (params.noise + interference);
    util += std::log1p(sinr);
    util += params.w_sense * alloc.sense_power(i) *
            friis_gain(params.wavelength, (bs_positions[i] - params.sense_focus).norm());
  }
  return util;
}

namespace detail {

/// Project (comm, sense) onto {x >= 0, y >= 0, x + y <= budget}.
inline void project_power_pair(double& comm, double& sense, double budget) {
  comm = std::max(comm, 0.0);
  sense = std::max(sense, 0.0);
  const double total = comm + sense;
  if (total <= budget) return;
  // Euclidean projection onto the simplex face x + y = budget, x,y >= 0
  const double shift = (total - budget) / 2.0;
  comm -= shift;
  sense -= shift;
  if (comm < 0.0) {
    sense += comm;
    comm = 0.0;
  }
  if (sense < 0.0) {
    comm += sense;
    sense = 0.0;
  }
  comm = std::min(comm, budget);
  sense = std::min(sense, budget);
}

}  // namespace detail

struct AllocationResult {
  Allocation alloc;
  std::vector<double> objective_trace;  // after every accepted improvement
};

/// Alternating resource optimization: (a) projected-gradient ascent on the
/// per-BS beam powers with sub-bands fixed, (b) greedy improving sub-band
/// reassignment with powers fixed. The utility never decreases across
/// accepted steps; terminates after max_rounds or a round with no improvement.
inline AllocationResult allocate_power_bandwidth(const std::vector<Vec2>& bs_positions,
                                                 const std::vector<Vec2>& ue_positions,
                                                 const Eigen::VectorXd& budgets, int n_subbands,
                                                 const AllocParams& params = {}) {
  const int n = static_cast<int>(bs_positions.size());
  if (n == 0) throw std::invalid_argument("allocate_power_bandwidth: no base stations");
  if (ue_positions.size() != bs_positions.size())
    throw std::invalid_argument("allocate_power_bandwidth: one served UE per BS required");
  if (budgets.size() != n || budgets.minCoeff() <= 0.0)
    throw std::invalid_argument("allocate_power_bandwidth: budgets must be positive");
  if (n_subbands < 1) throw std::invalid_argument("allocate_power_bandwidth: n_subbands >= 1");

  AllocationResult res;
  res.alloc.comm_power = 0.5 * budgets;
  res.alloc.sense_power = 0.25 * budgets;
  res.alloc.band.resize(n);
  for (int i = 0; i < n; ++i) res.alloc.band[i] = i % n_subbands;

  double current = allocation_utility(res.alloc, bs_positions, ue_positions, params);
  res.objective_trace.push_back(current);

  for (int round = 0; round < params.max_rounds; ++round) {
    const double round_start = current;

    // (a) projected gradient on powers, numeric gradient, backtracking ascent
    for (int it = 0; it < params.pg_iterations; ++it) {
      Eigen::VectorXd grad_c(n), grad_s(n);
      const double eps = 1e-6;
      for (int i = 0; i < n; ++i) {
        Allocation probe = res.alloc;
        probe.comm_power(i) += eps;
        grad_c(i) = (allocation_utility(probe, bs_positions, ue_positions, params) - current) / eps;
        probe = res.alloc;
        probe.sense_power(i) += eps;
        grad_s(i) = (allocation_utility(probe, bs_positions, ue_positions, params) - current) / eps;
      }
      double step = 1.0;
      bool improved = false;
      for (int bt = 0; bt < 30; ++bt) {
        Allocation trial = res.alloc;
        for (int i = 0; i < n; ++i) {
          double c = trial.comm_power(i) + step * grad_c(i);
          double s = trial.sense_power(i) + step * grad_s(i);
          detail::project_power_pair(c, s, budgets(i));
          trial.comm_power(i) = c;
          trial.sense_power(i) = s;
        }
        const double trial_util = allocation_utility(trial, bs_positions, ue_positions, params);
        if (trial_util > current + 1e-12) {
          res.alloc = trial;
          current = trial_util;
          res.objective_trace.push_back(current);
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }

    // (b) greedy sub-band reassignment, best improving move per pass
    for (;;) {
      int best_bs = -1, best_band = -1;
      double best_util = current;
      for (int i = 0; i < n; ++i) {
        const int original = res.alloc.band[i];
        for (int b = 0; b < n_subbands; ++b) {
          if (b == original) continue;
          res.alloc.band[i] = b;
          const double u = allocation_utility(res.alloc, bs_positions, ue_positions, params);
          if (u > best_util + 1e-12) {
            best_util = u;
            best_bs = i;
            best_band = b;
          }
        }
        res.alloc.band[i] = original;
      }
      if (best_bs < 0) break;
      res.alloc.band[best_bs] = best_band;
      current = best_util;
      res.objective_trace.push_back(current);
    }

    if (current <= round_start + 1e-12) break;
  }
  return res;
}

}  // namespace isac
