#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <vector>

#include "isac/common.hpp"
#include "isac/estimation.hpp"
#include "isac/geometry.hpp"
#include "isac/phy.hpp"
#include "isac/ser.hpp"

namespace isac {

/// One detected target in BS-local polar coordinates.
struct TargetEstimate {
  double range = 0.0;            // meters
  double radial_velocity = 0.0;  // m/s, d(range)/dt
  double angle = 0.0;            // radians, boresight-relative
  double rcs_est = 0.0;          // m^2
  double snr = 0.0;              // dB
  double timestamp = 0.0;        // seconds
  bool angle_fallback = false;   // true when MUSIC failed and FFT angle was used
};

enum class TrackStatus { tentative, confirmed, coasting, dead };

inline const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::tentative: return "tentative";
    case TrackStatus::confirmed: return "confirmed";
    case TrackStatus::coasting: return "coasting";
    case TrackStatus::dead: return "dead";
  }
  return "?";
}

struct FeatureVector {
  double rcs_mean = 0.0;       // m^2
  double doppler_spread = 0.0; // Hz
  double speed_mean = 0.0;     // m/s
  double turn_rate = 0.0;      // rad/s
};

/// Constant-velocity Kalman track over (x, y, vx, vy) in the global frame.
struct Track {
  int id = 0;
  Eigen::Vector4d state = Eigen::Vector4d::Zero();
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  TrackStatus status = TrackStatus::tentative;
  int hits = 0;
  int misses = 0;  // consecutive
  std::vector<TargetEstimate> history;
  FeatureVector feature;

  // recent hit pattern for M-of-N confirmation (bit 0 = latest frame)
  unsigned recent_hits = 0;
  int age = 0;
  std::vector<Vec2> velocity_history;
};

struct SensingFeatureMsg {
  int bs_id = 0;
  double timestamp = 0.0;
  std::vector<TargetEstimate> detections;
};

/// Zero-Doppler notch: subtract the per-(antenna, subcarrier) mean over
/// symbols. Removes symbol-constant clutter entirely.
inline EchoTensor suppress_clutter(const EchoTensor& echo) {
  if (echo.n_symbols() < 2)
    throw std::invalid_argument("suppress_clutter: need at least 2 symbols");
  EchoTensor out = echo;
  const double inv_m = 1.0 / echo.n_symbols();
  for (int a = 0; a < echo.n_antennas(); ++a) {
    for (int k = 0; k < echo.n_subcarriers(); ++k) {
      cplx mean{0.0, 0.0};
      for (int m = 0; m < echo.n_symbols(); ++m) mean += echo(a, k, m);
      mean *= inv_m;
      for (int m = 0; m < echo.n_symbols(); ++m) out(a, k, m) -= mean;
    }
  }
  return out;
}

struct EstimateContext {
  ArrayConfig tx_array;
  double beam_angle = 0.0;  // transmit steering during this dwell
  double kappa = 1.0;
  double tx_power = 1.0;
  double timestamp = 0.0;
  int music_subbands = 8;
  double angle_grid_step = deg2rad(0.25);
  WindowMode window = WindowMode::rectangular;  // must match the map
};

/// Refine a detection cell into physical target parameters: parabolic peak
/// interpolation for range and Doppler, MUSIC over per-sub-band snapshots for
/// the angle (FFT beamformer fallback, flagged), and radar-equation inversion
/// for the RCS.
inline TargetEstimate estimate_parameters(const RangeDopplerMap& map, const CellDetection& cell,
                                          const EchoTensor& echo, const OfdmConfig& ofdm,
                                          const ArrayConfig& rx_array,
                                          const EstimateContext& ctx) {
  const int n_sc = echo.n_subcarriers(), n_sym = echo.n_symbols(), n_ant = echo.n_antennas();
  const int r0 = cell.range_bin, c0 = cell.doppler_bin;
  if (r0 < 0 || r0 >= map.n_range() || c0 < 0 || c0 >= map.n_doppler())
    throw std::invalid_argument("estimate_parameters: detection cell outside map");

  // range refinement (non-circular), Doppler refinement (circular)
  double dr = 0.0;
  if (r0 > 0 && r0 + 1 < map.n_range())
    dr = parabolic_offset(map.power(r0 - 1, c0), map.power(r0, c0), map.power(r0 + 1, c0));
  const int cm = (c0 - 1 + map.n_doppler()) % map.n_doppler();
  const int cp = (c0 + 1) % map.n_doppler();
  const double dc = parabolic_offset(map.power(r0, cm), map.power(r0, c0), map.power(r0, cp));

  TargetEstimate est;
  est.range = map.range_of_bin(r0 + dr);
  const double doppler = map.doppler_of_bin(c0 + dc);
  est.radial_velocity = -doppler * speed_of_light / (2.0 * ofdm.carrier_freq);
  est.snr = cell.snr_est;
  est.timestamp = ctx.timestamp;

  // angle from sub-band snapshots: Doppler-compensated per-band partial range
  // profiles evaluated at the detected range bin, windowed like the map so
  // strong off-cell targets do not leak into the snapshots
  double theta = ctx.beam_angle;
  if (n_ant >= 2) {
    std::vector<double> w_sym(n_sym, 1.0);
    if (ctx.window == WindowMode::hann)
      for (int m = 0; m < n_sym; ++m) w_sym[m] = 0.5 * (1.0 - std::cos(2.0 * pi * m / n_sym));
    const int bands = std::clamp(ctx.music_subbands, 1, n_sc);
    const int band_len = n_sc / bands;
    Eigen::MatrixXcd snapshots(n_ant, bands);
    for (int b = 0; b < bands; ++b) {
      for (int a = 0; a < n_ant; ++a) {
        cplx acc{0.0, 0.0};
        for (int k = b * band_len; k < (b + 1) * band_len; ++k) {
          cplx dopp{0.0, 0.0};
          for (int m = 0; m < n_sym; ++m)
            dopp += echo(a, k, m) * w_sym[m] *
                    std::polar(1.0, -2.0 * pi * c0 * m / double(n_sym));
          acc += dopp * std::polar(1.0, 2.0 * pi * k * r0 / double(n_sc));
        }
        snapshots(a, b) = acc;
      }
    }
    std::vector<double> grid;
    for (double th = deg2rad(-89.0); th <= deg2rad(89.0) + 1e-12; th += ctx.angle_grid_step)
      grid.push_back(th);
    Eigen::VectorXd spectrum;
    try {
      spectrum = music_spectrum(snapshots, rx_array, ofdm.wavelength(), 1, grid);
    } catch (const numerical_rank_error&) {
      spectrum = bartlett_spectrum(snapshots, rx_array, ofdm.wavelength(), grid);
      est.angle_fallback = true;
    } catch (const std::invalid_argument&) {
      spectrum = bartlett_spectrum(snapshots, rx_array, ofdm.wavelength(), grid);
      est.angle_fallback = true;
    }
    Eigen::Index imax;
    spectrum.maxCoeff(&imax);
    theta = grid[imax];
    if (imax > 0 && imax + 1 < spectrum.size())
      theta += ctx.angle_grid_step *
               parabolic_offset(spectrum(imax - 1), spectrum(imax), spectrum(imax + 1));
  } else {
    est.angle_fallback = true;
  }
  est.angle = theta;

  // radar-equation inversion; map peak power for a unit-modulus steering
  // response is A^2 * G_w(n_sc) * G_w(n_sym) * n_ant under unitary transforms
  const double amp2 = map.power(r0, c0) / (window_coherent_gain(ctx.window, n_sc) *
                                           window_coherent_gain(ctx.window, n_sym) * n_ant);
  const double gain = beam_gain(ctx.tx_array, ctx.beam_angle, theta, ofdm.wavelength());
  const double r4 = std::pow(est.range, 4);
  est.rcs_est = amp2 * r4 / (ctx.kappa * ctx.kappa * ctx.tx_power * std::max(gain, 1e-12));
  return est;
}

struct SearchParams {
  double scan_min = deg2rad(-80.0);
  double scan_max = deg2rad(80.0);
  int cfar_train = 2;
  int cfar_guard = 1;
  double pfa = 1e-3;
  double kappa = 1.0;
  std::uint64_t seed = 0;
  double merge_radius = 0.0;  // <= 0: use 2 x range bin
  int max_per_beam = 8;
  int nms_bins = 3;   // exclusion zone around accepted peaks, bins per axis
  int dc_guard = 1;   // Doppler blind zone around the clutter notch, bins
  double timestamp = 0.0;
  WindowMode window = WindowMode::hann;  // sidelobe control during search
};

namespace detail {

/// Keep only CFAR hits that are strict local maxima and not inside the
/// exclusion zone of an already-accepted stronger hit. Both transform axes
/// are circular, so distances wrap; `dc_guard` blanks the residual leakage
/// around the clutter notch.
inline std::vector<CellDetection> prune_peaks(const std::vector<CellDetection>& cells,
                                              const RangeDopplerMap& map, int nms_bins,
                                              int dc_guard) {
  auto circ_dist = [](int a, int b, int n) {
    const int d = std::abs(a - b);
    return std::min(d, n - d);
  };
  std::vector<CellDetection> kept;  // cells arrive sorted by power descending
  for (const auto& c : cells) {
    if (circ_dist(c.doppler_bin, 0, map.n_doppler()) <= dc_guard) continue;
    bool is_peak = true;
    for (int di = -1; di <= 1 && is_peak; ++di) {
      const int ii = (c.range_bin + di + map.n_range()) % map.n_range();
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        const int jj = (c.doppler_bin + dj + map.n_doppler()) % map.n_doppler();
        if (map.power(ii, jj) > map.power(c.range_bin, c.doppler_bin)) {
          is_peak = false;
          break;
        }
      }
    }
    if (!is_peak) continue;
    bool shadowed = false;
    for (const auto& k : kept) {
      if (circ_dist(c.range_bin, k.range_bin, map.n_range()) <= nms_bins &&
          circ_dist(c.doppler_bin, k.doppler_bin, map.n_doppler()) <= nms_bins) {
        shadowed = true;
        break;
      }
    }
    if (!shadowed) kept.push_back(c);
  }
  return kept;
}

}  // namespace detail

/// One full search sweep: per beam synthesize echo, notch clutter, form the
/// range-Doppler map, CFAR with peak pruning, refine each detection, then
/// merge duplicates seen from adjacent beams (weighted centroid in local
/// Cartesian).
inline std::vector<TargetEstimate> search_scan(const Scene& scene, int bs_id,
                                               const OfdmConfig& ofdm, double angle_step,
                                               const SearchParams& params = {}) {
  if (angle_step <= 0.0) throw std::invalid_argument("search_scan: angle_step must be > 0");
  detail::check_bs_id(scene, bs_id, "search_scan");
  const BaseStation& bs = scene.bs_list[bs_id];

  std::vector<TargetEstimate> raw;
  Rng beam_seed(params.seed);
  int beam_index = 0;
  for (double beam = params.scan_min; beam <= params.scan_max + 1e-12; beam += angle_step) {
    const std::uint64_t seed = beam_seed.child(static_cast<std::uint64_t>(beam_index++)).seed();
    EchoTensor echo = synthesize_echo(scene, bs_id, ofdm, beam, seed, params.kappa);
    EchoTensor clean = suppress_clutter(echo);
    RangeDopplerMap map = range_doppler_map(clean, ofdm, CombineMode::noncoherent, params.window);
    std::vector<CellDetection> cells =
        detail::prune_peaks(ca_cfar(map, params.cfar_train, params.cfar_guard, params.pfa), map,
                            params.nms_bins, params.dc_guard);
    if (static_cast<int>(cells.size()) > params.max_per_beam)
      cells.resize(params.max_per_beam);

    EstimateContext ctx;
    ctx.tx_array = bs.tx_array;
    ctx.beam_angle = beam;
    ctx.kappa = params.kappa;
    ctx.tx_power = bs.tx_power;
    ctx.timestamp = params.timestamp;
    ctx.window = params.window;
    for (const auto& cell : cells)
      raw.push_back(estimate_parameters(map, cell, clean, ofdm, bs.rx_array, ctx));
  }

  // merge beam-to-beam duplicates
  const double radius = params.merge_radius > 0.0 ? params.merge_radius : 2.0 * ofdm.range_bin_size();
  std::sort(raw.begin(), raw.end(),
            [](const TargetEstimate& a, const TargetEstimate& b) { return a.snr > b.snr; });
  std::vector<bool> used(raw.size(), false);
  std::vector<TargetEstimate> merged;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (used[i]) continue;
    const Vec2 pi_ = raw[i].range * unit_vector(raw[i].angle);
    Vec2 acc = Vec2::Zero();
    double wsum = 0.0, v_acc = 0.0, rcs_acc = 0.0;
    used[i] = true;
    std::vector<std::size_t> members{i};
    for (std::size_t j = i + 1; j < raw.size(); ++j) {
      if (used[j]) continue;
      const Vec2 pj = raw[j].range * unit_vector(raw[j].angle);
      if ((pj - pi_).norm() <= radius) {
        used[j] = true;
        members.push_back(j);
      }
    }
    for (std::size_t j : members) {
      const double w = db_to_pow(raw[j].snr);
      acc += w * (raw[j].range * unit_vector(raw[j].angle));
      v_acc += w * raw[j].radial_velocity;
      rcs_acc += w * raw[j].rcs_est;
      wsum += w;
    }
    const Vec2 p = acc / wsum;
    TargetEstimate out = raw[i];
    out.range = p.norm();
    out.angle = std::atan2(p.y(), p.x());
    out.radial_velocity = v_acc / wsum;
    out.rcs_est = rcs_acc / wsum;
    merged.push_back(out);
  }
  return merged;
}

struct TrackerParams {
  double sigma_accel = 1.0;        // white acceleration, m/s^2
  double gate = 9.210;             // chi-square 99%, 2 dof
  int confirm_m = 2;               // M-of-N confirmation
  int confirm_n = 3;
  int delete_after_misses = 5;
  double sigma_range = 1.0;        // measurement std, meters (bin/sqrt(12) at callers)
  double sigma_angle = deg2rad(1.0);
  double init_speed_sigma = 30.0;  // prior velocity std for new tracks
};

namespace detail {

inline Eigen::Matrix2d polar_measurement_covariance(double range, double global_bearing,
                                                    const TrackerParams& p) {
  Eigen::Matrix2d rot;
  rot << std::cos(global_bearing), -std::sin(global_bearing), std::sin(global_bearing),
      std::cos(global_bearing);
  Eigen::Matrix2d diag = Eigen::Matrix2d::Zero();
  diag(0, 0) = p.sigma_range * p.sigma_range;
  diag(1, 1) = (range * p.sigma_angle) * (range * p.sigma_angle);
  return rot * diag * rot.transpose();
}

inline void update_feature(Track& t, double carrier_freq, double dt) {
  if (t.history.empty()) return;
  double rcs_acc = 0.0, vr_mean = 0.0;
  for (const auto& h : t.history) {
    rcs_acc += h.rcs_est;
    vr_mean += h.radial_velocity;
  }
  rcs_acc /= t.history.size();
  vr_mean /= t.history.size();
  double vr_var = 0.0;
  for (const auto& h : t.history)
    vr_var += (h.radial_velocity - vr_mean) * (h.radial_velocity - vr_mean);
  vr_var /= t.history.size();

  t.feature.rcs_mean = rcs_acc;
  t.feature.doppler_spread = 2.0 * carrier_freq * std::sqrt(vr_var) / speed_of_light;
  t.feature.speed_mean = t.state.tail<2>().norm();
  if (t.velocity_history.size() >= 2 && dt > 0.0) {
    double acc = 0.0;
    int n = 0;
    for (std::size_t i = 1; i < t.velocity_history.size(); ++i) {
      const Vec2 &a = t.velocity_history[i - 1], &b = t.velocity_history[i];
      if (a.norm() < 1e-6 || b.norm() < 1e-6) continue;
      acc += std::abs(wrap_pi(std::atan2(b.y(), b.x()) - std::atan2(a.y(), a.x()))) / dt;
      ++n;
    }
    t.feature.turn_rate = n > 0 ? acc / n : 0.0;
  }
}

}  // namespace detail

/// One tracker frame: constant-velocity predict, gated global-nearest-neighbor
/// association, Kalman update (Joseph form), M-of-N status management, and
/// track initiation from leftover detections. `carrier_freq` feeds the feature
/// extraction; measurements arrive in BS-local polar and are converted through
/// the BS pose.
inline std::vector<Track> track_update(const std::vector<Track>& tracks,
                                       const std::vector<TargetEstimate>& detections, double dt,
                                       const Vec2& bs_pos, double array_orientation,
                                       const TrackerParams& params = {},
                                       double carrier_freq = 5.5e9) {
  if (dt <= 0.0) throw std::invalid_argument("track_update: dt must be > 0");
  std::vector<Track> out = tracks;

  Eigen::Matrix4d F = Eigen::Matrix4d::Identity();
  F(0, 2) = dt;
  F(1, 3) = dt;
  Eigen::Matrix4d Q = Eigen::Matrix4d::Zero();
  {
    const double s2 = params.sigma_accel * params.sigma_accel;
    const double d2 = dt * dt, d3 = d2 * dt, d4 = d3 * dt;
    for (int axis = 0; axis < 2; ++axis) {
      Q(axis, axis) = s2 * d4 / 4.0;
      Q(axis, axis + 2) = Q(axis + 2, axis) = s2 * d3 / 2.0;
      Q(axis + 2, axis + 2) = s2 * d2;
    }
  }

  for (Track& t : out) {
    if (t.status == TrackStatus::dead) continue;
    t.state = F * t.state;
    t.covariance = F * t.covariance * F.transpose() + Q;
    ++t.age;
  }

  // measurement conversion
  struct Meas {
    Vec2 z;
    Eigen::Matrix2d r;
    const TargetEstimate* det;
  };
  std::vector<Meas> meas;
  for (const auto& d : detections) {
    const double global_bearing = array_orientation + d.angle;
    Meas m;
    m.z = bs_pos + d.range * unit_vector(global_bearing);
    m.r = detail::polar_measurement_covariance(d.range, global_bearing, params);
    m.det = &d;
    meas.push_back(m);
  }

  Eigen::Matrix<double, 2, 4> H = Eigen::Matrix<double, 2, 4>::Zero();
  H(0, 0) = 1.0;
  H(1, 1) = 1.0;

  // gated GNN association: smallest Mahalanobis distance first
  struct Pair {
    double d2;
    std::size_t ti, mi;
  };
  std::vector<Pair> pairs;
  for (std::size_t ti = 0; ti < out.size(); ++ti) {
    Track& t = out[ti];
    if (t.status == TrackStatus::dead) continue;
    const Eigen::Matrix2d s = H * t.covariance * H.transpose() +
                              Eigen::Matrix2d::Identity() * 1e-12;
    for (std::size_t mi = 0; mi < meas.size(); ++mi) {
      const Eigen::Matrix2d sm = s + meas[mi].r;
      const Eigen::Vector2d innov = meas[mi].z - H * t.state;
      const double d2 = innov.dot(sm.ldlt().solve(innov));
      if (d2 <= params.gate) pairs.push_back({d2, ti, mi});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d2 < b.d2; });

  std::vector<bool> track_used(out.size(), false), meas_used(meas.size(), false);
  for (const Pair& p : pairs) {
    if (track_used[p.ti] || meas_used[p.mi]) continue;
    track_used[p.ti] = true;
    meas_used[p.mi] = true;

    Track& t = out[p.ti];
    const Eigen::Matrix2d s = H * t.covariance * H.transpose() + meas[p.mi].r +
                              Eigen::Matrix2d::Identity() * 1e-15;
    const Eigen::Matrix<double, 4, 2> gain = t.covariance * H.transpose() * s.inverse();
    t.state += gain * (meas[p.mi].z - H * t.state);
    const Eigen::Matrix4d ikh = Eigen::Matrix4d::Identity() - gain * H;
    t.covariance = ikh * t.covariance * ikh.transpose() + gain * meas[p.mi].r * gain.transpose();
    t.covariance = 0.5 * (t.covariance + t.covariance.transpose());

    ++t.hits;
    t.misses = 0;
    t.recent_hits = ((t.recent_hits << 1) | 1u);
    t.history.push_back(*meas[p.mi].det);
    t.velocity_history.push_back(t.state.tail<2>());
    if (t.status == TrackStatus::coasting) t.status = TrackStatus::confirmed;
    if (t.status == TrackStatus::tentative) {
      unsigned window = t.recent_hits;
      int count = 0;
      for (int b = 0; b < params.confirm_n; ++b) count += (window >> b) & 1u;
      if (count >= params.confirm_m) t.status = TrackStatus::confirmed;
    }
  }

  for (std::size_t ti = 0; ti < out.size(); ++ti) {
    Track& t = out[ti];
    if (t.status == TrackStatus::dead || track_used[ti]) continue;
    ++t.misses;
    t.recent_hits = (t.recent_hits << 1);
    if (t.status == TrackStatus::confirmed) t.status = TrackStatus::coasting;
    if (t.misses >= params.delete_after_misses) t.status = TrackStatus::dead;
  }

  int next_id = 0;
  for (const Track& t : out) next_id = std::max(next_id, t.id + 1);
  for (std::size_t mi = 0; mi < meas.size(); ++mi) {
    if (meas_used[mi]) continue;
    Track t;
    t.id = next_id++;
    t.state << meas[mi].z.x(), meas[mi].z.y(), 0.0, 0.0;
    t.covariance = Eigen::Matrix4d::Zero();
    t.covariance.topLeftCorner<2, 2>() = meas[mi].r;
    t.covariance(2, 2) = t.covariance(3, 3) = params.init_speed_sigma * params.init_speed_sigma;
    t.status = TrackStatus::tentative;
    t.hits = 1;
    t.recent_hits = 1u;
    t.age = 1;
    t.history.push_back(*meas[mi].det);
    out.push_back(t);
  }

  for (Track& t : out)
    if (t.status != TrackStatus::dead) detail::update_feature(t, carrier_freq, dt);
  return out;
}

struct BeamSteerParams {
  double native_width = deg2rad(12.8);  // ~0.886 lambda / (N d) for the default array
  double sigma_factor = 3.0;            // beam width per bearing sigma
  double coast_widen = 2.0;
};

/// Tracking-beam command for a live track: point at the predicted bearing and
/// open the beam with the bearing uncertainty. Returns (boresight-relative
/// angle, width).
inline std::pair<double, double> steer_tracking_beam(const Track& track, const Vec2& bs_pos,
                                                     double array_orientation,
                                                     const BeamSteerParams& params = {}) {
  if (track.status == TrackStatus::dead)
    throw state_error("steer_tracking_beam: track " + std::to_string(track.id) + " is dead");
  if (track.status == TrackStatus::tentative)
    throw state_error("steer_tracking_beam: track " + std::to_string(track.id) +
                      " is not confirmed");
  const Vec2 rel{track.state(0) - bs_pos.x(), track.state(1) - bs_pos.y()};
  const double range = std::max(rel.norm(), 1e-9);
  const double global_bearing = std::atan2(rel.y(), rel.x());

  // project position covariance on the tangential direction
  const Vec2 tangent{-std::sin(global_bearing), std::cos(global_bearing)};
  const Eigen::Matrix2d p_pos = track.covariance.topLeftCorner<2, 2>();
  const double sigma_t = std::sqrt(std::max(tangent.dot(p_pos * tangent), 0.0));
  const double sigma_bearing = sigma_t / range;

  double width = std::max(params.native_width, params.sigma_factor * sigma_bearing);
  if (track.status == TrackStatus::coasting) width *= params.coast_widen;
  return {wrap_pi(global_bearing - array_orientation), width};
}

struct ClassificationResult {
  TargetClass label = TargetClass::vehicle;
  double score = 0.0;  // softmin over z-scored distances
  bool tie = false;
};

/// Nearest labeled centroid in z-scored feature space; ties break toward the
/// lower enum value and are reported.
inline ClassificationResult classify_target(
    const FeatureVector& feature,
    const std::vector<std::pair<TargetClass, FeatureVector>>& centroids) {
  if (centroids.empty()) throw std::invalid_argument("classify_target: no centroids");
  auto to_vec = [](const FeatureVector& f) {
    return Eigen::Vector4d{f.rcs_mean, f.doppler_spread, f.speed_mean, f.turn_rate};
  };
  const Eigen::Vector4d x = to_vec(feature);
  if (!x.allFinite()) throw std::invalid_argument("classify_target: non-finite feature");

  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  for (const auto& [label, c] : centroids) mean += to_vec(c);
  mean /= static_cast<double>(centroids.size());
  Eigen::Vector4d var = Eigen::Vector4d::Zero();
  for (const auto& [label, c] : centroids) {
    const Eigen::Vector4d d = to_vec(c) - mean;
    var += d.cwiseProduct(d);
  }
  var /= static_cast<double>(centroids.size());
  Eigen::Vector4d scale = var.cwiseSqrt();
  for (int i = 0; i < 4; ++i)
    if (scale(i) < 1e-12) scale(i) = 1.0;

  std::vector<double> dist(centroids.size());
  for (std::size_t i = 0; i < centroids.size(); ++i)
    dist[i] = ((to_vec(centroids[i].second) - x).cwiseQuotient(scale)).norm();

  std::size_t best = 0;
  for (std::size_t i = 1; i < centroids.size(); ++i) {
    if (dist[i] < dist[best] - 1e-12) best = i;
    else if (std::abs(dist[i] - dist[best]) <= 1e-12 &&
             centroids[i].first < centroids[best].first)
      best = i;
  }

  double denom = 0.0;
  for (double d : dist) denom += std::exp(-d);
  ClassificationResult res;
  res.label = centroids[best].first;
  res.score = std::exp(-dist[best]) / denom;
  for (std::size_t i = 0; i < centroids.size(); ++i)
    if (i != best && std::abs(dist[i] - dist[best]) <= 1e-12) res.tie = true;
  return res;
}

struct BsPose {
  Vec2 position{0.0, 0.0};
  double orientation = 0.0;
};

struct FusedTarget {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  bool radial_only = false;  // velocity observed along one bearing only
  double rcs = 0.0;
  double snr = 0.0;
  double timestamp = 0.0;
  int n_observers = 1;
};

struct FusionParams {
  double sync_tolerance = 1e-3;  // seconds
  double gate_radius = 5.0;      // meters
  double sigma_range = 1.0;
  double sigma_angle = deg2rad(1.0);
  double min_bearing_separation = deg2rad(15.0);
};

struct FusionResult {
  std::vector<FusedTarget> targets;
  std::vector<std::pair<int, std::string>> rejected;  // (bs_id, reason)
};

/// Fusion center for sensing-feature messages from multiple BSs: reject stale
/// messages, globalize per-BS polar detections, cluster, fuse positions by
/// inverse-variance weighting, and solve fused velocities from radial
/// components when the bearing spread allows it.
inline FusionResult fuse_detections_multibs(const std::vector<SensingFeatureMsg>& msgs,
                                            const std::vector<BsPose>& poses,
                                            const FusionParams& params = {}) {
  FusionResult result;
  if (msgs.empty()) return result;

  double t_ref = msgs.front().timestamp;
  for (const auto& m : msgs) t_ref = std::max(t_ref, m.timestamp);

  struct GlobalDet {
    Vec2 z;
    Eigen::Matrix2d cov;
    Vec2 bearing_unit;
    double radial_velocity;
    double rcs;
    double snr;
    int bs_id;
  };
  std::vector<GlobalDet> dets;
  for (const auto& msg : msgs) {
    if (std::abs(msg.timestamp - t_ref) > params.sync_tolerance) {
      result.rejected.push_back({msg.bs_id,
                                 "stale timestamp: " + std::to_string(msg.timestamp) +
                                     " vs reference " + std::to_string(t_ref)});
      continue;
    }
    if (msg.bs_id < 0 || msg.bs_id >= static_cast<int>(poses.size())) {
      result.rejected.push_back({msg.bs_id, "unknown bs_id"});
      continue;
    }
    const BsPose& pose = poses[msg.bs_id];
    for (const auto& d : msg.detections) {
      GlobalDet g;
      const double global_bearing = pose.orientation + d.angle;
      g.z = pose.position + d.range * unit_vector(global_bearing);
      Eigen::Matrix2d rot;
      rot << std::cos(global_bearing), -std::sin(global_bearing), std::sin(global_bearing),
          std::cos(global_bearing);
      Eigen::Matrix2d diag = Eigen::Matrix2d::Zero();
      diag(0, 0) = params.sigma_range * params.sigma_range;
      diag(1, 1) = (d.range * params.sigma_angle) * (d.range * params.sigma_angle);
      g.cov = rot * diag * rot.transpose();
      g.bearing_unit = unit_vector(global_bearing);
      g.radial_velocity = d.radial_velocity;
      g.rcs = d.rcs_est;
      g.snr = d.snr;
      g.bs_id = msg.bs_id;
      dets.push_back(g);
    }
  }

  std::sort(dets.begin(), dets.end(),
            [](const GlobalDet& a, const GlobalDet& b) { return a.snr > b.snr; });
  std::vector<bool> used(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (used[i]) continue;
    std::vector<std::size_t> cluster{i};
    used[i] = true;
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (used[j]) continue;
      if ((dets[j].z - dets[i].z).norm() <= params.gate_radius) {
        used[j] = true;
        cluster.push_back(j);
      }
    }

    Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
    Eigen::Vector2d info_vec = Eigen::Vector2d::Zero();
    double rcs_acc = 0.0, snr_max = -1e30;
    for (std::size_t j : cluster) {
      const Eigen::Matrix2d inv = dets[j].cov.inverse();
      info += inv;
      info_vec += inv * dets[j].z;
      rcs_acc += dets[j].rcs;
      snr_max = std::max(snr_max, dets[j].snr);
    }

    FusedTarget ft;
    ft.position = info.ldlt().solve(info_vec);
    ft.rcs = rcs_acc / cluster.size();
    ft.snr = snr_max;
    ft.timestamp = t_ref;
    ft.n_observers = static_cast<int>(cluster.size());

    // velocity: least squares over radial projections when two bearings differ
    // enough, otherwise flag radial-only
    double max_sep = 0.0;
    for (std::size_t a = 0; a < cluster.size(); ++a)
      for (std::size_t b = a + 1; b < cluster.size(); ++b) {
        const double dot = std::clamp(
            dets[cluster[a]].bearing_unit.dot(dets[cluster[b]].bearing_unit), -1.0, 1.0);
        max_sep = std::max(max_sep, std::acos(dot));
      }
    if (cluster.size() >= 2 && max_sep > params.min_bearing_separation) {
      Eigen::Matrix2d ata = Eigen::Matrix2d::Zero();
      Eigen::Vector2d atb = Eigen::Vector2d::Zero();
      for (std::size_t j : cluster) {
        const Eigen::Vector2d u = dets[j].bearing_unit;
        ata += u * u.transpose();
        atb += u * dets[j].radial_velocity;
      }
      ft.velocity = ata.ldlt().solve(atb);
      ft.radial_only = false;
    } else {
      ft.velocity = dets[cluster.front()].radial_velocity * dets[cluster.front()].bearing_unit;
      ft.radial_only = true;
    }
    result.targets.push_back(ft);
  }
  return result;
}

}  // namespace isac
