#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <json.hpp>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "isac/csv.hpp"
#include "isac/dts.hpp"
#include "isac/netmgmt.hpp"
#include "isac/omr.hpp"
#include "isac/scenario.hpp"
#include "isac/ser.hpp"

namespace isac {

enum class Pipeline { ser, dts, omr, net, e2e };

inline Pipeline parse_pipeline(const std::string& s) {
  if (s == "ser") return Pipeline::ser;
  if (s == "dts") return Pipeline::dts;
  if (s == "omr") return Pipeline::omr;
  if (s == "net") return Pipeline::net;
  if (s == "e2e") return Pipeline::e2e;
  throw std::invalid_argument("unknown pipeline '" + s + "' (expected ser|dts|omr|net|e2e)");
}

inline const char* to_string(Pipeline p) {
  switch (p) {
    case Pipeline::ser: return "ser";
    case Pipeline::dts: return "dts";
    case Pipeline::omr: return "omr";
    case Pipeline::net: return "net";
    case Pipeline::e2e: return "e2e";
  }
  return "?";
}

struct RunManifest {
  std::string scenario;
  std::string pipeline;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<std::pair<std::string, std::string>> artifacts;  // (file name, digest)
};

namespace detail {

class ArtifactDir {
 public:
  explicit ArtifactDir(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
  }

  std::filesystem::path file(const std::string& name) {
    names_.push_back(name);
    return dir_ / name;
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> names_;
};

inline void write_point_map(const PointCloudMap& map, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.header({"x", "y", "confidence", "power_db"});
  for (const auto& p : map.points)
    w.row({p.position.x(), p.position.y(), p.confidence, p.power_db});
}

inline std::vector<std::pair<TargetClass, FeatureVector>> builtin_centroids() {
  return {
      {TargetClass::pedestrian, {0.5, 1.0, 1.4, 0.1}},
      {TargetClass::vehicle, {10.0, 1.0, 15.0, 0.05}},
      {TargetClass::uav, {0.05, 1.0, 8.0, 0.3}},
      {TargetClass::bird, {0.01, 1.0, 10.0, 0.5}},
  };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// two-target resolution probes (diagnostics shared by the dts pipeline and
// the verification suite)

struct ResolutionProbe {
  bool resolved = false;
  double peak_separation = 0.0;  // measured, in physical units
  double valley_db = 0.0;        // depth below the weaker peak
};

namespace detail {

/// Find peaks of a fine-grid power profile and decide the two-target case:
/// resolved means exactly two dominant local maxima with a >= 3 dB valley.
inline ResolutionProbe analyze_profile(const std::vector<double>& power,
                                       const std::vector<double>& axis) {
  ResolutionProbe out;
  std::vector<int> peaks;
  for (int i = 1; i + 1 < static_cast<int>(power.size()); ++i)
    if (power[i] > power[i - 1] && power[i] >= power[i + 1]) peaks.push_back(i);
  if (peaks.empty()) return out;
  std::sort(peaks.begin(), peaks.end(), [&](int a, int b) { return power[a] > power[b]; });
  // dominant peaks: within 10 dB of the strongest
  std::vector<int> dominant;
  for (int p : peaks)
    if (power[p] >= power[peaks[0]] * 0.1) dominant.push_back(p);
  if (dominant.size() != 2) return out;
  int lo = std::min(dominant[0], dominant[1]);
  int hi = std::max(dominant[0], dominant[1]);
  double valley = power[lo];
  for (int i = lo; i <= hi; ++i) valley = std::min(valley, power[i]);
  const double weaker = std::min(power[lo], power[hi]);
  out.peak_separation = std::abs(axis[hi] - axis[lo]);
  out.valley_db = pow_to_db(weaker / std::max(valley, 1e-300));
  out.resolved = out.valley_db >= 3.0;
  return out;
}

}  // namespace detail

/// Two equal-amplitude targets at the same angle and velocity, separated in
/// range; the profile is an oversampled range cut of the echo.
inline ResolutionProbe probe_range_resolution(double bandwidth, double separation, double snr_db,
                                              std::uint64_t seed, int n_subcarriers = 256,
                                              double carrier_freq = 26.0e9) {
  const double df = bandwidth / n_subcarriers;
  OfdmConfig ofdm = make_ofdm(carrier_freq, df, n_subcarriers, 4, 0.1 / df);
  const double bin = ofdm.range_bin_size();
  const double r1 = 100.0 * bin;  // on-grid anchor

  SceneConfig cfg;
  BaseStation bs;
  bs.position = {0.0, 0.0};
  bs.tx_array = {1, 0.5 * ofdm.wavelength(), 0.0};
  bs.rx_array = {1, 0.5 * ofdm.wavelength(), 0.0};
  cfg.bs.push_back(bs);
  cfg.bounds = {Vec2{-1e5, -1e5}, Vec2{1e5, 1e5}};
  DynamicTarget t1, t2;
  t1.position = {r1, 0.0};
  t1.rcs = 1.0;
  t2.position = {r1 + separation, 0.0};
  t2.rcs = std::pow((r1 + separation) / r1, 4);  // equal echo amplitudes
  cfg.targets = {t1, t2};
  Scene scene = build_scene(cfg, 0);

  EchoTensor echo = add_noise(synthesize_echo(scene, 0, ofdm, 0.0, seed), snr_db, seed + 1);

  // oversampled range profile around the pair, averaged over symbols
  const double u1 = 2.0 * r1 * df * n_subcarriers / speed_of_light;
  const double u2 = 2.0 * (r1 + separation) * df * n_subcarriers / speed_of_light;
  std::vector<double> power, axis;
  for (double u = u1 - 3.0; u <= u2 + 3.0; u += 1.0 / 16.0) {
    double acc = 0.0;
    for (int m = 0; m < ofdm.n_symbols; ++m) {
      cplx s{0.0, 0.0};
      for (int k = 0; k < n_subcarriers; ++k)
        s += echo(0, k, m) * std::polar(1.0, 2.0 * pi * k * u / n_subcarriers);
      acc += std::norm(s);
    }
    power.push_back(acc);
    axis.push_back(u * ofdm.range_bin_size());
  }
  return detail::analyze_profile(power, axis);
}

/// Two equal-amplitude targets at the same range and angle, separated in
/// radial velocity; the profile is an oversampled Doppler cut.
inline ResolutionProbe probe_velocity_resolution(double carrier_freq, int n_symbols,
                                                 double symbol_duration, double separation,
                                                 double snr_db, std::uint64_t seed) {
  const double df = 120e3;
  OfdmConfig ofdm =
      make_ofdm(carrier_freq, df, 16, n_symbols, symbol_duration - 1.0 / df);
  const double v_bin = ofdm.velocity_bin_size();
  const double v1 = 5.0 * v_bin;  // on-grid anchor

  SceneConfig cfg;
  BaseStation bs;
  bs.position = {0.0, 0.0};
  bs.tx_array = {1, 0.5 * ofdm.wavelength(), 0.0};
  bs.rx_array = {1, 0.5 * ofdm.wavelength(), 0.0};
  cfg.bs.push_back(bs);
  DynamicTarget t1, t2;
  t1.position = {60.0, 0.0};
  t1.velocity = {v1, 0.0};
  t2.position = {60.0, 0.0};
  t2.velocity = {v1 + separation, 0.0};
  cfg.targets = {t1, t2};
  Scene scene = build_scene(cfg, 0);

  EchoTensor echo = add_noise(synthesize_echo(scene, 0, ofdm, 0.0, seed), snr_db, seed + 1);

  const double p1 = -2.0 * v1 * carrier_freq / speed_of_light / ofdm.doppler_bin_hz();
  const double p2 = -2.0 * (v1 + separation) * carrier_freq / speed_of_light / ofdm.doppler_bin_hz();
  const double lo = std::min(p1, p2) - 3.0, hi = std::max(p1, p2) + 3.0;
  std::vector<double> power, axis;
  for (double p = lo; p <= hi; p += 1.0 / 16.0) {
    double acc = 0.0;
    for (int k = 0; k < ofdm.n_subcarriers; ++k) {
      cplx s{0.0, 0.0};
      for (int m = 0; m < n_symbols; ++m)
        s += echo(0, k, m) * std::polar(1.0, -2.0 * pi * m * p / n_symbols);
      acc += std::norm(s);
    }
    power.push_back(acc);
    // convert Doppler bin to radial speed; sign flips under the closing-target convention
    axis.push_back(-p * ofdm.doppler_bin_hz() * speed_of_light / (2.0 * carrier_freq));
  }
  return detail::analyze_profile(power, axis);
}

// ---------------------------------------------------------------------------
// SER pipeline

inline void run_ser_pipeline(const ScenarioDoc& doc, std::uint64_t seed,
                             detail::ArtifactDir& out) {
  const Rng root(seed);
  Scene scene = build_scene(doc.scene, root.child("scene").seed());
  const double merge_radius =
      doc.ser.merge_radius > 0.0 ? doc.ser.merge_radius : 2.0 * doc.ofdm.range_bin_size();

  std::vector<PointCloudMap> local_maps;
  std::vector<Vec2> bs_positions;
  int dropped_total = 0;

  for (std::size_t b = 0; b < scene.bs_list.size(); ++b) {
    const BaseStation& bs = scene.bs_list[b];
    if (!bs.on) continue;
    PointCloudMap local;
    if (!scene.ue_list.empty()) {
      VirtualUeTrajectory traj = select_virtual_ue(scene.ue_list, bs.position, doc.ser.max_gap);
      Rng noise_rng = root.child("ue_noise").child(static_cast<std::uint64_t>(b));
      for (std::size_t u = 0; u < traj.ue_ids.size(); ++u) {
        const int ue_id = traj.ue_ids[u];
        ChannelTensor channel =
            synthesize_channel(scene, static_cast<int>(b), ue_id, doc.ofdm);
        const Vec2 ue_pos = traj.positions[u];
        const double los_delay = (ue_pos - bs.position).norm() / speed_of_light;
        auto paths = extract_paths(channel, bs.tx_array, doc.ofdm, doc.ser.max_paths,
                                   doc.ser.stop_threshold, los_delay);
        Vec2 ue_noisy = ue_pos;
        if (doc.ser.ue_position_noise > 0.0) {
          ue_noisy.x() += noise_rng.normal(0.0, doc.ser.ue_position_noise);
          ue_noisy.y() += noise_rng.normal(0.0, doc.ser.ue_position_noise);
        }
        auto rec =
            reconstruct_from_ue(bs.position, ue_noisy, paths, bs.tx_array.orientation);
        dropped_total += rec.dropped;
        local.points.insert(local.points.end(), rec.map.points.begin(), rec.map.points.end());
      }
    }
    detail::write_point_map(local, out.file("map_bs" + std::to_string(b) + ".csv"));
    local_maps.push_back(std::move(local));
    bs_positions.push_back(bs.position);
  }

  MultiBsFuseParams fuse_params;
  fuse_params.bs_positions = bs_positions;
  fuse_params.coverage_range = doc.ser.coverage_range;
  fuse_params.confidence_threshold = doc.ser.confidence_threshold;
  fuse_params.merge_radius = merge_radius;
  PointCloudMap fused = fuse_maps_multibs(local_maps, fuse_params);
  detail::write_point_map(fused, out.file("map_fused.csv"));

  // evidence grid over the scene bounds
  GridGeometry egeom;
  egeom.cell_size = doc.ser.evidence_cell;
  egeom.origin = scene.bounds.lo;
  egeom.nx = std::max(1, static_cast<int>(std::ceil(scene.bounds.width() / egeom.cell_size)));
  egeom.ny = std::max(1, static_cast<int>(std::ceil(scene.bounds.height() / egeom.cell_size)));
  EvidenceGrid grid(egeom);
  std::vector<std::pair<int, double>> observations;
  for (const auto& p : fused.points) {
    const int ix = static_cast<int>((p.position.x() - egeom.origin.x()) / egeom.cell_size);
    const int iy = static_cast<int>((p.position.y() - egeom.origin.y()) / egeom.cell_size);
    if (ix < 0 || ix >= egeom.nx || iy < 0 || iy >= egeom.ny) continue;
    observations.push_back({egeom.cell_index(ix, iy), std::min(p.confidence, 0.95)});
  }
  grid = fuse_evidence(grid, observations);
  {
    CsvWriter w(out.file("evidence.csv"));
    w.header({"ix", "iy", "x", "y", "m_occupied"});
    for (int iy = 0; iy < egeom.ny; ++iy)
      for (int ix = 0; ix < egeom.nx; ++ix) {
        const auto& m = grid.cells[egeom.cell_index(ix, iy)];
        if (m.m_occupied == 0.0) continue;  // sparse export
        const Vec2 c = egeom.cell_center(egeom.cell_index(ix, iy));
        w.row({double(ix), double(iy), c.x(), c.y(), m.m_occupied});
      }
  }

  {
    CsvWriter w(out.file("truth_sesp.csv"));
    w.header({"x", "y", "reflectivity_abs"});
    for (const auto& s : scene.sesp_list)
      w.row({s.position.x(), s.position.y(), std::abs(s.reflectivity)});
  }

  // metrics against truth
  double mean_err = 0.0, median_err = 0.0;
  if (!fused.points.empty() && !scene.sesp_list.empty()) {
    std::vector<double> errs;
    for (const auto& p : fused.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& s : scene.sesp_list) best = std::min(best, (p.position - s.position).norm());
      errs.push_back(best);
    }
    for (double e : errs) mean_err += e;
    mean_err /= errs.size();
    std::nth_element(errs.begin(), errs.begin() + errs.size() / 2, errs.end());
    median_err = errs[errs.size() / 2];
  }
  CsvWriter w(out.file("ser_metrics.csv"));
  w.header({"n_points", "mean_error_m", "median_error_m", "dropped_paths"});
  w.row({double(fused.points.size()), mean_err, median_err, double(dropped_total)});
}

// ---------------------------------------------------------------------------
// DTS pipeline

inline void run_dts_pipeline(const ScenarioDoc& doc, std::uint64_t seed,
                             detail::ArtifactDir& out) {
  const Rng root(seed);
  Scene scene = build_scene(doc.scene, root.child("scene").seed());
  const auto centroids = detail::builtin_centroids();

  TrackerParams tracker;
  tracker.sigma_accel = doc.dts.sigma_accel;
  tracker.sigma_range = doc.ofdm.range_bin_size() / std::sqrt(12.0);
  tracker.sigma_angle = deg2rad(0.5);

  const int n_bs = static_cast<int>(scene.bs_list.size());
  std::vector<std::vector<Track>> tracks(n_bs);
  std::vector<std::unique_ptr<CsvWriter>> track_logs(n_bs);
  for (int b = 0; b < n_bs; ++b) {
    track_logs[b] = std::make_unique<CsvWriter>(out.file("tracks_bs" + std::to_string(b) + ".csv"));
    track_logs[b]->header({"t", "id", "status", "x", "y", "vx", "vy", "sigma_x", "sigma_y"});
  }
  CsvWriter det_log(out.file("detections.csv"));
  det_log.header({"t", "bs", "range", "radial_velocity", "angle_rad", "snr_db", "rcs", "x", "y"});
  CsvWriter truth_log(out.file("truth_tracks.csv"));
  truth_log.header({"t", "target", "x", "y", "vx", "vy"});
  CsvWriter fused_log(out.file("fused_targets.csv"));
  fused_log.header({"t", "x", "y", "vx", "vy", "radial_only", "n_observers", "rcs", "snr_db"});
  CsvWriter label_log(out.file("recognition.csv"));
  label_log.header({"t", "bs", "track_id", "label", "score"});
  std::ofstream msg_log(out.file("fusion_messages.jsonl"), std::ios::binary);

  std::vector<BsPose> poses;
  for (const auto& bs : scene.bs_list) poses.push_back({bs.position, bs.rx_array.orientation});

  FusionParams fusion;
  fusion.gate_radius = doc.dts.fusion_gate;
  fusion.sync_tolerance = doc.dts.sync_tolerance;
  fusion.sigma_range = tracker.sigma_range;
  fusion.sigma_angle = tracker.sigma_angle;

  // metrics accumulators
  double raw_se = 0.0, filt_se = 0.0;
  int raw_n = 0, filt_n = 0, fa_count = 0;
  int truth_hits = 0, truth_chances = 0;
  const double assoc_gate = std::max(2.0 * doc.ofdm.range_bin_size(), 5.0);

  Scene current = scene;
  for (int frame = 0; frame < doc.run.frames; ++frame) {
    const double t = frame * doc.run.frame_dt;
    if (frame > 0) current = propagate(current, doc.run.frame_dt);

    for (const auto& tgt : current.target_list) {
      const int idx = static_cast<int>(&tgt - current.target_list.data());
      truth_log.row({t, double(idx), tgt.position.x(), tgt.position.y(), tgt.velocity.x(),
                     tgt.velocity.y()});
    }

    // per-BS sensing (independent; fan out on demand)
    std::vector<std::vector<TargetEstimate>> frame_dets(n_bs);
    auto sense_one = [&](int b) {
      const BaseStation& bs = current.bs_list[b];
      if (!bs.on) return std::vector<TargetEstimate>{};
      const std::uint64_t bs_seed =
          root.child("sensing").child(static_cast<std::uint64_t>(frame)).child(
              static_cast<std::uint64_t>(b)).seed();
      if (frame % doc.dts.n_search == 0) {
        SearchParams params;
        params.scan_min = deg2rad(doc.dts.scan_min_deg);
        params.scan_max = deg2rad(doc.dts.scan_max_deg);
        params.pfa = doc.dts.pfa;
        params.kappa = doc.dts.kappa;
        params.seed = bs_seed;
        params.timestamp = t;
        return search_scan(current, b, doc.ofdm, deg2rad(doc.dts.angle_step_deg), params);
      }
      // tracking dwells on live tracks
      std::vector<TargetEstimate> dets;
      Rng dwell_rng(bs_seed);
      for (const Track& trk : tracks[b]) {
        if (trk.status != TrackStatus::confirmed && trk.status != TrackStatus::coasting) continue;
        const auto [beam, width] =
            steer_tracking_beam(trk, bs.position, bs.rx_array.orientation);
        EchoTensor echo = synthesize_echo(current, b, doc.ofdm, beam,
                                          dwell_rng.child(trk.id).seed(), doc.dts.kappa);
        EchoTensor clean = suppress_clutter(echo);
        RangeDopplerMap map =
            range_doppler_map(clean, doc.ofdm, CombineMode::noncoherent, WindowMode::hann);
        auto cells = detail::prune_peaks(
            ca_cfar(map, 2, 1, doc.dts.pfa), map, 3, 1);
        EstimateContext ctx;
        ctx.tx_array = bs.tx_array;
        ctx.beam_angle = beam;
        ctx.kappa = doc.dts.kappa;
        ctx.tx_power = bs.tx_power;
        ctx.timestamp = t;
        ctx.window = WindowMode::hann;
        for (std::size_t c = 0; c < std::min<std::size_t>(cells.size(), 4); ++c)
          dets.push_back(estimate_parameters(map, cells[c], clean, doc.ofdm, bs.rx_array, ctx));
      }
      return dets;
    };

    if (n_bs > 1 && thread_count() > 1) {
      std::vector<std::future<std::vector<TargetEstimate>>> futures;
      for (int b = 0; b < n_bs; ++b)
        futures.push_back(std::async(std::launch::async, sense_one, b));
      for (int b = 0; b < n_bs; ++b) frame_dets[b] = futures[b].get();
    } else {
      for (int b = 0; b < n_bs; ++b) frame_dets[b] = sense_one(b);
    }

    std::vector<SensingFeatureMsg> msgs;
    for (int b = 0; b < n_bs; ++b) {
      const BaseStation& bs = current.bs_list[b];
      for (const auto& d : frame_dets[b]) {
        const Vec2 global =
            bs.position + d.range * unit_vector(bs.rx_array.orientation + d.angle);
        det_log.row({t, double(b), d.range, d.radial_velocity, d.angle, d.snr, d.rcs_est,
                     global.x(), global.y()});
        double best = std::numeric_limits<double>::infinity();
        for (const auto& tgt : current.target_list)
          best = std::min(best, (global - tgt.position).norm());
        if (best <= assoc_gate) {
          raw_se += best * best;
          ++raw_n;
        } else {
          ++fa_count;
        }
      }
      for (const auto& tgt : current.target_list) {
        ++truth_chances;
        for (const auto& d : frame_dets[b]) {
          const Vec2 global =
              bs.position + d.range * unit_vector(bs.rx_array.orientation + d.angle);
          if ((global - tgt.position).norm() <= assoc_gate) {
            ++truth_hits;
            break;
          }
        }
      }

      tracks[b] = track_update(tracks[b], frame_dets[b], doc.run.frame_dt, bs.position,
                               bs.rx_array.orientation, tracker, doc.ofdm.carrier_freq);
      for (const Track& trk : tracks[b]) {
        if (trk.status == TrackStatus::dead) continue;
        track_logs[b]->raw_row({format_g9(t), std::to_string(trk.id), to_string(trk.status),
                                format_g9(trk.state(0)), format_g9(trk.state(1)),
                                format_g9(trk.state(2)), format_g9(trk.state(3)),
                                format_g9(std::sqrt(std::max(trk.covariance(0, 0), 0.0))),
                                format_g9(std::sqrt(std::max(trk.covariance(1, 1), 0.0)))});
        if (trk.status == TrackStatus::confirmed || trk.status == TrackStatus::coasting) {
          double best = std::numeric_limits<double>::infinity();
          for (const auto& tgt : current.target_list)
            best = std::min(best, (Vec2{trk.state(0), trk.state(1)} - tgt.position).norm());
          if (std::isfinite(best)) {
            filt_se += best * best;
            ++filt_n;
          }
        }
      }

      if (frame % doc.dts.n_recognition == 0 && frame > 0) {
        for (const Track& trk : tracks[b]) {
          if (trk.status != TrackStatus::confirmed) continue;
          auto res = classify_target(trk.feature, centroids);
          label_log.raw_row({format_g9(t), std::to_string(b), std::to_string(trk.id),
                             to_string(res.label), format_g9(res.score)});
        }
      }

      SensingFeatureMsg msg;
      msg.bs_id = b;
      msg.timestamp = t;
      msg.detections = frame_dets[b];
      msgs.push_back(msg);

      nlohmann::ordered_json jm;
      jm["bs_id"] = b;
      jm["t"] = t;
      auto& arr = jm["detections"] = nlohmann::ordered_json::array();
      for (const auto& d : frame_dets[b]) {
        nlohmann::ordered_json jd;
        jd["range"] = d.range;
        jd["radial_velocity"] = d.radial_velocity;
        jd["angle"] = d.angle;
        jd["rcs"] = d.rcs_est;
        jd["snr"] = d.snr;
        arr.push_back(jd);
      }
      msg_log << jm.dump() << "\n";
    }

    FusionResult fused = fuse_detections_multibs(msgs, poses, fusion);
    for (const auto& ft : fused.targets)
      fused_log.row({t, ft.position.x(), ft.position.y(), ft.velocity.x(), ft.velocity.y(),
                     ft.radial_only ? 1.0 : 0.0, double(ft.n_observers), ft.rcs, ft.snr});
  }

  // resolution probes at the scenario's waveform settings
  {
    CsvWriter w(out.file("resolution_probe.csv"));
    w.header({"axis", "separation", "resolved", "valley_db"});
    const double dr = doc.ofdm.range_bin_size();
    for (double mult : {1.0, 0.5}) {
      ResolutionProbe p = probe_range_resolution(doc.ofdm.bandwidth(), mult * dr, 25.0,
                                                 seed ^ 0x5eed, 256, doc.ofdm.carrier_freq);
      w.row({0.0, mult * dr, p.resolved ? 1.0 : 0.0, p.valley_db});
    }
    const double dv = doc.ofdm.velocity_bin_size();
    for (double mult : {1.0, 0.5}) {
      ResolutionProbe p =
          probe_velocity_resolution(doc.ofdm.carrier_freq, doc.ofdm.n_symbols,
                                    doc.ofdm.symbol_duration, mult * dv, 25.0, seed ^ 0xbeef);
      w.row({1.0, mult * dv, p.resolved ? 1.0 : 0.0, p.valley_db});
    }
  }

  CsvWriter w(out.file("dts_metrics.csv"));
  w.header({"p_d", "false_alarms_per_frame", "raw_rmse_m", "filtered_rmse_m", "frames"});
  const double p_d = truth_chances > 0 ? double(truth_hits) / truth_chances : 0.0;
  w.row({p_d, double(fa_count) / doc.run.frames,
         raw_n > 0 ? std::sqrt(raw_se / raw_n) : 0.0,
         filt_n > 0 ? std::sqrt(filt_se / filt_n) : 0.0, double(doc.run.frames)});
}

// ---------------------------------------------------------------------------
// OMR pipeline

inline void run_omr_pipeline(const ScenarioDoc& doc, std::uint64_t seed,
                             detail::ArtifactDir& out) {
  if (!doc.scene.materials)
    throw scenario_error("scenario: omr pipeline requires a 'materials' section");
  const Rng root(seed);
  const MaterialGrid& truth = *doc.scene.materials;
  const GridGeometry& geom = truth.geom;

  double radius = doc.omr.probe_radius;
  const Rect box = geom.bounding_box();
  if (radius <= 0.0)
    radius = 0.5 * std::hypot(box.width(), box.height()) + std::max(0.1, 6.0 * geom.cell_size);
  const Vec2 center = box.center();
  std::vector<Vec2> tx, rx;
  for (int i = 0; i < doc.omr.n_tx; ++i)
    tx.push_back(center + radius * unit_vector(2.0 * pi * i / doc.omr.n_tx));
  for (int i = 0; i < doc.omr.n_rx; ++i)
    rx.push_back(center + 1.1 * radius * unit_vector(2.0 * pi * i / doc.omr.n_rx + pi / doc.omr.n_rx));

  BornOperator op = build_born_operator(geom, tx, rx, doc.omr.freqs);
  Eigen::VectorXcd chi_true(geom.n_cells());
  for (int g = 0; g < geom.n_cells(); ++g) chi_true(g) = truth.contrast[g];
  Eigen::VectorXcd y = op.matrix * chi_true;

  if (std::isfinite(doc.omr.snr_db)) {
    Rng noise = root.child("omr_noise");
    const double mean_pow = y.squaredNorm() / std::max<int>(1, static_cast<int>(y.size()));
    const double np = mean_pow / db_to_pow(doc.omr.snr_db);
    for (int i = 0; i < y.size(); ++i) y(i) += noise.cnormal(np);
  }

  {
    CsvWriter w(out.file("measurements.csv"));
    w.header({"tx", "rx", "freq_hz", "re", "im"});
    for (std::size_t t = 0; t < tx.size(); ++t)
      for (std::size_t r = 0; r < rx.size(); ++r)
        for (std::size_t f = 0; f < doc.omr.freqs.size(); ++f) {
          const int row = op.row_index(int(t), int(r), int(f));
          w.row({double(t), double(r), doc.omr.freqs[f], y(row).real(), y(row).imag()});
        }
  }

  const double tau = doc.omr.tau > 0.0 ? doc.omr.tau : mixed_norm(chi_true);
  SpgResult res = estimate_contrast(op, y, tau, doc.omr.max_iter, doc.omr.tol);

  double f_ref = 0.0;
  for (double f : doc.omr.freqs) f_ref += f;
  f_ref /= doc.omr.freqs.size();

  auto write_grid = [&](const std::string& name, const Eigen::VectorXcd& chi) {
    CsvWriter w(out.file(name));
    w.header({"ix", "iy", "re", "im"});
    for (int g = 0; g < geom.n_cells(); ++g)
      w.row({double(g % geom.nx), double(g / geom.nx), chi(g).real(), chi(g).imag()});
  };
  write_grid("chi_true.csv", chi_true);
  write_grid("chi_est.csv", res.chi);

  // material conversion + clustering over the recovered support
  const double peak = res.chi.cwiseAbs().maxCoeff();
  std::vector<int> support;
  std::vector<std::pair<double, double>> features;
  for (int g = 0; g < geom.n_cells(); ++g) {
    if (std::abs(res.chi(g)) > doc.omr.support_threshold * peak) {
      support.push_back(g);
      MaterialEstimate m = contrast_to_material(res.chi(g), f_ref);
      features.push_back({m.eps_r, m.sigma});
    }
  }
  std::vector<int> labels(support.size(), -1);
  if (static_cast<int>(support.size()) >= doc.omr.kmeans_k && doc.omr.kmeans_k >= 1) {
    KmeansResult km = cluster_materials(features, doc.omr.kmeans_k, root.child("kmeans").seed());
    labels = km.labels;
  }
  {
    CsvWriter w(out.file("materials_est.csv"));
    w.header({"ix", "iy", "eps_r", "sigma", "label"});
    for (std::size_t i = 0; i < support.size(); ++i) {
      const int g = support[i];
      w.row({double(g % geom.nx), double(g / geom.nx), features[i].first, features[i].second,
             double(labels[i])});
    }
  }

  // metrics: support match + parameter errors on true cells
  int tp = 0, fp = 0, fn = 0;
  for (int g = 0; g < geom.n_cells(); ++g) {
    const bool truth_occ = std::abs(chi_true(g)) > 0.0;
    const bool est_occ =
        std::find(support.begin(), support.end(), g) != support.end();
    tp += truth_occ && est_occ;
    fp += !truth_occ && est_occ;
    fn += truth_occ && !est_occ;
  }
  const double precision = tp + fp > 0 ? double(tp) / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? double(tp) / (tp + fn) : 0.0;
  const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  double max_eps_err = 0.0, max_sigma_err = 0.0;
  for (int g = 0; g < geom.n_cells(); ++g) {
    if (std::abs(chi_true(g)) == 0.0) continue;
    MaterialEstimate mt = contrast_to_material(chi_true(g), f_ref);
    MaterialEstimate me = contrast_to_material(res.chi(g), f_ref);
    max_eps_err = std::max(max_eps_err, std::abs(me.eps_r - mt.eps_r) / std::max(mt.eps_r, 1e-12));
    if (mt.sigma > 1e-12)
      max_sigma_err = std::max(max_sigma_err, std::abs(me.sigma - mt.sigma) / mt.sigma);
  }
  const double residual =
      (op.matrix * res.chi - y).norm() / std::max(y.norm(), 1e-300);
  CsvWriter w(out.file("omr_metrics.csv"));
  w.header({"support_precision", "support_recall", "support_f1", "max_eps_rel_err",
            "max_sigma_rel_err", "residual_ratio", "tau", "iterations"});
  w.row({precision, recall, f1, max_eps_err, max_sigma_err, residual, tau,
         double(res.iterations)});
}

// ---------------------------------------------------------------------------
// network-management pipeline

inline void run_net_pipeline(const ScenarioDoc& doc, std::uint64_t seed,
                             detail::ArtifactDir& out) {
  const Rng root(seed);
  Scene scene = build_scene(doc.scene, root.child("scene").seed());

  std::vector<Vec2> candidates = doc.net.candidates;
  if (candidates.empty()) {
    const int n = 4;
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix)
        candidates.push_back({scene.bounds.lo.x() + (ix + 0.5) * scene.bounds.width() / n,
                              scene.bounds.lo.y() + (iy + 0.5) * scene.bounds.height() / n});
  }
  PlanningParams plan;
  plan.coverage_range = doc.net.coverage_range;
  plan.w_interference = doc.net.w_interference;
  plan.wavelength = doc.ofdm.wavelength();

  const int k = std::min<int>(doc.net.k, static_cast<int>(candidates.size()));
  PlacementResult placement = place_bs(candidates, k, scene.bounds, plan);

  std::vector<Vec2> sites;
  for (int idx : placement.selected) sites.push_back(candidates[idx]);

  std::vector<std::pair<Vec2, double>> demand = doc.net.demand;
  if (demand.empty())
    for (const auto& ue : scene.ue_list) demand.push_back({ue.position, 1.0});
  OnOffResult onoff = onoff_schedule(sites, demand, doc.net.energy_cost, plan);

  std::vector<Vec2> active, served;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (!onoff.on[i]) continue;
    active.push_back(sites[i]);
    Vec2 ue = sites[i] + Vec2{20.0, 0.0};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& u : scene.ue_list) {
      const double d = (u.position - sites[i]).norm();
      if (d < best) {
        best = d;
        ue = u.position;
      }
    }
    served.push_back(ue);
  }

  AllocParams ap;
  ap.wavelength = doc.ofdm.wavelength();
  ap.w_sense = doc.net.w_sense;
  ap.sense_focus = scene.bounds.center();
  AllocationResult alloc = allocate_power_bandwidth(
      active, served, Eigen::VectorXd::Constant(static_cast<int>(active.size()), doc.net.budget),
      doc.net.n_subbands, ap);

  {
    CsvWriter w(out.file("net_allocation.csv"));
    w.header({"site", "x", "y", "on", "band", "comm_power_w", "sense_power_w"});
    int a = 0;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (onoff.on[i]) {
        w.row({double(i), sites[i].x(), sites[i].y(), 1.0, double(alloc.alloc.band[a]),
               alloc.alloc.comm_power(a), alloc.alloc.sense_power(a)});
        ++a;
      } else {
        w.row({double(i), sites[i].x(), sites[i].y(), 0.0, -1.0, 0.0, 0.0});
      }
    }
  }
  {
    CsvWriter w(out.file("net_trace.csv"));
    w.header({"phase", "step", "objective"});
    for (std::size_t i = 0; i < placement.objective_trace.size(); ++i)
      w.row({0.0, double(i), placement.objective_trace[i]});
    for (std::size_t i = 0; i < onoff.objective_trace.size(); ++i)
      w.row({1.0, double(i), onoff.objective_trace[i]});
    for (std::size_t i = 0; i < alloc.objective_trace.size(); ++i)
      w.row({2.0, double(i), alloc.objective_trace[i]});
  }
  {
    std::ofstream report(out.file("net_report.txt"), std::ios::binary);
    report << "network planning report\n";
    report << "selected sites (" << sites.size() << " of " << candidates.size()
           << " candidates):\n";
    for (std::size_t i = 0; i < sites.size(); ++i)
      report << "  site " << i << " at (" << format_g9(sites[i].x()) << ", "
             << format_g9(sites[i].y()) << ") " << (onoff.on[i] ? "on" : "off") << "\n";
    report << "placement objective: " << format_g9(placement.objective_trace.back()) << "\n";
    report << "on-off objective:    " << format_g9(onoff.objective_trace.back()) << "\n";
    report << "allocation utility:  " << format_g9(alloc.objective_trace.back()) << "\n";
    report << "allocation (band, comm W, sense W):\n";
    for (std::size_t a = 0; a < active.size(); ++a)
      report << "  active " << a << ": band " << alloc.alloc.band[a] << ", "
             << format_g9(alloc.alloc.comm_power(static_cast<int>(a))) << ", "
             << format_g9(alloc.alloc.sense_power(static_cast<int>(a))) << "\n";
  }
}

// ---------------------------------------------------------------------------

inline RunManifest run_pipeline(Pipeline pipeline, const ScenarioDoc& doc, std::uint64_t seed,
                                const std::filesystem::path& out_dir,
                                const std::string& scenario_name = "") {
  detail::ArtifactDir out(out_dir);
  switch (pipeline) {
    case Pipeline::ser: run_ser_pipeline(doc, seed, out); break;
    case Pipeline::dts: run_dts_pipeline(doc, seed, out); break;
    case Pipeline::omr: run_omr_pipeline(doc, seed, out); break;
    case Pipeline::net: run_net_pipeline(doc, seed, out); break;
    case Pipeline::e2e:
      run_ser_pipeline(doc, seed, out);
      run_dts_pipeline(doc, seed, out);
      if (doc.scene.materials) run_omr_pipeline(doc, seed, out);
      run_net_pipeline(doc, seed, out);
      break;
  }

  RunManifest manifest;
  manifest.scenario = scenario_name;
  manifest.pipeline = to_string(pipeline);
  manifest.seed = seed;
  manifest.out_dir = out_dir.string();
  for (const auto& name : out.names())
    manifest.artifacts.push_back({name, file_digest(out_dir / name)});

  nlohmann::ordered_json j;
  j["scenario"] = manifest.scenario;
  j["pipeline"] = manifest.pipeline;
  j["seed"] = manifest.seed;
  j["out_dir"] = manifest.out_dir;
  auto& arr = j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& [name, digest] : manifest.artifacts) {
    nlohmann::ordered_json ja;
    ja["file"] = name;
    ja["fnv1a"] = digest;
    arr.push_back(ja);
  }
  std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
  mf << j.dump(2) << "\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// metrics report over an artifact directory

struct MetricRow {
  std::string name;
  double value;
};

inline std::vector<MetricRow> report_metrics(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<MetricRow> rows;

  if (fs::exists(dir / "map_fused.csv") && fs::exists(dir / "truth_sesp.csv")) {
    CsvTable map = read_csv(dir / "map_fused.csv");
    CsvTable truth = read_csv(dir / "truth_sesp.csv");
    if (truth.rows.empty())
      throw std::runtime_error("report_metrics: truth_sesp.csv has no entries");
    const int mx = map.column("x"), my = map.column("y");
    const int tx = truth.column("x"), ty = truth.column("y");
    std::vector<double> errs;
    for (const auto& r : map.rows) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& s : truth.rows)
        best = std::min(best, std::hypot(r[mx] - s[tx], r[my] - s[ty]));
      errs.push_back(best);
    }
    double mean = 0.0;
    for (double e : errs) mean += e;
    rows.push_back({"ser.n_points", double(errs.size())});
    rows.push_back({"ser.mean_error_m", errs.empty() ? 0.0 : mean / errs.size()});
    if (!errs.empty()) {
      std::nth_element(errs.begin(), errs.begin() + errs.size() / 2, errs.end());
      rows.push_back({"ser.median_error_m", errs[errs.size() / 2]});
    }
  }

  if (fs::exists(dir / "truth_tracks.csv")) {
    CsvTable truth = read_csv(dir / "truth_tracks.csv");
    const int tt = truth.column("t"), tx = truth.column("x"), ty = truth.column("y");

    auto nearest_truth = [&](double t, double x, double y) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& r : truth.rows)
        if (std::abs(r[tt] - t) < 1e-9) best = std::min(best, std::hypot(x - r[tx], y - r[ty]));
      return best;
    };

    double filt_se = 0.0;
    int filt_n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("tracks_bs", 0) != 0) continue;
      std::ifstream in(entry.path());
      std::string line;
      std::getline(in, line);  // header: t,id,status,x,y,...
      while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 5) continue;
        if (cells[2] != "confirmed" && cells[2] != "coasting") continue;
        const double e = nearest_truth(std::strtod(cells[0].c_str(), nullptr),
                                       std::strtod(cells[3].c_str(), nullptr),
                                       std::strtod(cells[4].c_str(), nullptr));
        if (std::isfinite(e)) {
          filt_se += e * e;
          ++filt_n;
        }
      }
    }
    if (filt_n > 0) rows.push_back({"dts.track_rmse_m", std::sqrt(filt_se / filt_n)});

    if (fs::exists(dir / "dts_metrics.csv")) {
      CsvTable m = read_csv(dir / "dts_metrics.csv");
      rows.push_back({"dts.p_d", m.rows[0][m.column("p_d")]});
      rows.push_back({"dts.false_alarms_per_frame",
                      m.rows[0][m.column("false_alarms_per_frame")]});
      rows.push_back({"dts.raw_rmse_m", m.rows[0][m.column("raw_rmse_m")]});
    }
    if (fs::exists(dir / "resolution_probe.csv")) {
      CsvTable p = read_csv(dir / "resolution_probe.csv");
      const int axis = p.column("axis"), sep = p.column("separation"),
                res = p.column("resolved");
      bool range_ok = false, velocity_ok = false;
      for (const auto& r : p.rows) {
        // pass = resolved at the full bin separation, merged at half
        const bool full = std::abs(r[sep]) > 0.0;
        if (r[axis] == 0.0 && full && r[res] == 1.0) range_ok = true;
        if (r[axis] == 1.0 && full && r[res] == 1.0) velocity_ok = true;
      }
      bool half_range_merged = true, half_velocity_merged = true;
      double full_range_sep = 0.0, full_vel_sep = 0.0;
      for (const auto& r : p.rows) {
        if (r[axis] == 0.0) full_range_sep = std::max(full_range_sep, r[sep]);
        if (r[axis] == 1.0) full_vel_sep = std::max(full_vel_sep, r[sep]);
      }
      for (const auto& r : p.rows) {
        if (r[axis] == 0.0 && r[sep] < full_range_sep && r[res] == 1.0) half_range_merged = false;
        if (r[axis] == 1.0 && r[sep] < full_vel_sep && r[res] == 1.0) half_velocity_merged = false;
      }
      rows.push_back({"dts.range_resolution_pass", range_ok && half_range_merged ? 1.0 : 0.0});
      rows.push_back(
          {"dts.velocity_resolution_pass", velocity_ok && half_velocity_merged ? 1.0 : 0.0});
    }
  }

  if (fs::exists(dir / "chi_est.csv") && fs::exists(dir / "chi_true.csv")) {
    CsvTable est = read_csv(dir / "chi_est.csv");
    CsvTable truth = read_csv(dir / "chi_true.csv");
    const int re = est.column("re"), im = est.column("im");
    double peak = 0.0;
    for (const auto& r : est.rows) peak = std::max(peak, std::hypot(r[re], r[im]));
    int tp = 0, fp = 0, fn = 0;
    double se = 0.0, truth_pow = 0.0;
    for (std::size_t i = 0; i < est.rows.size() && i < truth.rows.size(); ++i) {
      const double mag_e = std::hypot(est.rows[i][re], est.rows[i][im]);
      const double mag_t = std::hypot(truth.rows[i][re], truth.rows[i][im]);
      const bool occ_e = mag_e > 0.1 * peak;
      const bool occ_t = mag_t > 0.0;
      tp += occ_e && occ_t;
      fp += occ_e && !occ_t;
      fn += !occ_e && occ_t;
      se += std::pow(est.rows[i][re] - truth.rows[i][re], 2) +
            std::pow(est.rows[i][im] - truth.rows[i][im], 2);
      truth_pow += mag_t * mag_t;
    }
    const double precision = tp + fp > 0 ? double(tp) / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? double(tp) / (tp + fn) : 0.0;
    rows.push_back({"omr.support_f1", precision + recall > 0
                                          ? 2.0 * precision * recall / (precision + recall)
                                          : 0.0});
    rows.push_back({"omr.chi_rel_error", truth_pow > 0 ? std::sqrt(se / truth_pow) : 0.0});
  }

  if (rows.empty())
    throw std::runtime_error("report_metrics: no artifacts with matching truth found in " +
                             dir.string());
  return rows;
}

inline void write_metrics_report(const std::vector<MetricRow>& rows,
                                 const std::filesystem::path& path) {
  CsvWriter w(path);
  w.header({"metric", "value"});
  for (const auto& r : rows) w.raw_row({r.name, format_g9(r.value)});
}

}  // namespace isac
