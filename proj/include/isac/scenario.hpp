#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>

#include "isac/common.hpp"
#include "isac/phy.hpp"
#include "isac/scene.hpp"

namespace isac {

// Scenario file: JSON with sections bs / ue / sesp / targets / materials /
// ofdm / run plus optional per-pipeline sections (ser / dts / omr / net).
// Field names below are the schema; see the repository README for a worked
// example.

struct SerParams {
  double max_gap = 40.0;             // virtual-UE chaining gap, meters
  int max_paths = 12;
  double stop_threshold = 1e-4;      // residual energy ratio
  double ue_position_noise = 0.0;    // sigma, meters, applied at inversion
  double coverage_range = 200.0;     // ghost-test radius
  double confidence_threshold = 0.05;
  double merge_radius = 0.0;         // <= 0: 2 x range resolution
  double evidence_cell = 1.0;        // meters
};

struct DtsParams {
  double angle_step_deg = 2.0;
  int n_search = 10;        // search sweep every N frames
  int n_recognition = 20;   // classify confirmed tracks every N frames
  double pfa = 1e-3;
  double kappa = 1.0;
  double scan_min_deg = -80.0;
  double scan_max_deg = 80.0;
  double sigma_accel = 1.0;
  double fusion_gate = 5.0;       // meters
  double sync_tolerance = 1e-3;   // seconds
};

struct OmrParams {
  int n_tx = 8;
  int n_rx = 8;
  double probe_radius = 0.0;  // <= 0: auto from the grid footprint
  std::vector<double> freqs{4.0e9, 5.0e9, 6.0e9, 7.0e9};
  double snr_db = 30.0;
  double tau = 0.0;  // <= 0: mixed norm of the true contrast (synthetic runs)
  int max_iter = 800;
  double tol = 1e-10;
  int kmeans_k = 3;
  double support_threshold = 0.1;  // fraction of the peak |chi|
};

struct NetParams {
  std::vector<Vec2> candidates;
  int k = 2;
  double coverage_range = 150.0;
  double w_interference = 1.0;
  double energy_cost = 0.05;
  int n_subbands = 2;
  double w_sense = 0.5;
  double budget = 1.0;  // watts per BS
  std::vector<std::pair<Vec2, double>> demand;
};

struct RunParams {
  int frames = 50;
  double frame_dt = 0.1;
};

struct ScenarioDoc {
  SceneConfig scene;
  OfdmConfig ofdm;
  RunParams run;
  SerParams ser;
  DtsParams dts;
  OmrParams omr;
  NetParams net;
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void fail_field(const std::string& path, const std::string& why) {
  throw scenario_error("scenario: field '" + path + "' " + why);
}

inline const json& member(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) fail_field(path, "must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail_field(path + "." + key, "is required");
  return *it;
}

inline double num(const json& obj, const std::string& key, const std::string& path) {
  const json& v = member(obj, key, path);
  if (!v.is_number()) fail_field(path + "." + key, "must be a number");
  return v.get<double>();
}

inline double num_or(const json& obj, const std::string& key, double fallback,
                     const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) fail_field(path + "." + key, "must be a number");
  return v.get<double>();
}

inline int int_or(const json& obj, const std::string& key, int fallback, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail_field(path + "." + key, "must be an integer");
  return v.get<int>();
}

inline bool bool_or(const json& obj, const std::string& key, bool fallback,
                    const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) fail_field(path + "." + key, "must be a boolean");
  return v.get<bool>();
}

inline Vec2 vec2(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    fail_field(path, "must be a [x, y] number pair");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline TargetClass target_class(const std::string& s, const std::string& path) {
  if (s == "pedestrian") return TargetClass::pedestrian;
  if (s == "vehicle") return TargetClass::vehicle;
  if (s == "uav") return TargetClass::uav;
  if (s == "bird") return TargetClass::bird;
  fail_field(path, "must be one of pedestrian|vehicle|uav|bird");
}

}  // namespace detail

inline ScenarioDoc parse_scenario(const nlohmann::json& j) {
  using namespace detail;
  ScenarioDoc doc;

  // ofdm (required)
  {
    const json& o = member(j, "ofdm", "scenario");
    const double cf = num(o, "carrier_freq", "ofdm");
    const double df = num(o, "subcarrier_spacing", "ofdm");
    const int nsc = int_or(o, "n_subcarriers", 64, "ofdm");
    const int nsym = int_or(o, "n_symbols", 64, "ofdm");
    double cp = num_or(o, "cp_duration", -1.0, "ofdm");
    if (o.contains("symbol_duration")) {
      const double t_sym = num(o, "symbol_duration", "ofdm");
      cp = t_sym - 1.0 / df;
    } else if (cp < 0.0) {
      cp = 0.25 / df;  // quarter-length cyclic prefix default
    }
    const double noise = num_or(o, "noise_power", 0.0, "ofdm");
    try {
      doc.ofdm = make_ofdm(cf, df, nsc, nsym, cp, noise);
    } catch (const std::invalid_argument& e) {
      fail_field("ofdm", std::string("is inconsistent: ") + e.what());
    }
  }

  // bounds
  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    doc.scene.bounds = {vec2(member(b, "lo", "bounds"), "bounds.lo"),
                        vec2(member(b, "hi", "bounds"), "bounds.hi")};
  }

  // bs (required, non-empty)
  {
    const json& arr = member(j, "bs", "scenario");
    if (!arr.is_array() || arr.empty()) fail_field("bs", "must be a non-empty array");
    int idx = 0;
    for (const json& b : arr) {
      const std::string path = "bs[" + std::to_string(idx++) + "]";
      BaseStation bs;
      bs.position = vec2(member(b, "position", path), path + ".position");
      const double orient = deg2rad(num_or(b, "orientation_deg", 0.0, path));
      const double spacing_wl = num_or(b, "spacing_wavelengths", 0.5, path);
      const double spacing = b.contains("spacing_m") ? num(b, "spacing_m", path)
                                                     : spacing_wl * doc.ofdm.wavelength();
      bs.tx_array = {int_or(b, "tx_antennas", 8, path), spacing, orient};
      bs.rx_array = {int_or(b, "rx_antennas", 8, path), spacing, orient};
      bs.tx_power = num_or(b, "tx_power", 1.0, path);
      bs.on = bool_or(b, "on", true, path);
      doc.scene.bs.push_back(bs);
    }
  }

  if (j.contains("ue")) {
    int idx = 0;
    for (const json& u : j.at("ue")) {
      const std::string path = "ue[" + std::to_string(idx) + "]";
      UserEquipment ue;
      ue.id = int_or(u, "id", idx, path);
      ue.position = vec2(member(u, "position", path), path + ".position");
      doc.scene.ue.push_back(ue);
      ++idx;
    }
  }

  if (j.contains("sesp")) {
    int idx = 0;
    for (const json& s : j.at("sesp")) {
      const std::string path = "sesp[" + std::to_string(idx++) + "]";
      ScatterPoint sp;
      sp.position = vec2(member(s, "position", path), path + ".position");
      if (s.contains("reflectivity")) {
        const json& r = s.at("reflectivity");
        if (!r.is_array() || r.size() != 2) fail_field(path + ".reflectivity", "must be [re, im]");
        sp.reflectivity = {r[0].get<double>(), r[1].get<double>()};
      }
      doc.scene.sesp.push_back(sp);
    }
  }

  if (j.contains("targets")) {
    int idx = 0;
    for (const json& t : j.at("targets")) {
      const std::string path = "targets[" + std::to_string(idx++) + "]";
      DynamicTarget tgt;
      tgt.position = vec2(member(t, "position", path), path + ".position");
      tgt.velocity = vec2(member(t, "velocity", path), path + ".velocity");
      tgt.rcs = num_or(t, "rcs", 1.0, path);
      if (t.contains("class"))
        tgt.class_label = target_class(t.at("class").get<std::string>(), path + ".class");
      doc.scene.targets.push_back(tgt);
    }
  }

  // materials cells carry (eps_r, sigma); the chi conversion waits until the
  // omr section below fixes the reference frequency
  struct MaterialCell {
    int ix, iy;
    double eps_r, sigma;
  };
  std::vector<MaterialCell> material_cells;
  std::optional<GridGeometry> material_geom;
  if (j.contains("materials")) {
    const json& m = j.at("materials");
    GridGeometry geom;
    geom.origin = vec2(member(m, "origin", "materials"), "materials.origin");
    geom.cell_size = num(m, "cell_size", "materials");
    geom.nx = int_or(m, "nx", 16, "materials");
    geom.ny = int_or(m, "ny", 16, "materials");
    if (m.contains("cells")) {
      int idx = 0;
      for (const json& c : m.at("cells")) {
        const std::string path = "materials.cells[" + std::to_string(idx++) + "]";
        const int ix = int_or(c, "ix", -1, path);
        const int iy = int_or(c, "iy", -1, path);
        if (ix < 0 || ix >= geom.nx || iy < 0 || iy >= geom.ny)
          fail_field(path, "has ix/iy outside the grid");
        material_cells.push_back({ix, iy, num(c, "eps_r", path), num_or(c, "sigma", 0.0, path)});
      }
    }
    material_geom = geom;
  }

  if (j.contains("random")) {
    const json& r = j.at("random");
    doc.scene.random.n_sesp = int_or(r, "n_sesp", 0, "random");
    doc.scene.random.n_ue = int_or(r, "n_ue", 0, "random");
    doc.scene.random.n_targets = int_or(r, "n_targets", 0, "random");
  }

  if (j.contains("run")) {
    const json& r = j.at("run");
    doc.run.frames = int_or(r, "frames", doc.run.frames, "run");
    doc.run.frame_dt = num_or(r, "frame_dt", doc.run.frame_dt, "run");
    if (doc.run.frames < 1) fail_field("run.frames", "must be >= 1");
    if (doc.run.frame_dt <= 0.0) fail_field("run.frame_dt", "must be > 0");
  }

  if (j.contains("ser")) {
    const json& s = j.at("ser");
    doc.ser.max_gap = num_or(s, "max_gap", doc.ser.max_gap, "ser");
    doc.ser.max_paths = int_or(s, "max_paths", doc.ser.max_paths, "ser");
    doc.ser.stop_threshold = num_or(s, "stop_threshold", doc.ser.stop_threshold, "ser");
    doc.ser.ue_position_noise = num_or(s, "ue_position_noise", doc.ser.ue_position_noise, "ser");
    doc.ser.coverage_range = num_or(s, "coverage_range", doc.ser.coverage_range, "ser");
    doc.ser.confidence_threshold =
        num_or(s, "confidence_threshold", doc.ser.confidence_threshold, "ser");
    doc.ser.merge_radius = num_or(s, "merge_radius", doc.ser.merge_radius, "ser");
    doc.ser.evidence_cell = num_or(s, "evidence_cell", doc.ser.evidence_cell, "ser");
  }

  if (j.contains("dts")) {
    const json& d = j.at("dts");
    doc.dts.angle_step_deg = num_or(d, "angle_step_deg", doc.dts.angle_step_deg, "dts");
    doc.dts.n_search = int_or(d, "n_search", doc.dts.n_search, "dts");
    doc.dts.n_recognition = int_or(d, "n_recognition", doc.dts.n_recognition, "dts");
    doc.dts.pfa = num_or(d, "pfa", doc.dts.pfa, "dts");
    doc.dts.kappa = num_or(d, "kappa", doc.dts.kappa, "dts");
    doc.dts.scan_min_deg = num_or(d, "scan_min_deg", doc.dts.scan_min_deg, "dts");
    doc.dts.scan_max_deg = num_or(d, "scan_max_deg", doc.dts.scan_max_deg, "dts");
    doc.dts.sigma_accel = num_or(d, "sigma_accel", doc.dts.sigma_accel, "dts");
    doc.dts.fusion_gate = num_or(d, "fusion_gate", doc.dts.fusion_gate, "dts");
    doc.dts.sync_tolerance = num_or(d, "sync_tolerance", doc.dts.sync_tolerance, "dts");
  }

  if (j.contains("omr")) {
    const json& o = j.at("omr");
    doc.omr.n_tx = int_or(o, "n_tx", doc.omr.n_tx, "omr");
    doc.omr.n_rx = int_or(o, "n_rx", doc.omr.n_rx, "omr");
    doc.omr.probe_radius = num_or(o, "probe_radius", doc.omr.probe_radius, "omr");
    if (o.contains("freqs")) {
      doc.omr.freqs.clear();
      for (const json& f : o.at("freqs")) {
        if (!f.is_number()) fail_field("omr.freqs", "must be an array of numbers");
        doc.omr.freqs.push_back(f.get<double>());
      }
      if (doc.omr.freqs.empty()) fail_field("omr.freqs", "must be non-empty");
    }
    doc.omr.snr_db = num_or(o, "snr_db", doc.omr.snr_db, "omr");
    doc.omr.tau = num_or(o, "tau", doc.omr.tau, "omr");
    doc.omr.max_iter = int_or(o, "max_iter", doc.omr.max_iter, "omr");
    doc.omr.tol = num_or(o, "tol", doc.omr.tol, "omr");
    doc.omr.kmeans_k = int_or(o, "kmeans_k", doc.omr.kmeans_k, "omr");
    doc.omr.support_threshold =
        num_or(o, "support_threshold", doc.omr.support_threshold, "omr");
  }

  if (material_geom) {
    MaterialGrid grid;
    grid.geom = *material_geom;
    grid.contrast.assign(grid.geom.n_cells(), cplx{0.0, 0.0});
    double f_ref = 0.0;
    for (double f : doc.omr.freqs) f_ref += f;
    f_ref /= doc.omr.freqs.size();
    const double omega = 2.0 * pi * f_ref;
    for (const auto& c : material_cells)
      grid.contrast[grid.geom.cell_index(c.ix, c.iy)] = {
          c.eps_r - 1.0, -c.sigma / (omega * vacuum_permittivity)};
    doc.scene.materials = grid;
  }

  if (j.contains("net")) {
    const json& n = j.at("net");
    if (n.contains("candidates")) {
      int idx = 0;
      for (const json& c : n.at("candidates"))
        doc.net.candidates.push_back(vec2(c, "net.candidates[" + std::to_string(idx++) + "]"));
    }
    doc.net.k = int_or(n, "k", doc.net.k, "net");
    doc.net.coverage_range = num_or(n, "coverage_range", doc.net.coverage_range, "net");
    doc.net.w_interference = num_or(n, "w_interference", doc.net.w_interference, "net");
    doc.net.energy_cost = num_or(n, "energy_cost", doc.net.energy_cost, "net");
    doc.net.n_subbands = int_or(n, "n_subbands", doc.net.n_subbands, "net");
    doc.net.w_sense = num_or(n, "w_sense", doc.net.w_sense, "net");
    doc.net.budget = num_or(n, "budget", doc.net.budget, "net");
    if (n.contains("demand")) {
      int idx = 0;
      for (const json& d : n.at("demand")) {
        const std::string path = "net.demand[" + std::to_string(idx++) + "]";
        doc.net.demand.push_back({vec2(member(d, "position", path), path + ".position"),
                                  num_or(d, "weight", 1.0, path)});
      }
    }
  }

  return doc;
}

inline ScenarioDoc load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw scenario_error("scenario: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw scenario_error("scenario: " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_scenario(j);
}

}  // namespace isac
