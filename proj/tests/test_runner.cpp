#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "isac/runner.hpp"

using namespace isac;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("isac_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ScenarioDoc tiny_dts_doc(int n_targets) {
  ScenarioDoc doc;
  BaseStation bs;
  bs.position = {0.0, 0.0};
  const double half_wl = 0.5 * speed_of_light / 5.5e9;
  bs.tx_array = {8, half_wl, 0.0};
  bs.rx_array = {8, half_wl, 0.0};
  doc.scene.bs.push_back(bs);
  doc.scene.bounds = {Vec2{-200.0, -200.0}, Vec2{200.0, 200.0}};
  if (n_targets >= 1)
    doc.scene.targets.push_back({{50.0, 10.0}, {3.0, 0.7}, 5.0, TargetClass::vehicle});
  if (n_targets >= 2)
    doc.scene.targets.push_back({{70.0, -25.0}, {-2.5, 1.0}, 1.0, TargetClass::uav});
  doc.ofdm = make_ofdm(5.5e9, 120e3, 64, 64, 1.014e-3 - 1.0 / 120e3, 1e-14);
  doc.run.frames = 4;
  doc.run.frame_dt = 0.1;
  doc.dts.n_search = 2;
  doc.dts.angle_step_deg = 4.0;
  doc.dts.scan_min_deg = -60.0;
  doc.dts.scan_max_deg = 60.0;
  return doc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("scenario parse failures name the offending field", "[runner]") {
  using nlohmann::json;

  SECTION("missing ofdm.carrier_freq") {
    json j = {{"ofdm", {{"subcarrier_spacing", 120e3}}}, {"bs", json::array()}};
    try {
      parse_scenario(j);
      FAIL("expected scenario_error");
    } catch (const scenario_error& e) {
      REQUIRE(std::string(e.what()).find("ofdm.carrier_freq") != std::string::npos);
    }
  }

  SECTION("bs must be non-empty") {
    json j = {{"ofdm",
               {{"carrier_freq", 5.5e9}, {"subcarrier_spacing", 120e3}}},
              {"bs", json::array()}};
    try {
      parse_scenario(j);
      FAIL("expected scenario_error");
    } catch (const scenario_error& e) {
      REQUIRE(std::string(e.what()).find("bs") != std::string::npos);
    }
  }

  SECTION("bad target class is reported with its path") {
    json j = {{"ofdm", {{"carrier_freq", 5.5e9}, {"subcarrier_spacing", 120e3}}},
              {"bs", json::array({{{"position", {0.0, 0.0}}}})},
              {"targets", json::array({{{"position", {1.0, 1.0}},
                                        {"velocity", {0.0, 0.0}},
                                        {"class", "submarine"}}})}};
    try {
      parse_scenario(j);
      FAIL("expected scenario_error");
    } catch (const scenario_error& e) {
      REQUIRE(std::string(e.what()).find("targets[0].class") != std::string::npos);
    }
  }

  SECTION("a valid document round-trips the key settings") {
    json j = {{"ofdm",
               {{"carrier_freq", 5.5e9},
                {"subcarrier_spacing", 120e3},
                {"n_subcarriers", 32},
                {"n_symbols", 16},
                {"symbol_duration", 1.0e-3}}},
              {"bs", json::array({{{"position", {1.0, 2.0}}, {"orientation_deg", 90.0}}})},
              {"run", {{"frames", 7}, {"frame_dt", 0.25}}}};
    ScenarioDoc doc = parse_scenario(j);
    REQUIRE(doc.ofdm.n_subcarriers == 32);
    REQUIRE(doc.ofdm.symbol_duration == Approx(1.0e-3));
    REQUIRE(doc.scene.bs[0].tx_array.orientation == Approx(pi / 2.0));
    REQUIRE(doc.run.frames == 7);
  }
}

TEST_CASE("dts pipeline on an empty scene emits empty logs and a manifest", "[runner]") {
  ScenarioDoc doc = tiny_dts_doc(0);
  fs::path dir = fresh_dir("dts_empty");
  RunManifest manifest = run_pipeline(Pipeline::dts, doc, 1, dir, "tiny");

  REQUIRE(fs::exists(dir / "manifest.json"));
  CsvTable tracks = read_csv(dir / "tracks_bs0.csv");
  REQUIRE(tracks.rows.empty());  // header only
  CsvTable dets = read_csv(dir / "detections.csv");
  REQUIRE(dets.rows.empty());

  // every artifact in the manifest exists, and nothing was written beside them
  std::set<std::string> expected{"manifest.json"};
  for (const auto& [name, digest] : manifest.artifacts) {
    REQUIRE(fs::exists(dir / name));
    expected.insert(name);
  }
  for (const auto& entry : fs::directory_iterator(dir))
    REQUIRE(expected.count(entry.path().filename().string()) == 1);
}

TEST_CASE("identical (scenario, seed) reruns emit byte-identical artifacts", "[runner]") {
  ScenarioDoc doc = tiny_dts_doc(2);
  fs::path dir_a = fresh_dir("det_a");
  fs::path dir_b = fresh_dir("det_b");
  RunManifest a = run_pipeline(Pipeline::dts, doc, 7, dir_a, "tiny");
  RunManifest b = run_pipeline(Pipeline::dts, doc, 7, dir_b, "tiny");

  REQUIRE(a.artifacts.size() == b.artifacts.size());
  for (std::size_t i = 0; i < a.artifacts.size(); ++i) {
    REQUIRE(a.artifacts[i].first == b.artifacts[i].first);
    REQUIRE(slurp(dir_a / a.artifacts[i].first) == slurp(dir_b / b.artifacts[i].first));
  }

  // a different seed must change the noisy artifacts
  fs::path dir_c = fresh_dir("det_c");
  run_pipeline(Pipeline::dts, doc, 8, dir_c, "tiny");
  REQUIRE(slurp(dir_a / "detections.csv") != slurp(dir_c / "detections.csv"));
}

TEST_CASE("dts detections land on the simulated targets", "[runner]") {
  ScenarioDoc doc = tiny_dts_doc(1);
  doc.run.frames = 3;
  doc.dts.n_search = 1;
  fs::path dir = fresh_dir("dts_hit");
  run_pipeline(Pipeline::dts, doc, 3, dir, "tiny");

  CsvTable dets = read_csv(dir / "detections.csv");
  REQUIRE(!dets.rows.empty());
  const int cx = dets.column("x"), cy = dets.column("y");
  int close = 0;
  for (const auto& r : dets.rows)
    if (std::hypot(r[cx] - 50.0, r[cy] - 10.0) < 2.5 * doc.ofdm.range_bin_size()) ++close;
  REQUIRE(close >= 2);

  CsvTable metrics = read_csv(dir / "dts_metrics.csv");
  REQUIRE(metrics.rows[0][metrics.column("p_d")] > 0.5);
}

TEST_CASE("metrics report worked examples", "[runner]") {
  SECTION("reconstruction identical to truth has zero error") {
    fs::path dir = fresh_dir("metrics_zero");
    {
      CsvWriter truth(dir / "truth_sesp.csv");
      truth.header({"x", "y", "reflectivity_abs"});
      truth.row({10.0, 5.0, 1.0});
      truth.row({-3.0, 8.0, 1.0});
      CsvWriter map(dir / "map_fused.csv");
      map.header({"x", "y", "confidence", "power_db"});
      map.row({10.0, 5.0, 1.0, -20.0});
      map.row({-3.0, 8.0, 0.8, -25.0});
    }
    auto rows = report_metrics(dir);
    double mean_err = -1.0;
    for (const auto& r : rows)
      if (r.name == "ser.mean_error_m") mean_err = r.value;
    REQUIRE(mean_err == Approx(0.0).margin(1e-12));
  }

  SECTION("a 0.1 m perturbation of every point reads back as 0.1 m") {
    fs::path dir = fresh_dir("metrics_perturb");
    {
      CsvWriter truth(dir / "truth_sesp.csv");
      truth.header({"x", "y", "reflectivity_abs"});
      CsvWriter map(dir / "map_fused.csv");
      map.header({"x", "y", "confidence", "power_db"});
      for (int i = 0; i < 10; ++i) {
        truth.row({double(i * 3), double(i), 1.0});
        map.row({double(i * 3) + 0.1, double(i), 1.0, -20.0});
      }
    }
    auto rows = report_metrics(dir);
    for (const auto& r : rows)
      if (r.name == "ser.mean_error_m") REQUIRE(r.value == Approx(0.1).epsilon(1e-9));
  }

  SECTION("a track log equal to the truth trajectory has zero RMSE") {
    fs::path dir = fresh_dir("metrics_tracks");
    {
      CsvWriter truth(dir / "truth_tracks.csv");
      truth.header({"t", "target", "x", "y", "vx", "vy"});
      CsvWriter tracks(dir / "tracks_bs0.csv");
      tracks.header({"t", "id", "status", "x", "y", "vx", "vy", "sigma_x", "sigma_y"});
      for (int f = 0; f < 5; ++f) {
        const double t = f * 0.1;
        truth.row({t, 0.0, 10.0 + t, 2.0, 1.0, 0.0});
        tracks.raw_row({format_g9(t), "0", "confirmed", format_g9(10.0 + t), format_g9(2.0),
                        "1", "0", "0.1", "0.1"});
      }
    }
    auto rows = report_metrics(dir);
    double rmse = -1.0;
    for (const auto& r : rows)
      if (r.name == "dts.track_rmse_m") rmse = r.value;
    REQUIRE(rmse == Approx(0.0).margin(1e-12));
  }

  SECTION("an empty directory is an error") {
    fs::path dir = fresh_dir("metrics_empty");
    REQUIRE_THROWS_AS(report_metrics(dir), std::runtime_error);
  }
}

TEST_CASE("ser artifacts are identical whether run alone or inside e2e", "[runner]") {
  ScenarioDoc doc = tiny_dts_doc(1);
  // add a short UE chain and some scatter points so SER has work to do
  for (int i = 0; i < 4; ++i) doc.scene.ue.push_back({i, Vec2{15.0 + 4.0 * i, -3.0 + 2.0 * i}});
  doc.scene.sesp.push_back({Vec2{12.0, 9.0}, cplx{1.0, 0.0}});
  doc.scene.sesp.push_back({Vec2{22.0, 14.0}, cplx{0.8, 0.3}});
  doc.scene.sesp.push_back({Vec2{30.0, -6.0}, cplx{1.1, -0.2}});
  doc.ser.max_gap = 6.0;
  doc.run.frames = 2;

  fs::path solo = fresh_dir("ser_solo");
  fs::path both = fresh_dir("ser_e2e");
  run_pipeline(Pipeline::ser, doc, 11, solo, "tiny");
  run_pipeline(Pipeline::e2e, doc, 11, both, "tiny");
  REQUIRE(slurp(solo / "map_fused.csv") == slurp(both / "map_fused.csv"));
  REQUIRE(slurp(solo / "evidence.csv") == slurp(both / "evidence.csv"));
}

TEST_CASE("omr pipeline without materials is a scenario error", "[runner]") {
  ScenarioDoc doc = tiny_dts_doc(0);
  fs::path dir = fresh_dir("omr_missing");
  REQUIRE_THROWS_AS(run_pipeline(Pipeline::omr, doc, 1, dir, "tiny"), scenario_error);
}

TEST_CASE("resolution probes resolve one bin and merge at half", "[runner]") {
  // waveform-level diagnostics used by the dts artifacts
  OfdmConfig ofdm = make_ofdm(5.5e9, 120e3, 64, 64, 1.014e-3 - 1.0 / 120e3);
  ResolutionProbe full =
      probe_range_resolution(ofdm.bandwidth(), ofdm.range_bin_size(), 25.0, 2, 256, 5.5e9);
  REQUIRE(full.resolved);
  ResolutionProbe half =
      probe_range_resolution(ofdm.bandwidth(), 0.5 * ofdm.range_bin_size(), 25.0, 2, 256, 5.5e9);
  REQUIRE_FALSE(half.resolved);

  ResolutionProbe vfull = probe_velocity_resolution(5.5e9, 64, 1.014e-3,
                                                    ofdm.velocity_bin_size(), 25.0, 3);
  REQUIRE(vfull.resolved);
  ResolutionProbe vhalf = probe_velocity_resolution(5.5e9, 64, 1.014e-3,
                                                    0.5 * ofdm.velocity_bin_size(), 25.0, 3);
  REQUIRE_FALSE(vhalf.resolved);
}
