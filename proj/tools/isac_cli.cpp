#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "isac/isac.hpp"

namespace {

int cmd_run(const std::string& scenario, const std::string& pipeline_name, std::uint64_t seed,
            const std::string& out_dir, int frames_override, bool verbose) {
  isac::ScenarioDoc doc = isac::load_scenario(scenario);
  if (frames_override > 0) doc.run.frames = frames_override;
  const isac::Pipeline pipeline = isac::parse_pipeline(pipeline_name);

  if (verbose)
    std::cout << "running " << pipeline_name << " on " << scenario << " (seed " << seed
              << ", out " << out_dir << ")\n";
  isac::RunManifest manifest =
      isac::run_pipeline(pipeline, doc, seed, out_dir, std::filesystem::path(scenario).filename());
  if (verbose)
    for (const auto& [name, digest] : manifest.artifacts)
      std::cout << "  " << name << "  " << digest << "\n";
  std::cout << "wrote " << manifest.artifacts.size() << " artifacts to " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& out_dir) {
  auto rows = isac::report_metrics(out_dir);
  isac::write_metrics_report(rows, std::filesystem::path(out_dir) / "metrics_report.csv");
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  for (const auto& r : rows)
    std::printf("%-*s  %s\n", static_cast<int>(width), r.name.c_str(),
                isac::format_g9(r.value).c_str());
  return 0;
}

int cmd_sweep(const std::string& scenario, const std::string& param,
              const std::vector<double>& values, std::uint64_t seed, const std::string& out_dir) {
  using namespace isac;
  ScenarioDoc doc = load_scenario(scenario);
  std::filesystem::create_directories(out_dir);

  if (param == "tau") {
    if (!doc.scene.materials) throw scenario_error("tau sweep needs a materials section");
    const MaterialGrid& truth = *doc.scene.materials;
    const Rect box = truth.geom.bounding_box();
    double radius = doc.omr.probe_radius;
    if (radius <= 0.0)
      radius = 0.5 * std::hypot(box.width(), box.height()) +
               std::max(0.1, 6.0 * truth.geom.cell_size);
    std::vector<Vec2> tx, rx;
    for (int i = 0; i < doc.omr.n_tx; ++i)
      tx.push_back(box.center() + radius * unit_vector(2.0 * pi * i / doc.omr.n_tx));
    for (int i = 0; i < doc.omr.n_rx; ++i)
      rx.push_back(box.center() +
                   1.1 * radius * unit_vector(2.0 * pi * i / doc.omr.n_rx + pi / doc.omr.n_rx));
    BornOperator op = build_born_operator(truth.geom, tx, rx, doc.omr.freqs);
    Eigen::VectorXcd chi(truth.geom.n_cells());
    for (int g = 0; g < truth.geom.n_cells(); ++g) chi(g) = truth.contrast[g];
    Eigen::VectorXcd y = op.matrix * chi;
    Rng noise = Rng(seed).child("omr_noise");
    if (std::isfinite(doc.omr.snr_db)) {
      const double np = y.squaredNorm() / y.size() / db_to_pow(doc.omr.snr_db);
      for (int i = 0; i < y.size(); ++i) y(i) += noise.cnormal(np);
    }
    CsvWriter w(std::filesystem::path(out_dir) / "sweep_tau.csv");
    w.header({"tau", "residual_ratio", "support_size", "iterations"});
    for (double tau : values) {
      SpgResult res = estimate_contrast(op, y, tau, doc.omr.max_iter, doc.omr.tol);
      const double peak = res.chi.size() > 0 ? res.chi.cwiseAbs().maxCoeff() : 0.0;
      int support = 0;
      for (int g = 0; g < res.chi.size(); ++g)
        if (peak > 0.0 && std::abs(res.chi(g)) > doc.omr.support_threshold * peak) ++support;
      w.row({tau, (op.matrix * res.chi - y).norm() / y.norm(), double(support),
             double(res.iterations)});
    }
    std::cout << "wrote sweep_tau.csv\n";
    return 0;
  }

  if (param == "snr") {
    // single-target detection probability vs echo SNR on the scenario waveform
    Scene scene = build_scene(doc.scene, Rng(seed).child("scene").seed());
    if (scene.target_list.empty()) throw scenario_error("snr sweep needs at least one target");
    CsvWriter w(std::filesystem::path(out_dir) / "sweep_snr.csv");
    w.header({"snr_db", "p_detect", "trials"});
    const int trials = 25;
    for (double snr : values) {
      int hits = 0;
      for (int trial = 0; trial < trials; ++trial) {
        const Vec2 rel = scene.target_list[0].position - scene.bs_list[0].position;
        const double beam =
            local_angle(scene.bs_list[0].position, scene.bs_list[0].rx_array.orientation,
                        scene.target_list[0].position);
        EchoTensor echo = synthesize_echo(
            scene, 0, doc.ofdm, beam,
            Rng(seed).child("echo").child(static_cast<std::uint64_t>(trial)).seed(),
            doc.dts.kappa);
        echo = add_noise(echo, snr,
                         Rng(seed).child("noise").child(static_cast<std::uint64_t>(trial)).seed());
        EchoTensor clean = suppress_clutter(echo);
        RangeDopplerMap map =
            range_doppler_map(clean, doc.ofdm, CombineMode::noncoherent, WindowMode::hann);
        auto cells = ca_cfar(map, 2, 1, doc.dts.pfa);
        const int expect_bin =
            static_cast<int>(std::lround(rel.norm() / doc.ofdm.range_bin_size()));
        for (const auto& c : cells)
          if (std::abs(c.range_bin - expect_bin) <= 1) {
            ++hits;
            break;
          }
      }
      w.row({snr, double(hits) / trials, double(trials)});
    }
    std::cout << "wrote sweep_snr.csv\n";
    return 0;
  }

  if (param == "pfa") {
    CsvWriter w(std::filesystem::path(out_dir) / "sweep_pfa.csv");
    w.header({"pfa_design", "pfa_measured", "cells"});
    Rng rng = Rng(seed).child("pfa_noise");
    RangeDopplerMap map;
    map.range_bin_size = 1.0;
    map.doppler_bin_hz = 1.0;
    map.power = Eigen::MatrixXd::Zero(400, 256);
    for (int i = 0; i < map.power.rows(); ++i)
      for (int j = 0; j < map.power.cols(); ++j)
        map.power(i, j) = -std::log(1.0 - rng.uniform());
    for (double pfa : values) {
      const double measured = ca_cfar(map, 2, 1, pfa).size() / double(map.power.size());
      w.row({pfa, measured, double(map.power.size())});
    }
    std::cout << "wrote sweep_pfa.csv\n";
    return 0;
  }

  throw std::invalid_argument("unknown sweep parameter '" + param + "' (expected tau|snr|pfa)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ISAC simulation toolkit: scenario runner and report generator"};
  app.require_subcommand(1);

  std::string scenario, out_dir = "out", pipeline = "e2e", param;
  std::uint64_t seed = 0;
  int frames = -1;
  bool verbose = false;
  std::vector<double> values;

  CLI::App* run = app.add_subcommand("run", "run a sensing pipeline on a scenario");
  run->add_option("--scenario", scenario, "scenario JSON file")->required();
  run->add_option("--pipeline", pipeline, "ser|dts|omr|net|e2e");
  run->add_option("--seed", seed, "run seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--frames", frames, "override run.frames");
  run->add_flag("--verbose", verbose, "print artifact list");

  CLI::App* report = app.add_subcommand("report", "compute metrics from run artifacts");
  report->add_option("--out", out_dir, "run output directory")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "parameter sweeps (tau, snr, pfa)");
  sweep->add_option("--scenario", scenario, "scenario JSON file")->required();
  sweep->add_option("--param", param, "tau|snr|pfa")->required();
  sweep->add_option("--values", values, "sweep values")->required();
  sweep->add_option("--seed", seed, "sweep seed");
  sweep->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(scenario, pipeline, seed, out_dir, frames, verbose);
    if (report->parsed()) return cmd_report(out_dir);
    if (sweep->parsed()) return cmd_sweep(scenario, param, values, seed, out_dir);
  } catch (const isac::scenario_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
