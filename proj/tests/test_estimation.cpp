#include <catch2/catch_amalgamated.hpp>

#include "isac/estimation.hpp"

using namespace isac;
using Catch::Approx;

namespace {

OfdmConfig test_ofdm(int n_sc = 64, int n_sym = 64) {
  return make_ofdm(5.5e9, 120e3, n_sc, n_sym, 1e-6);
}

Scene point_target_scene(const Vec2& pos, const Vec2& vel, int n_rx = 1) {
  SceneConfig cfg;
  BaseStation bs;
  bs.position = {0.0, 0.0};
  bs.tx_array = {1, 0.0273, 0.0};
  bs.rx_array = {n_rx, 0.0273, 0.0};
  cfg.bs.push_back(bs);
  cfg.bounds = {Vec2{-100000.0, -100000.0}, Vec2{100000.0, 100000.0}};
  DynamicTarget t;
  t.position = pos;
  t.velocity = vel;
  t.rcs = 1.0;
  cfg.targets.push_back(t);
  return build_scene(cfg, 0);
}

}  // namespace

TEST_CASE("range-Doppler map peaks at the analytic bin", "[estimation]") {
  OfdmConfig ofdm = test_ofdm();
  const double bin = ofdm.range_bin_size();
  REQUIRE(bin == Approx(19.53).margin(0.02));

  const double range = 39.06;  // ~2 bins
  Scene s = point_target_scene({range, 0.0}, {0.0, 0.0});
  EchoTensor echo = synthesize_echo(s, 0, ofdm, 0.0, 1);
  RangeDopplerMap map = range_doppler_map(echo, ofdm);

  Eigen::Index r, c;
  map.power.maxCoeff(&r, &c);
  const int expected =
      static_cast<int>(std::lround(2.0 * range * ofdm.subcarrier_spacing * ofdm.n_subcarriers /
                                   speed_of_light));
  REQUIRE(expected == 2);
  REQUIRE(static_cast<int>(r) == expected);
  REQUIRE(static_cast<int>(c) == 0);  // static target
}

TEST_CASE("range-Doppler map conserves power (Parseval) and zero maps stay zero", "[estimation]") {
  OfdmConfig ofdm = test_ofdm(32, 16);
  EchoTensor zero(2, 32, 16);
  RangeDopplerMap zmap = range_doppler_map(zero, ofdm);
  REQUIRE(zmap.power.maxCoeff() == 0.0);

  Rng rng(5);
  EchoTensor echo(2, 32, 16);
  for (auto& v : echo.data()) v = rng.cnormal(1.0);
  RangeDopplerMap map = range_doppler_map(echo, ofdm);
  REQUIRE(map.power.sum() == Approx(echo.total_power()).epsilon(1e-9));

  EchoTensor bad(2, 16, 16);
  REQUIRE_THROWS_AS(range_doppler_map(bad, ofdm), std::invalid_argument);
}

TEST_CASE("static clutter concentrates in Doppler bin zero", "[estimation]") {
  OfdmConfig ofdm = test_ofdm();
  SceneConfig cfg;
  BaseStation bs;
  bs.position = {0.0, 0.0};
  bs.tx_array = {1, 0.0273, 0.0};
  bs.rx_array = {1, 0.0273, 0.0};
  cfg.bs.push_back(bs);
  cfg.sesp.push_back({Vec2{35.0, 10.0}, cplx{1.0, 0.2}});
  cfg.sesp.push_back({Vec2{80.0, -5.0}, cplx{0.5, 0.0}});
  Scene s = build_scene(cfg, 0);

  EchoTensor echo = synthesize_echo(s, 0, ofdm, 0.0, 1);
  RangeDopplerMap map = range_doppler_map(echo, ofdm);
  const double off_dc = map.power.rightCols(map.n_doppler() - 1).cwiseAbs().maxCoeff();
  REQUIRE(off_dc < 1e-18 * map.power.col(0).maxCoeff());
}

TEST_CASE("peak bin matches the analytic bin for 100 random on-grid targets", "[estimation]") {
  OfdmConfig ofdm = test_ofdm();
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_bin = rng.uniform_int(2, ofdm.n_subcarriers - 2);
    const int p_bin = rng.uniform_int(-(ofdm.n_symbols / 2 - 1), ofdm.n_symbols / 2 - 1);
    const double range = n_bin * ofdm.range_bin_size();
    const double doppler = p_bin * ofdm.doppler_bin_hz();
    const double v_radial = -doppler * speed_of_light / (2.0 * ofdm.carrier_freq);

    Scene s = point_target_scene({range, 0.0}, {v_radial, 0.0});
    EchoTensor echo = synthesize_echo(s, 0, ofdm, 0.0, 1);
    RangeDopplerMap map = range_doppler_map(echo, ofdm);

    Eigen::Index r, c;
    map.power.maxCoeff(&r, &c);
    const int expected_dopp = p_bin >= 0 ? p_bin : p_bin + ofdm.n_symbols;
    REQUIRE(static_cast<int>(r) == n_bin);
    REQUIRE(static_cast<int>(c) == expected_dopp);
  }
}

TEST_CASE("MUSIC resolves sources and is scale invariant", "[estimation]") {
  ArrayConfig arr{8, 0.5, 0.0};
  const double lambda = 1.0;
  std::vector<double> grid;
  for (double a = -30.0; a <= 30.0; a += 0.25) grid.push_back(deg2rad(a));

  SECTION("single noiseless source at broadside") {
    Eigen::MatrixXcd snaps(8, 16);
    Rng rng(3);
    Eigen::VectorXcd a0 = steering_vector(arr, 0.0, lambda);
    for (int t = 0; t < 16; ++t) snaps.col(t) = a0 * rng.cnormal(1.0);
    Eigen::VectorXd p = music_spectrum(snaps, arr, lambda, 1, grid);
    Eigen::Index imax;
    p.maxCoeff(&imax);
    REQUIRE(std::abs(grid[imax] - 0.0) <= deg2rad(0.25) + 1e-12);
  }

  SECTION("two sources at +-10 deg, SNR 20 dB, 64 snapshots") {
    Eigen::MatrixXcd snaps(8, 64);
    Rng rng(4);
    Eigen::VectorXcd a1 = steering_vector(arr, deg2rad(-10.0), lambda);
    Eigen::VectorXcd a2 = steering_vector(arr, deg2rad(10.0), lambda);
    for (int t = 0; t < 64; ++t) {
      snaps.col(t) = a1 * rng.cnormal(1.0) + a2 * rng.cnormal(1.0);
      for (int n = 0; n < 8; ++n) snaps(n, t) += rng.cnormal(0.01);
    }
    Eigen::VectorXd p = music_spectrum(snaps, arr, lambda, 2, grid);
    // two local maxima nearest the truth
    std::vector<double> peaks;
    for (int i = 1; i + 1 < p.size(); ++i)
      if (p(i) > p(i - 1) && p(i) > p(i + 1)) peaks.push_back(rad2deg(grid[i]));
    std::sort(peaks.begin(), peaks.end(),
              [&](double x, double y) { return std::abs(x) < std::abs(y); });
    REQUIRE(peaks.size() >= 2);
    std::sort(peaks.begin(), peaks.begin() + 2);
    REQUIRE(peaks[0] == Approx(-10.0).margin(1.0));
    REQUIRE(peaks[1] == Approx(10.0).margin(1.0));
  }

  SECTION("argmax invariant under global complex scaling") {
    Eigen::MatrixXcd snaps(8, 32);
    Rng rng(5);
    Eigen::VectorXcd a1 = steering_vector(arr, deg2rad(7.0), lambda);
    for (int t = 0; t < 32; ++t) {
      snaps.col(t) = a1 * rng.cnormal(1.0);
      for (int n = 0; n < 8; ++n) snaps(n, t) += rng.cnormal(0.05);
    }
    Eigen::VectorXd p1 = music_spectrum(snaps, arr, lambda, 1, grid);
    Eigen::VectorXd p2 = music_spectrum(snaps * cplx{-2.5, 1.25}, arr, lambda, 1, grid);
    Eigen::Index i1, i2;
    p1.maxCoeff(&i1);
    p2.maxCoeff(&i2);
    REQUIRE(i1 == i2);
  }

  SECTION("rank-deficient covariance rejects an oversized source count") {
    Eigen::MatrixXcd snaps(8, 16);
    Rng rng(6);
    Eigen::VectorXcd a1 = steering_vector(arr, deg2rad(-3.0), lambda);
    for (int t = 0; t < 16; ++t) snaps.col(t) = a1 * rng.cnormal(1.0);  // noiseless rank 1
    REQUIRE_THROWS_AS(music_spectrum(snaps, arr, lambda, 2, grid), numerical_rank_error);
  }
}

TEST_CASE("CA-CFAR threshold factor and basic decisions", "[estimation]") {
  // alpha = 16 * (10^(3/16) - 1) = 8.638 for N=16, pfa=1e-3
  REQUIRE(cfar_alpha(16, 1e-3) == Approx(8.638).margin(1e-3));

  RangeDopplerMap map;
  map.range_bin_size = 1.0;
  map.doppler_bin_hz = 1.0;

  SECTION("constant map yields no detections") {
    map.power = Eigen::MatrixXd::Constant(32, 32, 3.7);
    for (double pfa : {1e-3, 1e-2, 0.3})
      REQUIRE(ca_cfar(map, 1, 1, pfa).empty());
  }

  SECTION("an isolated strong cell is detected") {
    map.power = Eigen::MatrixXd::Constant(32, 32, 1.0);
    map.power(16, 16) = 20.0;  // threshold is 8.638 * 1.0
    auto hits = ca_cfar(map, 1, 1, 1e-3);
    REQUIRE(hits.size() == 1);
    REQUIRE(hits[0].range_bin == 16);
    REQUIRE(hits[0].doppler_bin == 16);
    REQUIRE(hits[0].snr_est == Approx(pow_to_db(20.0)).margin(1e-9));
  }

  SECTION("window larger than map is rejected") {
    map.power = Eigen::MatrixXd::Constant(8, 8, 1.0);
    REQUIRE_THROWS_AS(ca_cfar(map, 4, 4, 1e-3), std::invalid_argument);
  }
}

TEST_CASE("CA-CFAR empirical false-alarm rate tracks the design pfa", "[estimation]") {
  Rng rng(21);
  RangeDopplerMap map;
  map.range_bin_size = 1.0;
  map.doppler_bin_hz = 1.0;
  map.power = Eigen::MatrixXd::Zero(400, 256);  // 102400 cells
  for (int i = 0; i < map.power.rows(); ++i)
    for (int j = 0; j < map.power.cols(); ++j)
      map.power(i, j) = -std::log(1.0 - rng.uniform());  // exp(1) cell power

  const double n_cells = map.power.size();
  for (double pfa : {1e-2, 1e-3}) {
    const double measured = ca_cfar(map, 2, 1, pfa).size() / n_cells;
    REQUIRE(measured >= pfa / 2.0);
    REQUIRE(measured <= pfa * 2.0);
  }
}

TEST_CASE("sub-band integration adds power and raises peak SNR", "[estimation]") {
  RangeDopplerMap a;
  a.range_bin_size = 1.0;
  a.doppler_bin_hz = 1.0;
  a.power = Eigen::MatrixXd::Constant(16, 16, 2.0);

  SECTION("two identical maps double") {
    RangeDopplerMap sum = combine_subcarrier_detections({a, a});
    REQUIRE((sum.power - 2.0 * a.power).cwiseAbs().maxCoeff() == 0.0);
    RangeDopplerMap b = a;
    b.power = Eigen::MatrixXd::Constant(8, 8, 1.0);
    REQUIRE_THROWS_AS(combine_subcarrier_detections({a, b}), std::invalid_argument);
  }

  SECTION("integration gain for a split signal") {
    Rng rng(31);
    auto noise_map = [&](double signal) {
      RangeDopplerMap m;
      m.range_bin_size = 1.0;
      m.doppler_bin_hz = 1.0;
      m.power = Eigen::MatrixXd::Zero(64, 64);
      for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) m.power(i, j) = -std::log(1.0 - rng.uniform());
      m.power(20, 20) += signal;
      return m;
    };
    RangeDopplerMap m1 = noise_map(8.0), m2 = noise_map(8.0);
    // detectability: peak excess over the noise mean, in noise-sigma units
    auto peak_snr = [](const RangeDopplerMap& m) {
      const double mean = m.power.mean();
      const double var = (m.power.array() - mean).square().mean();
      return (m.power(20, 20) - mean) / std::sqrt(var);
    };
    RangeDopplerMap sum = combine_subcarrier_detections({m1, m2});
    REQUIRE(peak_snr(sum) > peak_snr(m1));
    REQUIRE(peak_snr(sum) > peak_snr(m2));
  }

  SECTION("integration of pure noise does not raise the false-alarm rate") {
    Rng rng(32);
    auto noise_map = [&](int rows, int cols) {
      RangeDopplerMap m;
      m.range_bin_size = 1.0;
      m.doppler_bin_hz = 1.0;
      m.power = Eigen::MatrixXd::Zero(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m.power(i, j) = -std::log(1.0 - rng.uniform());
      return m;
    };
    // power-sum integration narrows the relative noise fluctuation, so at a
    // fixed design pfa the combined map can only fire less often
    RangeDopplerMap m1 = noise_map(200, 128), m2 = noise_map(200, 128);
    RangeDopplerMap m3 = noise_map(200, 128), m4 = noise_map(200, 128);
    const double single = ca_cfar(m1, 2, 1, 1e-2).size();
    const double combined = ca_cfar(combine_subcarrier_detections({m1, m2, m3, m4}), 2, 1, 1e-2).size();
    REQUIRE(combined <= single);
  }
}

namespace {

// direct construction of a multipath channel, independent of synthesize_channel
ChannelTensor channel_from_paths(const std::vector<PathEstimate>& paths, const ArrayConfig& arr,
                                 const OfdmConfig& ofdm) {
  ChannelTensor h(arr.n_antennas, ofdm.n_subcarriers, 1);
  for (const auto& p : paths) {
    Eigen::VectorXcd s = steering_vector(arr, p.aod, ofdm.wavelength());
    for (int k = 0; k < ofdm.n_subcarriers; ++k) {
      cplx ph = std::polar(1.0, -2.0 * pi * k * ofdm.subcarrier_spacing * p.delay);
      for (int a = 0; a < arr.n_antennas; ++a) h(a, k, 0) += p.gain * s(a) * ph;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("matching pursuit recovers a single on-grid path exactly", "[estimation]") {
  ArrayConfig arr{8, 0.0273, 0.0};
  OfdmConfig ofdm = test_ofdm(64, 1);
  const double delay_step = 1.0 / (2.0 * ofdm.bandwidth());

  PathEstimate truth;
  truth.aod = deg2rad(12.5);  // on the 0.5 deg grid
  truth.delay = 24.0 * delay_step;
  truth.gain = cplx{0.8, -0.3};
  ChannelTensor h = channel_from_paths({truth}, arr, ofdm);

  auto paths = extract_paths(h, arr, ofdm, 4, 1e-9);
  REQUIRE(paths.size() == 1);
  REQUIRE(paths[0].aod == Approx(truth.aod).margin(1e-9));
  REQUIRE(paths[0].delay == Approx(truth.delay).epsilon(1e-9));
  REQUIRE(std::abs(paths[0].gain - truth.gain) < 1e-9);

  // residual below threshold: reconstruct and compare
  ChannelTensor recon = channel_from_paths(paths, arr, ofdm);
  double res = 0.0;
  for (std::size_t i = 0; i < h.data().size(); ++i)
    res += std::norm(h.data()[i] - recon.data()[i]);
  REQUIRE(res / h.total_power() < 1e-9);
}

TEST_CASE("matching pursuit separates LoS from a 10x weaker bounce", "[estimation]") {
  ArrayConfig arr{8, 0.0273, 0.0};
  OfdmConfig ofdm = test_ofdm(64, 1);
  const double delay_step = 1.0 / (2.0 * ofdm.bandwidth());

  PathEstimate los;
  los.aod = deg2rad(-5.0);
  los.delay = 10.0 * delay_step;
  los.gain = cplx{1.0, 0.0};
  PathEstimate bounce;
  bounce.aod = deg2rad(30.0);
  bounce.delay = 40.0 * delay_step;
  bounce.gain = cplx{0.0, 0.1};
  ChannelTensor h = channel_from_paths({los, bounce}, arr, ofdm);

  auto paths = extract_paths(h, arr, ofdm, 8, 1e-8, los.delay);
  REQUIRE(paths.size() >= 2);
  // matching pursuit does not orthogonalize, so recovery is grid-accurate
  const double half_angle_step = deg2rad(0.25);
  REQUIRE(paths[0].order == PathOrder::los);
  REQUIRE(paths[0].aod == Approx(los.aod).margin(half_angle_step));
  REQUIRE(paths[0].delay == Approx(los.delay).margin(0.5 * delay_step));
  REQUIRE(paths[1].order == PathOrder::nlos1);
  REQUIRE(paths[1].aod == Approx(bounce.aod).margin(half_angle_step));
  REQUIRE(paths[1].delay == Approx(bounce.delay).margin(0.5 * delay_step));
  REQUIRE(std::abs(paths[0].gain) > std::abs(paths[1].gain));
  REQUIRE(std::abs(paths[0].gain - los.gain) < 0.05 * std::abs(los.gain));
  REQUIRE(std::abs(paths[1].gain - bounce.gain) < 0.05 * std::abs(los.gain));
}

TEST_CASE("matching pursuit residual energy is non-increasing", "[estimation]") {
  ArrayConfig arr{8, 0.0273, 0.0};
  OfdmConfig ofdm = test_ofdm(32, 1);
  Rng rng(13);
  ChannelTensor h(arr.n_antennas, ofdm.n_subcarriers, 1);
  for (auto& v : h.data()) v = rng.cnormal(1.0);

  double prev = h.total_power();
  for (int np = 1; np <= 6; ++np) {
    auto paths = extract_paths(h, arr, ofdm, np, 0.0);
    ChannelTensor recon = channel_from_paths(paths, arr, ofdm);
    double res = 0.0;
    for (std::size_t i = 0; i < h.data().size(); ++i)
      res += std::norm(h.data()[i] - recon.data()[i]);
    REQUIRE(res <= prev * (1.0 + 1e-12));
    prev = res;
  }
}

TEST_CASE("matching pursuit on pure noise stays within the calibrated gain band", "[estimation]") {
  ArrayConfig arr{8, 0.0273, 0.0};
  OfdmConfig ofdm = test_ofdm(32, 1);

  // calibrate the distribution of extracted gains over noise realizations
  std::vector<double> max_gains;
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(1000 + trial);
    ChannelTensor h(arr.n_antennas, ofdm.n_subcarriers, 1);
    for (auto& v : h.data()) v = rng.cnormal(1.0);
    auto paths = extract_paths(h, arr, ofdm, 3, 0.9);
    REQUIRE(static_cast<int>(paths.size()) <= 3);
    for (const auto& p : paths) max_gains.push_back(std::abs(p.gain));
  }
  double mean = 0.0;
  for (double g : max_gains) mean += g;
  mean /= max_gains.size();
  double var = 0.0;
  for (double g : max_gains) var += (g - mean) * (g - mean);
  const double sigma = std::sqrt(var / max_gains.size());

  Rng rng(777);
  ChannelTensor h(arr.n_antennas, ofdm.n_subcarriers, 1);
  for (auto& v : h.data()) v = rng.cnormal(1.0);
  auto paths = extract_paths(h, arr, ofdm, 3, 0.9);
  for (const auto& p : paths) REQUIRE(std::abs(p.gain) < mean + 3.0 * sigma);
}
