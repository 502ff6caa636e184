#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <optional>
#include <vector>

#include "isac/common.hpp"
#include "isac/geometry.hpp"
#include "isac/phy.hpp"
#include "isac/tensor.hpp"

namespace isac {

/// 2D power spectrum over range (IDFT across subcarriers) and Doppler (DFT
/// across symbols). Both transforms are unitary, so total power is conserved.
struct RangeDopplerMap {
  Eigen::MatrixXd power;      // [range_bin][doppler_bin], >= 0
  double range_bin_size = 0;  // meters, c / (2 * n_sc * df)
  double doppler_bin_hz = 0;  // Hz, 1 / (n_sym * t_sym)

  int n_range() const { return static_cast<int>(power.rows()); }
  int n_doppler() const { return static_cast<int>(power.cols()); }

  double range_of_bin(double bin) const { return bin * range_bin_size; }
  /// Two-sided Doppler: bins above n/2 alias to negative frequencies.
  double doppler_of_bin(double bin) const {
    const double n = n_doppler();
    return (bin < n / 2.0 ? bin : bin - n) * doppler_bin_hz;
  }
};

enum class CombineMode { noncoherent, coherent };
enum class WindowMode { rectangular, hann };

/// Coherent power gain of a length-n analysis window under the unitary
/// transform convention: (sum w)^2 / n. Rectangular gives n.
inline double window_coherent_gain(WindowMode window, int n) {
  if (window == WindowMode::rectangular) return static_cast<double>(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += 0.5 * (1.0 - std::cos(2.0 * pi * i / n));
  return acc * acc / n;
}

/// Range-Doppler map of an echo tensor. Antennas are combined noncoherently
/// (power sum) by default, or coherently (complex sum before the magnitude).
/// The optional Hann window trades resolution for sidelobe suppression;
/// Parseval power conservation holds for the rectangular window.
inline RangeDopplerMap range_doppler_map(const EchoTensor& echo, const OfdmConfig& ofdm,
                                         CombineMode combine = CombineMode::noncoherent,
                                         WindowMode window = WindowMode::rectangular) {
  if (echo.n_subcarriers() != ofdm.n_subcarriers || echo.n_symbols() != ofdm.n_symbols)
    throw std::invalid_argument("range_doppler_map: echo dims do not match ofdm config");
  const int n_ant = echo.n_antennas(), n_sc = echo.n_subcarriers(), n_sym = echo.n_symbols();

  std::vector<double> w_sc(n_sc, 1.0), w_sym(n_sym, 1.0);
  if (window == WindowMode::hann) {
    for (int k = 0; k < n_sc; ++k) w_sc[k] = 0.5 * (1.0 - std::cos(2.0 * pi * k / n_sc));
    for (int m = 0; m < n_sym; ++m) w_sym[m] = 0.5 * (1.0 - std::cos(2.0 * pi * m / n_sym));
  }

  RangeDopplerMap map;
  map.power = Eigen::MatrixXd::Zero(n_sc, n_sym);
  map.range_bin_size = ofdm.range_bin_size();
  map.doppler_bin_hz = 1.0 / (n_sym * ofdm.symbol_duration);

  Eigen::FFT<double> fft;
  const double range_scale = std::sqrt(static_cast<double>(n_sc));      // inv is 1/N-scaled
  const double doppler_scale = 1.0 / std::sqrt(static_cast<double>(n_sym));
  Eigen::MatrixXcd coherent_acc;
  if (combine == CombineMode::coherent) coherent_acc = Eigen::MatrixXcd::Zero(n_sc, n_sym);

  std::vector<cplx> in, out;
  for (int a = 0; a < n_ant; ++a) {
    Eigen::MatrixXcd stage(n_sc, n_sym);
    in.resize(n_sc);
    for (int m = 0; m < n_sym; ++m) {  // range: IDFT over subcarriers
      for (int k = 0; k < n_sc; ++k) in[k] = echo(a, k, m) * w_sc[k];
      fft.inv(out, in);
      for (int k = 0; k < n_sc; ++k) stage(k, m) = out[k] * range_scale;
    }
    in.resize(n_sym);
    for (int r = 0; r < n_sc; ++r) {  // Doppler: DFT over symbols
      for (int m = 0; m < n_sym; ++m) in[m] = stage(r, m) * w_sym[m];
      fft.fwd(out, in);
      if (combine == CombineMode::coherent)
        for (int m = 0; m < n_sym; ++m) coherent_acc(r, m) += out[m] * doppler_scale;
      else
        for (int m = 0; m < n_sym; ++m) map.power(r, m) += std::norm(out[m] * doppler_scale);
    }
  }
  if (combine == CombineMode::coherent)
    map.power = coherent_acc.cwiseAbs2();
  return map;
}

/// MUSIC pseudo-spectrum 1/||En^H a(theta)||^2 over an angle grid, with
/// forward-backward covariance averaging. Throws numerical_rank_error when the
/// covariance cannot support the requested source count.
inline Eigen::VectorXd music_spectrum(const Eigen::MatrixXcd& snapshots, const ArrayConfig& array,
                                      double wavelength, int n_sources,
                                      const std::vector<double>& angle_grid) {
  const int n = static_cast<int>(snapshots.rows());
  const int t = static_cast<int>(snapshots.cols());
  if (n != array.n_antennas)
    throw std::invalid_argument("music_spectrum: snapshot rows != n_antennas");
  if (n_sources < 1 || n_sources >= n)
    throw std::invalid_argument("music_spectrum: need 1 <= n_sources < n_antennas");
  if (t < n_sources)
    throw std::invalid_argument("music_spectrum: need at least n_sources snapshots");

  Eigen::MatrixXcd cov = snapshots * snapshots.adjoint() / static_cast<double>(t);
  // forward-backward averaging: J conj(R) J with J the exchange matrix
  Eigen::MatrixXcd rev = cov.conjugate();
  rev = rev.rowwise().reverse().eval();
  rev = rev.colwise().reverse().eval();
  cov = 0.5 * (cov + rev);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
  if (es.info() != Eigen::Success)
    throw numerical_rank_error("music_spectrum: eigendecomposition failed");
  const Eigen::VectorXd evals = es.eigenvalues();  // ascending
  const double lmax = evals(n - 1);
  int rank = 0;
  for (int i = 0; i < n; ++i)
    if (evals(i) > lmax * 1e-9 && evals(i) > 0.0) ++rank;
  if (rank < n && n_sources > rank)
    throw numerical_rank_error("music_spectrum: covariance rank " + std::to_string(rank) +
                               " cannot support " + std::to_string(n_sources) + " sources");

  const Eigen::MatrixXcd noise_sub = es.eigenvectors().leftCols(n - n_sources);
  Eigen::VectorXd spectrum(static_cast<int>(angle_grid.size()));
  for (std::size_t i = 0; i < angle_grid.size(); ++i) {
    const Eigen::VectorXcd a = steering_vector(array, angle_grid[i], wavelength);
    const double denom = (noise_sub.adjoint() * a).squaredNorm();
    spectrum(static_cast<int>(i)) = 1.0 / std::max(denom, 1e-300);
  }
  return spectrum;
}

/// Conventional (Bartlett) beamformer spectrum a^H R a / n over an angle grid.
inline Eigen::VectorXd bartlett_spectrum(const Eigen::MatrixXcd& snapshots,
                                         const ArrayConfig& array, double wavelength,
                                         const std::vector<double>& angle_grid) {
  const int n = static_cast<int>(snapshots.rows());
  if (n != array.n_antennas)
    throw std::invalid_argument("bartlett_spectrum: snapshot rows != n_antennas");
  const Eigen::MatrixXcd cov =
      snapshots * snapshots.adjoint() / static_cast<double>(snapshots.cols());
  Eigen::VectorXd spectrum(static_cast<int>(angle_grid.size()));
  for (std::size_t i = 0; i < angle_grid.size(); ++i) {
    const Eigen::VectorXcd a = steering_vector(array, angle_grid[i], wavelength);
    spectrum(static_cast<int>(i)) = std::real(a.dot(cov * a)) / n;
  }
  return spectrum;
}

struct CellDetection {
  int range_bin = 0;
  int doppler_bin = 0;
  int angle_bin = -1;  // unset unless the map carries an angle axis
  double power = 0.0;
  double snr_est = 0.0;  // dB over the local noise estimate
};

/// CA-CFAR threshold factor for n training cells at the given false-alarm
/// probability: alpha = n (pfa^(-1/n) - 1).
inline double cfar_alpha(int n_train_cells, double pfa) {
  if (n_train_cells < 1) throw std::invalid_argument("cfar_alpha: need at least one training cell");
  if (!(pfa > 0.0 && pfa < 1.0)) throw std::invalid_argument("cfar_alpha: pfa must be in (0, 1)");
  return n_train_cells * (std::pow(pfa, -1.0 / n_train_cells) - 1.0);
}

/// 2D cell-averaging CFAR with a square training ring (`n_train` cells wide)
/// around a square guard region (`n_guard` cells wide). Edge cells use the
/// truncated ring with alpha recomputed for the actual training count.
/// Detections are returned sorted by power, strongest first.
inline std::vector<CellDetection> ca_cfar(const RangeDopplerMap& map, int n_train, int n_guard,
                                          double pfa) {
  if (n_train < 1 || n_guard < 0) throw std::invalid_argument("ca_cfar: bad window sizes");
  if (!(pfa > 0.0 && pfa < 1.0)) throw std::invalid_argument("ca_cfar: pfa must be in (0, 1)");
  const int rows = map.n_range(), cols = map.n_doppler();
  const int reach = n_train + n_guard;
  if (2 * reach + 1 > rows || 2 * reach + 1 > cols)
    throw std::invalid_argument("ca_cfar: window larger than map");

  std::vector<CellDetection> hits;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      int count = 0;
      for (int di = -reach; di <= reach; ++di) {
        const int ii = i + di;
        if (ii < 0 || ii >= rows) continue;
        for (int dj = -reach; dj <= reach; ++dj) {
          if (std::max(std::abs(di), std::abs(dj)) <= n_guard) continue;
          const int jj = j + dj;
          if (jj < 0 || jj >= cols) continue;
          acc += map.power(ii, jj);
          ++count;
        }
      }
      if (count == 0) continue;
      const double noise = acc / count;
      const double threshold = cfar_alpha(count, pfa) * noise;
      if (map.power(i, j) > threshold) {
        CellDetection d;
        d.range_bin = i;
        d.doppler_bin = j;
        d.power = map.power(i, j);
        d.snr_est = pow_to_db(map.power(i, j) / std::max(noise, 1e-300));
        hits.push_back(d);
      }
    }
  }
  std::sort(hits.begin(), hits.end(),
            [](const CellDetection& a, const CellDetection& b) { return a.power > b.power; });
  return hits;
}

/// Noncoherent integration of per-sub-band maps: cell-wise power sum.
inline RangeDopplerMap combine_subcarrier_detections(const std::vector<RangeDopplerMap>& maps) {
  if (maps.empty())
    throw std::invalid_argument("combine_subcarrier_detections: empty map list");
  RangeDopplerMap out = maps.front();
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].power.rows() != out.power.rows() || maps[i].power.cols() != out.power.cols())
      throw std::invalid_argument("combine_subcarrier_detections: dimension mismatch");
    out.power += maps[i].power;
  }
  return out;
}

/// Offset of a local peak from 3-point parabolic interpolation, in bins,
/// clamped to [-0.5, 0.5]. `pm`, `p0`, `pp` are the magnitudes at bins -1/0/+1.
inline double parabolic_offset(double pm, double p0, double pp) {
  const double denom = pm - 2.0 * p0 + pp;
  if (denom >= 0.0) return 0.0;  // not a strict local max
  return std::clamp(0.5 * (pm - pp) / denom, -0.5, 0.5);
}

enum class PathOrder { los, nlos1 };

/// One propagation path recovered from a BS->UE channel.
struct PathEstimate {
  double aod = 0.0;    // radians, boresight-relative at the BS array
  double delay = 0.0;  // seconds
  cplx gain{0.0, 0.0};
  PathOrder order = PathOrder::nlos1;
};

struct ExtractParams {
  double angle_step = deg2rad(0.5);
  double angle_min = deg2rad(-89.5);
  double angle_max = deg2rad(89.5);
  int delay_oversample = 2;  // delay grid step = 1 / (oversample * bandwidth)
  bool refine = true;        // 3-point parabolic off-grid refinement
};

/// Greedy matching pursuit over an angle x delay steering dictionary.
/// Returns paths sorted by |gain| descending; iteration stops when the
/// residual energy ratio drops below stop_threshold or max_paths is reached.
///
/// When `los_delay` is supplied, the strongest path is labeled LoS iff its
/// delay is within one delay bin (1/bandwidth) of it; with no hint the
/// strongest path is labeled LoS and relabeling is left to the caller.
inline std::vector<PathEstimate> extract_paths(const ChannelTensor& channel,
                                               const ArrayConfig& array, const OfdmConfig& ofdm,
                                               int max_paths, double stop_threshold,
                                               std::optional<double> los_delay = std::nullopt,
                                               const ExtractParams& params = {}) {
  if (max_paths < 1) throw std::invalid_argument("extract_paths: max_paths must be >= 1");
  if (channel.n_antennas() != array.n_antennas || channel.n_subcarriers() != ofdm.n_subcarriers)
    throw std::invalid_argument("extract_paths: channel dims do not match array/ofdm");
  const int n_ant = channel.n_antennas(), n_sc = channel.n_subcarriers();
  const int n_sym = channel.n_symbols();

  // channel is a static snapshot; average across symbols
  Eigen::MatrixXcd residual = Eigen::MatrixXcd::Zero(n_ant, n_sc);
  for (int a = 0; a < n_ant; ++a)
    for (int k = 0; k < n_sc; ++k) {
      cplx acc{0.0, 0.0};
      for (int m = 0; m < n_sym; ++m) acc += channel(a, k, m);
      residual(a, k) = acc / static_cast<double>(n_sym);
    }

  const double initial_energy = residual.squaredNorm();
  if (initial_energy == 0.0) return {};

  std::vector<double> angles;
  for (double th = params.angle_min; th <= params.angle_max + 1e-12; th += params.angle_step)
    angles.push_back(th);
  const int n_angles = static_cast<int>(angles.size());
  const double delay_step = 1.0 / (params.delay_oversample * ofdm.bandwidth());
  const int n_delays = params.delay_oversample * n_sc;  // covers [0, 1/df)

  Eigen::MatrixXcd steer_mat(n_ant, n_angles);
  for (int i = 0; i < n_angles; ++i)
    steer_mat.col(i) = steering_vector(array, angles[i], ofdm.wavelength());
  Eigen::MatrixXcd delay_conj(n_sc, n_delays);  // conj of delay signature
  for (int j = 0; j < n_delays; ++j)
    for (int k = 0; k < n_sc; ++k)
      delay_conj(k, j) = std::polar(1.0, 2.0 * pi * k * ofdm.subcarrier_spacing * j * delay_step);

  const double atom_norm2 = static_cast<double>(n_ant) * n_sc;
  auto delay_signature = [&](double tau) {
    Eigen::VectorXcd d(n_sc);
    for (int k = 0; k < n_sc; ++k)
      d(k) = std::polar(1.0, -2.0 * pi * k * ofdm.subcarrier_spacing * tau);
    return d;
  };

  std::vector<PathEstimate> paths;
  for (int it = 0; it < max_paths; ++it) {
    if (residual.squaredNorm() / initial_energy < stop_threshold) break;

    const Eigen::MatrixXcd corr = steer_mat.adjoint() * (residual * delay_conj);
    int bi = 0, bj = 0;
    corr.cwiseAbs().maxCoeff(&bi, &bj);

    double theta = angles[bi];
    double tau = bj * delay_step;
    Eigen::VectorXcd s = steering_vector(array, theta, ofdm.wavelength());
    Eigen::VectorXcd d = delay_signature(tau);
    cplx gain = (s.adjoint() * residual * d.conjugate()).value() / atom_norm2;

    if (params.refine) {
      double theta_r = theta, tau_r = tau;
      if (bi > 0 && bi < n_angles - 1)
        theta_r += params.angle_step * parabolic_offset(std::abs(corr(bi - 1, bj)),
                                                        std::abs(corr(bi, bj)),
                                                        std::abs(corr(bi + 1, bj)));
      if (bj > 0 && bj < n_delays - 1)
        tau_r += delay_step * parabolic_offset(std::abs(corr(bi, bj - 1)), std::abs(corr(bi, bj)),
                                               std::abs(corr(bi, bj + 1)));
      if (theta_r != theta || tau_r != tau) {
        const Eigen::VectorXcd sr = steering_vector(array, theta_r, ofdm.wavelength());
        const Eigen::VectorXcd dr = delay_signature(tau_r);
        const cplx gain_r = (sr.adjoint() * residual * dr.conjugate()).value() / atom_norm2;
        // keep the refined atom only when it removes more residual energy
        if (std::norm(gain_r) > std::norm(gain)) {
          theta = theta_r;
          tau = tau_r;
          s = sr;
          d = dr;
          gain = gain_r;
        }
      }
    }
    residual -= gain * (s * d.transpose());

    PathEstimate p;
    p.aod = theta;
    p.delay = tau;
    p.gain = gain;
    paths.push_back(p);
  }

  std::sort(paths.begin(), paths.end(),
            [](const PathEstimate& a, const PathEstimate& b) { return std::abs(a.gain) > std::abs(b.gain); });
  if (!paths.empty()) {
    for (auto& p : paths) p.order = PathOrder::nlos1;
    if (los_delay) {
      if (std::abs(paths.front().delay - *los_delay) <= 1.0 / ofdm.bandwidth())
        paths.front().order = PathOrder::los;
    } else {
      paths.front().order = PathOrder::los;
    }
  }
  return paths;
}

}  // namespace isac
