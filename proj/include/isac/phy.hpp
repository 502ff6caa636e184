#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "isac/common.hpp"
#include "isac/geometry.hpp"
#include "isac/rng.hpp"
#include "isac/scene.hpp"
#include "isac/tensor.hpp"

namespace isac {

/// OFDM frame parameterization. Subcarrier k sits at carrier_freq + k*subcarrier_spacing;
/// symbol m starts at m*symbol_duration (useful part 1/subcarrier_spacing plus cyclic prefix).
struct OfdmConfig {
  double carrier_freq = 5.5e9;        // Hz
  double subcarrier_spacing = 120e3;  // Hz
  int n_subcarriers = 64;
  int n_symbols = 64;
  double symbol_duration = 0.0;  // seconds, = 1/subcarrier_spacing + cp_duration
  double cp_duration = 0.0;      // seconds
  double noise_power = 0.0;      // one-sided density, watts/Hz; per-cell power = noise_power * subcarrier_spacing

  double bandwidth() const { return n_subcarriers * subcarrier_spacing; }
  double wavelength() const { return speed_of_light / carrier_freq; }
  double range_bin_size() const { return speed_of_light / (2.0 * bandwidth()); }
  double doppler_bin_hz() const { return 1.0 / (n_symbols * symbol_duration); }
  double velocity_bin_size() const { return wavelength() * doppler_bin_hz() / 2.0; }

  void validate() const {
    if (carrier_freq <= 0.0) throw std::invalid_argument("ofdm: carrier_freq must be > 0");
    if (subcarrier_spacing <= 0.0 || n_subcarriers <= 0)
      throw std::invalid_argument("ofdm: bandwidth must be > 0");
    if (n_symbols <= 0) throw std::invalid_argument("ofdm: n_symbols must be > 0");
    if (symbol_duration <= 1.0 / subcarrier_spacing)
      throw std::invalid_argument("ofdm: symbol_duration must exceed 1/subcarrier_spacing");
    if (noise_power < 0.0) throw std::invalid_argument("ofdm: noise_power must be >= 0");
  }
};

inline OfdmConfig make_ofdm(double carrier_freq, double subcarrier_spacing, int n_subcarriers,
                            int n_symbols, double cp_duration, double noise_power = 0.0) {
  OfdmConfig c;
  c.carrier_freq = carrier_freq;
  c.subcarrier_spacing = subcarrier_spacing;
  c.n_subcarriers = n_subcarriers;
  c.n_symbols = n_symbols;
  c.cp_duration = cp_duration;
  c.symbol_duration = 1.0 / subcarrier_spacing + cp_duration;
  c.noise_power = noise_power;
  c.validate();
  return c;
}

// Conventions used by every forward and inverse model in the toolkit:
//  - steering phase of element n:      -2*pi * n * spacing * sin(angle) / wavelength
//  - range phase of subcarrier k:      -2*pi * k * subcarrier_spacing * tau
//  - Doppler phase of symbol m:        +2*pi * f_D * m * symbol_duration
//  - Doppler sign: v_radial = d(range)/dt, f_D = -2 * v_radial * carrier_freq / c,
//    so a closing target has positive Doppler.
//  - radar amplitude: kappa * sqrt(tx_power * G_beam * rcs) / R^2, with G_beam the
//    array-factor gain of the transmit ULA steered at the beam angle.

/// ULA steering vector on the given wavelength; element 0 has phase 0 and all
/// entries are unit modulus. Angles are boresight-relative, |angle| < pi/2.
inline Eigen::VectorXcd steering_vector(const ArrayConfig& array, double angle, double wavelength) {
  if (wavelength <= 0.0) throw std::invalid_argument("steering_vector: wavelength must be > 0");
  if (array.n_antennas < 1) throw std::invalid_argument("steering_vector: n_antennas must be >= 1");
  Eigen::VectorXcd v(array.n_antennas);
  const double phase_step = -2.0 * pi * array.spacing * std::sin(angle) / wavelength;
  for (int n = 0; n < array.n_antennas; ++n) v(n) = std::polar(1.0, phase_step * n);
  return v;
}

/// Array-factor power gain of a ULA steered to `steer_angle`, evaluated at
/// `angle`. Peaks at n_antennas on the steered direction.
inline double beam_gain(const ArrayConfig& array, double steer_angle, double angle,
                        double wavelength) {
  const Eigen::VectorXcd s = steering_vector(array, steer_angle, wavelength);
  const Eigen::VectorXcd a = steering_vector(array, angle, wavelength);
  const cplx inner = s.dot(a);  // conj(s)^T a
  return std::norm(inner) / array.n_antennas;
}

namespace detail {

inline void check_bs_id(const Scene& scene, int bs_id, const char* who) {
  if (bs_id < 0 || bs_id >= static_cast<int>(scene.bs_list.size()))
    throw std::invalid_argument(std::string(who) + ": invalid bs_id " + std::to_string(bs_id));
}

}  // namespace detail

/// Downlink BS->UE channel snapshot: LoS plus one first-order bounce per SESP.
/// Cell (a, k, m) = sum over paths of gain * steer_a(aod) * exp(-j 2 pi k df tau),
/// constant across symbols. LoS amplitude 1/d; bounce amplitude reflectivity/(d1*d2).
inline ChannelTensor synthesize_channel(const Scene& scene, int bs_id, int ue_id,
                                        const OfdmConfig& ofdm) {
  detail::check_bs_id(scene, bs_id, "synthesize_channel");
  ofdm.validate();
  int ue_index = -1;
  for (std::size_t i = 0; i < scene.ue_list.size(); ++i)
    if (scene.ue_list[i].id == ue_id) { ue_index = static_cast<int>(i); break; }
  if (ue_index < 0)
    throw std::invalid_argument("synthesize_channel: invalid ue_id " + std::to_string(ue_id));

  const BaseStation& bs = scene.bs_list[bs_id];
  const Vec2 ue_pos = scene.ue_list[ue_index].position;
  const double lambda = ofdm.wavelength();

  struct Path { cplx gain; double aod; double tau; };
  std::vector<Path> paths;
  {
    const double d = (ue_pos - bs.position).norm();
    paths.push_back({cplx{1.0 / d, 0.0},
                     local_angle(bs.position, bs.tx_array.orientation, ue_pos), d / speed_of_light});
  }
  for (const auto& sp : scene.sesp_list) {
    const double d1 = (sp.position - bs.position).norm();
    const double d2 = (ue_pos - sp.position).norm();
    paths.push_back({sp.reflectivity / (d1 * d2),
                     local_angle(bs.position, bs.tx_array.orientation, sp.position),
                     (d1 + d2) / speed_of_light});
  }

  ChannelTensor h(bs.tx_array.n_antennas, ofdm.n_subcarriers, ofdm.n_symbols);
  for (const Path& p : paths) {
    const Eigen::VectorXcd steer = steering_vector(bs.tx_array, p.aod, lambda);
    for (int k = 0; k < ofdm.n_subcarriers; ++k) {
      const cplx fk = p.gain * std::polar(1.0, -2.0 * pi * k * ofdm.subcarrier_spacing * p.tau);
      for (int a = 0; a < bs.tx_array.n_antennas; ++a) {
        const cplx cell = steer(a) * fk;
        for (int m = 0; m < ofdm.n_symbols; ++m) h(a, k, m) += cell;
      }
    }
  }
  return h;
}

/// Monostatic sensing echo at one BS for a transmit beam steered to `beam_angle`
/// (boresight-relative). Sums Doppler-shifted target returns, zero-Doppler SESP
/// clutter, and complex white noise of per-cell power noise_power * subcarrier_spacing.
inline EchoTensor synthesize_echo(const Scene& scene, int bs_id, const OfdmConfig& ofdm,
                                  double beam_angle, std::uint64_t seed, double kappa = 1.0) {
  detail::check_bs_id(scene, bs_id, "synthesize_echo");
  ofdm.validate();
  const BaseStation& bs = scene.bs_list[bs_id];
  if (!bs.on) throw state_error("synthesize_echo: bs " + std::to_string(bs_id) + " is off");

  const double lambda = ofdm.wavelength();
  EchoTensor echo(bs.rx_array.n_antennas, ofdm.n_subcarriers, ofdm.n_symbols);

  struct Return { cplx amp; double angle; double range; double doppler; };
  std::vector<Return> returns;
  for (const auto& t : scene.target_list) {
    const Vec2 rel = t.position - bs.position;
    const double range = rel.norm();
    const double theta = local_angle(bs.position, bs.rx_array.orientation, t.position);
    const double v_radial = t.velocity.dot(rel.normalized());  // d(range)/dt
    const double doppler = -2.0 * v_radial * ofdm.carrier_freq / speed_of_light;
    const double gain = beam_gain(bs.tx_array, beam_angle, theta, lambda);
    const double amp = kappa * std::sqrt(bs.tx_power * gain * t.rcs) / (range * range);
    returns.push_back({cplx{amp, 0.0}, theta, range, doppler});
  }
  for (const auto& sp : scene.sesp_list) {
    const double range = (sp.position - bs.position).norm();
    const double theta = local_angle(bs.position, bs.rx_array.orientation, sp.position);
    const double gain = beam_gain(bs.tx_array, beam_angle, theta, lambda);
    const cplx amp = kappa * std::sqrt(bs.tx_power * gain) * sp.reflectivity / (range * range);
    returns.push_back({amp, theta, range, 0.0});
  }

  for (const Return& r : returns) {
    const Eigen::VectorXcd steer = steering_vector(bs.rx_array, r.angle, lambda);
    const double tau = 2.0 * r.range / speed_of_light;
    for (int k = 0; k < ofdm.n_subcarriers; ++k) {
      const cplx range_ph = std::polar(1.0, -2.0 * pi * k * ofdm.subcarrier_spacing * tau);
      for (int m = 0; m < ofdm.n_symbols; ++m) {
        const cplx cell = r.amp * range_ph *
                          std::polar(1.0, 2.0 * pi * r.doppler * m * ofdm.symbol_duration);
        for (int a = 0; a < bs.rx_array.n_antennas; ++a) echo(a, k, m) += steer(a) * cell;
      }
    }
  }

  if (ofdm.noise_power > 0.0) {
    Rng rng = Rng(seed).child("echo_noise");
    const double cell_power = ofdm.noise_power * ofdm.subcarrier_spacing;
    for (cplx& v : echo.data()) v += rng.cnormal(cell_power);
  }
  return echo;
}

/// Add circularly-symmetric white noise scaled so that mean signal power over
/// cells divided by per-cell noise power equals 10^(snr_db/10). An all-zero
/// tensor is measured against unit reference power. Infinite snr returns the
/// tensor unchanged. Deterministic per seed.
inline EchoTensor add_noise(const EchoTensor& t, double snr_db, std::uint64_t seed) {
  if (!t.all_finite()) throw std::invalid_argument("add_noise: input tensor has non-finite cells");
  if (std::isinf(snr_db) && snr_db > 0.0) return t;
  double mean_sig = t.total_power() / static_cast<double>(t.size());
  if (mean_sig == 0.0) mean_sig = 1.0;
  const double noise_power = mean_sig / db_to_pow(snr_db);
  EchoTensor out = t;
  Rng rng = Rng(seed).child("add_noise");
  for (cplx& v : out.data()) v += rng.cnormal(noise_power);
  return out;
}

}  // namespace isac
