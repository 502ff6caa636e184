#pragma once

#include <complex>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace isac {

using cplx = std::complex<double>;

inline constexpr double speed_of_light = 299792458.0;     // m/s
inline constexpr double vacuum_permittivity = 8.854187817e-12;  // F/m
inline constexpr double pi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / pi; }

inline double db_to_pow(double db) { return std::pow(10.0, db / 10.0); }
inline double pow_to_db(double p) { return 10.0 * std::log10(p); }

/// Wrap an angle to (-pi, pi].
inline double wrap_pi(double a) {
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

// Error taxonomy. Argument errors use std::invalid_argument directly;
// the types below carry domain meaning callers may want to catch.

struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

struct state_error : std::runtime_error {
  explicit state_error(const std::string& what) : std::runtime_error(what) {}
};

struct infeasible_path_error : std::runtime_error {
  explicit infeasible_path_error(const std::string& what) : std::runtime_error(what) {}
};

struct infeasible_geometry_error : std::runtime_error {
  explicit infeasible_geometry_error(const std::string& what) : std::runtime_error(what) {}
};

struct numerical_rank_error : std::runtime_error {
  explicit numerical_rank_error(const std::string& what) : std::runtime_error(what) {}
};

struct geometry_error : std::runtime_error {
  explicit geometry_error(const std::string& what) : std::runtime_error(what) {}
};

struct scenario_error : std::runtime_error {
  explicit scenario_error(const std::string& what) : std::runtime_error(what) {}
};

/// Worker count for parallel sections: ISAC_THREADS overrides hardware_concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("ISAC_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

}  // namespace isac
