#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <vector>

#include "isac/common.hpp"
#include "isac/geometry.hpp"
#include "isac/rng.hpp"
#include "isac/scene.hpp"

namespace isac {

/// Hankel function of the second kind, order zero: H0^(2)(x) = J0(x) - j Y0(x).
inline cplx hankel0_2(double x) {
  if (x <= 0.0) throw std::invalid_argument("hankel0_2: argument must be > 0");
  return {std::cyl_bessel_j(0.0, x), -std::cyl_neumann(0.0, x)};
}

/// 2D scalar free-space Green's function (TM polarization, e^{+jwt} time
/// convention): G(r, r') = (-j/4) H0^(2)(k |r - r'|).
inline cplx greens_2d(double wavenumber, const Vec2& r, const Vec2& rp) {
  const double dist = (r - rp).norm();
  return cplx{0.0, -0.25} * hankel0_2(wavenumber * dist);
}

/// Linearized (Born) scattering operator mapping per-cell contrast to
/// scattered field samples. Row (t, r, f) in lexicographic order:
/// A[(t,r,f), g] = k^2 * G(rx_r, c_g) * E_inc(tx_t, c_g) * cell_area,
/// with E_inc a unit cylindrical wave, E_inc(t, c) = G(t, c).
struct BornOperator {
  Eigen::MatrixXcd matrix;  // [n_tx*n_rx*n_freq x n_cells]
  GridGeometry grid;
  std::vector<Vec2> tx;
  std::vector<Vec2> rx;
  std::vector<double> freqs;

  int row_index(int t, int r, int f) const {
    return (t * static_cast<int>(rx.size()) + r) * static_cast<int>(freqs.size()) + f;
  }
};

inline BornOperator build_born_operator(const GridGeometry& grid, const std::vector<Vec2>& tx,
                                        const std::vector<Vec2>& rx,
                                        const std::vector<double>& freqs) {
  if (grid.nx <= 0 || grid.ny <= 0 || grid.cell_size <= 0.0)
    throw std::invalid_argument("build_born_operator: bad grid geometry");
  if (tx.empty() || rx.empty() || freqs.empty())
    throw std::invalid_argument("build_born_operator: need tx, rx, and frequencies");

  const Rect box = grid.bounding_box();
  const double min_standoff = 2.0 * grid.cell_size;
  for (const Vec2& p : tx)
    if (box.distance(p) < min_standoff)
      throw geometry_error("build_born_operator: tx probe closer than 2 cells to the grid");
  for (const Vec2& p : rx)
    if (box.distance(p) < min_standoff)
      throw geometry_error("build_born_operator: rx probe closer than 2 cells to the grid");

  BornOperator op;
  op.grid = grid;
  op.tx = tx;
  op.rx = rx;
  op.freqs = freqs;
  const int n_cells = grid.n_cells();
  const double area = grid.cell_size * grid.cell_size;
  op.matrix.resize(static_cast<int>(tx.size() * rx.size() * freqs.size()), n_cells);

  for (std::size_t f = 0; f < freqs.size(); ++f) {
    const double k = 2.0 * pi * freqs[f] / speed_of_light;
    const double k2a = k * k * area;
    // per-frequency probe-to-cell field tables
    Eigen::MatrixXcd g_tx(tx.size(), n_cells), g_rx(rx.size(), n_cells);
    for (int g = 0; g < n_cells; ++g) {
      const Vec2 c = grid.cell_center(g);
      for (std::size_t t = 0; t < tx.size(); ++t) g_tx(t, g) = greens_2d(k, tx[t], c);
      for (std::size_t r = 0; r < rx.size(); ++r) g_rx(r, g) = greens_2d(k, rx[r], c);
    }
    for (std::size_t t = 0; t < tx.size(); ++t)
      for (std::size_t r = 0; r < rx.size(); ++r) {
        const int row = op.row_index(static_cast<int>(t), static_cast<int>(r), static_cast<int>(f));
        for (int g = 0; g < n_cells; ++g) op.matrix(row, g) = k2a * g_rx(r, g) * g_tx(t, g);
      }
  }
  return op;
}

/// Sum over cells of the complex modulus |chi_g| = ||(Re, Im)||_2: the
/// group-sparsity functional of the contrast estimate.
inline double mixed_norm(const Eigen::VectorXcd& x) {
  double acc = 0.0;
  for (int i = 0; i < x.size(); ++i) acc += std::abs(x(i));
  return acc;
}

/// Euclidean projection onto the mixed-norm ball {x : sum_g |x_g| <= tau}.
/// Group norms are soft-thresholded by the exact sorted-cumulative rule.
inline Eigen::VectorXcd project_group_l1(const Eigen::VectorXcd& x, double tau) {
  if (tau < 0.0) throw std::invalid_argument("project_group_l1: tau must be >= 0");
  if (tau == 0.0) return Eigen::VectorXcd::Zero(x.size());
  const int n = static_cast<int>(x.size());
  std::vector<double> norms(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    norms[i] = std::abs(x(i));
    total += norms[i];
  }
  if (total <= tau) return x;

  std::vector<double> sorted = norms;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cumsum = 0.0, theta = 0.0;
  for (int i = 0; i < n; ++i) {
    cumsum += sorted[i];
    const double candidate = (cumsum - tau) / (i + 1);
    if (i + 1 == n || candidate >= sorted[i + 1]) {
      theta = candidate;
      break;
    }
  }
  Eigen::VectorXcd out(n);
  for (int i = 0; i < n; ++i) {
    const double scale = norms[i] > theta ? (norms[i] - theta) / norms[i] : 0.0;
    out(i) = x(i) * scale;
  }
  return out;
}

struct SpgResult {
  Eigen::VectorXcd chi;
  std::vector<double> objective_trace;  // accepted objective values, f = 0.5 ||Ax - y||^2
  int iterations = 0;
  bool converged = false;
};

/// Spectral projected gradient for min 0.5 ||Ax - y||^2 subject to the
/// mixed-norm constraint sum_g |x_g| <= tau. Barzilai-Borwein steps with a
/// nonmonotone (window 10) backtracking line search; terminates when the
/// projected-gradient step shrinks below tol.
inline SpgResult estimate_contrast(const BornOperator& op, const Eigen::VectorXcd& y, double tau,
                                   int max_iter = 500, double tol = 1e-8) {
  const Eigen::MatrixXcd& a = op.matrix;
  if (y.size() != a.rows())
    throw std::invalid_argument("estimate_contrast: measurement length mismatch");
  if (!y.allFinite()) throw std::invalid_argument("estimate_contrast: non-finite measurements");
  if (tau < 0.0) throw std::invalid_argument("estimate_contrast: tau must be >= 0");

  SpgResult res;
  res.chi = Eigen::VectorXcd::Zero(a.cols());
  if (tau == 0.0) {
    res.objective_trace.push_back(0.5 * y.squaredNorm());
    res.converged = true;
    return res;
  }

  const double gamma = 1e-4;
  const int memory = 10;
  const double alpha_min = 1e-12, alpha_max = 1e12;

  Eigen::VectorXcd x = res.chi;
  Eigen::VectorXcd residual = a * x - y;
  double f = 0.5 * residual.squaredNorm();
  Eigen::VectorXcd grad = a.adjoint() * residual;
  res.objective_trace.push_back(f);

  double alpha = 1.0 / std::max(grad.cwiseAbs().maxCoeff(), 1e-12);
  std::vector<double> recent{f};

  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXcd direction = project_group_l1(x - alpha * grad, tau) - x;
    const double residual_step = direction.norm();
    if (residual_step <= tol) {
      res.converged = true;
      break;
    }

    const double slope = std::real(grad.dot(direction));
    const double f_ref = *std::max_element(recent.begin(), recent.end());
    double lambda = 1.0;
    Eigen::VectorXcd x_new;
    double f_new = 0.0;
    for (int bt = 0; bt < 50; ++bt) {
      x_new = x + lambda * direction;
      f_new = 0.5 * (a * x_new - y).squaredNorm();
      if (f_new <= f_ref + gamma * lambda * slope) break;
      lambda *= 0.5;
    }

    const Eigen::VectorXcd grad_new = a.adjoint() * (a * x_new - y);
    const Eigen::VectorXcd s = x_new - x;
    const Eigen::VectorXcd g_diff = grad_new - grad;
    const double sty = std::real(s.dot(g_diff));
    alpha = sty > 1e-300 ? std::clamp(s.squaredNorm() / sty, alpha_min, alpha_max) : alpha_max;

    x = x_new;
    grad = grad_new;
    f = f_new;
    res.iterations = it + 1;
    res.objective_trace.push_back(f);
    recent.push_back(f);
    if (static_cast<int>(recent.size()) > memory) recent.erase(recent.begin());
  }
  res.chi = x;
  return res;
}

struct MaterialEstimate {
  double eps_r = 1.0;   // relative permittivity
  double sigma = 0.0;   // conductivity, S/m
  bool clipped = false; // true when a negative physical value was clipped to 0
  int cluster_label = -1;
};

/// Contrast to material parameters under the e^{+jwt} convention:
/// eps_r = Re(chi) + 1, sigma = -Im(chi) * omega * eps0. Unphysical negatives
/// clip to zero with the flag set.
inline MaterialEstimate contrast_to_material(cplx chi, double freq) {
  if (freq <= 0.0) throw std::invalid_argument("contrast_to_material: freq must be > 0");
  MaterialEstimate m;
  m.eps_r = chi.real() + 1.0;
  m.sigma = -chi.imag() * 2.0 * pi * freq * vacuum_permittivity;
  if (m.eps_r < 0.0) {
    m.eps_r = 0.0;
    m.clipped = true;
  }
  if (m.sigma < 0.0) {
    m.sigma = 0.0;
    m.clipped = true;
  }
  return m;
}

struct KmeansResult {
  std::vector<int> labels;
  std::vector<std::pair<double, double>> centroids;  // in original (eps_r, sigma) units
  std::vector<double> wcss_trace;                    // per Lloyd iteration, z-scored space
};

/// K-means over (eps_r, sigma) samples: z-scored features, k-means++ seeding,
/// Lloyd iterations until assignments settle. Deterministic per seed.
inline KmeansResult cluster_materials(const std::vector<std::pair<double, double>>& samples,
                                      int k, std::uint64_t seed) {
  const int n = static_cast<int>(samples.size());
  if (k < 1) throw std::invalid_argument("cluster_materials: k must be >= 1");
  if (k > n) throw std::invalid_argument("cluster_materials: k exceeds sample count");

  // z-score
  double mx = 0.0, my = 0.0;
  for (const auto& [a, b] : samples) {
    mx += a;
    my += b;
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& [a, b] : samples) {
    vx += (a - mx) * (a - mx);
    vy += (b - my) * (b - my);
  }
  double sx = std::sqrt(vx / n), sy = std::sqrt(vy / n);
  if (sx < 1e-12) sx = 1.0;
  if (sy < 1e-12) sy = 1.0;
  std::vector<Vec2> z(n);
  for (int i = 0; i < n; ++i) z[i] = {(samples[i].first - mx) / sx, (samples[i].second - my) / sy};

  // k-means++ seeding
  Rng rng = Rng(seed).child("kmeans");
  std::vector<Vec2> centers;
  centers.push_back(z[rng.uniform_int(0, n - 1)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec2& c : centers) best = std::min(best, (z[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // all remaining points coincide with a center; spread deterministically
      centers.push_back(z[static_cast<int>(centers.size()) % n]);
      continue;
    }
    double pick = rng.uniform() * total;
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      pick -= d2[i];
      if (pick <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(z[chosen]);
  }

  KmeansResult res;
  res.labels.assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    double wcss = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (z[i] - centers[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (z[i] - centers[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.labels[i] != best) {
        res.labels[i] = best;
        changed = true;
      }
      wcss += best_d;
    }
    res.wcss_trace.push_back(wcss);
    if (!changed && iter > 0) break;

    std::vector<Vec2> acc(k, Vec2::Zero());
    std::vector<int> count(k, 0);
    for (int i = 0; i < n; ++i) {
      acc[res.labels[i]] += z[i];
      ++count[res.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centers[c] = acc[c] / count[c];
      } else {
        // revive an empty cluster at the farthest point from its center
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = (z[i] - centers[res.labels[i]]).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers[c] = z[far];
      }
    }
  }

  res.centroids.resize(k);
  for (int c = 0; c < k; ++c)
    res.centroids[c] = {centers[c].x() * sx + mx, centers[c].y() * sy + my};
  return res;
}

}  // namespace isac
