#pragma once

// Magnitude and positive magnitude of finite pseudometric spaces.
//
// A weighting of (X, s*rho) solves M beta = 1 with M(a,b) = exp(-s*rho(a,b)).
// Pseudometric inputs are first quotiented by the zero-distance relation; the
// weighting is solved on the quotient and spread evenly over each class (the
// canonical weighting), which makes the positive part well defined.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include "error.hpp"
#include "metrics.hpp"
#include "ph0_mst.hpp"

namespace topo {

struct QuotientSpace {
  std::vector<std::size_t> class_of;         ///< original point -> class id
  std::vector<std::size_t> class_sizes;
  std::vector<std::size_t> representatives;  ///< first member of each class
  DistanceMatrix distances;                  ///< N' x N' between representatives

  std::size_t size() const { return class_sizes.size(); }
};

/// Merges points within `tol` of each other (transitively). Class ids follow
/// the order of first appearance.
inline QuotientSpace metric_identification(const DistanceMatrix& d, double tol = kIdentificationTolerance) {
  const std::size_t n = d.size();
  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (d(i, j) <= tol) uf.unite(i, j);
    }
  }
  QuotientSpace q;
  q.class_of.assign(n, 0);
  std::vector<std::size_t> root_class(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = uf.find(i);
    if (root_class[root] == std::numeric_limits<std::size_t>::max()) {
      root_class[root] = q.class_sizes.size();
      q.class_sizes.push_back(0);
      q.representatives.push_back(i);
    }
    q.class_of[i] = root_class[root];
    ++q.class_sizes[q.class_of[i]];
  }
  q.distances = d.submatrix(q.representatives);
  return q;
}

enum class WeightingSolver { KrylovCg, DenseDirect };

inline std::string to_string(WeightingSolver s) {
  return s == WeightingSolver::KrylovCg ? "krylov_cg" : "dense_direct";
}

struct SolverConfig {
  double tolerance = 1e-8;       ///< bound on ||M beta - 1||_inf
  std::size_t max_iter = 0;      ///< 0 selects 10 * N'
  std::size_t dense_cutoff = 512;
  /// Skip the dense path for N' <= dense_cutoff (used to exercise CG alone).
  bool krylov_only = false;
};

struct WeightingVector {
  std::vector<double> beta;  ///< one entry per quotient class
  double scale = 0.0;
  double residual = 0.0;     ///< achieved ||M beta - 1||_inf
  WeightingSolver solver = WeightingSolver::DenseDirect;
  std::size_t iterations = 0;
  bool conditioning_flag = false;
};

struct MagnitudeResult {
  double mag = 0.0;
  double pmag = 0.0;
  double scale = 0.0;
  double residual = 0.0;
  WeightingSolver solver = WeightingSolver::DenseDirect;
  bool conditioning_flag = false;
};

/// s * (smallest positive quotient distance) below this marks the system as
/// nearly singular.
inline constexpr double kConditioningThreshold = 1e-6;

inline Eigen::MatrixXd similarity_matrix(const DistanceMatrix& d, double s) {
  const auto n = static_cast<Eigen::Index>(d.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::exp(-s * d(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

inline double residual_inf(const Eigen::MatrixXd& m, const Eigen::VectorXd& beta) {
  return (m * beta - Eigen::VectorXd::Ones(m.rows())).lpNorm<Eigen::Infinity>();
}

struct CgResult {
  Eigen::VectorXd x;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Jacobi-preconditioned conjugate gradient for a symmetric positive definite
/// system, stopping on the infinity norm of the recursively updated residual.
/// The diagonal of a similarity matrix is all ones, so the preconditioner is
/// the identity there; it is kept for general SPD input.
inline CgResult conjugate_gradient(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol,
                                   std::size_t max_iter) {
  const Eigen::Index n = b.size();
  CgResult out;
  out.x = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd inv_diag = a.diagonal().cwiseInverse();
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  Eigen::VectorXd q(n);
  double rz = r.dot(z);
  if (r.lpNorm<Eigen::Infinity>() <= tol) {
    out.converged = true;
    return out;
  }
  for (std::size_t it = 0; it < max_iter; ++it) {
    q.noalias() = a * p;
    const double pq = p.dot(q);
    if (!(pq > 0.0)) break;  // lost positive definiteness numerically
    const double step = rz / pq;
    out.x += step * p;
    r -= step * q;
    out.iterations = it + 1;
    if (r.lpNorm<Eigen::Infinity>() <= tol) {
      out.converged = true;
      break;
    }
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return out;
}

namespace detail {

inline Eigen::VectorXd dense_weighting(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  Eigen::VectorXd beta;
  if (llt.info() == Eigen::Success) {
    beta = llt.solve(ones);
  } else {
    beta = m.partialPivLu().solve(ones);
  }
  // One step of iterative refinement tightens the residual when M is nearly singular.
  const Eigen::VectorXd r = ones - m * beta;
  beta += llt.info() == Eigen::Success ? Eigen::VectorXd(llt.solve(r)) : Eigen::VectorXd(m.partialPivLu().solve(r));
  return beta;
}

inline double min_positive_distance(const DistanceMatrix& d) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      if (d(i, j) > 0.0) best = std::min(best, d(i, j));
    }
  }
  return best;
}

}  // namespace detail

/// Solves for the weighting of (Q, s*rho): CG first unless the quotient is
/// small enough for a direct solve; the dense solve is also the fallback when
/// CG exhausts its iteration budget or misses the tolerance.
inline WeightingVector solve_weighting(const QuotientSpace& q, double s, const SolverConfig& cfg = {}) {
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::NonPositiveScale, "scale must be a finite real > 0");
  const std::size_t n = q.size();
  WeightingVector w;
  w.scale = s;
  if (n == 0) return w;
  w.conditioning_flag = n > 1 && s * detail::min_positive_distance(q.distances) < kConditioningThreshold;

  const Eigen::MatrixXd m = similarity_matrix(q.distances, s);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  Eigen::VectorXd beta;
  bool solved = false;

  const bool try_krylov = cfg.krylov_only || n > cfg.dense_cutoff;
  if (try_krylov) {
    const std::size_t max_iter = cfg.max_iter ? cfg.max_iter : 10 * n;
    // Stop the recursive residual short of the target so the true residual,
    // which drifts from it in floating point, still meets the tolerance.
    auto cg = conjugate_gradient(m, ones, 0.1 * cfg.tolerance, max_iter);
    w.iterations = cg.iterations;
    if (cg.converged) {
      const double res = residual_inf(m, cg.x);
      if (res <= cfg.tolerance) {
        beta = std::move(cg.x);
        w.residual = res;
        w.solver = WeightingSolver::KrylovCg;
        solved = true;
      }
    }
    if (!solved && cfg.krylov_only) {
      throw Error(ErrorKind::SolverDiverged, "conjugate gradient did not reach tolerance " +
                                                 format_real(cfg.tolerance) + " within " + std::to_string(max_iter) +
                                                 " iterations");
    }
  }
  if (!solved) {
    beta = detail::dense_weighting(m);
    w.residual = residual_inf(m, beta);
    w.solver = WeightingSolver::DenseDirect;
    if (!(w.residual <= cfg.tolerance) || !beta.allFinite()) {
      throw Error(ErrorKind::SolverDiverged, "weighting residual " + format_real(w.residual) +
                                                 " exceeds tolerance " + format_real(cfg.tolerance));
    }
  }
  w.beta.assign(beta.data(), beta.data() + beta.size());
  return w;
}

/// Spreads each class weight evenly over its members: beta0(x) = beta(class)/|class|.
inline std::vector<double> canonical_weighting(const QuotientSpace& q, const WeightingVector& w) {
  std::vector<double> out(q.class_of.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = q.class_of[i];
    out[i] = w.beta[c] / static_cast<double>(q.class_sizes[c]);
  }
  return out;
}

inline MagnitudeResult magnitude_result(const WeightingVector& w) {
  MagnitudeResult r;
  r.scale = w.scale;
  r.residual = w.residual;
  r.solver = w.solver;
  r.conditioning_flag = w.conditioning_flag;
  for (double b : w.beta) {
    r.mag += b;
    r.pmag += std::max(b, 0.0);
  }
  return r;
}

/// Mag and PMag from a single weighting solve.
inline MagnitudeResult magnitude_and_positive(const QuotientSpace& q, double s, const SolverConfig& cfg = {}) {
  return magnitude_result(solve_weighting(q, s, cfg));
}

inline double magnitude(const QuotientSpace& q, double s, const SolverConfig& cfg = {}) {
  return magnitude_and_positive(q, s, cfg).mag;
}

inline double positive_magnitude(const QuotientSpace& q, double s, const SolverConfig& cfg = {}) {
  return magnitude_and_positive(q, s, cfg).pmag;
}

}  // namespace topo
