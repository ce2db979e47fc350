#ifndef BIVFA_REFERENCE_HPP
#define BIVFA_REFERENCE_HPP

// High-accuracy reference values g*, f*, p* for quadratic instances.
//
// Deliberately shares nothing with the dual machinery except the closed-form
// prox maps:
//   g*  pseudo-inverse (no lower nonsmooth term), Lawson-Hanson active set
//       (lower bound), or ADMM (other indicators)
//   p*  the lower solution set is {x in dom g2 : M x = M x_g} where M is the
//       least-squares matrix (or Hessian) of g1; f is minimized over that
//       affine slice by ADMM in null-space coordinates, then polished by an
//       exact equality-constrained solve on the identified active set.
//   f*  ADMM on the upper problem alone.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"
#include "bivfa/problems.hpp"
#include "bivfa/prox.hpp"

namespace bivfa {

struct ReferenceValues {
  double g_star = 0.0;
  double f_star = 0.0;
  double p_star = 0.0;
  Vec x_ref;   // argmin of f over the lower solution set
  Vec x_g;     // a lower-level minimizer
  double tolerance_achieved = 0.0;
  Eigen::Index solution_set_dim = 0;  // dimension of the null space of M
  /// p* - f* is below the reference tolerance (upper and lower objectives
  /// share a minimizer, so no positive gap Delta exists).
  bool gap_violated = false;
};

struct ReferenceOptions {
  std::uint64_t seed = 1;
  std::size_t max_iters = 400'000;
};

namespace detail {

// min 0.5|A x - b|^2 s.t. x >= 0 (Lawson-Hanson).
inline Vec nnls(const Mat& A, const Vec& b, std::size_t max_outer = 0) {
  const Eigen::Index n = A.cols();
  if (max_outer == 0) max_outer = static_cast<std::size_t>(10 * n + 10);
  Vec x = Vec::Zero(n);
  std::vector<bool> P(static_cast<std::size_t>(n), false);
  const double tol = 1e-13 * std::max(1.0, (A.transpose() * b).cwiseAbs().maxCoeff());

  auto solve_passive = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
      if (P[static_cast<std::size_t>(i)]) idx.push_back(i);
    Mat Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    Vec zp = Ap.completeOrthogonalDecomposition().solve(b);
    Vec z = Vec::Zero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
    return z;
  };

  for (std::size_t outer = 0; outer < max_outer; ++outer) {
    Vec w = A.transpose() * (b - A * x);
    Eigen::Index j = -1;
    double best = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!P[static_cast<std::size_t>(i)] && w[i] > best) {
        best = w[i];
        j = i;
      }
    }
    if (j < 0) return x;
    P[static_cast<std::size_t>(j)] = true;
    Vec z = solve_passive();
    for (std::size_t inner = 0; inner < static_cast<std::size_t>(3 * n + 3); ++inner) {
      double alpha = kInf;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (P[static_cast<std::size_t>(i)] && z[i] <= 0.0) alpha = std::min(alpha, x[i] / (x[i] - z[i]));
      }
      if (!std::isfinite(alpha)) break;
      x += alpha * (z - x);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (P[static_cast<std::size_t>(i)] && x[i] <= 1e-15) {
          P[static_cast<std::size_t>(i)] = false;
          x[i] = 0.0;
        }
      }
      z = solve_passive();
    }
    x = z.cwiseMax(0.0);
  }
  throw ReferenceUnavailable("nnls: active-set iteration limit reached");
}

// Orthonormal basis of null(M) and the SVD rank threshold used.
inline Mat null_basis(const Mat& M) {
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
  const Vec& s = svd.singularValues();
  const double smax = s.size() ? s[0] : 0.0;
  const double thr = 1e-9 * std::max(smax, 1e-300);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > thr) ++rank;
  return svd.matrixV().rightCols(M.cols() - rank);
}

// Data of  min 0.5 w^T P w + q^T w + psi(x_p + N w).
struct AffineQp {
  Mat P;
  Vec q;
  Vec x_p;
  Mat N;
  std::function<Vec(const Vec&, double)> prox;  // prox of t * psi
  std::function<double(const Vec&)> psi;
};

struct AdmmResult {
  Vec x;  // x_p + N w
  Vec v;  // copy in dom psi
  bool converged = false;
  double residual = kInf;
  std::size_t iterations = 0;
};

inline AdmmResult admm(const AffineQp& qp, double tol, std::uint64_t seed, std::size_t max_iters) {
  const Eigen::Index n = qp.x_p.size();
  const Eigen::Index k = qp.N.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v = qp.x_p;
  for (Eigen::Index i = 0; i < n; ++i) v[i] += nd(rng);
  Vec u = Vec::Zero(n);
  const double scale = std::max(1.0, qp.P.diagonal().cwiseAbs().maxCoeff());
  double rho = scale;
  auto factor = [&](double r) { return Eigen::LLT<Mat>(qp.P + r * Mat::Identity(k, k)); };
  Eigen::LLT<Mat> llt = factor(rho);
  AdmmResult out;
  Vec w = Vec::Zero(k);
  Vec x = qp.x_p;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    w = llt.solve(-qp.q + rho * (qp.N.transpose() * (v - u - qp.x_p)));
    x = qp.x_p + qp.N * w;
    const Vec v_prev = v;
    v = qp.prox(x + u, 1.0 / rho);
    u += x - v;
    const double r = (x - v).norm();
    const double s = rho * (qp.N.transpose() * (v - v_prev)).norm();
    const double sc = std::max({1.0, x.norm(), v.norm()});
    out.iterations = it;
    out.residual = std::max(r, s) / sc;
    if (r <= tol * sc && s <= tol * sc * scale) {
      out.converged = true;
      break;
    }
    if (it % 100 == 0) {
      double next = rho;
      if (r > 10.0 * s) next = rho * 2.0;
      else if (s > 10.0 * r) next = rho / 2.0;
      if (next != rho) {
        u *= rho / next;
        rho = next;
        llt = factor(rho);
      }
    }
  }
  out.x = x;
  out.v = v;
  return out;
}

// Exact minimizer of 0.5 w^T P w + (q + N^T lin)^T w subject to
// (x_p + N w)_i = fix_i for every i in `fixed`. Returns x.
inline Vec restricted_solve(const AffineQp& qp, const Vec& lin, const std::vector<Eigen::Index>& fixed,
                            const Vec& fix_values) {
  const Eigen::Index k = qp.N.cols();
  const auto m = static_cast<Eigen::Index>(fixed.size());
  Mat K = Mat::Zero(k + m, k + m);
  Vec rhs(k + m);
  K.topLeftCorner(k, k) = qp.P;
  rhs.head(k) = -(qp.q + qp.N.transpose() * lin);
  for (Eigen::Index a = 0; a < m; ++a) {
    const Eigen::Index i = fixed[static_cast<std::size_t>(a)];
    K.block(k + a, 0, 1, k) = qp.N.row(i);
    K.block(0, k + a, k, 1) = qp.N.row(i).transpose();
    rhs[k + a] = fix_values[a] - qp.x_p[i];
  }
  const Vec sol = K.completeOrthogonalDecomposition().solve(rhs);
  return qp.x_p + qp.N * sol.head(k);
}

inline double qp_objective(const AffineQp& qp, const Vec& x) {
  const Vec w = qp.N.transpose() * (x - qp.x_p);
  return 0.5 * w.dot(qp.P * w) + qp.q.dot(w);
}

// Polish an ADMM solution when psi is a lower-bound indicator or a weighted
// l1 norm (optionally with the zero function). Returns the better of the
// ADMM point and the polished point, together with the accuracy estimate.
struct Polished {
  Vec x;
  double accuracy = kInf;
  bool used = false;
};

inline Polished polish(const AffineQp& qp, const AdmmResult& r, const ProxOracle& psi_kind, double admm_accuracy) {
  using K = ProxOracle::Kind;
  Polished out;
  out.x = r.v;
  out.accuracy = admm_accuracy;
  const Eigen::Index n = r.v.size();
  const double zero_tol = 1e-7 * std::max(1.0, r.v.cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> fixed;
  Vec lin = Vec::Zero(n);
  double bound = 0.0;
  if (psi_kind.kind() == K::kLowerBound) {
    bound = psi_kind.param();
    for (Eigen::Index i = 0; i < n; ++i)
      if (r.v[i] <= bound + zero_tol) fixed.push_back(i);
  } else if (psi_kind.kind() == K::kL1Norm) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(r.v[i]) <= zero_tol) {
        fixed.push_back(i);
      } else {
        lin[i] = psi_kind.param() * (r.v[i] > 0.0 ? 1.0 : -1.0);
      }
    }
  } else if (psi_kind.kind() != K::kZero) {
    return out;
  }
  const Vec fix_values = Vec::Constant(static_cast<Eigen::Index>(fixed.size()), bound);
  const Vec xp = restricted_solve(qp, lin, fixed, fix_values);
  // Consistency: the polished point keeps the identified pattern.
  const double feas_tol = 1e-10 * std::max(1.0, xp.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (psi_kind.kind() == K::kLowerBound && xp[i] < bound - feas_tol) return out;
    if (psi_kind.kind() == K::kL1Norm && lin[i] != 0.0 && xp[i] * lin[i] < -feas_tol) return out;
  }
  Vec xc = xp;
  if (psi_kind.kind() == K::kLowerBound) xc = xc.cwiseMax(bound);
  const double obj_p = qp_objective(qp, xc) + qp.psi(xc);
  const double obj_a = qp_objective(qp, r.x) + qp.psi(r.v);
  if (std::isfinite(obj_p) && obj_p <= obj_a + 1e-9 * std::max(1.0, std::abs(obj_a))) {
    out.x = xc;
    out.used = true;
    // Residual of the equality-constrained solve.
    out.accuracy = std::min(admm_accuracy, std::max(1e-12, (xc - xp).norm()));
  }
  return out;
}

}  // namespace detail

/// Reference values for an instance with quadratic smooth parts.
///
/// Throws ReferenceUnavailable when an inner solve misses `tol` or the lower
/// nonsmooth term is not an indicator (or zero).
inline ReferenceValues reference_solve(const InstanceData& data, double tol, const ReferenceOptions& opt = {}) {
  using K = ProxOracle::Kind;
  if (!(tol > 0.0)) throw ConfigError("reference_solve: tol must be positive");
  const Eigen::Index n = data.n;
  if (n > 400) throw ReferenceUnavailable("reference_solve: dimension too large for dense oracle");
  const ProxOracle& g2 = data.lower.nonsmooth;
  const ProxOracle& f2 = data.upper.nonsmooth;
  if (!(g2.kind() == K::kZero || g2.is_indicator())) {
    throw ReferenceUnavailable("reference_solve: lower nonsmooth term must be zero or an indicator");
  }
  if (data.lower.smooth.kind == SmoothSpec::Kind::kZero) {
    throw ReferenceUnavailable("reference_solve: lower smooth part must be nonzero");
  }
  const BilevelInstance inst = data.build();
  ReferenceValues rv;
  double achieved = 0.0;

  const Mat Hg = data.lower.smooth.hessian(n);
  const Vec hg = data.lower.smooth.linear(n);
  const Mat Hf = data.upper.smooth.hessian(n);
  const Vec hf = data.upper.smooth.linear(n);

  // M with g1 strictly convex in M x.
  Mat M = data.lower.smooth.kind == SmoothSpec::Kind::kLeastSquares ? data.lower.smooth.M : Hg;

  // Lower level.
  Vec x_g;
  if (g2.kind() == K::kZero) {
    if (data.lower.smooth.kind == SmoothSpec::Kind::kLeastSquares) {
      x_g = data.lower.smooth.M.completeOrthogonalDecomposition().solve(data.lower.smooth.v);
    } else {
      x_g = Hg.completeOrthogonalDecomposition().solve(-hg);
    }
  } else if (g2.kind() == K::kLowerBound && data.lower.smooth.kind == SmoothSpec::Kind::kLeastSquares) {
    const Mat& A = data.lower.smooth.M;
    const Vec shift = Vec::Constant(n, g2.param());
    x_g = detail::nnls(A, data.lower.smooth.v - A * shift) + shift;
  } else {
    detail::AffineQp qp{Hg, hg, Vec::Zero(n), Mat::Identity(n, n),
                        [&](const Vec& y, double t) { return g2.prox(y, t); },
                        [&](const Vec& x) { return g2.value(x); }};
    detail::AdmmResult r = detail::admm(qp, tol, opt.seed, opt.max_iters);
    if (!r.converged) throw ReferenceUnavailable("reference_solve: lower-level ADMM did not reach tol");
    detail::Polished p = detail::polish(qp, r, g2, r.residual);
    x_g = p.x;
    achieved = std::max(achieved, p.accuracy);
  }
  rv.x_g = x_g;
  rv.g_star = inst.g(x_g);
  if (!std::isfinite(rv.g_star)) throw ReferenceUnavailable("reference_solve: lower-level minimizer infeasible");

  // Upper level alone.
  {
    detail::AffineQp qp{Hf, hf, Vec::Zero(n), Mat::Identity(n, n),
                        [&](const Vec& y, double t) { return f2.prox(y, t); },
                        [&](const Vec& x) { return f2.value(x); }};
    detail::AdmmResult r = detail::admm(qp, tol, opt.seed + 1, opt.max_iters);
    if (!r.converged) throw ReferenceUnavailable("reference_solve: upper-level ADMM did not reach tol");
    detail::Polished p = detail::polish(qp, r, f2, r.residual);
    achieved = std::max(achieved, p.accuracy);
    rv.f_star = inst.f(p.x);
  }

  // Bilevel optimum over {x in dom g2 : M x = M x_g}.
  const Mat N = detail::null_basis(M);
  rv.solution_set_dim = N.cols();
  if (N.cols() == 0) {
    rv.x_ref = x_g;
    rv.p_star = inst.f(x_g);
  } else {
    const Vec y_star = M * x_g;
    const Vec x_p = M.completeOrthogonalDecomposition().solve(y_star);
    detail::AffineQp qp{N.transpose() * Hf * N, N.transpose() * (Hf * x_p + hf), x_p, N,
                        [&](const Vec& y, double t) { return bivfa::combined_prox(y, t, 1.0, g2, f2); },
                        [&](const Vec& x) { return g2.value(x) + f2.value(x); }};
    detail::AdmmResult r = detail::admm(qp, tol, opt.seed + 2, opt.max_iters);
    // The polish pattern: lower-bound indicator or l1 norm, whichever is present.
    const ProxOracle pattern = g2.kind() == K::kLowerBound ? g2 : (g2.kind() == K::kZero ? f2 : ProxOracle::l2_ball(1.0));
    detail::Polished p = detail::polish(qp, r, pattern, r.residual);
    if (!r.converged && !p.used) throw ReferenceUnavailable("reference_solve: bilevel ADMM did not reach tol");
    achieved = std::max(achieved, p.accuracy);
    rv.x_ref = p.x;
    double pf = inst.f(p.x);
    if (!std::isfinite(pf)) pf = inst.upper().smooth.value(p.x);
    rv.p_star = pf;
  }
  rv.tolerance_achieved = std::max(achieved, 1e-16);
  rv.gap_violated = rv.p_star - rv.f_star <= std::max(tol, rv.tolerance_achieved) * std::max(1.0, std::abs(rv.f_star));
  return rv;
}

}  // namespace bivfa

#endif  // BIVFA_REFERENCE_HPP
