#ifndef BIVFA_APG_HPP
#define BIVFA_APG_HPP

// Accelerated proximal gradient subsolvers.
//
//   apg_strongly_convex  accelerated scheme for mu-strongly convex phi1 with
//                        backtracking and a certified near-stationary output
//   apg_convex           FISTA with backtracking for merely convex phi1
//
// The nonsmooth part is any type exposing
//   Vec prox(const Vec& y, double t) const;   // argmin psi(x) + |x-y|^2/(2t)
//   double value(const Vec& x) const;

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "bivfa/composite.hpp"
#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"

namespace bivfa {

inline constexpr int kMaxBacktracks = 60;

struct ApgStrongConfig {
  double mu = 0.0;
  double L_min = 1e-6;
  double gamma1 = 2.0;
  double gamma2 = 2.0;
  double eps_stat = 1e-8;
  std::size_t max_iters = 1'000'000;

  void validate() const {
    if (!(mu > 0.0)) throw ConfigError("ApgStrongConfig: mu must be positive");
    if (!(L_min > 0.0)) throw ConfigError("ApgStrongConfig: L_min must be positive");
    if (!(gamma1 > 1.0)) throw ConfigError("ApgStrongConfig: gamma1 must exceed 1");
    if (!(gamma2 >= 1.0)) throw ConfigError("ApgStrongConfig: gamma2 must be at least 1");
    if (!(eps_stat > 0.0)) throw ConfigError("ApgStrongConfig: eps_stat must be positive");
  }
};

/// Output of apg_strongly_convex. `subgradient_witness` lies in the
/// subdifferential of phi1 + phi2 at `point`.
struct StationarityCertificate {
  Vec point;
  double residual_norm = kInf;
  Vec subgradient_witness;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Per-iteration view handed to observers of apg_strongly_convex.
struct ApgStrongIterate {
  std::size_t k;
  const Vec& x;      // accelerated iterate x_{k+1}
  const Vec& x_hat;  // certified point
  double L_tilde;
  double L_hat;
  double residual_norm;
};

struct ApgConvexConfig {
  double L0 = 1.0;
  double eta = 2.0;
  double eps_obj = 1e-8;
  std::optional<double> R_bound;
  std::size_t max_iters = 1'000'000;

  void validate() const {
    if (!(L0 > 0.0)) throw ConfigError("ApgConvexConfig: L0 must be positive");
    if (!(eta > 1.0)) throw ConfigError("ApgConvexConfig: eta must exceed 1");
    if (!(eps_obj > 0.0)) throw ConfigError("ApgConvexConfig: eps_obj must be positive");
    if (R_bound && !(*R_bound >= 0.0)) throw ConfigError("ApgConvexConfig: R_bound must be nonnegative");
  }
};

struct ApgConvexResult {
  Vec point;
  bool converged = false;
  std::size_t iterations = 0;
  double L = 0.0;
};

struct ApgConvexIterate {
  std::size_t k;
  const Vec& x;
  double L;
};

namespace detail {

// Quadratic upper-bound test phi1(x) <= phi1(y) + <g_y, d> + L/2 |d|^2,
// d = x - y. Once f(x) and f(y) agree to ~10 digits the value difference is
// mostly rounding, so the test switches to the curvature form
// <g_x - g_y, d> <= L |d|^2, which is exact for quadratics. The gradient at
// x is then computed (and counted) once and handed back through `gx`.
inline bool upper_bound_holds(const SmoothOracle& phi, const Vec& x, double fx, double fy, const Vec& gy,
                              const Vec& d, double L, QueryCounter& counter, std::optional<Vec>& gx) {
  if (std::abs(fx - fy) >= 1e-10 * std::max(std::abs(fx), std::abs(fy))) {
    return fx <= fy + gy.dot(d) + 0.5 * L * d.squaredNorm();
  }
  if (!gx) gx = phi.gradient(x, counter);
  return (*gx - gy).dot(d) <= L * d.squaredNorm();
}

inline void check_finite_iterate(const Vec& x, const char* where) {
  if (!x.allFinite()) throw NumericalFailure(std::string(where) + ": non-finite iterate");
}

}  // namespace detail

/// Accelerated proximal gradient for mu-strongly convex phi1 + phi2.
///
/// Stops when the witness v = L_hat (x - x_hat) + grad(x_hat) - grad(x),
/// produced by an extra prox-gradient step from the accelerated iterate x,
/// satisfies |v| <= eps_stat. The prox and gradient steps of that extra step
/// share the same constant L_hat, which is what puts v in the
/// subdifferential at x_hat.
template <class Prox>
StationarityCertificate apg_strongly_convex(const SmoothOracle& phi1, const Prox& phi2, const ApgStrongConfig& cfg,
                                            const Vec& y0, QueryCounter& counter,
                                            const std::function<void(const ApgStrongIterate&)>& observer = {}) {
  cfg.validate();
  require_dim(y0, phi1.dim(), "apg_strongly_convex");
  require_finite(y0, "apg_strongly_convex");
  const double g1 = cfg.gamma1;

  auto prox_step = [&](const Vec& y, const Vec& gy, double L) {
    ++counter.prox_evals;
    Vec x = phi2.prox(y - gy / L, 1.0 / L);
    detail::check_finite_iterate(x, "apg_strongly_convex");
    return x;
  };

  // Initial backtracking from y0.
  double L_tilde = cfg.L_min / g1;
  Vec x_tilde;
  {
    const Vec gy = phi1.gradient(y0, counter);
    const double fy = phi1.value(y0, counter);
    for (int bt = 0;; ++bt) {
      if (bt > kMaxBacktracks) throw NumericalFailure("apg_strongly_convex: initial backtracking diverged");
      L_tilde *= g1;
      x_tilde = prox_step(y0, gy, L_tilde);
      std::optional<Vec> gx;
      if (detail::upper_bound_holds(phi1, x_tilde, phi1.value(x_tilde, counter), fy, gy, x_tilde - y0, L_tilde,
                                    counter, gx))
        break;
    }
  }

  Vec x = x_tilde;
  Vec x_prev = x_tilde;
  double L = std::max(cfg.L_min, L_tilde / cfg.gamma2);
  double alpha_prev = 1.0;

  StationarityCertificate best;
  best.point = x;
  for (std::size_t k = 0; k < cfg.max_iters; ++k) {
    double alpha = 1.0;
    Vec y;
    std::optional<Vec> g_tilde;
    double f_tilde = 0.0;
    L_tilde = L / g1;
    for (int bt = 0;; ++bt) {
      if (bt > kMaxBacktracks) throw NumericalFailure("apg_strongly_convex: backtracking diverged");
      L_tilde *= g1;
      alpha = std::min(1.0, std::sqrt(cfg.mu / L_tilde));
      const double beta = alpha * (1.0 - alpha_prev) / (alpha_prev * (1.0 + alpha));
      y = x + beta * (x - x_prev);
      const Vec gy = phi1.gradient(y, counter);
      const double fy = phi1.value(y, counter);
      x_tilde = prox_step(y, gy, L_tilde);
      g_tilde.reset();
      f_tilde = phi1.value(x_tilde, counter);
      if (detail::upper_bound_holds(phi1, x_tilde, f_tilde, fy, gy, x_tilde - y, L_tilde, counter, g_tilde)) break;
    }

    // Extra step for a certified point.
    const Vec gx = g_tilde ? std::move(*g_tilde) : phi1.gradient(x_tilde, counter);
    const double fx = f_tilde;
    double L_hat = L_tilde / g1;
    Vec x_hat;
    std::optional<Vec> g_hat;
    for (int bt = 0;; ++bt) {
      if (bt > kMaxBacktracks) throw NumericalFailure("apg_strongly_convex: certificate backtracking diverged");
      L_hat *= g1;
      x_hat = prox_step(x_tilde, gx, L_hat);
      g_hat.reset();
      if (detail::upper_bound_holds(phi1, x_hat, phi1.value(x_hat, counter), fx, gx, x_hat - x_tilde, L_hat, counter,
                                    g_hat))
        break;
    }

    x_prev = std::move(x);
    x = x_tilde;
    L = std::max(cfg.L_min, L_tilde / cfg.gamma2);
    alpha_prev = alpha;

    Vec witness = L_hat * (x_tilde - x_hat) + (g_hat ? *g_hat : phi1.gradient(x_hat, counter)) - gx;
    const double res = witness.norm();
    if (!std::isfinite(res)) throw NumericalFailure("apg_strongly_convex: non-finite residual");
    if (observer) observer(ApgStrongIterate{k, x, x_hat, L_tilde, L_hat, res});
    if (res < best.residual_norm) {
      best.point = x_hat;
      best.residual_norm = res;
      best.subgradient_witness = std::move(witness);
    }
    best.iterations = k + 1;
    if (res <= cfg.eps_stat) {
      best.point = std::move(x_hat);
      best.residual_norm = res;
      best.converged = true;
      return best;
    }
  }
  return best;
}

/// FISTA with backtracking.
///
/// Stops once 2 eta L R^2 / (k+1)^2 <= eps_obj, L being the smooth part's
/// Lipschitz hint (the current backtracking constant when no hint exists).
/// Without R_bound, R is estimated by the largest |x_j - x0| seen so far,
/// and the gradient mapping must also satisfy |L_k (y_k - x_k)| <= sqrt(2 eps_obj L_k).
template <class Prox>
ApgConvexResult apg_convex(const SmoothOracle& phi1, const Prox& phi2, const ApgConvexConfig& cfg, const Vec& x0,
                           QueryCounter& counter, const std::function<void(const ApgConvexIterate&)>& observer = {}) {
  cfg.validate();
  require_dim(x0, phi1.dim(), "apg_convex");
  require_finite(x0, "apg_convex");

  double L = cfg.L0;
  double t = 1.0;
  Vec y = x0;
  Vec x_prev = x0;
  Vec x = x0;
  ApgConvexResult out;
  double R_seen = 0.0;
  for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
    const Vec gy = phi1.gradient(y, counter);
    const double fy = phi1.value(y, counter);
    for (int bt = 0;; ++bt) {
      if (bt > kMaxBacktracks) throw NumericalFailure("apg_convex: backtracking diverged");
      ++counter.prox_evals;
      x = phi2.prox(y - gy / L, 1.0 / L);
      detail::check_finite_iterate(x, "apg_convex");
      std::optional<Vec> gx;
      if (detail::upper_bound_holds(phi1, x, phi1.value(x, counter), fy, gy, x - y, L, counter, gx)) break;
      L *= cfg.eta;
    }
    if (observer) observer(ApgConvexIterate{k, x, L});

    R_seen = std::max(R_seen, (x - x0).norm());
    const double R = cfg.R_bound.value_or(R_seen);
    const double Lphi = phi1.lipschitz_hint().value_or(L);
    const double kp1 = static_cast<double>(k + 1);
    bool stop = 2.0 * cfg.eta * Lphi * R * R / (kp1 * kp1) <= cfg.eps_obj;
    // With a zero smooth part the bound vanishes for any R, so the estimate needs no backup.
    if (!cfg.R_bound && Lphi > 0.0) stop = stop && L * (y - x).norm() <= std::sqrt(2.0 * cfg.eps_obj * L);
    out.iterations = k;
    out.L = L;
    if (stop) {
      out.point = x;
      out.converged = true;
      return out;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x + ((t - 1.0) / t_next) * (x - x_prev);
    x_prev = x;
    t = t_next;
  }
  out.point = x;
  return out;
}

}  // namespace bivfa

#endif  // BIVFA_APG_HPP
