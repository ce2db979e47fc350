#ifndef BIVFA_DUAL_HPP
#define BIVFA_DUAL_HPP

// Dual approach for the level-constrained lower problem
//
//   min_x  g(x) + (mu/2)|x - x0|^2   s.t.  f_c(x) = f(x) - c <= 0,
//
// via its Lagrangian in x for fixed multiplier z. The dual function d(z) is
// concave with gradient f_c(x(z)), so a sign test on f_c at an approximate
// minimizer drives a doubling search for a bracket and then bisection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>

#include "bivfa/apg.hpp"
#include "bivfa/composite.hpp"
#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"

namespace bivfa {

/// Inner tolerances for the dual subsolver.
///
/// Defaults follow the worst-case schedule
///   eps1 = eps^2 / D,   eps2 = B_f eps / D,
///   eps3 = (2 D_z B_f + 2 D_z B_f^2) eps / D,   eps4 = eps^2 / D.
/// Each can be pinned by an explicit override. The perturbation weight mu
/// equals eps unless overridden.
struct ToleranceSchedule {
  double eps = 1e-6;
  double D = 1.0;
  double B_f = 1.0;
  double D_z = 1.0;
  std::optional<double> eps1_override;
  std::optional<double> eps2_override;
  std::optional<double> eps3_override;
  std::optional<double> eps4_override;
  std::optional<double> mu_override;

  double mu() const { return mu_override.value_or(eps); }
  double eps1() const { return eps1_override.value_or(eps * eps / D); }
  double eps2() const { return eps2_override.value_or(B_f * eps / D); }
  double eps3() const { return eps3_override.value_or((2.0 * D_z * B_f + 2.0 * D_z * B_f * B_f) * eps / D); }
  double eps4() const { return eps4_override.value_or(eps * eps / D); }

  /// Overrides tuned for double precision: mu = mu_scale eps,
  /// eps1 = 0.3 sqrt(mu eps) (so eps1^2 / (2 mu) stays below eps / 20),
  /// eps2 = eps3 = eps / 10, eps4 = eps / 1000.
  static ToleranceSchedule practical(double eps, double mu_scale = 1.0) {
    ToleranceSchedule s;
    s.eps = eps;
    s.mu_override = mu_scale * eps;
    s.eps1_override = 0.3 * std::sqrt(mu_scale) * eps;
    s.eps2_override = 0.1 * eps;
    s.eps3_override = 0.1 * eps;
    s.eps4_override = 1e-3 * eps;
    return s;
  }

  /// Raise B_f to cover an observed |grad f1(x)| + l_f2.
  void observe_upper_slope(double slope) {
    if (std::isfinite(slope)) B_f = std::max(B_f, slope);
  }

  void validate() const {
    auto pos = [](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("ToleranceSchedule: ") + what + " must be positive");
    };
    pos(eps, "eps");
    pos(D, "D");
    pos(B_f, "B_f");
    pos(D_z, "D_z");
    pos(eps1(), "eps1");
    pos(eps2(), "eps2");
    pos(eps3(), "eps3");
    pos(eps4(), "eps4");
    pos(mu(), "mu");
  }
};

/// Line-search and iteration parameters shared by every strongly convex
/// subsolve; mu and eps_stat are filled per call.
struct SubsolverConfig {
  double L_min = 1e-6;
  double gamma1 = 2.0;
  double gamma2 = 2.0;
  std::size_t max_iters = 1'000'000;

  ApgStrongConfig apg(double mu, double eps_stat) const {
    ApgStrongConfig cfg;
    cfg.mu = mu;
    cfg.L_min = L_min;
    cfg.gamma1 = gamma1;
    cfg.gamma2 = gamma2;
    cfg.eps_stat = eps_stat;
    cfg.max_iters = max_iters;
    return cfg;
  }
};

/// Perturbed level-constrained lower problem at level c.
struct Subproblem {
  const BilevelInstance* instance = nullptr;
  double c = 0.0;
  double eps_perturb = 0.0;
  Vec anchor;

  Subproblem(const BilevelInstance& inst, double level, double mu, Vec x0)
      : instance(&inst), c(level), eps_perturb(mu), anchor(std::move(x0)) {
    if (!(mu > 0.0)) throw ConfigError("Subproblem: perturbation weight must be positive");
    require_dim(anchor, inst.dim(), "Subproblem anchor");
    require_finite(anchor, "Subproblem anchor");
  }

  /// f1(x) - c + f2(x); +inf outside dom f2.
  double f_c(const Vec& x, QueryCounter& qc) const { return instance->f(x, qc) - c; }
};

/// Nonsmooth part g2 + z f2 of the Lagrangian.
struct LagrangianProx {
  const BilevelInstance* instance;
  double z;

  Vec prox(const Vec& y, double t) const { return instance->combined_prox(y, t, z); }
  double value(const Vec& x) const {
    const double g2 = instance->lower().nonsmooth.value(x);
    return z > 0.0 ? g2 + z * instance->upper().nonsmooth.value(x) : g2;
  }
};

/// Smooth part g1(x) + (mu/2)|x - x0|^2 + z (f1(x) - c) and the matching
/// nonsmooth part g2 + z f2.
inline std::pair<SmoothOracle, LagrangianProx> lagrangian_oracles(const Subproblem& sub, double z) {
  if (!(z >= 0.0)) throw ConfigError("lagrangian_oracles: multiplier must be nonnegative");
  const SmoothOracle g1 = sub.instance->lower().smooth;
  const SmoothOracle f1 = sub.instance->upper().smooth;
  const double mu = sub.eps_perturb;
  const double c = sub.c;
  const Vec x0 = sub.anchor;
  std::optional<double> hint;
  if (g1.lipschitz_hint() && f1.lipschitz_hint()) hint = *g1.lipschitz_hint() + z * *f1.lipschitz_hint() + mu;
  SmoothOracle smooth(
      g1.dim(),
      [=](const Vec& x) {
        double v = g1.value(x) + 0.5 * mu * (x - x0).squaredNorm();
        if (z > 0.0) v += z * (f1.value(x) - c);
        return v;
      },
      [=](const Vec& x) {
        Vec gr = g1.gradient(x) + mu * (x - x0);
        if (z > 0.0) gr += z * f1.gradient(x);
        return gr;
      },
      hint);
  return {std::move(smooth), LagrangianProx{sub.instance, z}};
}

/// Residuals of the epsilon-KKT conditions at (x, z).
struct KktResidual {
  double stationarity = 0.0;
  double primal_violation = 0.0;
  double complementarity = 0.0;

  bool within(double e1, double e2, double e3) const {
    return stationarity <= e1 && primal_violation <= e2 && complementarity <= e3;
  }
};

inline KktResidual kkt_from_values(double stationarity, double fc, double z) {
  KktResidual r;
  r.stationarity = stationarity;
  r.primal_violation = std::max(fc, 0.0);
  r.complementarity = z == 0.0 ? 0.0 : std::abs(z * fc);
  return r;
}

inline KktResidual kkt_residual(const Subproblem& sub, const StationarityCertificate& cert, double z,
                                QueryCounter& counter) {
  return kkt_from_values(cert.residual_norm, sub.f_c(cert.point, counter), z);
}

/// Multiplier interval states produced by interval_search.
struct ZeroSolution {
  Vec x;
  double stationarity = 0.0;
};
struct Accepted {
  Vec x;
  double z = 0.0;
  double stationarity = 0.0;
};
struct Bracket {
  double a = 0.0;
  double b = 0.0;
  /// Warm start; when `x_at_b` is set it is the certified solution at b for
  /// the current level c.
  Vec x;
  bool x_at_b = false;
  double stationarity = kInf;
};
using MultiplierInterval = std::variant<ZeroSolution, Accepted, Bracket>;

/// Bracket view of any interval state: {0} -> [0,0], {b} -> [b,b].
inline Bracket as_bracket(const MultiplierInterval& Z) {
  return std::visit(
      [](const auto& v) -> Bracket {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ZeroSolution>) {
          return Bracket{0.0, 0.0, v.x, true, v.stationarity};
        } else if constexpr (std::is_same_v<T, Accepted>) {
          return Bracket{v.z, v.z, v.x, true, v.stationarity};
        } else {
          return v;
        }
      },
      Z);
}

/// Largest multiplier in Z.
inline double interval_max(const MultiplierInterval& Z) { return as_bracket(Z).b; }

/// Called after every strongly convex subsolve with the multiplier and the
/// certified point.
using SubsolveObserver = std::function<void(double z, const Vec& x)>;

struct IntervalSearchResult {
  MultiplierInterval interval;
  std::size_t apg_calls = 0;        // including the z = 0 solve
  std::size_t multiplier_calls = 0;  // solves at z = b > 0
};

struct DualResult {
  Vec x;
  double z = 0.0;
  KktResidual kkt;
  std::size_t apg_calls = 0;
};

namespace detail {

inline std::string level_context(double c, double z) {
  std::ostringstream os;
  os << "(c=" << c << ", z=" << z << ")";
  return os.str();
}

// Strongly convex solve of the Lagrangian at z; updates the B_f estimate.
inline StationarityCertificate solve_lagrangian(const Subproblem& sub, double z, const ToleranceSchedule& sched,
                                                const SubsolverConfig& sub_cfg, const Vec& x_start,
                                                QueryCounter& counter, const SubsolveObserver& observer) {
  auto [smooth, prox] = lagrangian_oracles(sub, z);
  StationarityCertificate cert =
      apg_strongly_convex(smooth, prox, sub_cfg.apg(sub.eps_perturb, sched.eps1()), x_start, counter);
  if (!cert.converged) {
    throw NotConverged("dual subsolver hit its iteration cap at " + level_context(sub.c, z) +
                       ", residual " + std::to_string(cert.residual_norm));
  }
  if (observer) observer(z, cert.point);
  return cert;
}

inline void track_slope(const Subproblem& sub, const Vec& x, ToleranceSchedule& sched, QueryCounter& counter) {
  const auto& up = sub.instance->upper();
  sched.observe_upper_slope(up.smooth.gradient(x, counter).norm() + up.nonsmooth_lipschitz_or_default());
}

inline std::size_t doubling_cap(double D_z, double b_init) {
  const double ratio = std::max(D_z / b_init, 1.0);
  return static_cast<std::size_t>(std::ceil(std::log2(ratio))) + 2;
}

}  // namespace detail

/// Doubling search for a multiplier interval starting from Z0 = [0, b_init].
///
/// Returns ZeroSolution when the unconstrained (z = 0) solve is already
/// feasible to eps2, Accepted when the last doubled b passes the
/// complementarity test, and Bracket [a, b] otherwise. The number of solves at
/// b > 0 is capped by ceil(log2(D_z / b_init)) + 2.
inline IntervalSearchResult interval_search(const Subproblem& sub, ToleranceSchedule& sched, const Vec& x_start,
                                            double b_init, const SubsolverConfig& sub_cfg, QueryCounter& counter,
                                            const SubsolveObserver& observer = {}) {
  if (!(b_init > 0.0)) throw ConfigError("interval_search: b_init must be positive");
  sched.validate();
  IntervalSearchResult out;

  StationarityCertificate cert = detail::solve_lagrangian(sub, 0.0, sched, sub_cfg, x_start, counter, observer);
  ++out.apg_calls;
  detail::track_slope(sub, cert.point, sched, counter);
  double fc = sub.f_c(cert.point, counter);
  if (std::max(fc, 0.0) <= sched.eps2()) {
    out.interval = ZeroSolution{std::move(cert.point), cert.residual_norm};
    return out;
  }

  const std::size_t cap = detail::doubling_cap(sched.D_z, b_init);
  double a = 0.0;
  double b = b_init;
  cert = detail::solve_lagrangian(sub, b, sched, sub_cfg, cert.point, counter, observer);
  ++out.apg_calls;
  ++out.multiplier_calls;
  detail::track_slope(sub, cert.point, sched, counter);
  fc = sub.f_c(cert.point, counter);
  while (std::max(fc, 0.0) > sched.eps2() && b <= sched.D_z) {
    a = b;
    b *= 2.0;
    cert = detail::solve_lagrangian(sub, b, sched, sub_cfg, cert.point, counter, observer);
    ++out.apg_calls;
    ++out.multiplier_calls;
    if (out.multiplier_calls > cap) {
      throw TheoryViolation("interval_search: more than " + std::to_string(cap) +
                            " doublings; D_z estimate is inconsistent with Delta1/B_f");
    }
    detail::track_slope(sub, cert.point, sched, counter);
    fc = sub.f_c(cert.point, counter);
  }
  if (std::max(fc, 0.0) > sched.eps2()) {
    throw TheoryViolation("interval_search: still infeasible at b=" + std::to_string(b) +
                          " > D_z=" + std::to_string(sched.D_z) + " (f_c=" + std::to_string(fc) +
                          "); Delta1 is likely too large");
  }
  if (std::abs(b * fc) <= sched.eps3()) {
    out.interval = Accepted{std::move(cert.point), b, cert.residual_norm};
  } else {
    out.interval = Bracket{a, b, std::move(cert.point), true, cert.residual_norm};
  }
  return out;
}

/// Bisection on the multiplier inside a bracket.
///
/// Returns as soon as a midpoint passes both the feasibility (eps2) and
/// complementarity (eps3) tests; otherwise narrows until b - a <= eps4 and
/// returns the pair at b.
inline DualResult dual_bisection(const Subproblem& sub, const Bracket& Z, ToleranceSchedule& sched,
                                 const SubsolverConfig& sub_cfg, QueryCounter& counter,
                                 const SubsolveObserver& observer = {}) {
  sched.validate();
  if (!(Z.a >= 0.0) || !(Z.b >= Z.a) || !std::isfinite(Z.b)) {
    throw ConfigError("dual_bisection: invalid bracket");
  }
  DualResult out;
  double a = Z.a;
  double b = Z.b;
  Vec x_hat = Z.x;
  std::optional<Vec> x_b;
  double stat_b = Z.stationarity;
  if (Z.x_at_b) x_b = Z.x;

  while (b - a > sched.eps4()) {
    const double e = 0.5 * (a + b);
    if (!(e > a && e < b)) break;
    StationarityCertificate cert = detail::solve_lagrangian(sub, e, sched, sub_cfg, x_hat, counter, observer);
    ++out.apg_calls;
    detail::track_slope(sub, cert.point, sched, counter);
    x_hat = cert.point;
    const double fc = sub.f_c(x_hat, counter);
    if (std::max(fc, 0.0) > sched.eps2()) {
      a = e;
    } else if (std::abs(e * fc) <= sched.eps3()) {
      out.x = std::move(x_hat);
      out.z = e;
      out.kkt = kkt_from_values(cert.residual_norm, fc, e);
      return out;
    } else {
      b = e;
      x_b = x_hat;
      stat_b = cert.residual_norm;
    }
  }
  if (!x_b) {
    StationarityCertificate cert = detail::solve_lagrangian(sub, b, sched, sub_cfg, x_hat, counter, observer);
    ++out.apg_calls;
    detail::track_slope(sub, cert.point, sched, counter);
    x_b = std::move(cert.point);
    stat_b = cert.residual_norm;
  }
  out.x = std::move(*x_b);
  out.z = b;
  out.kkt = kkt_from_values(stat_b, sub.f_c(out.x, counter), b);
  return out;
}

struct SubproblemResult {
  Vec x;
  double f_val = 0.0;
  double g_val = 0.0;
  double z = 0.0;
  KktResidual kkt;
  MultiplierInterval interval;
  std::size_t interval_apg_calls = 0;
  std::size_t bisection_apg_calls = 0;
};

/// Interval search followed by dual bisection at one level c.
inline SubproblemResult solve_subproblem(const Subproblem& sub, ToleranceSchedule& sched, const Vec& x_start,
                                         double b_init, const SubsolverConfig& sub_cfg, QueryCounter& counter,
                                         const SubsolveObserver& observer = {}) {
  SubproblemResult out;
  IntervalSearchResult iv = interval_search(sub, sched, x_start, b_init, sub_cfg, counter, observer);
  out.interval_apg_calls = iv.apg_calls;
  out.interval = iv.interval;
  DualResult dr = dual_bisection(sub, as_bracket(iv.interval), sched, sub_cfg, counter, observer);
  out.bisection_apg_calls = dr.apg_calls;
  out.x = std::move(dr.x);
  out.z = dr.z;
  out.kkt = dr.kkt;
  out.f_val = sub.instance->f(out.x, counter);
  out.g_val = sub.instance->g(out.x, counter);
  return out;
}

}  // namespace bivfa

#endif  // BIVFA_DUAL_HPP
