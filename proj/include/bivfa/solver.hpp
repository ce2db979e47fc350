#ifndef BIVFA_SOLVER_HPP
#define BIVFA_SOLVER_HPP

// Outer bisection on the upper-level value c.
//
// For a trial level c the perturbed level-constrained lower problem is solved
// by the dual method. If the resulting point is clearly worse than the
// unconstrained lower optimum, c is below the bilevel optimum p* and becomes
// the new lower bound l; otherwise the point is near-optimal for the lower
// problem and its upper value becomes the new upper bound u.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bivfa/apg.hpp"
#include "bivfa/composite.hpp"
#include "bivfa/dual.hpp"
#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"

namespace bivfa {

enum class ExitKind { kConverged, kSafeguardTriggered, kIterationCap };
enum class Branch { kLowerBound, kUpperBound, kSafeguard, kFinal, kInner };

inline const char* to_string(ExitKind k) {
  switch (k) {
    case ExitKind::kConverged:
      return "Converged";
    case ExitKind::kSafeguardTriggered:
      return "SafeguardTriggered";
    case ExitKind::kIterationCap:
      return "IterationCap";
  }
  return "Unknown";
}

inline const char* to_string(Branch b) {
  switch (b) {
    case Branch::kLowerBound:
      return "LowerBound";
    case Branch::kUpperBound:
      return "UpperBound";
    case Branch::kSafeguard:
      return "Safeguard";
    case Branch::kFinal:
      return "Final";
    case Branch::kInner:
      return "Inner";
  }
  return "Unknown";
}

struct OuterConfig {
  double eps = 1e-5;
  /// Regularity margin; defaults to 1e-3 * max(1, |u0 - l0|).
  std::optional<double> Delta1;
  double b_init = 1.0;
  /// Defaults to 10 + ceil(log2((u0 - l0) / eps_f)).
  std::optional<std::size_t> max_outer_iters;
  /// FISTA settings for the two unconstrained solves; eps_obj is overwritten.
  ApgConvexConfig initial_apg;
  std::optional<double> R_f;
  std::optional<double> R_g;
  SubsolverConfig subsolver;

  double eps_f() const { return 4.0 * eps; }
  double eps_g() const { return 3.0 * eps; }

  void validate() const {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("OuterConfig: eps must be positive");
    if (Delta1 && !(*Delta1 > 0.0)) throw ConfigError("OuterConfig: Delta1 must be positive");
    if (!(b_init > 0.0)) throw ConfigError("OuterConfig: b_init must be positive");
    initial_apg.validate();
  }
};

struct TraceRow {
  std::size_t iter = 0;
  std::uint64_t queries = 0;
  double seconds = 0.0;
  double c = 0.0;
  double l = 0.0;
  double u = 0.0;
  Branch branch = Branch::kInner;
  double f_val = 0.0;
  double g_val = 0.0;
};

struct IntervalSearchStats {
  double c = 0.0;
  std::size_t apg_calls = 0;
  std::size_t multiplier_calls = 0;
  std::size_t cap = 0;  // ceil(log2 D_z) + 2
};

struct PhaseCounters {
  QueryCounter initial_bounds;
  QueryCounter interval_search;
  QueryCounter dual_bisection;
  QueryCounter bookkeeping;
};

struct SolveReport {
  Vec x_final;
  double f_final = 0.0;
  double g_final = 0.0;
  std::optional<double> f_gap;
  std::optional<double> g_gap;
  QueryCounter total_queries;
  PhaseCounters phases;
  std::size_t outer_iterations = 0;
  ExitKind exit_kind = ExitKind::kConverged;
  std::vector<TraceRow> trace;

  // Run constants, recorded for diagnostics and property checks.
  double l0 = 0.0;
  double u0 = 0.0;
  double l = 0.0;
  double u = 0.0;
  double g_tilde = 0.0;  // g(x_tilde_g)
  double Delta1 = 0.0;
  double D_z = 0.0;
  double B_f = 0.0;
  std::size_t max_outer_iters = 0;
  std::vector<IntervalSearchStats> interval_searches;
  double seconds = 0.0;
};

struct InitialBounds {
  double l0 = 0.0;
  double u0 = 0.0;
  Vec x_tilde_f;
  Vec x_tilde_g;
};

/// l0 = f(x_f) - eps_f/4 and u0 = f(x_g) from FISTA solves of the upper
/// problem to eps_f/4 and the lower problem to eps_g/3.
inline InitialBounds initial_bounds(const BilevelInstance& instance, const OuterConfig& cfg, const Vec& x0_f,
                                    const Vec& x0_g, QueryCounter& counter) {
  cfg.validate();
  ApgConvexConfig fc = cfg.initial_apg;
  fc.eps_obj = cfg.eps_f() / 4.0;
  fc.R_bound = cfg.R_f;
  ApgConvexResult rf = apg_convex(instance.upper().smooth, instance.upper().nonsmooth, fc, x0_f, counter);
  if (!rf.converged) throw NotConverged("initial_bounds: upper-level solve hit its iteration cap");
  ApgConvexConfig gc = cfg.initial_apg;
  gc.eps_obj = cfg.eps_g() / 3.0;
  gc.R_bound = cfg.R_g;
  ApgConvexResult rg = apg_convex(instance.lower().smooth, instance.lower().nonsmooth, gc, x0_g, counter);
  if (!rg.converged) throw NotConverged("initial_bounds: lower-level solve hit its iteration cap");

  InitialBounds out;
  out.x_tilde_f = std::move(rf.point);
  out.x_tilde_g = std::move(rg.point);
  out.l0 = instance.f(out.x_tilde_f, counter) - cfg.eps_f() / 4.0;
  out.u0 = instance.f(out.x_tilde_g, counter);
  return out;
}

/// True when g(x_c) > g(x_tilde_g) + eps_g/3, i.e. c is a lower bound on p*.
inline bool condition14(const BilevelInstance& instance, const Vec& x_c, const Vec& x_tilde_g, double eps_g) {
  require_finite(x_c, "condition14");
  require_finite(x_tilde_g, "condition14");
  return instance.g(x_c) > instance.g(x_tilde_g) + eps_g / 3.0;
}

/// Called with every trace row as it is produced. Rows with branch kInner
/// are only emitted through this callback, never stored in the report.
using TraceObserver = std::function<void(const TraceRow&)>;

/// Outer bisection. `sched` provides D, B_f and the optional eps overrides;
/// D_z is recomputed from Delta1 and B_f is raised as iterates are visited.
inline SolveReport solve(const BilevelInstance& instance, const OuterConfig& cfg, ToleranceSchedule sched,
                         const Vec& x0_f, const Vec& x0_g, const TraceObserver& observer = {},
                         bool inner_rows = false) {
  cfg.validate();
  require_dim(x0_f, instance.dim(), "solve x0_f");
  require_dim(x0_g, instance.dim(), "solve x0_g");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  SolveReport rep;
  QueryCounter counter;
  auto phase = [&](QueryCounter& bucket, auto&& fn) {
    const QueryCounter before = counter;
    fn();
    QueryCounter delta;
    delta.gradient_evals = counter.gradient_evals - before.gradient_evals;
    delta.prox_evals = counter.prox_evals - before.prox_evals;
    delta.value_evals = counter.value_evals - before.value_evals;
    bucket += delta;
  };

  InitialBounds ib;
  phase(rep.phases.initial_bounds, [&] { ib = initial_bounds(instance, cfg, x0_f, x0_g, counter); });
  const double l0 = ib.l0;
  const double u0 = ib.u0;
  const double eps_f = cfg.eps_f();
  const double eps_g = cfg.eps_g();
  // Anchor of the perturbation. When the upper minimizer lies outside
  // dom g it is projected onto dom g intersected with dom f.
  Vec anchor = ib.x_tilde_f;
  if (!std::isfinite(instance.g(anchor))) anchor = instance.combined_prox(anchor, 1.0, 1.0);

  double g_tilde = 0.0;
  phase(rep.phases.bookkeeping, [&] {
    g_tilde = instance.g(ib.x_tilde_g, counter);
    const double Delta1 = cfg.Delta1.value_or(1e-3 * std::max(1.0, std::abs(u0 - l0)));
    rep.Delta1 = Delta1;
    sched.D_z = (instance.g(anchor, counter) - g_tilde + 1.0) / Delta1;
    const auto& up = instance.upper();
    sched.observe_upper_slope(up.smooth.gradient(anchor, counter).norm() + up.nonsmooth_lipschitz_or_default());
  });
  if (!std::isfinite(sched.D_z) || !(sched.D_z > 0.0)) {
    throw TheoryViolation("solve: multiplier bound is not finite; the upper minimizer lies outside dom g");
  }
  sched.validate();
  const double Delta1 = rep.Delta1;
  const std::size_t max_outer =
      cfg.max_outer_iters.value_or(10 + static_cast<std::size_t>(std::ceil(std::log2(std::max(1.0, (u0 - l0) / eps_f)))));
  const std::size_t is_cap = detail::doubling_cap(sched.D_z, cfg.b_init);

  rep.l0 = l0;
  rep.u0 = u0;
  rep.g_tilde = g_tilde;
  rep.D_z = sched.D_z;
  rep.max_outer_iters = max_outer;

  double l = l0;
  double u = u0;
  Vec x_hat = anchor;
  Vec x_at_u = ib.x_tilde_g;
  std::size_t iter = 0;
  double c = 0.5 * (l + u);

  auto emit = [&](TraceRow row, bool keep) {
    row.queries = counter.total();
    row.seconds = elapsed();
    if (observer) observer(row);
    if (keep) rep.trace.push_back(row);
  };

  SubsolveObserver inner;
  if (inner_rows && observer) {
    inner = [&](double, const Vec& x) {
      TraceRow row;
      row.iter = iter;
      row.c = c;
      row.l = l;
      row.u = u;
      row.branch = Branch::kInner;
      row.f_val = instance.f(x);
      row.g_val = instance.g(x);
      emit(row, false);
    };
  }

  Subproblem sub(instance, c, sched.mu(), anchor);
  std::optional<Bracket> Z;
  auto run_interval_search = [&] {
    sub.c = c;
    IntervalSearchResult iv;
    phase(rep.phases.interval_search,
          [&] { iv = interval_search(sub, sched, x_hat, cfg.b_init, cfg.subsolver, counter, inner); });
    rep.interval_searches.push_back(IntervalSearchStats{c, iv.apg_calls, iv.multiplier_calls, is_cap});
    Z = as_bracket(iv.interval);
    x_hat = Z->x;
  };

  rep.exit_kind = ExitKind::kConverged;
  bool safeguard = false;
  while (u - l > 0.75 * eps_f) {
    if (iter >= max_outer) {
      rep.exit_kind = ExitKind::kIterationCap;
      break;
    }
    ++iter;
    c = 0.5 * (l + u);
    if (c - l0 < Delta1) {
      safeguard = true;
      rep.exit_kind = ExitKind::kSafeguardTriggered;
      c = u;
      break;
    }
    // A fresh multiplier interval is needed at the start and after every
    // upper-bound update; it is computed at the level about to be used.
    if (!Z) run_interval_search();
    sub.c = c;
    DualResult dr;
    phase(rep.phases.dual_bisection,
          [&] { dr = dual_bisection(sub, *Z, sched, cfg.subsolver, counter, inner); });
    x_hat = dr.x;
    double fv = 0.0;
    double gv = 0.0;
    phase(rep.phases.bookkeeping, [&] {
      fv = instance.f(x_hat, counter);
      gv = instance.g(x_hat, counter);
    });
    Branch br;
    if (gv > g_tilde + eps_g / 3.0) {
      br = Branch::kLowerBound;
      l = c;
      Z = Bracket{0.0, Z->b, x_hat, false, kInf};
    } else {
      br = Branch::kUpperBound;
      if (fv < u) {
        u = fv;
        x_at_u = x_hat;
      }
      Z.reset();
    }
    TraceRow row;
    row.iter = iter;
    row.c = c;
    row.l = l;
    row.u = u;
    row.branch = br;
    row.f_val = fv;
    row.g_val = gv;
    emit(row, true);
  }

  rep.x_final = x_at_u;
  phase(rep.phases.bookkeeping, [&] {
    rep.f_final = instance.f(rep.x_final, counter);
    rep.g_final = instance.g(rep.x_final, counter);
  });
  TraceRow last;
  last.iter = iter;
  last.c = u;
  last.l = l;
  last.u = u;
  last.branch = safeguard ? Branch::kSafeguard : Branch::kFinal;
  last.f_val = rep.f_final;
  last.g_val = rep.g_final;
  emit(last, true);

  rep.outer_iterations = iter;
  rep.l = l;
  rep.u = u;
  rep.B_f = sched.B_f;
  rep.total_queries = counter;
  rep.seconds = elapsed();
  return rep;
}

/// Fill the gap fields from reference values p* and g*.
inline void attach_gaps(SolveReport& rep, double p_star, double g_star) {
  rep.f_gap = rep.f_final - p_star;
  rep.g_gap = rep.g_final - g_star;
}

}  // namespace bivfa

#endif  // BIVFA_SOLVER_HPP
