#ifndef BIVFA_PROX_HPP
#define BIVFA_PROX_HPP

// Closed-form proximal maps and Euclidean projections.
//
// Every function here is pure; the nonsmooth term of an objective is
// described by a small value type (ProxOracle) so instances stay immutable
// and can be shared between threads.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"

namespace bivfa {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// prox of t*||.||_1: componentwise sign(y_i) * max(|y_i| - t, 0).
inline Vec soft_threshold(const Vec& y, double t) {
  require_finite(y, "soft_threshold");
  if (!(t >= 0.0)) throw ConfigError("soft_threshold: threshold must be nonnegative");
  Vec x(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double a = std::abs(y[i]) - t;
    x[i] = a > 0.0 ? std::copysign(a, y[i]) : 0.0;
  }
  return x;
}

inline Vec project_lower_bound(const Vec& y, double lb) {
  require_finite(y, "project_lower_bound");
  return y.cwiseMax(lb);
}

inline Vec project_nonneg(const Vec& y) { return project_lower_bound(y, 0.0); }

inline Vec project_l2_ball(const Vec& y, double r) {
  if (!(r > 0.0)) throw ConfigError("project_l2_ball: radius must be positive");
  require_finite(y, "project_l2_ball");
  const double nrm = y.norm();
  if (nrm <= r) return y;
  return y * (r / nrm);
}

/// Soft-threshold level theta > 0 with sum_i max(|y_i| - theta, 0) = r.
/// Requires ||y||_1 > r. Exact: sorts |y| and picks the active count.
inline double l1_ball_threshold(const Vec& y, double r) {
  std::vector<double> u(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) u[static_cast<std::size_t>(i)] = std::abs(y[i]);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    const double candidate = (cumsum - r) / static_cast<double>(k + 1);
    if (u[k] > candidate) {
      theta = candidate;
    } else {
      break;
    }
  }
  return std::max(theta, 0.0);
}

inline Vec project_l1_ball(const Vec& y, double r) {
  if (!(r > 0.0)) throw ConfigError("project_l1_ball: radius must be positive");
  require_finite(y, "project_l1_ball");
  if (y.lpNorm<1>() <= r) return y;
  return soft_threshold(y, l1_ball_threshold(y, r));
}

namespace detail {

// Soft-threshold at theta, then pull back radially into the l2 ball.
inline Vec shrink_then_scale(const Vec& y, double theta, double r2) {
  Vec x = soft_threshold(y, theta);
  const double nrm = x.norm();
  if (nrm > r2) x *= r2 / nrm;
  return x;
}

}  // namespace detail

/// Euclidean projection onto {||x||_1 <= r1} intersected with {||x||_2 <= r2}.
///
/// The l1 multiplier theta is found by bisection on [0, max|y_i|]; at each
/// trial theta the l2 constraint is enforced by radial scaling. The returned
/// point is taken from the feasible end of the final bracket, so
/// ||x||_1 <= r1 holds exactly up to rounding.
inline Vec project_l1_l2_intersection(const Vec& y, double r1, double r2) {
  if (!(r1 > 0.0) || !(r2 > 0.0)) {
    throw ConfigError("project_l1_l2_intersection: radii must be positive");
  }
  require_finite(y, "project_l1_l2_intersection");
  Vec x0 = project_l2_ball(y, r2);
  if (x0.lpNorm<1>() <= r1) return x0;

  double lo = 0.0;
  double hi = y.cwiseAbs().maxCoeff();
  auto residual = [&](double theta) { return detail::shrink_then_scale(y, theta, r2).lpNorm<1>() - r1; };
  if (!(residual(lo) > 0.0) || !(residual(hi) <= 0.0)) {
    throw NumericalFailure("project_l1_l2_intersection: multiplier root not bracketed");
  }
  const double tol = 1e-12 * std::max(1.0, r1);
  Vec best = detail::shrink_then_scale(y, hi, r2);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    Vec x = detail::shrink_then_scale(y, mid, r2);
    const double res = x.lpNorm<1>() - r1;
    if (res > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      best = std::move(x);
      if (res >= -tol) break;
    }
  }
  return best;
}

/// Nonsmooth convex term with a closed-form proximal map.
///
/// Indicator values are 0 inside the set (with a relative 1e-9 feasibility
/// slack so projected points always evaluate finite) and +inf outside.
class ProxOracle {
 public:
  enum class Kind { kZero, kL1Norm, kLowerBound, kL2Ball, kL1Ball };

  static ProxOracle zero() { return ProxOracle(Kind::kZero, 0.0); }
  /// w * ||x||_1
  static ProxOracle l1_norm(double weight = 1.0) {
    if (!(weight >= 0.0)) throw ConfigError("l1_norm: weight must be nonnegative");
    return ProxOracle(Kind::kL1Norm, weight);
  }
  /// Indicator of {x >= lb componentwise}.
  static ProxOracle lower_bound(double lb) { return ProxOracle(Kind::kLowerBound, lb); }
  static ProxOracle nonneg() { return lower_bound(0.0); }
  static ProxOracle l2_ball(double radius) {
    if (!(radius > 0.0)) throw ConfigError("l2_ball: radius must be positive");
    return ProxOracle(Kind::kL2Ball, radius);
  }
  static ProxOracle l1_ball(double radius) {
    if (!(radius > 0.0)) throw ConfigError("l1_ball: radius must be positive");
    return ProxOracle(Kind::kL1Ball, radius);
  }

  Kind kind() const { return kind_; }
  /// Weight, bound or radius, depending on kind.
  double param() const { return param_; }
  bool is_indicator() const {
    return kind_ == Kind::kLowerBound || kind_ == Kind::kL2Ball || kind_ == Kind::kL1Ball;
  }

  double value(const Vec& x) const {
    switch (kind_) {
      case Kind::kZero:
        return 0.0;
      case Kind::kL1Norm:
        return param_ * x.lpNorm<1>();
      case Kind::kLowerBound:
        return x.size() == 0 || x.minCoeff() >= param_ - 1e-9 * std::max(1.0, std::abs(param_)) ? 0.0 : kInf;
      case Kind::kL2Ball:
        return x.norm() <= param_ * (1.0 + 1e-9) ? 0.0 : kInf;
      case Kind::kL1Ball:
        return x.lpNorm<1>() <= param_ * (1.0 + 1e-9) ? 0.0 : kInf;
    }
    return kInf;
  }

  /// argmin_x value(x) + ||x - y||^2 / (2t)
  Vec prox(const Vec& y, double t) const {
    if (!(t > 0.0)) throw ConfigError("prox: step must be positive");
    switch (kind_) {
      case Kind::kZero:
        require_finite(y, "prox");
        return y;
      case Kind::kL1Norm:
        return soft_threshold(y, t * param_);
      case Kind::kLowerBound:
        return project_lower_bound(y, param_);
      case Kind::kL2Ball:
        return project_l2_ball(y, param_);
      case Kind::kL1Ball:
        return project_l1_ball(y, param_);
    }
    return y;
  }

  /// Lipschitz constant of the term on its domain w.r.t. the l2 norm.
  double lipschitz(Eigen::Index n) const {
    return kind_ == Kind::kL1Norm ? param_ * std::sqrt(static_cast<double>(n)) : 0.0;
  }

  std::string name() const {
    switch (kind_) {
      case Kind::kZero:
        return "zero";
      case Kind::kL1Norm:
        return "l1_norm";
      case Kind::kLowerBound:
        return param_ == 0.0 ? "nonneg" : "lower_bound";
      case Kind::kL2Ball:
        return "l2_ball";
      case Kind::kL1Ball:
        return "l1_ball";
    }
    return "unknown";
  }

  friend bool operator==(const ProxOracle&, const ProxOracle&) = default;

 private:
  ProxOracle(Kind k, double p) : kind_(k), param_(p) {}
  Kind kind_;
  double param_;
};

/// True when combined_prox has a closed form for this (lower, upper) pair.
inline bool combined_prox_supported(const ProxOracle& lower, const ProxOracle& upper) {
  using K = ProxOracle::Kind;
  if (upper.kind() == K::kZero) return true;
  if (lower.kind() == K::kZero && upper.kind() == K::kL1Norm) return true;
  if (lower.kind() == K::kL1Ball && upper.kind() == K::kL2Ball) return true;
  return false;
}

/// prox of t * (lower + z * upper) at y.
///
/// Registered pairs:
///   (any, zero)          -> prox of the lower term
///   (zero, l1_norm w)    -> soft threshold at t*z*w
///   (l1_ball, l2_ball)   -> projection onto the intersection for z > 0,
///                           onto the l1 ball at z = 0
inline Vec combined_prox(const Vec& y, double t, double z, const ProxOracle& lower, const ProxOracle& upper) {
  using K = ProxOracle::Kind;
  if (!(t > 0.0)) throw ConfigError("combined_prox: step must be positive");
  if (!(z >= 0.0)) throw ConfigError("combined_prox: multiplier must be nonnegative");
  if (upper.kind() == K::kZero) return lower.prox(y, t);
  if (lower.kind() == K::kZero && upper.kind() == K::kL1Norm) return soft_threshold(y, t * z * upper.param());
  if (lower.kind() == K::kL1Ball && upper.kind() == K::kL2Ball) {
    return z > 0.0 ? project_l1_l2_intersection(y, lower.param(), upper.param())
                   : project_l1_ball(y, lower.param());
  }
  throw UnsupportedInstance("combined_prox: no closed form registered for (lower=" + lower.name() +
                            ", upper=" + upper.name() + ")");
}

}  // namespace bivfa

#endif  // BIVFA_PROX_HPP
