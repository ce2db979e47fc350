#ifndef BIVFA_COMPOSITE_HPP
#define BIVFA_COMPOSITE_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"
#include "bivfa/prox.hpp"

namespace bivfa {

/// Oracle-call accounting. One query is one smooth value, one smooth
/// gradient, or one proximal map.
struct QueryCounter {
  std::uint64_t gradient_evals = 0;
  std::uint64_t prox_evals = 0;
  std::uint64_t value_evals = 0;

  std::uint64_t total() const { return gradient_evals + prox_evals + value_evals; }

  QueryCounter& operator+=(const QueryCounter& o) {
    gradient_evals += o.gradient_evals;
    prox_evals += o.prox_evals;
    value_evals += o.value_evals;
    return *this;
  }
  friend QueryCounter operator+(QueryCounter a, const QueryCounter& b) { return a += b; }
  friend bool operator==(const QueryCounter&, const QueryCounter&) = default;
};

/// Convex differentiable function with a Lipschitz gradient.
class SmoothOracle {
 public:
  using ValueFn = std::function<double(const Vec&)>;
  using GradientFn = std::function<Vec(const Vec&)>;

  SmoothOracle() = default;
  SmoothOracle(Eigen::Index dim, ValueFn value, GradientFn gradient, std::optional<double> lipschitz_hint = {})
      : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient)), lipschitz_hint_(lipschitz_hint) {}

  Eigen::Index dim() const { return dim_; }
  const std::optional<double>& lipschitz_hint() const { return lipschitz_hint_; }

  double value(const Vec& x) const { return value_(x); }
  Vec gradient(const Vec& x) const { return gradient_(x); }

  double value(const Vec& x, QueryCounter& qc) const {
    ++qc.value_evals;
    return value_(x);
  }
  Vec gradient(const Vec& x, QueryCounter& qc) const {
    ++qc.gradient_evals;
    return gradient_(x);
  }

 private:
  Eigen::Index dim_ = 0;
  ValueFn value_;
  GradientFn gradient_;
  std::optional<double> lipschitz_hint_;
};

/// Identically zero smooth part.
inline SmoothOracle make_zero_smooth(Eigen::Index n) {
  return SmoothOracle(
      n, [](const Vec&) { return 0.0; }, [n](const Vec&) { return Vec::Zero(n).eval(); }, 0.0);
}

/// 0.5 * ||A x - b||^2, hint lambda_max(A^T A).
inline SmoothOracle make_least_squares(Mat A, Vec b) {
  if (A.rows() < 1 || A.cols() < 1) throw ConfigError("make_least_squares: empty matrix");
  if (b.size() != A.rows()) {
    throw ConfigError("make_least_squares: b has length " + std::to_string(b.size()) + " but A has " +
                      std::to_string(A.rows()) + " rows");
  }
  const Eigen::Index n = A.cols();
  const double hint = power_iteration([&A](const Vec& v) { return (A.transpose() * (A * v)).eval(); }, n);
  if (A.rows() <= n) {
    auto data = std::make_shared<const std::pair<Mat, Vec>>(std::move(A), std::move(b));
    return SmoothOracle(
        n, [data](const Vec& x) { return 0.5 * (data->first * x - data->second).squaredNorm(); },
        [data](const Vec& x) { return (data->first.transpose() * (data->first * x - data->second)).eval(); }, hint);
  }
  // Tall A: work with the n x n normal equations instead.
  struct Gram {
    Mat G;
    Vec h;
    double c;
  };
  auto gram = std::make_shared<const Gram>(Gram{A.transpose() * A, A.transpose() * b, 0.5 * b.squaredNorm()});
  return SmoothOracle(
      n,
      [gram](const Vec& x) { return std::max(0.0, 0.5 * x.dot(gram->G * x) - x.dot(gram->h) + gram->c); },
      [gram](const Vec& x) { return (gram->G * x - gram->h).eval(); }, hint);
}

/// x^T Q x for symmetric PSD Q, hint 2 lambda_max(Q).
inline SmoothOracle make_quadratic_form(Mat Q) {
  if (Q.rows() != Q.cols() || Q.rows() < 1) throw ConfigError("make_quadratic_form: Q must be square");
  const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
  if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ConfigError("make_quadratic_form: Q is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(Q, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8) throw ConfigError("make_quadratic_form: Q is not PSD");
  auto q = std::make_shared<const Mat>(std::move(Q));
  const Mat& Qm = *q;
  const double hint = 2.0 * power_iteration([&Qm](const Vec& v) { return (Qm * v).eval(); }, Qm.cols());
  return SmoothOracle(
      q->cols(), [q](const Vec& x) { return x.dot(*q * x); }, [q](const Vec& x) { return (2.0 * (*q * x)).eval(); },
      hint);
}

/// smooth(x) + nonsmooth(x); the nonsmooth part may be +inf.
struct CompositeObjective {
  SmoothOracle smooth;
  ProxOracle nonsmooth = ProxOracle::zero();
  /// Lipschitz constant of the nonsmooth part on its domain; derived from
  /// the kind when unset.
  std::optional<double> nonsmooth_lipschitz;

  Eigen::Index dim() const { return smooth.dim(); }

  double nonsmooth_lipschitz_or_default() const {
    return nonsmooth_lipschitz.value_or(nonsmooth.lipschitz(dim()));
  }

  double value(const Vec& x, QueryCounter& qc) const {
    const double h = nonsmooth.value(x);
    return smooth.value(x, qc) + h;
  }
  double value(const Vec& x) const { return smooth.value(x) + nonsmooth.value(x); }
};

/// f(x) + g(x) bookkeeping entry point: evaluates and counts one value query.
inline double eval(const CompositeObjective& obj, const Vec& x, QueryCounter& counter) {
  require_dim(x, obj.dim(), "eval");
  require_finite(x, "eval");
  return obj.value(x, counter);
}

/// Upper objective f over the minimizers of lower objective g.
class BilevelInstance {
 public:
  BilevelInstance(CompositeObjective upper, CompositeObjective lower)
      : upper_(std::move(upper)), lower_(std::move(lower)) {
    if (upper_.dim() != lower_.dim()) {
      throw ConfigError("BilevelInstance: upper has dimension " + std::to_string(upper_.dim()) +
                        ", lower has " + std::to_string(lower_.dim()));
    }
    if (!combined_prox_supported(lower_.nonsmooth, upper_.nonsmooth)) {
      throw UnsupportedInstance("BilevelInstance: no closed-form prox for (lower=" + lower_.nonsmooth.name() +
                                ", upper=" + upper_.nonsmooth.name() + ")");
    }
  }

  const CompositeObjective& upper() const { return upper_; }
  const CompositeObjective& lower() const { return lower_; }
  Eigen::Index dim() const { return upper_.dim(); }

  /// prox of t * (g2 + z * f2) at y.
  Vec combined_prox(const Vec& y, double t, double z) const {
    return bivfa::combined_prox(y, t, z, lower_.nonsmooth, upper_.nonsmooth);
  }

  double f(const Vec& x, QueryCounter& qc) const { return upper_.value(x, qc); }
  double g(const Vec& x, QueryCounter& qc) const { return lower_.value(x, qc); }
  double f(const Vec& x) const { return upper_.value(x); }
  double g(const Vec& x) const { return lower_.value(x); }

 private:
  CompositeObjective upper_;
  CompositeObjective lower_;
};

}  // namespace bivfa

#endif  // BIVFA_COMPOSITE_HPP
