#ifndef BIVFA_PROBLEMS_HPP
#define BIVFA_PROBLEMS_HPP

// Synthetic test families.
//
//   IEP    min x^T Q x  over  argmin { 0.5|Ax - b|^2 : x >= 0 }
//          Q = L^T L + I with L the first-difference matrix; A is built from
//          random orthogonal factors and a spectrum decaying geometrically
//          from 1 to 1e-6 with `rank_deficiency` exact zeros.
//   LRP    min 0.5|A_val x - b_val|^2 + |x|_1  over  argmin 0.5|A_tr x - b_tr|^2
//          features in [0,1] plus an intercept, with duplicated columns.
//   LRPBC  min 0.5|A_val x - b_val|^2 + I(|x|_2 <= r2)
//          over argmin 0.5|A_tr x - b_tr|^2 + I(|x|_1 <= r1)
//
// Instances are kept as explicit matrices (InstanceData) so they can be
// written to disk and fed to the reference oracle; build() turns them into
// the oracle form the solver consumes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include <Eigen/QR>

#include "bivfa/composite.hpp"
#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"
#include "bivfa/prox.hpp"

namespace bivfa {

enum class Family { kIEP, kLRP, kLRPBC, kCustom };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::kIEP:
      return "iep";
    case Family::kLRP:
      return "lrp";
    case Family::kLRPBC:
      return "lrpbc";
    case Family::kCustom:
      return "custom";
  }
  return "unknown";
}

inline Family parse_family(const std::string& s) {
  std::string t = s;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (t == "iep") return Family::kIEP;
  if (t == "lrp") return Family::kLRP;
  if (t == "lrpbc") return Family::kLRPBC;
  if (t == "custom") return Family::kCustom;
  throw ConfigError("unknown family '" + s + "' (expected iep, lrp, lrpbc or custom)");
}

/// Perturbation weight over eps used by the practical schedule. IEP
/// solutions are long vectors, so the bias (mu/2)|x - x0|^2 needs a small mu;
/// the regression families tolerate a larger one and solve much faster.
inline double default_mu_scale(Family f) { return f == Family::kIEP ? 1e-2 : 10.0; }

struct InstanceSpec {
  Family family = Family::kIEP;
  Eigen::Index n = 50;
  /// Rows; 0 picks the family default (n for IEP, 5n for the regression families).
  Eigen::Index m = 0;
  /// IEP: zero singular values. LRP/LRPBC: number of duplicated columns.
  Eigen::Index rank_deficiency = 10;
  /// Unset picks 1e-4 for IEP (its spectrum reaches 1e-6, so larger noise
  /// blows up the constrained solution) and 0.2 otherwise.
  std::optional<double> noise_sigma;
  std::uint64_t seed = 0;
  double r1 = 10.0;
  double r2 = 5.0;

  Eigen::Index rows() const {
    if (m > 0) return m;
    return family == Family::kIEP ? n : 5 * n;
  }
  double sigma() const { return noise_sigma.value_or(family == Family::kIEP ? 1e-4 : 0.2); }

  void validate() const {
    if (family == Family::kCustom) throw ConfigError("InstanceSpec: custom instances are imported, not generated");
    if (n < 2) throw ConfigError("InstanceSpec: n must be at least 2");
    if (m < 0) throw ConfigError("InstanceSpec: m must be nonnegative");
    const Eigen::Index mm = rows();
    if (rank_deficiency < 0 || rank_deficiency >= std::min(mm, n)) {
      throw ConfigError("InstanceSpec: rank_deficiency must lie in [0, min(m, n))");
    }
    if (!(sigma() >= 0.0)) throw ConfigError("InstanceSpec: noise_sigma must be nonnegative");
    if (family != Family::kIEP) {
      if (n - rank_deficiency < 2) throw ConfigError("InstanceSpec: need at least two base columns");
      if ((mm * 6) / 10 < 1 || mm - (mm * 6) / 10 < 1) throw ConfigError("InstanceSpec: too few rows to split");
    }
    if (family == Family::kLRPBC && (!(r1 > 0.0) || !(r2 > 0.0))) {
      throw ConfigError("InstanceSpec: radii must be positive");
    }
  }
};

/// Smooth part in matrix form.
///   kLeastSquares   0.5 |M x - v|^2
///   kQuadraticForm  x^T M x
struct SmoothSpec {
  enum class Kind { kZero, kLeastSquares, kQuadraticForm };
  Kind kind = Kind::kZero;
  Mat M;
  Vec v;

  SmoothOracle build(Eigen::Index n) const {
    switch (kind) {
      case Kind::kZero:
        return make_zero_smooth(n);
      case Kind::kLeastSquares:
        return make_least_squares(M, v);
      case Kind::kQuadraticForm:
        return make_quadratic_form(M);
    }
    throw ConfigError("SmoothSpec: unknown kind");
  }

  /// Hessian H and linear term h with smooth(x) = 0.5 x^T H x + h^T x + const.
  Mat hessian(Eigen::Index n) const {
    switch (kind) {
      case Kind::kZero:
        return Mat::Zero(n, n);
      case Kind::kLeastSquares:
        return M.transpose() * M;
      case Kind::kQuadraticForm:
        return 2.0 * M;
    }
    return Mat::Zero(n, n);
  }
  Vec linear(Eigen::Index n) const {
    if (kind == Kind::kLeastSquares) return -(M.transpose() * v);
    return Vec::Zero(n);
  }
};

struct ObjectiveSpec {
  SmoothSpec smooth;
  ProxOracle nonsmooth = ProxOracle::zero();
};

struct InstanceData {
  InstanceSpec spec;
  Eigen::Index n = 0;
  ObjectiveSpec upper;
  ObjectiveSpec lower;
  /// Ground-truth signal for IEP; empty otherwise.
  Vec x_true;

  BilevelInstance build() const {
    CompositeObjective up{upper.smooth.build(n), upper.nonsmooth, std::nullopt};
    CompositeObjective lo{lower.smooth.build(n), lower.nonsmooth, std::nullopt};
    return BilevelInstance(std::move(up), std::move(lo));
  }
};

namespace detail {

// Haar-distributed orthogonal matrix via QR of a Gaussian matrix with the
// sign of R's diagonal folded into Q.
inline Mat random_orthogonal(Eigen::Index k, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat G(k, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < k; ++i) G(i, j) = nd(rng);
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ() * Mat::Identity(k, k);
  const Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < k; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

inline Mat first_difference(Eigen::Index n) {
  Mat L = Mat::Zero(n - 1, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    L(i, i) = -1.0;
    L(i, i + 1) = 1.0;
  }
  return L;
}

inline InstanceData generate_iep(const InstanceSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index n = spec.n;
  const Eigen::Index m = spec.rows();
  const Eigen::Index k = std::min(m, n);
  const Eigen::Index r = k - spec.rank_deficiency;

  Vec s = Vec::Zero(k);
  for (Eigen::Index i = 0; i < r; ++i) {
    const double t = r > 1 ? static_cast<double>(i) / static_cast<double>(r - 1) : 0.0;
    s[i] = std::pow(10.0, -6.0 * t);
  }
  const Mat U = random_orthogonal(m, rng);
  const Mat V = random_orthogonal(n, rng);
  const Mat A = U.leftCols(k) * s.asDiagonal() * V.leftCols(k).transpose();

  Vec x_true(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    x_true[i] = std::exp(-40.0 * (t - 0.5) * (t - 0.5));
  }
  Vec b = A * x_true;
  for (Eigen::Index i = 0; i < m; ++i) b[i] += spec.sigma() * nd(rng);

  const Mat L = first_difference(n);
  InstanceData d;
  d.spec = spec;
  d.n = n;
  d.upper.smooth = {SmoothSpec::Kind::kQuadraticForm, L.transpose() * L + Mat::Identity(n, n), Vec()};
  d.lower.smooth = {SmoothSpec::Kind::kLeastSquares, A, b};
  d.lower.nonsmooth = ProxOracle::nonneg();
  d.x_true = std::move(x_true);
  return d;
}

inline InstanceData generate_regression(const InstanceSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index n = spec.n;
  const Eigen::Index m = spec.rows();
  const Eigen::Index base = n - spec.rank_deficiency;

  Mat A(m, n);
  A.col(0).setOnes();
  for (Eigen::Index j = 1; j < base; ++j)
    for (Eigen::Index i = 0; i < m; ++i) A(i, j) = unif(rng);
  for (Eigen::Index j = base; j < n; ++j) {
    std::uniform_int_distribution<Eigen::Index> pick(1, base - 1);
    A.col(j) = A.col(pick(rng));
  }
  Vec w(base);
  for (Eigen::Index j = 0; j < base; ++j) w[j] = nd(rng);
  Vec b = A.leftCols(base) * w;
  for (Eigen::Index i = 0; i < m; ++i) b[i] += 0.1 * nd(rng);

  const Eigen::Index m_tr = (m * 6) / 10;
  const Eigen::Index m_val = m - m_tr;
  Mat A_tr = A.topRows(m_tr);
  Vec b_tr = b.head(m_tr);
  Mat A_val = A.bottomRows(m_val);
  Vec b_val = b.tail(m_val);
  const double sigma = spec.sigma();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m_val; ++i) A_val(i, j) += sigma * nd(rng);
  for (Eigen::Index i = 0; i < m_val; ++i) b_val[i] += sigma * nd(rng);

  InstanceData d;
  d.spec = spec;
  d.n = n;
  d.upper.smooth = {SmoothSpec::Kind::kLeastSquares, std::move(A_val), std::move(b_val)};
  d.lower.smooth = {SmoothSpec::Kind::kLeastSquares, std::move(A_tr), std::move(b_tr)};
  if (spec.family == Family::kLRP) {
    d.upper.nonsmooth = ProxOracle::l1_norm(1.0);
  } else {
    d.upper.nonsmooth = ProxOracle::l2_ball(spec.r2);
    d.lower.nonsmooth = ProxOracle::l1_ball(spec.r1);
  }
  return d;
}

}  // namespace detail

/// Deterministic in spec (including seed).
inline InstanceData generate(const InstanceSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case Family::kIEP:
      return detail::generate_iep(spec);
    case Family::kLRP:
    case Family::kLRPBC:
      return detail::generate_regression(spec);
    case Family::kCustom:
      break;
  }
  throw ConfigError("generate: unsupported family");
}

}  // namespace bivfa

#endif  // BIVFA_PROBLEMS_HPP
