#ifndef BIVFA_LINALG_HPP
#define BIVFA_LINALG_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <string>

#include "bivfa/errors.hpp"

namespace bivfa {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline bool all_finite(const Vec& x) { return x.allFinite(); }

inline void require_finite(const Vec& x, const char* what) {
  if (!x.allFinite()) {
    throw DomainError(std::string(what) + ": non-finite component");
  }
}

inline void require_dim(const Vec& x, Eigen::Index n, const char* what) {
  if (x.size() != n) {
    throw ConfigError(std::string(what) + ": expected dimension " + std::to_string(n) +
                      ", got " + std::to_string(x.size()));
  }
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
///
/// Stops after `max_iters` products or when the Rayleigh quotient changes by
/// less than `rel_tol` relative. The start vector is a fixed pseudo-random
/// draw so results are reproducible; an all-ones start would be an exact
/// eigenvector of difference-operator Gram matrices and stall at the bottom
/// of the spectrum.
template <class ApplyFn>
double power_iteration(ApplyFn&& apply, Eigen::Index n, int max_iters = 200, double rel_tol = 1e-9) {
  if (n == 0) return 0.0;
  std::mt19937_64 rng(0x5eedULL);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = unif(rng);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vec w = apply(v);
    const double next = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    const bool done = it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next);
    lambda = next;
    if (done) break;
  }
  return std::max(lambda, 0.0);
}

}  // namespace bivfa

#endif  // BIVFA_LINALG_HPP
