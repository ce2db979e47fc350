#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "bivfa/reference.hpp"
#include "bivfa/solver.hpp"
#include "solver_fixtures.hpp"
#include "test_util.hpp"

using namespace bivfa;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

InstanceSpec make_spec(Family fam, Eigen::Index n, Eigen::Index rd, std::uint64_t seed) {
  InstanceSpec spec;
  spec.family = fam;
  spec.n = n;
  spec.rank_deficiency = rd;
  spec.seed = seed;
  return spec;
}

int count_below(const Vec& ev, double tol) {
  return static_cast<int>((ev.array().abs() <= tol).count());
}

}  // namespace

TEST_CASE("IEP lower Hessian has the requested zero eigenvalues", "[problems]") {
  const InstanceData d = generate(make_spec(Family::kIEP, 8, 3, 1));
  const Mat& A = d.lower.smooth.M;
  // The smallest nonzero Hessian eigenvalue is (1e-6)^2 = 1e-12, so zeros
  // are counted on the singular values of A, where 1e-10 separates them.
  Eigen::JacobiSVD<Mat> svd(A);
  const Vec s = svd.singularValues();
  CHECK(count_below(s, 1e-10) == 3);
  Eigen::SelfAdjointEigenSolver<Mat> es(A.transpose() * A);
  CHECK(count_below(es.eigenvalues(), 1e-14) == 3);
  CHECK(detail::null_basis(A).cols() == 3);
  // Nonzero singular values run from 1 down to 1e-6.
  CHECK_THAT(s[0], WithinRel(1.0, 1e-10));
  CHECK_THAT(s[4], WithinRel(1e-6, 1e-6));

  const Mat L = detail::first_difference(8);
  const Mat Q = L.transpose() * L + Mat::Identity(8, 8);
  CHECK((d.upper.smooth.M - Q).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(d.lower.nonsmooth.kind() == ProxOracle::Kind::kLowerBound);
  CHECK(d.lower.nonsmooth.param() == 0.0);
  CHECK(d.x_true.size() == 8);
}

TEST_CASE("regression lower Hessian is singular", "[problems]") {
  for (Family fam : {Family::kLRP, Family::kLRPBC}) {
    const InstanceData d = generate(make_spec(fam, 12, 4, 2));
    const Mat& A = d.lower.smooth.M;
    CHECK(A.rows() == (5 * 12 * 6) / 10);
    Eigen::SelfAdjointEigenSolver<Mat> es(A.transpose() * A);
    CHECK(count_below(es.eigenvalues(), 1e-8 * es.eigenvalues().maxCoeff()) >= 4);
    CHECK(detail::null_basis(A).cols() >= 4);
    CHECK(d.upper.smooth.M.rows() == 5 * 12 - A.rows());
  }
  const InstanceData lrp = generate(make_spec(Family::kLRP, 12, 4, 2));
  CHECK(lrp.upper.nonsmooth.kind() == ProxOracle::Kind::kL1Norm);
  InstanceSpec bc = make_spec(Family::kLRPBC, 12, 4, 2);
  bc.r1 = 7.0;
  bc.r2 = 3.0;
  const InstanceData lrpbc = generate(bc);
  CHECK(lrpbc.lower.nonsmooth.kind() == ProxOracle::Kind::kL1Ball);
  CHECK(lrpbc.lower.nonsmooth.param() == 7.0);
  CHECK(lrpbc.upper.nonsmooth.kind() == ProxOracle::Kind::kL2Ball);
  CHECK(lrpbc.upper.nonsmooth.param() == 3.0);
}

TEST_CASE("generation is deterministic in the seed", "[problems]") {
  for (Family fam : {Family::kIEP, Family::kLRP, Family::kLRPBC}) {
    const InstanceData a = generate(make_spec(fam, 10, 3, 99));
    const InstanceData b = generate(make_spec(fam, 10, 3, 99));
    const InstanceData c = generate(make_spec(fam, 10, 3, 100));
    CHECK(a.lower.smooth.M == b.lower.smooth.M);
    CHECK(a.lower.smooth.v == b.lower.smooth.v);
    CHECK(a.upper.smooth.M == b.upper.smooth.M);
    CHECK(a.lower.smooth.M != c.lower.smooth.M);
  }
}

TEST_CASE("invalid specs are rejected", "[problems]") {
  CHECK_THROWS_AS(generate(make_spec(Family::kIEP, 1, 0, 0)), ConfigError);
  CHECK_THROWS_AS(generate(make_spec(Family::kIEP, 8, 8, 0)), ConfigError);
  CHECK_THROWS_AS(generate(make_spec(Family::kLRP, 8, 7, 0)), ConfigError);
  CHECK_THROWS_AS(generate(make_spec(Family::kCustom, 8, 2, 0)), ConfigError);
  InstanceSpec neg = make_spec(Family::kIEP, 8, 2, 0);
  neg.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate(neg), ConfigError);
  InstanceSpec radii = make_spec(Family::kLRPBC, 8, 2, 0);
  radii.r2 = 0.0;
  CHECK_THROWS_AS(generate(radii), ConfigError);
  CHECK_THROWS_AS(parse_family("phillips"), ConfigError);
  CHECK(parse_family("lrpbc") == Family::kLRPBC);
}

TEST_CASE("reference g* matches the normal equations for full-rank least squares", "[problems]") {
  std::mt19937_64 rng(5);
  const Mat A = testutil::gaussian(9, 4, rng);
  const Vec b = testutil::gaussian(9, rng);
  const Mat Q = testutil::spd_with_spectrum(4, 0.5, 2.0, rng);
  ObjectiveSpec up;
  up.smooth.kind = SmoothSpec::Kind::kQuadraticForm;
  up.smooth.M = Q;
  const InstanceData d = testutil::custom_instance(up, testutil::least_squares_spec(A, b));
  const ReferenceValues ref = reference_solve(d, 1e-10);
  const Vec x = (A.transpose() * A).ldlt().solve(A.transpose() * b);
  CHECK_THAT(ref.g_star, WithinAbs(0.5 * (A * x - b).squaredNorm(), 1e-10));
  CHECK(ref.solution_set_dim == 0);
  CHECK_THAT(ref.p_star, WithinAbs(x.dot(Q * x), 1e-10));
  CHECK_THAT(ref.f_star, WithinAbs(0.0, 1e-10));
}

TEST_CASE("reference flags identical objectives", "[problems]") {
  std::mt19937_64 rng(6);
  Mat A = testutil::gaussian(6, 5, rng);
  A.col(4) = A.col(0);
  const Vec b = testutil::gaussian(6, rng);
  const InstanceData d =
      testutil::custom_instance(testutil::least_squares_spec(A, b), testutil::least_squares_spec(A, b));
  const ReferenceValues ref = reference_solve(d, 1e-10);
  CHECK_THAT(ref.p_star, WithinAbs(ref.f_star, 1e-9));
  CHECK_THAT(ref.p_star, WithinAbs(ref.g_star, 1e-9));
  CHECK(ref.gap_violated);
}

TEST_CASE("reference p* is stable across solver seeds", "[problems]") {
  for (Family fam : {Family::kIEP, Family::kLRP, Family::kLRPBC}) {
    const InstanceData d = generate(make_spec(fam, 8, 3, 17));
    ReferenceOptions o1;
    o1.seed = 1;
    ReferenceOptions o2;
    o2.seed = 12345;
    const ReferenceValues r1 = reference_solve(d, 1e-10, o1);
    const ReferenceValues r2 = reference_solve(d, 1e-10, o2);
    INFO(to_string(fam));
    CHECK_THAT(r1.p_star, WithinAbs(r2.p_star, 1e-8));
    CHECK_THAT(r1.g_star, WithinAbs(r2.g_star, 1e-10));
  }
}

TEST_CASE("reference p* is a constrained minimum", "[problems][property]") {
  // Brute-force check on the IEP family: no sampled point of the lower
  // solution set (x_g plus nonnegative null-space moves) beats p*.
  const InstanceData d = generate(make_spec(Family::kIEP, 8, 3, 23));
  const ReferenceValues ref = reference_solve(d, 1e-10);
  const BilevelInstance inst = d.build();
  CHECK(inst.g(ref.x_ref) - ref.g_star <= 1e-9);
  const Mat N = detail::null_basis(d.lower.smooth.M);
  REQUIRE(N.cols() == 3);
  std::mt19937_64 rng(4);
  int violations = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec x = ref.x_ref + N * testutil::gaussian(3, rng, 0.3);
    if ((x.array() < 0.0).any()) continue;
    if (inst.f(x) < ref.p_star - 1e-9) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("reference values are ordered", "[problems][property]") {
  for (Family fam : {Family::kIEP, Family::kLRP, Family::kLRPBC}) {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
      const InstanceData d = generate(make_spec(fam, 10, 3, seed));
      const ReferenceValues ref = reference_solve(d, 1e-10);
      INFO(to_string(fam) << " seed " << seed);
      CHECK(ref.f_star <= ref.p_star + 1e-10);
      CHECK(ref.solution_set_dim >= 1);
      CHECK_FALSE(ref.gap_violated);

      const BilevelInstance inst = d.build();
      OuterConfig cfg;
      cfg.eps = 1e-4;
      QueryCounter qc;
      const InitialBounds ib = initial_bounds(inst, cfg, Vec::Zero(10), Vec::Zero(10), qc);
      CHECK(ref.g_star <= inst.g(ib.x_tilde_g) + 1e-12);
      // Sampled feasible points never undercut g*.
      std::mt19937_64 rng(seed);
      int violations = 0;
      for (int trial = 0; trial < 200; ++trial) {
        const Vec x = inst.combined_prox(testutil::gaussian(10, rng, 2.0), 1.0, 0.0);
        if (inst.g(x) < ref.g_star - 1e-10) ++violations;
      }
      CHECK(violations == 0);
    }
  }
}

TEST_CASE("reference rejects unsupported inputs", "[problems]") {
  const InstanceData d = generate(make_spec(Family::kIEP, 8, 3, 1));
  CHECK_THROWS_AS(reference_solve(d, 0.0), ConfigError);
  InstanceData bad = d;
  bad.lower.nonsmooth = ProxOracle::l1_norm(1.0);
  CHECK_THROWS_AS(reference_solve(bad, 1e-10), ReferenceUnavailable);
}
