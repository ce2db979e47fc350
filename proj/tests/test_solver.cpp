#include <catch_amalgamated.hpp>

#include <cmath>

#include "bivfa/reference.hpp"
#include "bivfa/solver.hpp"
#include "solver_fixtures.hpp"
#include "test_util.hpp"

using namespace bivfa;

namespace {

InstanceData tiny(Family fam, Eigen::Index n, Eigen::Index rd, std::uint64_t seed) {
  InstanceSpec spec;
  spec.family = fam;
  spec.n = n;
  spec.rank_deficiency = rd;
  spec.seed = seed;
  return generate(spec);
}

// Structural checks every solve report must pass.
void check_report_invariants(const SolveReport& rep, double eps) {
  const double eps_f = 4.0 * eps;
  const double eps_g = 3.0 * eps;
  double prev_l = rep.l0;
  double prev_u = rep.u0;
  double shrink_tail = 0.0;
  for (std::size_t i = 0; i < rep.trace.size(); ++i) {
    const TraceRow& row = rep.trace[i];
    if (row.branch == Branch::kFinal || row.branch == Branch::kSafeguard) continue;
    CHECK(row.l >= prev_l);
    CHECK(row.u <= prev_u);
    // f(x_c) may undershoot l (x_c is only eps_g-optimal for the lower
    // problem); that sets u < l and ends the loop on the same iteration.
    const bool loop_continues = i + 2 < rep.trace.size();
    if (loop_continues) CHECK(row.l <= row.u);
    prev_l = row.l;
    prev_u = row.u;
    shrink_tail += eps_f / std::pow(2.0, static_cast<double>(row.iter) + 1.0);
    CHECK(row.u - row.l <= (rep.u0 - rep.l0) / std::pow(2.0, static_cast<double>(row.iter)) + shrink_tail);
    if (row.branch == Branch::kUpperBound) CHECK(row.f_val - row.c <= eps_f / 4.0);
  }
  REQUIRE_FALSE(rep.trace.empty());
  CHECK((rep.trace.back().branch == Branch::kFinal || rep.trace.back().branch == Branch::kSafeguard));
  if (rep.exit_kind == ExitKind::kConverged) {
    CHECK(rep.u - rep.l <= 0.75 * eps_f);
    CHECK(rep.g_final - rep.g_tilde <= 2.0 * eps_g / 3.0);
    const double bound = std::log2(std::max(1.0, (rep.u0 - rep.l0) / eps_f)) + 2.0;
    CHECK(static_cast<double>(rep.outer_iterations) <= bound);
  }
  const PhaseCounters& p = rep.phases;
  CHECK(p.initial_bounds + p.interval_search + p.dual_bisection + p.bookkeeping == rep.total_queries);
  for (const IntervalSearchStats& s : rep.interval_searches) CHECK(s.multiplier_calls <= s.cap);
}

}  // namespace

TEST_CASE("initial bounds with identical objectives", "[solver]") {
  std::mt19937_64 rng(31);
  const Mat A = testutil::gaussian(6, 4, rng);
  const Vec b = testutil::gaussian(6, rng);
  const InstanceData data =
      testutil::custom_instance(testutil::least_squares_spec(A, b), testutil::least_squares_spec(A, b));
  const double eps = 1e-5;
  OuterConfig cfg;
  cfg.eps = eps;
  const BilevelInstance inst = data.build();
  QueryCounter qc;
  const InitialBounds ib = initial_bounds(inst, cfg, Vec::Zero(4), Vec::Zero(4), qc);
  CHECK(ib.u0 - ib.l0 <= cfg.eps_f() / 4.0 + cfg.eps_g() / 3.0);
  CHECK(ib.u0 - ib.l0 >= 0.0);

  const SolveReport rep = testutil::run_solver(data, eps, 1.0);
  CHECK(rep.exit_kind == ExitKind::kConverged);
  CHECK(rep.outer_iterations == 0);
  CHECK(rep.trace.size() == 1);
}

TEST_CASE("initial bounds bracket p* on a small regression instance", "[solver]") {
  const InstanceData data = tiny(Family::kLRP, 10, 5, 3);
  const ReferenceValues ref = reference_solve(data, 1e-10);
  const BilevelInstance inst = data.build();
  OuterConfig cfg;
  cfg.eps = 1e-5;
  QueryCounter qc;
  const InitialBounds ib = initial_bounds(inst, cfg, Vec::Zero(10), Vec::Zero(10), qc);
  CHECK(ib.l0 <= ref.p_star);
  CHECK(ref.p_star <= ib.u0 + cfg.eps_f() / 4.0);

  // Minimum-norm least-squares oracle for g*.
  const Mat& A = data.lower.smooth.M;
  const Vec& b = data.lower.smooth.v;
  const Vec x_pinv = A.completeOrthogonalDecomposition().pseudoInverse() * b;
  const double g_star = 0.5 * (A * x_pinv - b).squaredNorm();
  CHECK(inst.g(ib.x_tilde_g) - g_star <= cfg.eps_g() / 3.0);
  CHECK(inst.g(ib.x_tilde_g) - g_star >= -1e-12);
}

TEST_CASE("condition14 boundary cases", "[solver]") {
  const InstanceData data = testutil::narrow_gap_instance();
  const BilevelInstance inst = data.build();
  const Vec x_g = testutil::vec({1.0, 1.0});
  const double eps_g = 3e-5;
  CHECK_FALSE(condition14(inst, x_g, x_g, eps_g));
  CHECK_FALSE(condition14(inst, testutil::vec({0.5, 1.5}), x_g, eps_g));
  // g = 0.5 s^2 with s = sqrt(2 eps_g) off the solution line.
  const double s = std::sqrt(2.0 * eps_g);
  CHECK(condition14(inst, testutil::vec({1.0 + s, 1.0}), x_g, eps_g));
  CHECK_THROWS_AS(condition14(inst, testutil::vec({kInf, 0.0}), x_g, eps_g), DomainError);
}

TEST_CASE("singleton lower solution set exits at once", "[solver]") {
  const InstanceData data = testutil::singleton_instance();
  const ReferenceValues ref = reference_solve(data, 1e-10);
  CHECK(ref.solution_set_dim == 0);
  const double eps = 1e-5;
  const SolveReport rep = testutil::run_solver(data, eps, 1.0);
  CHECK(rep.exit_kind == ExitKind::kConverged);
  CHECK(rep.outer_iterations <= 1);
  CHECK(rep.f_final - ref.p_star <= 4.0 * eps);
  check_report_invariants(rep, eps);
}

TEST_CASE("small regression instance reaches the reference optimum", "[solver]") {
  const InstanceData data = tiny(Family::kLRP, 10, 5, 21);
  const ReferenceValues ref = reference_solve(data, 1e-10);
  const double eps = 1e-6;
  const SolveReport rep = testutil::run_solver(data, eps, default_mu_scale(Family::kLRP));
  INFO("fgap " << rep.f_final - ref.p_star << " ggap " << rep.g_final - ref.g_star);
  CHECK(rep.exit_kind == ExitKind::kConverged);
  CHECK(rep.f_final - ref.p_star <= 4.0 * eps);
  CHECK(rep.g_final - ref.g_star <= 3.0 * eps);
  check_report_invariants(rep, eps);
}

TEST_CASE("lower-bound levels never exceed p*", "[solver][property]") {
  const InstanceData data = tiny(Family::kIEP, 8, 3, 13);
  const ReferenceValues ref = reference_solve(data, 1e-10);
  for (double eps : {1e-3, 1e-4, 1e-5}) {
    const SolveReport rep = testutil::run_solver(data, eps, default_mu_scale(Family::kIEP));
    INFO("eps " << eps);
    CHECK(rep.exit_kind == ExitKind::kConverged);
    for (const TraceRow& row : rep.trace) {
      if (row.branch == Branch::kLowerBound) CHECK(row.c <= ref.p_star + 1e-12);
    }
    CHECK(rep.f_final - ref.p_star <= 4.0 * eps);
    CHECK(rep.g_final - ref.g_star <= 3.0 * eps);
    check_report_invariants(rep, eps);
  }
}

TEST_CASE("report invariants across families and seeds", "[solver][property]") {
  for (Family fam : {Family::kIEP, Family::kLRP, Family::kLRPBC}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const InstanceData data = tiny(fam, 8, 2, seed);
      const double eps = 1e-4;
      const SolveReport rep = testutil::run_solver(data, eps, default_mu_scale(fam));
      INFO(to_string(fam) << " seed " << seed);
      CHECK(rep.exit_kind == ExitKind::kConverged);
      check_report_invariants(rep, eps);
    }
  }
}

TEST_CASE("safeguard fires when the gap is below Delta1", "[solver]") {
  const InstanceData data = testutil::narrow_gap_instance(1e-3);
  const ReferenceValues ref = reference_solve(data, 1e-12);
  CHECK_THAT(ref.p_star, Catch::Matchers::WithinAbs(1e-3, 1e-10));
  CHECK_THAT(ref.f_star, Catch::Matchers::WithinAbs(0.0, 1e-10));
  const double eps = 1e-5;
  OuterConfig cfg;
  cfg.Delta1 = 1e-2;
  const SolveReport rep = testutil::run_solver(data, eps, 1.0, cfg);
  CHECK(rep.exit_kind == ExitKind::kSafeguardTriggered);
  CHECK(rep.trace.back().branch == Branch::kSafeguard);
  CHECK(rep.f_final - ref.p_star <= 2.0 * *cfg.Delta1 + eps);
  CHECK(rep.g_final - ref.g_star <= 3.0 * eps);
  check_report_invariants(rep, eps);
}

TEST_CASE("iteration cap ends the loop", "[solver]") {
  const InstanceData data = tiny(Family::kLRP, 8, 2, 4);
  OuterConfig cfg;
  cfg.max_outer_iters = 2;
  const SolveReport rep = testutil::run_solver(data, 1e-5, default_mu_scale(Family::kLRP), cfg);
  CHECK(rep.exit_kind == ExitKind::kIterationCap);
  CHECK(rep.outer_iterations == 2);
  CHECK(rep.trace.back().branch == Branch::kFinal);
}

TEST_CASE("solve is deterministic", "[solver]") {
  const InstanceData data = tiny(Family::kLRPBC, 8, 2, 6);
  const SolveReport a = testutil::run_solver(data, 1e-4, default_mu_scale(Family::kLRPBC));
  const SolveReport b = testutil::run_solver(data, 1e-4, default_mu_scale(Family::kLRPBC));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].c == b.trace[i].c);
    CHECK(a.trace[i].queries == b.trace[i].queries);
    CHECK(a.trace[i].f_val == b.trace[i].f_val);
  }
  CHECK(a.x_final == b.x_final);
}

TEST_CASE("solve rejects bad configuration", "[solver]") {
  const InstanceData data = testutil::singleton_instance();
  const BilevelInstance inst = data.build();
  OuterConfig cfg;
  cfg.eps = -1.0;
  CHECK_THROWS_AS(solve(inst, cfg, ToleranceSchedule{}, Vec::Zero(3), Vec::Zero(3)), ConfigError);
  cfg.eps = 1e-4;
  CHECK_THROWS_AS(solve(inst, cfg, ToleranceSchedule{}, Vec::Zero(2), Vec::Zero(3)), ConfigError);
  cfg.Delta1 = 0.0;
  CHECK_THROWS_AS(solve(inst, cfg, ToleranceSchedule{}, Vec::Zero(3), Vec::Zero(3)), ConfigError);
}
