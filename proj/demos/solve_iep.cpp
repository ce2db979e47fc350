// Solve a small inverse problem instance and compare with the reference.
//
//   solve_iep [n] [eps]

#include <cstdio>
#include <cstdlib>

#include "bivfa/bivfa.hpp"

int main(int argc, char** argv) {
  using namespace bivfa;
  InstanceSpec spec;
  spec.family = Family::kIEP;
  spec.n = argc > 1 ? std::atol(argv[1]) : 20;
  spec.rank_deficiency = spec.n / 5;
  spec.seed = 7;
  const double eps = argc > 2 ? std::atof(argv[2]) : 1e-4;

  try {
    const InstanceData data = generate(spec);
    const BilevelInstance inst = data.build();
    const ReferenceValues ref = reference_solve(data, 1e-10);

    OuterConfig cfg;
    cfg.eps = eps;
    const Vec x0 = Vec::Zero(spec.n);
    SolveReport rep = solve(inst, cfg, ToleranceSchedule::practical(eps, default_mu_scale(spec.family)), x0, x0,
                            [](const TraceRow& r) {
                              std::printf("%4zu  %-10s  c=%.8f  [%.8f, %.8f]\n", r.iter, to_string(r.branch), r.c, r.l,
                                          r.u);
                            });
    attach_gaps(rep, ref.p_star, ref.g_star);
    std::printf("exit %s after %zu outer iterations, %llu queries, %.2f s\n", to_string(rep.exit_kind),
                rep.outer_iterations, static_cast<unsigned long long>(rep.total_queries.total()), rep.seconds);
    std::printf("f = %.10g  (p* = %.10g, gap %.3g)\n", rep.f_final, ref.p_star, *rep.f_gap);
    std::printf("g = %.10g  (g* = %.10g, gap %.3g)\n", rep.g_final, ref.g_star, *rep.g_gap);
  } catch (const Error& e) {
    std::fprintf(stderr, "solve_iep: %s\n", e.what());
    return 1;
  }
  return 0;
}
