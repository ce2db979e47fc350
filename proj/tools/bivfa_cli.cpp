// bivfa: generate instances, compute references, run the solver.
//
//   bivfa generate --family iep --n 50 --seed 7 --out runs/iep
//   bivfa reference runs/iep/manifest.json
//   bivfa solve runs/iep/manifest.json --reference runs/iep/reference.json
//
// Output directories default to $BIVFA_OUT_DIR, then "bivfa_out".

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "bivfa/bivfa.hpp"

namespace fs = std::filesystem;
using namespace bivfa;

namespace {

fs::path default_out_dir() {
  if (const char* env = std::getenv("BIVFA_OUT_DIR"); env && *env) return env;
  return "bivfa_out";
}

int exit_code(ExitKind k) {
  switch (k) {
    case ExitKind::kConverged:
      return 0;
    case ExitKind::kSafeguardTriggered:
      return 2;
    case ExitKind::kIterationCap:
      return 3;
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

struct GenerateArgs {
  std::string family = "iep";
  long n = 50;
  long m = 0;
  long rank_deficiency = 10;
  std::optional<double> noise;
  std::uint64_t seed = 0;
  double r1 = 10.0;
  double r2 = 5.0;
  double eps = 1e-5;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  InstanceSpec spec;
  spec.family = parse_family(a.family);
  spec.n = a.n;
  spec.m = a.m;
  spec.rank_deficiency = a.rank_deficiency;
  spec.noise_sigma = a.noise;
  spec.seed = a.seed;
  spec.r1 = a.r1;
  spec.r2 = a.r2;
  const InstanceData data = generate(spec);
  SolverSettings solver;
  solver.eps = a.eps;
  solver.mu_scale = default_mu_scale(spec.family);
  const fs::path dir = a.out.empty() ? default_out_dir() : fs::path(a.out);
  const fs::path manifest = dir / "manifest.json";
  write_instance(data, manifest, solver);
  std::cout << manifest.string() << '\n';
  return 0;
}

struct ReferenceArgs {
  std::string manifest;
  std::string out;
  double tol = 1e-10;
};

int run_reference(const ReferenceArgs& a) {
  const RunManifest m = load_manifest(a.manifest);
  const fs::path out = a.out.empty() ? m.path.parent_path() / "reference.json" : fs::path(a.out);
  try {
    const ReferenceValues r = reference_solve(m.data, a.tol);
    write_text(out, reference_to_json(r).dump(2) + "\n");
  } catch (...) {
    std::error_code ec;
    fs::remove(out, ec);
    throw;
  }
  std::cout << out.string() << '\n';
  return 0;
}

struct SolveArgs {
  std::string manifest;
  std::string reference;
  std::string out;
  std::string granularity;
  std::string sweep;
  bool wall_clock = false;
};

std::vector<double> parse_sweep(const std::string& s) {
  const std::string key = "eps=";
  if (s.rfind(key, 0) != 0) throw ConfigError("--sweep expects eps=v1,v2,...");
  std::vector<double> out;
  std::stringstream ss(s.substr(key.size()));
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(v > 0.0)) throw ConfigError("--sweep: bad eps value '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--sweep: no values");
  return out;
}

struct RunOutput {
  std::string trace;
  std::string report;
  ExitKind exit_kind = ExitKind::kConverged;
  std::string error;
};

RunOutput solve_once(const RunManifest& m, const BilevelInstance& inst, const SolverSettings& settings,
                     const std::optional<ReferenceValues>& ref, bool inner, bool wall_clock) {
  RunOutput out;
  std::vector<TraceRow> rows;
  const Vec x0 = Vec::Zero(m.data.n);
  SolveReport rep = solve(inst, settings.outer(), settings.schedule(), x0, x0,
                          [&rows](const TraceRow& r) { rows.push_back(r); }, inner);
  TraceFormat fmt;
  fmt.wall_clock = wall_clock;
  if (ref) {
    fmt.p_star = ref->p_star;
    fmt.g_star = ref->g_star;
    attach_gaps(rep, ref->p_star, ref->g_star);
  }
  std::ostringstream os;
  write_trace_csv(os, rows, fmt);
  out.trace = os.str();
  json j = report_to_json(rep);
  j["eps"] = settings.eps;
  out.report = j.dump(2) + "\n";
  out.exit_kind = rep.exit_kind;
  return out;
}

int run_solve(const SolveArgs& a) {
  const RunManifest m = load_manifest(a.manifest);
  std::optional<ReferenceValues> ref;
  if (!a.reference.empty()) {
    ref = reference_from_json(read_json_file(a.reference));
  } else if (m.reference) {
    ref = reference_from_json(read_json_file(*m.reference));
  }
  bool inner = m.granularity == TraceGranularity::kInner;
  if (a.granularity == "inner") inner = true;
  if (a.granularity == "outer") inner = false;

  const fs::path dir = a.out.empty() ? default_out_dir() : fs::path(a.out);
  fs::create_directories(dir);
  const BilevelInstance inst = m.data.build();

  if (a.sweep.empty()) {
    const RunOutput r = solve_once(m, inst, m.solver, ref, inner, a.wall_clock);
    write_text(dir / "trace.csv", r.trace);
    write_text(dir / "report.json", r.report);
    return exit_code(r.exit_kind);
  }

  const std::vector<double> eps_values = parse_sweep(a.sweep);
  std::vector<RunOutput> results(eps_values.size());
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < eps_values.size(); ++i) {
    workers.emplace_back([&, i] {
      SolverSettings s = m.solver;
      s.eps = eps_values[i];
      try {
        results[i] = solve_once(m, inst, s, ref, inner, a.wall_clock);
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    });
  }
  for (auto& w : workers) w.join();

  int code = 0;
  for (std::size_t i = 0; i < eps_values.size(); ++i) {
    const std::string tag = "eps_" + format_double(eps_values[i]);
    if (!results[i].error.empty()) {
      std::cerr << "bivfa: " << tag << ": " << results[i].error << '\n';
      code = 1;
      continue;
    }
    write_text(dir / ("trace_" + tag + ".csv"), results[i].trace);
    write_text(dir / ("report_" + tag + ".json"), results[i].report);
    if (code != 1) code = std::max(code, exit_code(results[i].exit_kind));
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simple bilevel optimization by value-function bisection"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write a synthetic instance and its manifest");
  gen->add_option("--family", ga.family, "iep, lrp or lrpbc")->check(CLI::IsMember({"iep", "lrp", "lrpbc"}, CLI::ignore_case));
  gen->add_option("--n", ga.n, "Dimension");
  gen->add_option("--m", ga.m, "Rows (0: family default)");
  gen->add_option("--rank-deficiency", ga.rank_deficiency, "Zero singular values (IEP) or duplicated columns");
  gen->add_option("--noise", ga.noise, "Noise standard deviation");
  gen->add_option("--seed", ga.seed, "Random seed");
  gen->add_option("--r1", ga.r1, "LRPBC l1-ball radius");
  gen->add_option("--r2", ga.r2, "LRPBC l2-ball radius");
  gen->add_option("--eps", ga.eps, "Target accuracy stored in the manifest");
  gen->add_option("--out", ga.out, "Output directory");

  ReferenceArgs ra;
  auto* refc = app.add_subcommand("reference", "Compute g*, f*, p* for a manifest");
  refc->add_option("manifest", ra.manifest, "Manifest path")->required();
  refc->add_option("--out", ra.out, "Output file (default: reference.json next to the manifest)");
  refc->add_option("--tol", ra.tol, "Requested accuracy");

  SolveArgs sa;
  auto* sol = app.add_subcommand("solve", "Run the solver and write trace.csv and report.json");
  sol->add_option("manifest", sa.manifest, "Manifest path")->required();
  sol->add_option("--reference", sa.reference, "Reference file for the gap columns");
  sol->add_option("--out", sa.out, "Output directory");
  sol->add_option("--granularity", sa.granularity, "outer or inner")->check(CLI::IsMember({"outer", "inner"}));
  sol->add_option("--sweep", sa.sweep, "eps=v1,v2,...: independent solves on worker threads");
  sol->add_flag("--wall-clock", sa.wall_clock, "Seconds instead of query counts in the queries column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return run_generate(ga);
    if (*refc) return run_reference(ra);
    if (*sol) return run_solve(sa);
  } catch (const std::exception& e) {
    std::cerr << "bivfa: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
