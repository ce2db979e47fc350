#ifndef BIVFA_IO_HPP
#define BIVFA_IO_HPP

// File formats.
//
// Matrix CSV: first line "rows,cols", then one comma-separated row per line,
// every number printed with %.17g so files round-trip bit-exactly. Vectors
// are single-column matrices.
//
// Manifest (JSON): instance description plus solver settings; matrix paths
// are resolved relative to the manifest's directory.
//
// Trace CSV header: iter,queries,c,l,u,branch,f_val,g_val,f_gap,g_gap

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bivfa/dual.hpp"
#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"
#include "bivfa/problems.hpp"
#include "bivfa/reference.hpp"
#include "bivfa/solver.hpp"

namespace bivfa {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kTraceHeader = "iter,queries,c,l,u,branch,f_val,g_val,f_gap,g_gap";

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_matrix_csv(const fs::path& path, const Mat& M) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << M.rows() << ',' << M.cols() << '\n';
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j) os << ',';
      os << format_double(M(i, j));
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_vector_csv(const fs::path& path, const Vec& v) { write_matrix_csv(path, Mat(v)); }

inline Mat read_matrix_csv(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw IoError("'" + path.string() + "': empty file");
  long rows = 0;
  long cols = 0;
  char comma = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> rows >> comma >> cols) || comma != ',' || rows < 1 || cols < 1) {
      throw IoError("'" + path.string() + "': malformed header '" + line + "' (expected rows,cols)");
    }
  }
  Mat M(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!std::getline(is, line)) throw IoError("'" + path.string() + "': expected " + std::to_string(rows) + " rows");
    std::size_t pos = 0;
    for (long j = 0; j < cols; ++j) {
      const std::size_t end = line.find(',', pos);
      const std::string tok = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      try {
        std::size_t used = 0;
        M(i, j) = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw IoError("'" + path.string() + "': bad number '" + tok + "' at row " + std::to_string(i + 1));
      }
      if (end == std::string::npos && j + 1 < cols) {
        throw IoError("'" + path.string() + "': row " + std::to_string(i + 1) + " has too few columns");
      }
      pos = end + 1;
    }
  }
  return M;
}

inline Vec read_vector_csv(const fs::path& path) {
  Mat M = read_matrix_csv(path);
  if (M.cols() != 1) throw IoError("'" + path.string() + "': expected a single column");
  return M.col(0);
}

// --- prox / smooth descriptors -------------------------------------------

inline json prox_to_json(const ProxOracle& p) { return json{{"kind", p.name()}, {"param", p.param()}}; }

inline ProxOracle prox_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const double param = j.value("param", 0.0);
  if (kind == "zero") return ProxOracle::zero();
  if (kind == "l1_norm") return ProxOracle::l1_norm(j.value("param", 1.0));
  if (kind == "nonneg") return ProxOracle::nonneg();
  if (kind == "lower_bound") return ProxOracle::lower_bound(param);
  if (kind == "l2_ball") return ProxOracle::l2_ball(param);
  if (kind == "l1_ball") return ProxOracle::l1_ball(param);
  throw ConfigError("unknown nonsmooth kind '" + kind + "'");
}

inline const char* smooth_kind_name(SmoothSpec::Kind k) {
  switch (k) {
    case SmoothSpec::Kind::kZero:
      return "zero";
    case SmoothSpec::Kind::kLeastSquares:
      return "least_squares";
    case SmoothSpec::Kind::kQuadraticForm:
      return "quadratic_form";
  }
  return "unknown";
}

/// Writes the matrices of one objective as <prefix>_M.csv / <prefix>_v.csv.
inline json objective_to_files(const ObjectiveSpec& obj, const fs::path& dir, const std::string& prefix) {
  json s{{"kind", smooth_kind_name(obj.smooth.kind)}};
  if (obj.smooth.kind != SmoothSpec::Kind::kZero) {
    const std::string mname = prefix + "_M.csv";
    write_matrix_csv(dir / mname, obj.smooth.M);
    s["matrix"] = mname;
  }
  if (obj.smooth.kind == SmoothSpec::Kind::kLeastSquares) {
    const std::string vname = prefix + "_v.csv";
    write_vector_csv(dir / vname, obj.smooth.v);
    s["vector"] = vname;
  }
  return json{{"smooth", s}, {"nonsmooth", prox_to_json(obj.nonsmooth)}};
}

inline ObjectiveSpec objective_from_json(const json& j, const fs::path& base, Eigen::Index* n) {
  ObjectiveSpec obj;
  const json& s = j.at("smooth");
  const std::string kind = s.at("kind").get<std::string>();
  if (kind == "zero") {
    obj.smooth.kind = SmoothSpec::Kind::kZero;
  } else if (kind == "least_squares") {
    obj.smooth.kind = SmoothSpec::Kind::kLeastSquares;
    obj.smooth.M = read_matrix_csv(base / s.at("matrix").get<std::string>());
    obj.smooth.v = read_vector_csv(base / s.at("vector").get<std::string>());
    if (obj.smooth.v.size() != obj.smooth.M.rows()) throw ConfigError("least_squares: vector length != matrix rows");
  } else if (kind == "quadratic_form") {
    obj.smooth.kind = SmoothSpec::Kind::kQuadraticForm;
    obj.smooth.M = read_matrix_csv(base / s.at("matrix").get<std::string>());
  } else {
    throw ConfigError("unknown smooth kind '" + kind + "'");
  }
  if (obj.smooth.kind != SmoothSpec::Kind::kZero) {
    if (*n == 0) *n = obj.smooth.M.cols();
    if (obj.smooth.M.cols() != *n) throw ConfigError("objective matrices disagree on the dimension");
  }
  obj.nonsmooth = prox_from_json(j.at("nonsmooth"));
  return obj;
}

// --- manifest --------------------------------------------------------------

/// Solver settings carried by a manifest.
struct SolverSettings {
  double eps = 1e-5;
  std::optional<double> Delta1;
  double D = 1.0;
  double B_f = 1.0;
  double b_init = 1.0;
  std::optional<double> eps1;
  std::optional<double> eps2;
  std::optional<double> eps3;
  std::optional<double> eps4;
  std::optional<double> mu;
  /// "practical" (default) or "worst_case"; explicit eps1..eps4 and mu win.
  std::string schedule_kind = "practical";
  double mu_scale = 1.0;
  std::optional<std::size_t> max_outer_iters;

  OuterConfig outer() const {
    OuterConfig c;
    c.eps = eps;
    c.Delta1 = Delta1;
    c.b_init = b_init;
    c.max_outer_iters = max_outer_iters;
    return c;
  }
  ToleranceSchedule schedule() const {
    ToleranceSchedule s = schedule_kind == "practical" ? ToleranceSchedule::practical(eps, mu_scale) : ToleranceSchedule{};
    s.eps = eps;
    s.D = D;
    s.B_f = B_f;
    if (eps1) s.eps1_override = eps1;
    if (eps2) s.eps2_override = eps2;
    if (eps3) s.eps3_override = eps3;
    if (eps4) s.eps4_override = eps4;
    if (mu) s.mu_override = mu;
    return s;
  }
};

enum class TraceGranularity { kOuter, kInner };

struct RunManifest {
  fs::path path;  // manifest file; matrix paths are relative to its directory
  InstanceSpec spec;
  InstanceData data;
  SolverSettings solver;
  std::optional<fs::path> reference;
  TraceGranularity granularity = TraceGranularity::kOuter;
};

template <class T>
std::optional<T> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

inline json spec_to_json(const InstanceSpec& s) {
  json j{{"family", to_string(s.family)}, {"n", s.n},   {"m", s.rows()},     {"rank_deficiency", s.rank_deficiency},
         {"seed", s.seed},                {"r1", s.r1}, {"r2", s.r2},         {"noise_sigma", s.sigma()}};
  return j;
}

inline InstanceSpec spec_from_json(const json& j) {
  InstanceSpec s;
  s.family = parse_family(j.value("family", std::string("custom")));
  s.n = j.value("n", static_cast<Eigen::Index>(0));
  s.m = j.value("m", static_cast<Eigen::Index>(0));
  s.rank_deficiency = j.value("rank_deficiency", static_cast<Eigen::Index>(0));
  s.seed = j.value("seed", static_cast<std::uint64_t>(0));
  s.r1 = j.value("r1", 10.0);
  s.r2 = j.value("r2", 5.0);
  s.noise_sigma = optional_field<double>(j, "noise_sigma");
  return s;
}

inline json solver_to_json(const SolverSettings& s) {
  json j{{"eps", s.eps},       {"D", s.D},
          {"B_f", s.B_f},       {"b_init", s.b_init},
          {"schedule", s.schedule_kind}, {"mu_scale", s.mu_scale}};
  if (s.mu) j["mu"] = *s.mu;
  if (s.Delta1) j["Delta1"] = *s.Delta1;
  if (s.eps1) j["eps1"] = *s.eps1;
  if (s.eps2) j["eps2"] = *s.eps2;
  if (s.eps3) j["eps3"] = *s.eps3;
  if (s.eps4) j["eps4"] = *s.eps4;
  if (s.max_outer_iters) j["max_outer_iters"] = *s.max_outer_iters;
  return j;
}

inline SolverSettings solver_from_json(const json& j) {
  SolverSettings s;
  s.eps = j.value("eps", s.eps);
  s.D = j.value("D", s.D);
  s.B_f = j.value("B_f", s.B_f);
  s.b_init = j.value("b_init", s.b_init);
  s.Delta1 = optional_field<double>(j, "Delta1");
  s.eps1 = optional_field<double>(j, "eps1");
  s.eps2 = optional_field<double>(j, "eps2");
  s.eps3 = optional_field<double>(j, "eps3");
  s.eps4 = optional_field<double>(j, "eps4");
  s.mu = optional_field<double>(j, "mu");
  s.schedule_kind = j.value("schedule", s.schedule_kind);
  if (s.schedule_kind != "practical" && s.schedule_kind != "worst_case") {
    throw ConfigError("solver.schedule must be 'practical' or 'worst_case'");
  }
  s.mu_scale = j.value("mu_scale", s.mu_scale);
  s.max_outer_iters = optional_field<std::size_t>(j, "max_outer_iters");
  auto pos = [](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigError(std::string("solver.") + what + " must be positive");
  };
  pos(s.eps, "eps");
  pos(s.D, "D");
  pos(s.B_f, "B_f");
  pos(s.b_init, "b_init");
  pos(s.mu_scale, "mu_scale");
  if (s.mu) pos(*s.mu, "mu");
  if (s.Delta1) pos(*s.Delta1, "Delta1");
  for (const auto* e : {&s.eps1, &s.eps2, &s.eps3, &s.eps4})
    if (*e) pos(**e, "epsK");
  return s;
}

/// Writes instance matrices next to `manifest_path` and the manifest itself.
inline json write_instance(const InstanceData& d, const fs::path& manifest_path, const SolverSettings& solver = {}) {
  const fs::path dir = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
  fs::create_directories(dir);
  json j = spec_to_json(d.spec);
  j["n"] = d.n;
  j["upper"] = objective_to_files(d.upper, dir, "upper");
  j["lower"] = objective_to_files(d.lower, dir, "lower");
  j["solver"] = solver_to_json(solver);
  j["trace_granularity"] = "outer";
  std::ofstream os(manifest_path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + manifest_path.string() + "' for writing");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed for '" + manifest_path.string() + "'");
  return j;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

inline RunManifest load_manifest(const fs::path& path) {
  const json j = read_json_file(path);
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  RunManifest m;
  m.path = path;
  try {
    m.spec = spec_from_json(j);
    Eigen::Index n = 0;
    m.data.upper = objective_from_json(j.at("upper"), base, &n);
    m.data.lower = objective_from_json(j.at("lower"), base, &n);
    if (n == 0) throw ConfigError("manifest: both smooth parts are zero; dimension unknown");
    m.data.n = n;
    m.data.spec = m.spec;
    m.solver = solver_from_json(j.value("solver", json::object()));
    if (auto r = optional_field<std::string>(j, "reference")) m.reference = base / *r;
    const std::string gran = j.value("trace_granularity", std::string("outer"));
    if (gran == "outer") {
      m.granularity = TraceGranularity::kOuter;
    } else if (gran == "inner") {
      m.granularity = TraceGranularity::kInner;
    } else {
      throw ConfigError("manifest: trace_granularity must be 'outer' or 'inner'");
    }
  } catch (const json::exception& e) {
    throw ConfigError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

// --- reference and report --------------------------------------------------

inline json reference_to_json(const ReferenceValues& r) {
  return json{{"g_star", r.g_star},
              {"f_star", r.f_star},
              {"p_star", r.p_star},
              {"tolerance_achieved", r.tolerance_achieved},
              {"solution_set_dim", r.solution_set_dim},
              {"gap_violated", r.gap_violated}};
}

/// Only the scalar values are stored; x_ref stays in memory.
inline ReferenceValues reference_from_json(const json& j) {
  ReferenceValues r;
  r.g_star = j.at("g_star").get<double>();
  r.f_star = j.at("f_star").get<double>();
  r.p_star = j.at("p_star").get<double>();
  r.tolerance_achieved = j.value("tolerance_achieved", 0.0);
  r.solution_set_dim = j.value("solution_set_dim", static_cast<Eigen::Index>(0));
  r.gap_violated = j.value("gap_violated", false);
  return r;
}

inline json counter_to_json(const QueryCounter& q) {
  return json{{"gradient", q.gradient_evals}, {"prox", q.prox_evals}, {"value", q.value_evals}, {"total", q.total()}};
}

inline json report_to_json(const SolveReport& r) {
  json j;
  j["exit_kind"] = to_string(r.exit_kind);
  j["outer_iterations"] = r.outer_iterations;
  j["f_final"] = r.f_final;
  j["g_final"] = r.g_final;
  j["f_gap"] = r.f_gap ? json(*r.f_gap) : json(nullptr);
  j["g_gap"] = r.g_gap ? json(*r.g_gap) : json(nullptr);
  j["l0"] = r.l0;
  j["u0"] = r.u0;
  j["l"] = r.l;
  j["u"] = r.u;
  j["Delta1"] = r.Delta1;
  j["D_z"] = r.D_z;
  j["B_f"] = r.B_f;
  j["max_outer_iters"] = r.max_outer_iters;
  j["total_queries"] = counter_to_json(r.total_queries);
  j["phase_queries"] = json{{"initial_bounds", counter_to_json(r.phases.initial_bounds)},
                            {"interval_search", counter_to_json(r.phases.interval_search)},
                            {"dual_bisection", counter_to_json(r.phases.dual_bisection)},
                            {"bookkeeping", counter_to_json(r.phases.bookkeeping)}};
  json iv = json::array();
  for (const auto& s : r.interval_searches) {
    iv.push_back(json{{"c", s.c}, {"apg_calls", s.apg_calls}, {"multiplier_calls", s.multiplier_calls}, {"cap", s.cap}});
  }
  j["interval_searches"] = iv;
  j["x_final"] = std::vector<double>(r.x_final.data(), r.x_final.data() + r.x_final.size());
  return j;
}

// --- trace -----------------------------------------------------------------

struct TraceFormat {
  /// Reference values for the gap columns; empty columns when unset.
  std::optional<double> p_star;
  std::optional<double> g_star;
  /// Put elapsed seconds in the queries column instead of query counts.
  bool wall_clock = false;
};

inline std::string trace_line(const TraceRow& r, const TraceFormat& fmt) {
  std::string s = std::to_string(r.iter);
  s += ',';
  s += fmt.wall_clock ? format_double(r.seconds) : std::to_string(r.queries);
  for (double v : {r.c, r.l, r.u}) {
    s += ',';
    s += format_double(v);
  }
  s += ',';
  s += to_string(r.branch);
  s += ',';
  s += format_double(r.f_val);
  s += ',';
  s += format_double(r.g_val);
  s += ',';
  if (fmt.p_star) s += format_double(r.f_val - *fmt.p_star);
  s += ',';
  if (fmt.g_star) s += format_double(r.g_val - *fmt.g_star);
  return s;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows, const TraceFormat& fmt) {
  os << kTraceHeader << '\n';
  for (const auto& r : rows) os << trace_line(r, fmt) << '\n';
}

}  // namespace bivfa

#endif  // BIVFA_IO_HPP
