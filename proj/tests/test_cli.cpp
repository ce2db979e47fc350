#include <catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bivfa/io.hpp"
#include "bivfa/reference.hpp"
#include "solver_fixtures.hpp"

using namespace bivfa;

#ifndef BIVFA_CLI_PATH
#error "BIVFA_CLI_PATH must point at the bivfa executable"
#endif

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("bivfa_test_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Runs the CLI with stdout/stderr captured in dir; returns the exit status.
int run(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string("\"") + BIVFA_CLI_PATH + "\" " + args + " >\"" + (dir / "stdout.txt").string() +
                          "\" 2>\"" + (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t end = line.find(',', pos);
    out.push_back(line.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return out;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("generate is deterministic", "[cli]") {
  TempDir dir("gen");
  REQUIRE(run("generate --family iep --n 50 --seed 7 --out " + q(dir.path / "a"), dir.path) == 0);
  REQUIRE(run("generate --family iep --n 50 --seed 7 --out " + q(dir.path / "b"), dir.path) == 0);
  for (const char* f : {"manifest.json", "lower_M.csv", "lower_v.csv", "upper_M.csv"}) {
    INFO(f);
    const std::string a = read_text(dir.path / "a" / f);
    CHECK_FALSE(a.empty());
    CHECK(a == read_text(dir.path / "b" / f));
  }
  CHECK(read_text(dir.path / "stdout.txt").find("manifest.json") != std::string::npos);
}

TEST_CASE("generate records ball radii verbatim", "[cli]") {
  TempDir dir("radii");
  REQUIRE(run("generate --family lrpbc --n 12 --rank-deficiency 3 --r1 10 --r2 5 --out " + q(dir.path / "m"),
              dir.path) == 0);
  const json j = read_json_file(dir.path / "m" / "manifest.json");
  CHECK(j.at("r1").get<double>() == 10.0);
  CHECK(j.at("r2").get<double>() == 5.0);
  CHECK(j.at("lower").at("nonsmooth").at("param").get<double>() == 10.0);
  CHECK(j.at("upper").at("nonsmooth").at("param").get<double>() == 5.0);
}

TEST_CASE("bad invocations exit with status 1", "[cli]") {
  TempDir dir("bad");
  CHECK(run("generate --family phillips", dir.path) == 1);
  CHECK_FALSE(read_text(dir.path / "stderr.txt").empty());
  CHECK(run("", dir.path) == 1);
  CHECK(run("solve " + q(dir.path / "absent.json"), dir.path) == 1);
  CHECK(run("reference " + q(dir.path / "absent.json"), dir.path) == 1);
  CHECK(run("generate --family iep --n 8 --rank-deficiency 8 --out " + q(dir.path / "x"), dir.path) == 1);
  CHECK(run("--help", dir.path) == 0);
}

TEST_CASE("reference writes values and cleans up on failure", "[cli]") {
  TempDir dir("ref");
  REQUIRE(run("generate --family lrp --n 10 --rank-deficiency 3 --seed 2 --out " + q(dir.path / "m"), dir.path) == 0);
  REQUIRE(run("reference " + q(dir.path / "m" / "manifest.json"), dir.path) == 0);
  const ReferenceValues r = reference_from_json(read_json_file(dir.path / "m" / "reference.json"));
  const ReferenceValues direct = reference_solve(load_manifest(dir.path / "m" / "manifest.json").data, 1e-10);
  CHECK(r.p_star == direct.p_star);
  CHECK(r.g_star == direct.g_star);

  // A lower l1 term has no reference oracle; a stale output file is removed.
  InstanceData d = testutil::singleton_instance();
  d.lower.nonsmooth = ProxOracle::l1_norm(1.0);
  d.upper.nonsmooth = ProxOracle::zero();
  write_instance(d, dir.path / "u" / "manifest.json");
  const fs::path out = dir.path / "u" / "reference.json";
  std::ofstream(out) << "stale";
  CHECK(run("reference " + q(dir.path / "u" / "manifest.json"), dir.path) == 1);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("solve writes the trace and report", "[cli]") {
  TempDir dir("solve");
  const fs::path m = dir.path / "m";
  REQUIRE(run("generate --family lrp --n 10 --rank-deficiency 3 --seed 4 --eps 1e-5 --out " + q(m), dir.path) == 0);
  REQUIRE(run("reference " + q(m / "manifest.json"), dir.path) == 0);

  REQUIRE(run("solve " + q(m / "manifest.json") + " --out " + q(dir.path / "plain"), dir.path) == 0);
  const auto plain = lines(read_text(dir.path / "plain" / "trace.csv"));
  REQUIRE(plain.size() >= 2);
  CHECK(plain[0] == kTraceHeader);
  for (std::size_t i = 1; i < plain.size(); ++i) {
    const auto f = fields(plain[i]);
    REQUIRE(f.size() == 10);
    CHECK(f[8].empty());
    CHECK(f[9].empty());
  }
  CHECK(fields(plain.back())[5] == "Final");

  REQUIRE(run("solve " + q(m / "manifest.json") + " --reference " + q(m / "reference.json") + " --out " +
                  q(dir.path / "ref"),
              dir.path) == 0);
  const auto traced = lines(read_text(dir.path / "ref" / "trace.csv"));
  const auto last = fields(traced.back());
  CHECK(std::stod(last[8]) <= 4e-5);
  CHECK(std::stod(last[9]) <= 3e-5);
  const json rep = read_json_file(dir.path / "ref" / "report.json");
  CHECK(rep.at("exit_kind") == "Converged");
  CHECK(rep.at("f_gap").get<double>() == std::stod(last[8]));
  CHECK(rep.at("eps").get<double>() == 1e-5);

  // Same manifest, same bytes.
  REQUIRE(run("solve " + q(m / "manifest.json") + " --out " + q(dir.path / "again"), dir.path) == 0);
  CHECK(read_text(dir.path / "again" / "trace.csv") == read_text(dir.path / "plain" / "trace.csv"));

  REQUIRE(run("solve " + q(m / "manifest.json") + " --granularity inner --out " + q(dir.path / "inner"),
              dir.path) == 0);
  const std::string inner = read_text(dir.path / "inner" / "trace.csv");
  CHECK(inner.find(",Inner,") != std::string::npos);
  CHECK(lines(inner).size() > plain.size());

  REQUIRE(run("solve " + q(m / "manifest.json") + " --wall-clock --out " + q(dir.path / "clock"), dir.path) == 0);
  CHECK(lines(read_text(dir.path / "clock" / "trace.csv")).size() == plain.size());
}

TEST_CASE("sweep fans out independent solves", "[cli]") {
  TempDir dir("sweep");
  const fs::path m = dir.path / "m";
  REQUIRE(run("generate --family lrpbc --n 8 --rank-deficiency 2 --seed 5 --out " + q(m), dir.path) == 0);
  REQUIRE(run("solve " + q(m / "manifest.json") + " --sweep eps=1e-3,1e-4 --out " + q(dir.path / "s"), dir.path) == 0);
  for (const char* tag : {"eps_0.001", "eps_0.0001"}) {
    INFO(tag);
    CHECK(fs::exists(dir.path / "s" / (std::string("trace_") + tag + ".csv")));
    CHECK(fs::exists(dir.path / "s" / (std::string("report_") + tag + ".json")));
  }
  // Each sweep member matches a single run at that eps.
  json j = read_json_file(m / "manifest.json");
  j["solver"]["eps"] = 1e-4;
  std::ofstream(m / "manifest.json") << j.dump(2);
  REQUIRE(run("solve " + q(m / "manifest.json") + " --out " + q(dir.path / "one"), dir.path) == 0);
  CHECK(read_text(dir.path / "one" / "trace.csv") == read_text(dir.path / "s" / "trace_eps_0.0001.csv"));
  CHECK(run("solve " + q(m / "manifest.json") + " --sweep eps=abc", dir.path) == 1);
}

TEST_CASE("exit codes follow the exit kind", "[cli]") {
  TempDir dir("exit");
  SolverSettings s;
  s.Delta1 = 1e-2;
  write_instance(testutil::narrow_gap_instance(1e-3), dir.path / "g" / "manifest.json", s);
  CHECK(run("solve " + q(dir.path / "g" / "manifest.json") + " --out " + q(dir.path / "go"), dir.path) == 2);
  const auto rows = lines(read_text(dir.path / "go" / "trace.csv"));
  CHECK(fields(rows.back())[5] == "Safeguard");
  CHECK(read_json_file(dir.path / "go" / "report.json").at("exit_kind") == "SafeguardTriggered");

  InstanceSpec spec;
  spec.family = Family::kLRP;
  spec.n = 8;
  spec.rank_deficiency = 2;
  spec.seed = 4;
  SolverSettings capped;
  capped.mu_scale = default_mu_scale(Family::kLRP);
  capped.max_outer_iters = 1;
  write_instance(generate(spec), dir.path / "c" / "manifest.json", capped);
  CHECK(run("solve " + q(dir.path / "c" / "manifest.json") + " --out " + q(dir.path / "co"), dir.path) == 3);
  CHECK(read_json_file(dir.path / "co" / "report.json").at("exit_kind") == "IterationCap");
}
