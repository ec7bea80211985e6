#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <spikelab/cli.hpp>

using namespace spikelab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run spikelab_run(std::vector<std::string> args) {
  args.insert(args.begin(), "spikelab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str(), r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("spikelab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("groundstate subcommand", "[cli]") {
  const fs::path d = fresh_dir("gs");
  const Run r = spikelab_run({"groundstate", "--n", "1", "--p", "3", "--out", d.string()});
  REQUIRE(r.code == cli::kOk);
  const json doc = read_json(d / "groundstate.json");
  CHECK(std::abs(doc["results"]["u0"].get<double>() - 1.414214) <= 1e-6);
  CHECK(doc["schema_version"] == cli::kSchemaVersion);
  CHECK(doc["config_hash"].get<std::string>().size() == 16);
  CHECK(doc["status"] == "ok");
  CHECK(fs::exists(d / "groundstate.csv"));
}

TEST_CASE("usage and exit codes", "[cli]") {
  CHECK(spikelab_run({}).code == cli::kUsage);
  const Run u = spikelab_run({"frobnicate"});
  CHECK(u.code == cli::kUsage);
  CHECK(u.err.find("usage: spikelab") != std::string::npos);
  CHECK(spikelab_run({"--help"}).code == cli::kOk);

  const fs::path d = fresh_dir("codes");
  CHECK(spikelab_run({"groundstate", "--n", "0", "--out", d.string()}).code == cli::kParameter);
  CHECK(spikelab_run({"groundstate", "--p", "three", "--out", d.string()}).code == cli::kParameter);
  CHECK(spikelab_run({"groundstate", "--n", "1.5", "--out", d.string()}).code == cli::kParameter);
  CHECK(spikelab_run({"groundstate", "--bogus", "1", "--out", d.string()}).code == cli::kParameter);
  CHECK(spikelab_run({"project", "--d", "10,20", "--out", d.string()}).code == cli::kParameter);
  CHECK(spikelab_run({"solve-mixed", "--domain", "square", "--out", d.string()}).code == cli::kParameter);
  CHECK(spikelab_run({"curvature-fit", "--jobs", "0", "--out", d.string()}).code == cli::kParameter);
}

TEST_CASE("claim violation exits with 4", "[cli]") {
  // the lower bound sin(alpha) - h is missed at d = 10
  const fs::path d = fresh_dir("claim");
  const Run r = spikelab_run({"project", "--alpha", "0.7854", "--D", "4", "--d", "10,12,14", "--out", d.string()});
  CHECK(r.code == cli::kClaim);
  CHECK(read_json(d / "project.json")["status"] == "claim-violation");
}

TEST_CASE("config file and flag precedence", "[cli]") {
  const fs::path d = fresh_dir("cfg");
  const fs::path cfg = d / "cfg.json";
  std::ofstream(cfg) << R"({"schema_version": 1, "n": 1, "p": 2.0})";
  Run r = spikelab_run({"groundstate", "--config", cfg.string(), "--out", d.string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(read_json(d / "groundstate.json")["results"]["u0"].get<double>() == Catch::Approx(1.5).epsilon(1e-9));
  const std::string h2 = read_json(d / "groundstate.json")["config_hash"];

  r = spikelab_run({"groundstate", "--config", cfg.string(), "--p", "3", "--out", d.string()});
  REQUIRE(r.code == cli::kOk);
  const json doc = read_json(d / "groundstate.json");
  CHECK(doc["results"]["u0"].get<double>() == Catch::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(doc["config_hash"] != h2);

  // the same effective parameters hash identically however they were given
  r = spikelab_run({"groundstate", "--n", "1", "--p", "3", "--out", d.string(), "--name", "flags"});
  CHECK(read_json(d / "flags.json")["config_hash"] == doc["config_hash"]);

  std::ofstream(cfg) << R"({"schema_version": 7, "n": 1})";
  CHECK(spikelab_run({"groundstate", "--config", cfg.string(), "--out", d.string()}).code == cli::kParameter);
  std::ofstream(cfg) << R"({"schema_version": 1, "n": "one"})";
  CHECK(spikelab_run({"groundstate", "--config", cfg.string(), "--out", d.string()}).code == cli::kParameter);
  std::ofstream(cfg) << R"({"schema_version": 1, "colour": 3})";
  CHECK(spikelab_run({"groundstate", "--config", cfg.string(), "--out", d.string()}).code == cli::kParameter);
  std::ofstream(cfg) << "{not json";
  CHECK(spikelab_run({"groundstate", "--config", cfg.string(), "--out", d.string()}).code == cli::kParameter);
}

TEST_CASE("SPIKELAB_OUT selects the output directory", "[cli]") {
  const fs::path d = fresh_dir("env");
  ::setenv("SPIKELAB_OUT", d.string().c_str(), 1);
  const Run r = spikelab_run({"groundstate", "--n", "1"});
  ::unsetenv("SPIKELAB_OUT");
  CHECK(r.code == cli::kOk);
  CHECK(fs::exists(d / "groundstate.json"));
}

TEST_CASE("outputs are bit-identical across runs and worker counts", "[cli]") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  const std::vector<std::string> args = {"curvature-fit", "--R", "1,2,100", "--eps", "0.1"};
  auto with = [&](const fs::path& d, const char* jobs) {
    auto v = args;
    v.insert(v.end(), {"--out", d.string(), "--jobs", jobs});
    return spikelab_run(v).code;
  };
  REQUIRE(with(a, "1") == cli::kOk);
  REQUIRE(with(b, "3") == cli::kOk);
  worker_count() = 1;
  CHECK(read_file(a / "curvature-fit.csv") == read_file(b / "curvature-fit.csv"));
  CHECK(read_file(a / "curvature-fit.json") == read_file(b / "curvature-fit.json"));

  REQUIRE(spikelab_run({"geometry-check", "--out", a.string()}).code == cli::kOk);
  REQUIRE(spikelab_run({"geometry-check", "--out", b.string()}).code == cli::kOk);
  CHECK(read_file(a / "geometry-check.csv") == read_file(b / "geometry-check.csv"));
}

TEST_CASE("report aggregation", "[cli]") {
  const fs::path d = fresh_dir("report");
  Run r = spikelab_run({"report", "--dir", d.string()});
  CHECK(r.code == cli::kOk);
  json rep = read_json(d / "report.json");
  CHECK(rep["checks_total"] == 0);
  CHECK(rep["gaps"].size() == 11);

  REQUIRE(spikelab_run({"groundstate", "--n", "1", "--out", d.string()}).code == cli::kOk);
  REQUIRE(spikelab_run({"geometry-check", "--out", d.string()}).code == cli::kOk);
  r = spikelab_run({"report", "--dir", d.string()});
  CHECK(r.code == cli::kOk);
  rep = read_json(d / "report.json");
  CHECK(rep["checks_total"] == 5);
  CHECK(rep["unreadable"] == 0);

  // a corrupt CSV only affects the checks that rely on it
  std::ofstream(d / "geometry-check.csv", std::ios::app) << "1,2\n\x01\x02";
  r = spikelab_run({"report", "--dir", d.string()});
  rep = read_json(d / "report.json");
  CHECK(rep["unreadable"] == 3);
  for (const auto& row : rep["rows"]) {
    if (row["source"] == "groundstate.json") CHECK(row["status"] == "PASS");
    else CHECK(row["status"] == "UNREADABLE");
  }
  CHECK(r.out.find("criterion  1: PASS") != std::string::npos);
  CHECK(r.out.find("criterion  5: UNREADABLE") != std::string::npos);
  CHECK(spikelab_run({"report", "--dir", (d / "missing").string()}).code == cli::kParameter);
}
