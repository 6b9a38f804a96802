#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "st/bench.hpp"
#include "st/errors.hpp"

using namespace st;

namespace {

std::string write_config(const std::string& name, const std::string& body) {
  std::string path = "bench_test_" + name + ".json";
  std::ofstream f(path);
  f << body;
  return path;
}

/// A cheap config for in-process runs: tiny zoo training, one seed.
BenchConfig tiny_config() {
  BenchConfig cfg;
  cfg.n_train = 32;
  cfg.n_eval = 16;
  cfg.epochs = 10;
  cfg.seeds = {0};
  cfg.sweep_n_eval = 8;
  cfg.attacks = {default_attack("identity"), default_attack("mi"), default_attack("mi-st")};
  cfg.output_dir = "bench_test_out";
  return cfg;
}

}  // namespace

TEST_CASE("config: defaults validate and the default suite is complete") {
  BenchConfig cfg;
  cfg.attacks = default_attack_suite();
  CHECK_NOTHROW(cfg.validate());
  std::vector<std::string> want = {"fgsm", "bim", "mi", "di-mi", "ti-mi", "vmi",
                                   "st-raw", "mi-st"};
  REQUIRE(cfg.attacks.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(cfg.attacks[i].name == want[i]);
}

TEST_CASE("config: unknown attack name is a config error") {
  CHECK_THROWS_AS(default_attack("pgd-unknown"), ConfigError);
}

TEST_CASE("config: validation rejects bad field values") {
  BenchConfig cfg;
  cfg.attacks = {default_attack("mi")};
  cfg.seeds = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BenchConfig{};
  cfg.attacks = {default_attack("mi")};
  cfg.n_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BenchConfig{};
  cfg.attacks = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BenchConfig{};
  cfg.attacks = {default_attack("mi")};
  cfg.sweep_axes["gamma"] = {1.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config: missing file and malformed JSON are config errors") {
  CHECK_THROWS_AS(load_bench_config("no_such_config_file.json"), ConfigError);
  std::string bad = write_config("malformed", "{ this is not json");
  CHECK_THROWS_AS(load_bench_config(bad), ConfigError);
  std::remove(bad.c_str());
  std::string badfield =
      write_config("badfield", R"({"dataset": {"n_classes": "four"}})");
  CHECK_THROWS_AS(load_bench_config(badfield), ConfigError);
  std::remove(badfield.c_str());
}

TEST_CASE("config: the committed default config parses") {
  std::string path = "../../configs/default.json";
  std::ifstream probe(path);
  if (!probe.good()) path = "configs/default.json";
  BenchConfig cfg = load_bench_config(path);
  CHECK(cfg.seeds.size() == 5);
  CHECK(cfg.n_eval == 256);
  CHECK(cfg.sweep_axes.count("lambda2") == 1);
  CHECK(cfg.sweep_axes.count("beta") == 1);
  CHECK(cfg.sweep_axes.count("lambda1") == 1);
}

TEST_CASE("config: BENCH_SEED overrides the seed list") {
  std::string path = write_config("seeds", R"({"seeds": [1, 2, 3]})");
  setenv("BENCH_SEED", "7,8", 1);
  BenchConfig cfg = load_bench_config(path);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 8});
  setenv("BENCH_SEED", "7,abc", 1);
  CHECK_THROWS_AS(load_bench_config(path), ConfigError);
  setenv("BENCH_SEED", "", 1);
  CHECK_THROWS_AS(load_bench_config(path), ConfigError);
  unsetenv("BENCH_SEED");
  BenchConfig cfg2 = load_bench_config(path);
  CHECK(cfg2.seeds == std::vector<std::uint64_t>{1, 2, 3});
  std::remove(path.c_str());
}

TEST_CASE("member_train_data: deterministic, member-specific, shared distribution") {
  BenchConfig cfg = tiny_config();
  ZooRecipe recipe = default_zoo_recipe();
  Dataset a = member_train_data(cfg, recipe.surrogates[0]);
  Dataset b = member_train_data(cfg, recipe.surrogates[0]);
  Dataset c = member_train_data(cfg, recipe.surrogates[1]);
  REQUIRE(a.size() == b.size());
  bool same = true, differs = false;
  for (int i = 0; i < a.size(); ++i) {
    same &= a.inputs[i].data == b.inputs[i].data;
    differs |= a.inputs[i].data != c.inputs[i].data;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("bench run: identity attack success equals clean error; reports reproduce") {
  BenchConfig cfg = tiny_config();
  Zoo zoo = prepare_zoo(cfg, /*allow_load=*/false);

  BenchReport r1 = run_bench(cfg, zoo);
  BenchReport r2 = run_bench(cfg, zoo);
  CHECK(r1.to_json() == r2.to_json());
  CHECK(r1.matrix_csv() == r2.matrix_csv());

  BenchConfig multi = cfg;
  multi.workers = 3;
  BenchReport r3 = run_bench(multi, zoo);
  CHECK(r1.to_json() == r3.to_json());

  for (const auto& cell : r1.cells) {
    CHECK(cell.success_rate >= 0.0);
    CHECK(cell.success_rate <= 1.0);
    if (cell.attack == "identity")
      CHECK(cell.success_rate == doctest::Approx(r1.clean_error.at(cell.target)).epsilon(1e-12));
  }
  // Budget audit: no attack exceeds its epsilon ball.
  for (const auto& [attack, excess] : r1.max_linf) CHECK(excess <= 1e-9);
}

TEST_CASE("bench sweep: undeclared axis is a config error, declared axis produces rows") {
  BenchConfig cfg = tiny_config();
  cfg.attacks = {default_attack("mi-st")};
  cfg.sweep_axes["lambda2"] = {0.0, 0.03};
  Zoo zoo = prepare_zoo(cfg, /*allow_load=*/false);
  CHECK_THROWS_AS(run_sweep(cfg, "beta", zoo), ConfigError);
  std::vector<SweepRow> rows = run_sweep(cfg, "lambda2", zoo);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].value == 0.0);
  CHECK(rows[1].value == 0.03);
  for (const auto& row : rows) {
    CHECK(row.target_success.size() == zoo.targets.size());
    for (const auto& [t, s] : row.target_success) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }
  sweep_csv(rows, "lambda2", "bench_test_sweep.csv");
  std::ifstream in("bench_test_sweep.csv");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 3);  // header + 2 rows
  std::remove("bench_test_sweep.csv");
}

TEST_CASE("verification suite: quick subset passes") {
  std::vector<CheckResult> results = run_verification(/*quick=*/true);
  CHECK(!results.empty());
  for (const auto& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("cli: exit codes follow the 0/2 contract") {
  std::ifstream probe("../bench");
  if (!probe.good()) return;  // binary not adjacent (manual invocation); skip
  std::string cfg = write_config("cli", R"({"seeds": "oops"})");
  int rc = std::system(("../bench run " + cfg + " > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(rc) == 2);
  rc = std::system("../bench run no_such_file.json > /dev/null 2>&1");
  CHECK(WEXITSTATUS(rc) == 2);
  rc = std::system("../bench landscape --out bench_test_land > /dev/null 2>&1");
  CHECK(WEXITSTATUS(rc) == 0);
  std::remove(cfg.c_str());
  rc = std::system("rm -rf bench_test_land");
  CHECK(rc == 0);
}
