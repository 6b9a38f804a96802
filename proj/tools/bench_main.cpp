#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "st/bench.hpp"
#include "st/errors.hpp"
#include "st/landscape.hpp"

namespace {

// Exit codes: 0 ok, 1 verification failure, 2 config error, 3 training error.
constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;

int cmd_run(const std::string& config_path) {
  st::BenchConfig cfg = st::load_bench_config(config_path);
  st::BenchReport report = st::run_bench_files(cfg);
  std::cout << report.matrix_csv();
  std::cout << "\nreport written to " << cfg.output_dir << "/report.json\n";
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& axis) {
  st::BenchConfig cfg = st::load_bench_config(config_path);
  st::Zoo zoo = st::prepare_zoo(cfg);
  auto rows = st::run_sweep(cfg, axis, zoo);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string out = cfg.output_dir + "/sweep_" + axis + ".csv";
  st::sweep_csv(rows, axis, out);
  std::cout << "sweep written to " << out << "\n";
  return kExitOk;
}

int cmd_verify(bool quick) {
  auto results = st::run_verification(quick);
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
    all = all && r.pass;
  }
  if (!all) {
    std::cout << "verification FAILED\n";
    return kExitVerifyFail;
  }
  std::cout << "verification OK\n";
  return kExitOk;
}

int cmd_landscape(bool export_grid_flag, const std::string& out_dir) {
  st::CanonicalLandscape land = st::canonical_landscape();
  st::LandscapeConfig cfg;
  std::filesystem::create_directories(out_dir);

  if (export_grid_flag)
    st::export_grid(land.f, land.g, -2.0, 2.0, 101, out_dir + "/grid.csv");

  // Contested-region starts; report how often each method reaches the
  // shared optimum.
  st::RngStream rng(17, 0x99);
  const int n = 50;
  int st_shared = 0, sum_shared = 0, st_sum = 0, sum_sum = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::Vector2d start(rng.uniform(-0.4, 0.2), rng.uniform(-0.1, 0.5));
    auto t_st = st::trace(land.f, land.g, start, st::AscentMethod::St, cfg);
    auto t_sum = st::trace(land.f, land.g, start, st::AscentMethod::SumAscent, cfg);
    if (i == 0) {
      st::trajectory_jsonl(t_st, out_dir + "/trajectory_st.jsonl");
      st::trajectory_jsonl(t_sum, out_dir + "/trajectory_sum.jsonl");
    }
    st_shared += t_st.classification == st::Terminal::SharedOptimum;
    st_sum += t_st.classification == st::Terminal::SumOptimum;
    sum_shared += t_sum.classification == st::Terminal::SharedOptimum;
    sum_sum += t_sum.classification == st::Terminal::SumOptimum;
  }
  std::printf("st:        %2d/%d shared, %2d/%d sum-dominant\n", st_shared, n, st_sum, n);
  std::printf("sum-ascent:%2d/%d shared, %2d/%d sum-dominant\n", sum_shared, n, sum_sum, n);
  return kExitOk;
}

int cmd_train_zoo(const std::string& config_path) {
  st::BenchConfig cfg = st::load_bench_config(config_path);
  st::Zoo zoo = st::prepare_zoo(cfg, /*allow_load=*/false);
  for (std::size_t i = 0; i < zoo.surrogates.size(); ++i)
    std::printf("surrogate %zu (%s#%llu): train acc %.3f\n", i,
                zoo.surrogate_specs[i].arch.c_str(),
                static_cast<unsigned long long>(zoo.surrogate_specs[i].init_seed),
                st::accuracy(zoo.surrogates[i], member_train_data(cfg, zoo.surrogate_specs[i])));
  for (std::size_t i = 0; i < zoo.targets.size(); ++i)
    std::printf("target %zu (%s#%llu): train acc %.3f\n", i, zoo.target_specs[i].arch.c_str(),
                static_cast<unsigned long long>(zoo.target_specs[i].init_seed),
                st::accuracy(zoo.targets[i], member_train_data(cfg, zoo.target_specs[i])));
  std::cout << "checkpoints written to " << cfg.output_dir << "/zoo\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble transfer-attack bench"};
  app.require_subcommand(1);

  std::string config_path, axis, out_dir = "landscape_out";
  bool quick = false, export_grid_flag = false;

  auto* run = app.add_subcommand("run", "train/load the zoo and run the attack matrix");
  run->add_option("config", config_path, "JSON config file")->required();

  auto* sweep = app.add_subcommand("sweep", "run an ablation sweep");
  sweep->add_option("config", config_path, "JSON config file")->required();
  sweep->add_option("--axis", axis, "lambda1 | lambda2 | beta")->required();

  auto* verify = app.add_subcommand("verify", "run the numerical verification suite");
  verify->add_flag("--quick", quick, "run the fast subset");

  auto* landscape = app.add_subcommand("landscape", "run the 2-D two-function illustration");
  landscape->add_flag("--export-grid", export_grid_flag, "write the contour grid CSV");
  landscape->add_option("--out", out_dir, "output directory");

  auto* train_zoo_cmd = app.add_subcommand("train-zoo", "train and checkpoint the model zoo");
  train_zoo_cmd->add_option("config", config_path, "JSON config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (sweep->parsed()) return cmd_sweep(config_path, axis);
    if (verify->parsed()) return cmd_verify(quick);
    if (landscape->parsed()) return cmd_landscape(export_grid_flag, out_dir);
    if (train_zoo_cmd->parsed()) return cmd_train_zoo(config_path);
  } catch (const st::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const st::TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerifyFail;
  }
  return kExitOk;
}
