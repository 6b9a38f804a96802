#pragma once

#include <map>
#include <string>
#include <vector>

#include "st/attacks.hpp"
#include "st/oracle.hpp"
#include "st/zoo.hpp"

namespace st {

/// A named attack: algorithm kind plus its knobs.
/// Kinds: identity | fgsm | bim | mi | di-mi | ti-mi | vmi | st-raw | mi-st.
struct NamedAttack {
  std::string name;
  std::string kind;
  AttackConfig cfg;
};

struct BenchConfig {
  // dataset
  std::uint64_t dataset_seed = 7;
  int n_train = 64;
  int n_eval = 256;
  int n_classes = 4;
  std::vector<int> input_shape = {1, 8, 8};
  double difficulty = 0.7;
  // zoo
  int epochs = 80;
  float lr = 0.02f;
  std::uint64_t train_seed = 123;
  // run
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<NamedAttack> attacks;
  std::map<std::string, std::vector<double>> sweep_axes;  // lambda1 | lambda2 | beta
  int sweep_n_eval = 64;
  std::string output_dir = "bench_out";
  int workers = 1;

  void validate() const;
};

/// Parses the JSON config file; BENCH_SEED (comma-separated integers)
/// overrides the seed list. Throws ConfigError with field diagnostics.
BenchConfig load_bench_config(const std::string& path);
NamedAttack default_attack(const std::string& name);
std::vector<NamedAttack> default_attack_suite();

struct BenchCell {
  std::string attack;
  std::string target;
  std::uint64_t seed = 0;
  double success_rate = 0.0;
};

struct BenchReport {
  std::vector<BenchCell> cells;                    // black-box targets
  std::vector<BenchCell> whitebox_cells;           // surrogates attacked white-box
  std::map<std::string, double> attack_mean;      // mean over targets and seeds
  std::map<std::string, double> max_linf;         // budget audit per attack
  std::map<std::string, double> surrogate_mean_loss;  // at final adversarial points
  std::map<std::string, double> mean_final_cosine;    // pairwise gradient cosine at x_adv
  std::map<std::string, double> clean_error;      // per target
  std::string to_json() const;
  std::string matrix_csv() const;
};

Tensor craft(const NamedAttack& attack, const std::vector<const LossModel*>& surrogates,
             const Tensor& x, const Tensor& y, RngStream rng, AttackTrace* trace = nullptr);

BenchReport run_bench(const BenchConfig& cfg, const Zoo& zoo);
/// Training set for one zoo member: shared class means from cfg.dataset_seed,
/// private sampling noise derived from the member's init seed.
Dataset member_train_data(const BenchConfig& cfg, const ModelSpec& spec);
/// Trains (or loads previously saved checkpoints for) the default zoo.
Zoo prepare_zoo(const BenchConfig& cfg, bool allow_load = true);
/// Full pipeline: prepare zoo, run, write report.json / matrix.csv /
/// timing.json under cfg.output_dir.
BenchReport run_bench_files(const BenchConfig& cfg);

struct SweepRow {
  double value = 0.0;
  std::map<std::string, double> target_success;  // per target, mean over seeds
  double surrogate_loss = 0.0;
  double taylor_error = 0.0;  // beta axis only, else NaN
};

std::vector<SweepRow> run_sweep(const BenchConfig& cfg, const std::string& axis, const Zoo& zoo);
void sweep_csv(const std::vector<SweepRow>& rows, const std::string& axis,
               const std::string& path);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// The numerical verification suite: oracle self-consistency, the
/// 100-draw gradient check, the Taylor error law, the reduction
/// lattice, and cosine-sum properties. quick trims the heavy parts.
std::vector<CheckResult> run_verification(bool quick);

}  // namespace st
