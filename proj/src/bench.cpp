#include "st/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "st/errors.hpp"
#include "st/landscape.hpp"

namespace st {

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, workers);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

double get_or(const nlohmann::json& j, const std::string& key, double def) {
  return j.contains(key) ? j.at(key).get<double>() : def;
}

void apply_attack_json(AttackConfig& cfg, const nlohmann::json& j) {
  cfg.epsilon = static_cast<float>(get_or(j, "epsilon", cfg.epsilon));
  cfg.iters = static_cast<int>(get_or(j, "T", cfg.iters));
  cfg.beta = get_or(j, "beta", cfg.beta);
  cfg.lambda1 = get_or(j, "lambda1", cfg.lambda1);
  cfg.lambda2 = get_or(j, "lambda2", cfg.lambda2);
  cfg.mu = get_or(j, "mu", cfg.mu);
  cfg.alpha = static_cast<float>(get_or(j, "alpha", cfg.alpha));
  cfg.outer_scale = get_or(j, "outer_scale", cfg.outer_scale);
  cfg.di_p = get_or(j, "di_p", cfg.di_p);
  cfg.di_max_resize = get_or(j, "di_max_resize", cfg.di_max_resize);
  cfg.ti_kernel = static_cast<int>(get_or(j, "ti_kernel", cfg.ti_kernel));
  cfg.ti_sigma = get_or(j, "ti_sigma", cfg.ti_sigma);
  cfg.vmi_samples = static_cast<int>(get_or(j, "vmi_samples", cfg.vmi_samples));
  cfg.vmi_radius_factor = get_or(j, "vmi_radius_factor", cfg.vmi_radius_factor);
  if (j.contains("order"))
    cfg.order = j.at("order").get<std::string>() == "reshuffle-each-iter"
                    ? SurrogateOrder::ReshuffleEachIter
                    : SurrogateOrder::Fixed;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

void BenchConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (n_classes < 2) throw ConfigError("config: n_classes must be >= 2");
  if (n_train < n_classes || n_eval < 1) throw ConfigError("config: dataset sizes too small");
  if (attacks.empty()) throw ConfigError("config: attack list must be non-empty");
  for (const auto& a : attacks)
    if (a.kind != "identity") a.cfg.validate();
  for (const auto& [axis, values] : sweep_axes) {
    if (axis != "lambda1" && axis != "lambda2" && axis != "beta")
      throw ConfigError("config: unknown sweep axis '" + axis + "'");
    if (values.empty()) throw ConfigError("config: sweep axis '" + axis + "' has no values");
  }
}

NamedAttack default_attack(const std::string& name) {
  NamedAttack a;
  a.name = name;
  a.cfg = AttackConfig{};
  if (name == "identity") {
    a.kind = "identity";
  } else if (name == "fgsm") {
    a.kind = "fgsm";
    a.cfg.alpha = a.cfg.epsilon;
  } else if (name == "bim") {
    a.kind = "bim";
    a.cfg.mu = 0.0;
  } else if (name == "mi") {
    a.kind = "mi";
  } else if (name == "di-mi") {
    a.kind = "di-mi";
    a.cfg.transform = InputTransform::DI;
  } else if (name == "ti-mi") {
    a.kind = "ti-mi";
    a.cfg.transform = InputTransform::TI;
  } else if (name == "vmi") {
    a.kind = "vmi";
    a.cfg.use_vmi = true;
  } else if (name == "st-raw") {
    // Plain update x <- clip(x + g_whole), no momentum routing.
    a.kind = "st-raw";
    a.cfg.outer = OuterRule::Raw;
    // lambda1 doubles as the raw step size; lambda2 keeps the same cosine/loss
    // balance as the momentum-routed variant, rescaled by that step.
    a.cfg.lambda1 = static_cast<double>(a.cfg.alpha);
    a.cfg.lambda2 *= a.cfg.lambda1;
  } else if (name == "mi-st") {
    a.kind = "mi-st";
    a.cfg.outer = OuterRule::MomentumSign;
  } else {
    throw ConfigError("unknown attack name '" + name + "'");
  }
  return a;
}

std::vector<NamedAttack> default_attack_suite() {
  std::vector<NamedAttack> out;
  for (const char* name : {"fgsm", "bim", "mi", "di-mi", "ti-mi", "vmi", "st-raw", "mi-st"})
    out.push_back(default_attack(name));
  return out;
}

BenchConfig load_bench_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }

  BenchConfig cfg;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      cfg.dataset_seed = static_cast<std::uint64_t>(get_or(d, "seed", 7));
      cfg.n_train = static_cast<int>(get_or(d, "n_train", cfg.n_train));
      cfg.n_eval = static_cast<int>(get_or(d, "n_eval", cfg.n_eval));
      cfg.n_classes = static_cast<int>(get_or(d, "n_classes", cfg.n_classes));
      cfg.difficulty = get_or(d, "difficulty", cfg.difficulty);
      if (d.contains("input_shape")) cfg.input_shape = d.at("input_shape").get<std::vector<int>>();
    }
    if (j.contains("zoo")) {
      const auto& z = j.at("zoo");
      cfg.epochs = static_cast<int>(get_or(z, "epochs", cfg.epochs));
      cfg.lr = static_cast<float>(get_or(z, "lr", cfg.lr));
      cfg.train_seed = static_cast<std::uint64_t>(get_or(z, "train_seed", cfg.train_seed));
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("sweep_n_eval")) cfg.sweep_n_eval = j.at("sweep_n_eval").get<int>();
    if (j.contains("sweeps"))
      for (const auto& [axis, values] : j.at("sweeps").items())
        cfg.sweep_axes[axis] = values.get<std::vector<double>>();
    if (j.contains("attacks")) {
      for (const auto& aj : j.at("attacks")) {
        NamedAttack a = default_attack(aj.contains("kind") ? aj.at("kind").get<std::string>()
                                                           : aj.at("name").get<std::string>());
        if (aj.contains("name")) a.name = aj.at("name").get<std::string>();
        apply_attack_json(a.cfg, aj);
        cfg.attacks.push_back(std::move(a));
      }
    } else {
      cfg.attacks = default_attack_suite();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field error in " + path + ": " + e.what());
  }

  if (const char* env = std::getenv("BENCH_SEED")) {
    cfg.seeds.clear();
    std::stringstream ss(env);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      try {
        cfg.seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw ConfigError("BENCH_SEED: cannot parse seed '" + tok + "'");
      }
    }
    if (cfg.seeds.empty()) throw ConfigError("BENCH_SEED set but contains no seeds");
  }

  cfg.validate();
  return cfg;
}

Tensor craft(const NamedAttack& attack, const std::vector<const LossModel*>& surrogates,
             const Tensor& x, const Tensor& y, RngStream rng, AttackTrace* trace) {
  AttackTrace local;
  if (attack.kind == "identity") {
    local.x_adv = x;
  } else if (attack.kind == "fgsm") {
    local = run_fgsm(surrogates, x, y, attack.cfg);
  } else if (attack.kind == "st-raw" || attack.kind == "mi-st") {
    local = run_st(surrogates, x, y, attack.cfg, rng);
  } else {
    local = run_iterative(surrogates, x, y, attack.cfg, rng);
  }
  if (trace) *trace = local;
  return local.x_adv;
}

Dataset member_train_data(const BenchConfig& cfg, const ModelSpec& spec) {
  // Shared class means (dataset_seed) with per-member sampling noise: each
  // zoo model fits the same task but memorizes its own draw, so surrogate
  // gradients agree on the signal and disagree on the noise.
  const std::uint64_t noise_seed = cfg.dataset_seed * 1315423911ull + spec.init_seed;
  return synth_dataset(cfg.dataset_seed, cfg.n_train, cfg.n_classes, cfg.input_shape,
                       cfg.difficulty, "train", noise_seed);
}

Zoo prepare_zoo(const BenchConfig& cfg, bool allow_load) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.output_dir) / "zoo";
  const ZooRecipe recipe = default_zoo_recipe();

  auto ckpt_path = [&](const char* role, std::size_t i) {
    return dir / (std::string(role) + "_" + std::to_string(i) + ".ckpt");
  };

  bool all_present = allow_load && fs::exists(dir);
  if (all_present) {
    for (std::size_t i = 0; i < recipe.surrogates.size() && all_present; ++i)
      all_present = fs::exists(ckpt_path("surrogate", i));
    for (std::size_t i = 0; i < recipe.targets.size() && all_present; ++i)
      all_present = fs::exists(ckpt_path("target", i));
  }

  if (all_present) {
    Zoo zoo;
    for (std::size_t i = 0; i < recipe.surrogates.size(); ++i) {
      auto [net, spec] = load_checkpoint(ckpt_path("surrogate", i).string());
      zoo.surrogates.push_back(std::move(net));
      zoo.surrogate_specs.push_back(std::move(spec));
    }
    for (std::size_t i = 0; i < recipe.targets.size(); ++i) {
      auto [net, spec] = load_checkpoint(ckpt_path("target", i).string());
      zoo.targets.push_back(std::move(net));
      zoo.target_specs.push_back(std::move(spec));
    }
    return zoo;
  }

  Zoo zoo;
  std::uint64_t stream = 100;
  for (const auto& spec : recipe.surrogates) {
    TrainResult r = train(spec, member_train_data(cfg, spec), cfg.epochs, cfg.lr,
                          RngStream(cfg.train_seed, stream++));
    ModelSpec s = spec;
    s.trained = true;
    zoo.surrogates.push_back(std::move(r.net));
    zoo.surrogate_specs.push_back(s);
  }
  for (const auto& spec : recipe.targets) {
    TrainResult r = train(spec, member_train_data(cfg, spec), cfg.epochs, cfg.lr,
                          RngStream(cfg.train_seed, stream++));
    ModelSpec s = spec;
    s.trained = true;
    zoo.targets.push_back(std::move(r.net));
    zoo.target_specs.push_back(s);
  }
  fs::create_directories(dir);
  for (std::size_t i = 0; i < zoo.surrogates.size(); ++i)
    save_checkpoint(zoo.surrogates[i], zoo.surrogate_specs[i], ckpt_path("surrogate", i).string());
  for (std::size_t i = 0; i < zoo.targets.size(); ++i)
    save_checkpoint(zoo.targets[i], zoo.target_specs[i], ckpt_path("target", i).string());
  return zoo;
}

namespace {

struct ExampleOutcome {
  std::vector<bool> target_success;
  std::vector<bool> whitebox_success;
  double budget_violation = -1e30;
  double surrogate_loss = 0.0;
  double pair_cosine = 0.0;
};

std::uint64_t eval_seed_for(const BenchConfig& cfg, std::uint64_t bench_seed) {
  return cfg.dataset_seed + 7919 * (bench_seed + 1);
}

}  // namespace

BenchReport run_bench(const BenchConfig& cfg, const Zoo& zoo) {
  cfg.validate();
  BenchReport report;

  std::vector<NetworkLoss> surrogate_losses;
  surrogate_losses.reserve(zoo.surrogates.size());
  for (const auto& net : zoo.surrogates) surrogate_losses.emplace_back(net);
  std::vector<const LossModel*> surrogates;
  for (const auto& l : surrogate_losses) surrogates.push_back(&l);

  std::map<std::string, double> clean_err_sum;
  std::map<std::string, int> clean_err_count;

  for (std::size_t ai = 0; ai < cfg.attacks.size(); ++ai) {
    const NamedAttack& attack = cfg.attacks[ai];
    double worst_linf = -1e30;
    double loss_sum = 0.0;
    double cos_sum_acc = 0.0;
    long n_instances = 0;

    for (std::uint64_t seed : cfg.seeds) {
      Dataset eval = synth_dataset(cfg.dataset_seed, cfg.n_eval, cfg.n_classes, cfg.input_shape,
                                   cfg.difficulty, "attack-eval", eval_seed_for(cfg, seed));
      std::vector<ExampleOutcome> outcomes(static_cast<std::size_t>(eval.size()));

      parallel_for(eval.size(), cfg.workers, [&](int i) {
        const Tensor& x = eval.inputs[static_cast<std::size_t>(i)];
        const Tensor& y = eval.labels[static_cast<std::size_t>(i)];
        RngStream rng(seed, (static_cast<std::uint64_t>(ai) << 32) |
                                static_cast<std::uint64_t>(i));
        AttackTrace trace;
        Tensor x_adv = craft(attack, surrogates, x, y, rng, &trace);
        ExampleOutcome& out = outcomes[static_cast<std::size_t>(i)];
        const float eps = attack.kind == "identity" ? 0.0f : attack.cfg.epsilon;
        out.budget_violation = trace.max_budget_violation(x, eps, attack.cfg.lo, attack.cfg.hi);
        const int truth = eval.label_of(i);
        out.target_success.reserve(zoo.targets.size());
        for (const auto& target : zoo.targets)
          out.target_success.push_back(argmax_class(forward(target, x_adv)) != truth);
        out.whitebox_success.reserve(zoo.surrogates.size());
        for (const auto& s : zoo.surrogates)
          out.whitebox_success.push_back(argmax_class(forward(s, x_adv)) != truth);
        double l = 0.0;
        for (const LossModel* m : surrogates) l += m->loss(x_adv, y);
        out.surrogate_loss = l / static_cast<double>(surrogates.size());
        out.pair_cosine = surrogates.size() >= 2 ? mean_pairwise_cosine(surrogates, x_adv, y) : 0.0;
      });

      for (std::size_t ti = 0; ti < zoo.targets.size(); ++ti) {
        int hits = 0;
        for (const auto& o : outcomes) hits += o.target_success[ti] ? 1 : 0;
        BenchCell cell;
        cell.attack = attack.name;
        cell.target = zoo.target_specs[ti].arch + "#" + std::to_string(zoo.target_specs[ti].init_seed);
        cell.seed = seed;
        cell.success_rate = static_cast<double>(hits) / eval.size();
        report.cells.push_back(std::move(cell));
      }
      for (std::size_t si = 0; si < zoo.surrogates.size(); ++si) {
        int hits = 0;
        for (const auto& o : outcomes) hits += o.whitebox_success[si] ? 1 : 0;
        BenchCell cell;
        cell.attack = attack.name;
        cell.target = zoo.surrogate_specs[si].arch + "#" +
                      std::to_string(zoo.surrogate_specs[si].init_seed);
        cell.seed = seed;
        cell.success_rate = static_cast<double>(hits) / eval.size();
        report.whitebox_cells.push_back(std::move(cell));
      }
      for (const auto& o : outcomes) {
        worst_linf = std::max(worst_linf, o.budget_violation);
        loss_sum += o.surrogate_loss;
        cos_sum_acc += o.pair_cosine;
        ++n_instances;
      }

      // Clean error once per (target, seed), independent of attack.
      if (ai == 0) {
        for (std::size_t ti = 0; ti < zoo.targets.size(); ++ti) {
          int miss = 0;
          for (int i = 0; i < eval.size(); ++i)
            if (argmax_class(forward(zoo.targets[ti], eval.inputs[static_cast<std::size_t>(i)])) !=
                eval.label_of(i))
              ++miss;
          const std::string key =
              zoo.target_specs[ti].arch + "#" + std::to_string(zoo.target_specs[ti].init_seed);
          clean_err_sum[key] += static_cast<double>(miss) / eval.size();
          clean_err_count[key] += 1;
        }
      }
    }

    report.max_linf[attack.name] = worst_linf;
    report.surrogate_mean_loss[attack.name] = loss_sum / std::max(1L, n_instances);
    report.mean_final_cosine[attack.name] = cos_sum_acc / std::max(1L, n_instances);
  }

  for (const auto& [key, sum] : clean_err_sum)
    report.clean_error[key] = sum / clean_err_count[key];

  // Mean success per attack over targets and seeds.
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& cell : report.cells) {
    acc[cell.attack].first += cell.success_rate;
    acc[cell.attack].second += 1;
  }
  for (const auto& [name, pr] : acc) report.attack_mean[name] = pr.first / pr.second;

  return report;
}

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["artifact_version"] = kArtifactVersion;
  auto cells_json = [](const std::vector<BenchCell>& cs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs)
      arr.push_back({{"attack", c.attack},
                     {"target", c.target},
                     {"seed", c.seed},
                     {"success_rate", c.success_rate}});
    return arr;
  };
  j["cells"] = cells_json(cells);
  j["whitebox_cells"] = cells_json(whitebox_cells);
  j["attack_mean"] = attack_mean;
  j["budget_audit_max_linf_excess"] = max_linf;
  j["surrogate_mean_loss"] = surrogate_mean_loss;
  j["mean_final_cosine"] = mean_final_cosine;
  j["clean_error"] = clean_error;
  return j.dump(2);
}

std::string BenchReport::matrix_csv() const {
  // mean over seeds per (attack, target), attacks as rows
  std::vector<std::string> attacks, targets;
  std::map<std::string, std::map<std::string, std::pair<double, int>>> grid;
  for (const auto& c : cells) {
    if (std::find(attacks.begin(), attacks.end(), c.attack) == attacks.end())
      attacks.push_back(c.attack);
    if (std::find(targets.begin(), targets.end(), c.target) == targets.end())
      targets.push_back(c.target);
    auto& e = grid[c.attack][c.target];
    e.first += c.success_rate;
    e.second += 1;
  }
  std::ostringstream os;
  os << "attack";
  for (const auto& t : targets) os << "," << t;
  os << ",mean\n";
  for (const auto& a : attacks) {
    os << a;
    double row_sum = 0.0;
    for (const auto& t : targets) {
      const auto& e = grid[a][t];
      const double mean = e.second ? e.first / e.second : 0.0;
      row_sum += mean;
      os << "," << fmt(mean);
    }
    os << "," << fmt(row_sum / targets.size()) << "\n";
  }
  return os.str();
}

BenchReport run_bench_files(const BenchConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  Zoo zoo = prepare_zoo(cfg);
  const auto t1 = std::chrono::steady_clock::now();
  BenchReport report = run_bench(cfg, zoo);
  const auto t2 = std::chrono::steady_clock::now();

  fs::create_directories(cfg.output_dir);
  {
    std::ofstream f(fs::path(cfg.output_dir) / "report.json");
    f << report.to_json() << "\n";
  }
  {
    std::ofstream f(fs::path(cfg.output_dir) / "matrix.csv");
    f << report.matrix_csv();
  }
  {
    // Wall-clock timings live outside report.json so identical runs stay
    // byte-identical.
    nlohmann::json t;
    t["zoo_seconds"] = std::chrono::duration<double>(t1 - t0).count();
    t["bench_seconds"] = std::chrono::duration<double>(t2 - t1).count();
    std::ofstream f(fs::path(cfg.output_dir) / "timing.json");
    f << t.dump(2) << "\n";
  }
  return report;
}

std::vector<SweepRow> run_sweep(const BenchConfig& cfg, const std::string& axis, const Zoo& zoo) {
  auto it = cfg.sweep_axes.find(axis);
  if (it == cfg.sweep_axes.end())
    throw ConfigError("sweep axis '" + axis + "' not declared in config");

  // Base ST attack: the configured mi-st if present, else the default.
  NamedAttack base = default_attack("mi-st");
  for (const auto& a : cfg.attacks)
    if (a.kind == "mi-st") base = a;

  // Canonical quadratic probe pair for the Taylor-error column.
  QuadraticPair qpair = canonical_quadratic_pair();
  std::vector<const LossModel*> quads = {&qpair.f, &qpair.g};
  Tensor probe = qpair.probe;
  Tensor y_dummy({1});

  BenchConfig small = cfg;
  small.n_eval = cfg.sweep_n_eval;

  std::vector<SweepRow> rows;
  for (double value : it->second) {
    NamedAttack a = base;
    a.name = base.name + "-" + axis + "-" + fmt(value);
    if (axis == "lambda1") a.cfg.lambda1 = value;
    if (axis == "lambda2") a.cfg.lambda2 = value;
    if (axis == "beta") a.cfg.beta = value;

    BenchConfig one = small;
    one.attacks = {a};
    BenchReport rep = run_bench(one, zoo);

    SweepRow row;
    row.value = value;
    std::map<std::string, std::pair<double, int>> per_target;
    for (const auto& c : rep.cells) {
      per_target[c.target].first += c.success_rate;
      per_target[c.target].second += 1;
    }
    for (const auto& [t, pr] : per_target) row.target_success[t] = pr.first / pr.second;
    row.surrogate_loss = rep.surrogate_mean_loss.at(a.name);
    if (axis == "beta") {
      TaylorReport tr = taylor_error_sweep(quads, probe, y_dummy, {value});
      row.taylor_error = tr.errors[0];
    } else {
      row.taylor_error = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void sweep_csv(const std::vector<SweepRow>& rows, const std::string& axis,
               const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << axis;
  if (!rows.empty())
    for (const auto& [t, v] : rows[0].target_success) f << ",success_" << t;
  f << ",surrogate_mean_loss,taylor_error\n";
  for (const auto& row : rows) {
    f << fmt(row.value);
    for (const auto& [t, v] : row.target_success) f << "," << fmt(v);
    f << "," << fmt(row.surrogate_loss) << ",";
    if (std::isfinite(row.taylor_error)) f << fmt(row.taylor_error);
    f << "\n";
  }
}

// ---------------------------------------------------------------------------
// Verification suite
// ---------------------------------------------------------------------------

namespace {

CheckResult check(const std::string& name, bool pass, const std::string& detail) {
  return {name, pass, detail};
}

double rel_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

// Random small MLP for gradient checking, sized so finite differences on
// every parameter stay cheap.
Network random_tiny_net(RngStream& rng) {
  const int d = 3 + static_cast<int>(rng.uniform_int(4));
  const int k = 2 + static_cast<int>(rng.uniform_int(3));
  Network tiny;
  tiny.input_shape = {d};
  tiny.num_classes = k;
  RngStream wrng(rng.next_u64(), 0x77);
  const int hidden = 3 + static_cast<int>(rng.uniform_int(4));
  DenseLayer l1;
  l1.in = d;
  l1.out = hidden;
  l1.weight = Tensor({hidden, d});
  for (float& v : l1.weight.data) v = static_cast<float>(wrng.normal() * 0.7);
  l1.bias = Tensor({hidden});
  for (float& v : l1.bias.data) v = static_cast<float>(wrng.normal() * 0.2);
  tiny.layers.emplace_back(std::move(l1));
  tiny.layers.emplace_back(ReluLayer{});
  DenseLayer l2;
  l2.in = hidden;
  l2.out = k;
  l2.weight = Tensor({k, hidden});
  for (float& v : l2.weight.data) v = static_cast<float>(wrng.normal() * 0.7);
  l2.bias = Tensor({k});
  for (float& v : l2.bias.data) v = static_cast<float>(wrng.normal() * 0.2);
  tiny.layers.emplace_back(std::move(l2));
  return tiny;
}

}  // namespace

std::vector<CheckResult> run_verification(bool quick) {
  std::vector<CheckResult> results;
  const int draws = quick ? 25 : 100;

  // --- oracle self-consistency ---------------------------------------------
  {
    auto f = [](const Eigen::VectorXd& v) { return v.squaredNorm(); };
    Eigen::VectorXd x(2);
    x << 1.0, 0.0;
    Eigen::VectorXd g = fd_gradient(f, x, FdConfig{.h = 1e-4});
    Eigen::VectorXd expect(2);
    expect << 2.0, 0.0;
    const double err = (g - expect).norm();
    bool pass = err < 1e-8;

    Eigen::VectorXd w(3);
    w << 0.5, -2.0, 3.0;
    auto lin = [&](const Eigen::VectorXd& v) { return w.dot(v); };
    Eigen::VectorXd xl = Eigen::VectorXd::Ones(3);
    const double lin_err = (fd_gradient(lin, xl, FdConfig{.h = 0.25}) - w).norm();
    pass = pass && lin_err < 1e-10;
    results.push_back(check("oracle-self-consistency", pass,
                            "quadratic err " + fmt(err) + ", linear err " + fmt(lin_err)));
  }

  // --- cos_sum symmetry ------------------------------------------------------
  {
    RngStream rng(11, 3);
    std::vector<Eigen::VectorXd> gs;
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd g(6);
      for (int k = 0; k < 6; ++k) g[k] = rng.normal();
      gs.push_back(g);
    }
    const double base = cos_sum(gs);
    std::vector<Eigen::VectorXd> permuted = {gs[2], gs[0], gs[3], gs[1]};
    std::vector<Eigen::VectorXd> scaled = gs;
    scaled[1] *= 17.0;
    scaled[3] *= 0.003;
    const bool pass = std::abs(cos_sum(permuted) - base) < 1e-12 &&
                      std::abs(cos_sum(scaled) - base) < 1e-9;
    results.push_back(check("cos-sum-symmetry", pass, "base " + fmt(base)));
  }

  // --- 100-draw gradient check ----------------------------------------------
  {
    RngStream rng(2024, 0x6e4d);
    double worst_input = 0.0, worst_param = 0.0;
    bool pass = true;
    for (int trial = 0; trial < draws; ++trial) {
      Network net = random_tiny_net(rng);
      const int d = net.input_shape[0];
      std::vector<const Network*> nets = {&net};
      // Resample until the gradient has decent magnitude: near-zero gradients
      // make the relative error a pure measure of finite-difference noise.
      Tensor x({d});
      Tensor y({net.num_classes});
      Eigen::VectorXd autodiff;
      for (int tries = 0; tries < 64; ++tries) {
        x = sample_away_from_kinks(nets, {d}, rng, 5e-3);
        y = Tensor({net.num_classes});
        y[static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(net.num_classes)))] = 1.0f;
        autodiff = input_gradient(net, x, y).as_double();
        if (autodiff.norm() >= 0.05) break;
      }
      auto lossfn = [&](const Eigen::VectorXd& v) {
        return loss_of(net, from_double(v, x.shape), y);
      };
      Eigen::VectorXd fd = fd_gradient(lossfn, x.as_double(), FdConfig{.h = 1e-3});
      const double ein = rel_l2(autodiff, fd);
      worst_input = std::max(worst_input, ein);

      // parameter gradient vs central differences
      ParamGrads pg = param_gradient(net, {x}, {y});
      std::vector<float> flat = net.flat_params();
      Eigen::VectorXd pauto(static_cast<Eigen::Index>(flat.size()));
      {
        Eigen::Index off = 0;
        for (const auto& [dw, db] : pg.grads) {
          for (float v : dw.data) pauto[off++] = v;
          for (float v : db.data) pauto[off++] = v;
        }
      }
      Network scratch = net;
      auto ploss = [&](const Eigen::VectorXd& p) {
        std::vector<float> pf(static_cast<std::size_t>(p.size()));
        for (Eigen::Index i = 0; i < p.size(); ++i) pf[static_cast<std::size_t>(i)] = static_cast<float>(p[i]);
        scratch.set_flat_params(pf);
        return loss_of(scratch, x, y);
      };
      Eigen::VectorXd p0(static_cast<Eigen::Index>(flat.size()));
      for (std::size_t i = 0; i < flat.size(); ++i) p0[static_cast<Eigen::Index>(i)] = flat[i];
      Eigen::VectorXd pfd = fd_gradient(ploss, p0, FdConfig{.h = 1e-3});
      const double epar = rel_l2(pauto, pfd);
      worst_param = std::max(worst_param, epar);

      if (ein >= 1e-3 || epar >= 1e-3) pass = false;
    }
    results.push_back(check("gradient-check-" + std::to_string(draws) + "-draws", pass,
                            "worst input rel err " + fmt(worst_input) + ", worst param rel err " +
                                fmt(worst_param)));
  }

  // --- Taylor law on the quadratic pair and on two tiny MLPs ------------------
  {
    const std::vector<double> betas =
        quick ? std::vector<double>{1e-2, 5e-3, 2.5e-3} : std::vector<double>{1e-2, 5e-3, 2.5e-3, 1.25e-3};
    QuadraticPair pair = canonical_quadratic_pair();
    std::vector<const LossModel*> quads = {&pair.f, &pair.g};
    Tensor y_dummy({1});

    TaylorReport quad_report = taylor_error_sweep(quads, pair.probe, y_dummy, betas);
    TaylorReport quad_fine = taylor_error_sweep(quads, pair.probe, y_dummy, {1e-3});
    bool pass = quad_fine.errors[0] < 0.15 && quad_report.slope >= 0.7 && quad_report.slope <= 1.5;
    results.push_back(check("taylor-law-quadratic-pair", pass,
                            "err(beta=1e-3) " + fmt(quad_fine.errors[0]) + ", slope " +
                                fmt(quad_report.slope)));

    // two seeded tiny MLPs, d <= 32, calibrated so the first-order expansion
    // of the cosine-sum gradient is clean at the probe (see make_calibrated_mlp_pair)
    CalibratedMlpPair mp = make_calibrated_mlp_pair(41, 42, 16, 3);
    NetworkLoss l1(mp.a), l2(mp.b);
    std::vector<const LossModel*> mlps = {&l1, &l2};
    TaylorReport mlp_report = taylor_error_sweep(mlps, mp.probe, mp.label, betas);
    TaylorReport mlp_fine = taylor_error_sweep(mlps, mp.probe, mp.label, {1e-3});
    bool mlp_pass =
        mlp_fine.errors[0] < 0.15 && mlp_report.slope >= 0.7 && mlp_report.slope <= 1.5;
    results.push_back(check("taylor-law-tiny-mlps", mlp_pass,
                            "err(beta=1e-3) " + fmt(mlp_fine.errors[0]) + ", slope " +
                                fmt(mlp_report.slope)));
  }

  // --- reduction lattice ------------------------------------------------------
  {
    ModelSpec s1{.arch = "mlp-s", .init_seed = 21};
    ModelSpec s2{.arch = "mlp-m", .init_seed = 22};
    Dataset data = synth_dataset(31, 32, 3, {16}, 0.3, "train");
    Network n1 = train(s1, data, 5, 0.05f, RngStream(1, 1)).net;
    Network n2 = train(s2, data, 5, 0.05f, RngStream(1, 2)).net;
    NetworkLoss l1(n1), l2(n2);
    std::vector<const LossModel*> both = {&l1, &l2};
    std::vector<const LossModel*> single = {&l1};
    Tensor x = data.inputs[0];
    Tensor y = data.labels[0];

    AttackConfig base;
    base.epsilon = 16.0f / 255.0f;
    base.iters = 8;
    base.alpha = base.epsilon / 5.0f;

    // MI(mu=0) == BIM
    AttackConfig mi0 = base;
    mi0.mu = 0.0;
    AttackTrace t_mi0 = run_iterative(both, x, y, mi0, RngStream(3, 1));
    AttackTrace t_bim = run_iterative(both, x, y, mi0, RngStream(3, 2));
    double d1 = (t_mi0.x_adv.as_double() - t_bim.x_adv.as_double()).lpNorm<Eigen::Infinity>();

    // BIM(T=1, alpha=eps) == FGSM
    AttackConfig one = base;
    one.mu = 0.0;
    one.iters = 1;
    one.alpha = one.epsilon;
    AttackTrace t_one = run_iterative(both, x, y, one, RngStream(3, 3));
    AttackTrace t_fgsm = run_fgsm(both, x, y, base);
    double d2 = (t_one.x_adv.as_double() - t_fgsm.x_adv.as_double()).lpNorm<Eigen::Infinity>();

    // ST(lambda2=0, n=1) == single-model normalized ascent (straight-line oracle)
    AttackConfig st = base;
    st.outer = OuterRule::Raw;
    st.lambda2 = 0.0;
    st.lambda1 = 0.01;
    st.beta = 0.01;
    AttackTrace t_st = run_st(single, x, y, st, RngStream(3, 4));
    Eigen::VectorXd xr = x.as_double();
    Eigen::VectorXd p = xr;
    for (int t = 0; t < st.iters; ++t) {
      Eigen::VectorXd g = l1.grad(from_double(p, x.shape), y).as_double();
      p = clip_ball(p + st.lambda1 * (g / g.norm()), xr, st.epsilon, st.lo, st.hi);
    }
    // x_adv is stored float32; round the double oracle the same way.
    double d3 =
        (t_st.x_adv.as_double() - from_double(p, x.shape).as_double()).lpNorm<Eigen::Infinity>();

    // MI-ST(lambda2=0, n=1) == MI on that surrogate
    AttackConfig mist = base;
    mist.outer = OuterRule::MomentumSign;
    mist.lambda2 = 0.0;
    mist.beta = 0.01;
    AttackTrace t_mist = run_st(single, x, y, mist, RngStream(3, 5));
    AttackConfig mi = base;
    AttackTrace t_mi = run_iterative(single, x, y, mi, RngStream(3, 6));
    double d4 = (t_mist.x_adv.as_double() - t_mi.x_adv.as_double()).lpNorm<Eigen::Infinity>();

    const bool pass = d1 == 0.0 && d2 < 1e-12 && d3 < 1e-9 && d4 < 1e-9;
    results.push_back(check("reduction-lattice", pass,
                            "mi0-bim " + fmt(d1) + ", bim1-fgsm " + fmt(d2) + ", st-single " +
                                fmt(d3) + ", mist-mi " + fmt(d4)));
  }

  return results;
}

}  // namespace st
