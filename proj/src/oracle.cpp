#include "st/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "st/attacks.hpp"
#include "st/errors.hpp"
#include "st/zoo.hpp"

namespace st {

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, const FdConfig& cfg) {
  if (cfg.h <= 0.0) throw std::invalid_argument("fd_gradient: h must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  const double f0 = cfg.scheme == FdConfig::Scheme::Forward ? f(x) : 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    double val;
    if (cfg.scheme == FdConfig::Scheme::Central) {
      probe[k] = orig + cfg.h;
      const double fp = f(probe);
      probe[k] = orig - cfg.h;
      const double fm = f(probe);
      val = (fp - fm) / (2.0 * cfg.h);
    } else {
      probe[k] = orig + cfg.h;
      val = (f(probe) - f0) / cfg.h;
    }
    probe[k] = orig;
    if (!std::isfinite(val))
      throw OracleError("fd_gradient: non-finite evaluation at coordinate " + std::to_string(k));
    g[k] = val;
  }
  return g;
}

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   const FdConfig& cfg) {
  auto shape = x.shape;
  auto wrapped = [&](const Eigen::VectorXd& v) { return f(from_double(v, shape)); };
  return from_double(fd_gradient(wrapped, x.as_double(), cfg), shape);
}

double cos_sum(const std::vector<Eigen::VectorXd>& g_list) {
  if (g_list.size() < 2) throw DegenerateGradientError("cos_sum: need >= 2 gradients");
  for (const auto& g : g_list)
    if (g.norm() <= 1e-12) throw DegenerateGradientError("cos_sum: zero gradient in list");
  double sum = 0.0;
  for (std::size_t i = 0; i < g_list.size(); ++i)
    for (std::size_t j = i + 1; j < g_list.size(); ++j)
      sum += g_list[i].dot(g_list[j]) / (g_list[i].norm() * g_list[j].norm());
  return sum;
}

double cos_sum_at(const std::vector<const LossModel*>& surrogates, const Eigen::VectorXd& x,
                  const std::vector<int>& shape, const Tensor& y) {
  std::vector<Eigen::VectorXd> grads;
  grads.reserve(surrogates.size());
  for (const LossModel* m : surrogates) grads.push_back(m->grad64(x, shape, y));
  return cos_sum(grads);
}

double objective_st(const std::vector<const LossModel*>& surrogates, const Tensor& x,
                    const Tensor& y, double lambda1, double lambda2) {
  double mean_loss = 0.0;
  for (const LossModel* m : surrogates) mean_loss += m->loss(x, y);
  mean_loss /= static_cast<double>(surrogates.size());
  if (lambda2 == 0.0) return lambda1 * mean_loss;
  return lambda1 * mean_loss + lambda2 * cos_sum_at(surrogates, x.as_double(), x.shape, y);
}

TaylorReport taylor_error_sweep(const std::vector<const LossModel*>& surrogates,
                                const Tensor& x, const Tensor& y,
                                const std::vector<double>& betas, double cos_factor) {
  if (surrogates.size() < 2)
    throw DegenerateGradientError("taylor_error_sweep: need >= 2 surrogates");
  for (std::size_t i = 1; i < betas.size(); ++i)
    if (betas[i] >= betas[i - 1])
      throw std::invalid_argument("taylor_error_sweep: betas must be strictly decreasing");

  const Eigen::VectorXd xd = x.as_double();
  const int n = static_cast<int>(surrogates.size());

  // All orderings of the inner loop (capped for large ensembles): the
  // derivation's second-order term is an expectation over sweep orderings,
  // and a single fixed order carries an O(1) antisymmetric bias.
  std::vector<std::vector<int>> orders;
  std::vector<int> order(surrogates.size());
  std::iota(order.begin(), order.end(), 0);
  if (n <= 4) {
    do orders.push_back(order);
    while (std::next_permutation(order.begin(), order.end()));
  } else {
    RngStream shuffler(0x7a91, 0x5eed);
    for (int k = 0; k < 24; ++k) {
      for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(shuffler.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
      orders.push_back(order);
    }
  }

  // Oracle gradient of the pairwise cosine sum at x (beta-independent).
  auto cs = [&](const Eigen::VectorXd& p) { return cos_sum_at(surrogates, p, x.shape, y); };
  const Eigen::VectorXd oracle = fd_gradient(cs, xd, FdConfig{.h = 1e-3});
  const double oracle_norm = oracle.norm();
  const bool degenerate_oracle = oracle_norm <= 1e-9;

  TaylorReport report;
  report.betas = betas;
  // Probe with clipping disabled: huge epsilon, unbounded box.
  const double big = 1e30;
  const Eigen::VectorXd x_real = xd;
  for (double beta : betas) {
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(xd.size());
    for (const auto& ord : orders) {
      SweepResult sweep =
          st_inner_sweep(surrogates, xd, y, beta, big, x_real, ord, -big, big, x.shape);
      const double moved = (sweep.x_new - xd).lpNorm<Eigen::Infinity>();
      const double expected = beta * static_cast<double>(n);
      if (moved > expected * (1.0 + 1e-9) + 1e-15)
        throw ProbeInvalidError("taylor_error_sweep: clipping activated during probe");
      Eigen::VectorXd gm = mean_unit_gradient(sweep.grads_at_xt);
      gc += cos_residual(sweep.x_new, xd, beta, gm, n);
    }
    gc /= static_cast<double>(orders.size());
    double err;
    if (degenerate_oracle) {
      // Aligned surrogates: the cosine gradient vanishes, so measure the
      // residual directly on the beta scale (zero iff it cancels exactly).
      err = gc.norm() / beta;
    } else {
      Eigen::VectorXd approx = (cos_factor / (beta * beta)) * gc;
      err = (approx - oracle).norm() / oracle_norm;
    }
    if (!std::isfinite(err)) throw OracleError("taylor_error_sweep: non-finite error");
    report.errors.push_back(err);
  }

  // Least-squares slope of log(error) against log(beta).
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(betas.size());
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const double lx = std::log(betas[i]);
    const double ly = std::log(std::max(report.errors[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  report.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return report;
}

void taylor_report_csv(const TaylorReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "beta,relative_error\n";
  for (std::size_t i = 0; i < report.betas.size(); ++i)
    f << report.betas[i] << "," << report.errors[i] << "\n";
}

void taylor_report_json(const TaylorReport& report, const std::string& path, double slope_lo,
                        double slope_hi) {
  nlohmann::json j;
  j["betas"] = report.betas;
  j["errors"] = report.errors;
  j["slope"] = report.slope;
  j["pass"] = report.slope >= slope_lo && report.slope <= slope_hi;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << j.dump(2) << "\n";
}

Tensor sample_away_from_kinks(const std::vector<const Network*>& nets,
                              const std::vector<int>& shape, RngStream& rng, double margin,
                              int max_tries) {
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    Tensor x(shape);
    for (float& v : x.data) v = static_cast<float>(rng.uniform(0.1, 0.9));
    bool ok = true;
    for (const Network* net : nets)
      if (min_relu_preactivation(*net, x) < margin) {
        ok = false;
        break;
      }
    if (ok) return x;
  }
  throw OracleError("sample_away_from_kinks: no kink-free probe found");
}

QuadraticPair canonical_quadratic_pair() {
  Eigen::MatrixXd a1 = 1.2 * Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd a2 = -1.2 * Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd c1(2), c2(2);
  c1 << 1.0, 1.0;
  c2 << -1.0, 0.0;
  // Midpoint of the centers, nudged along the perpendicular bisector: the
  // gradient norms stay equal (so both sweep orderings agree) while the
  // small angle keeps the cosine gradient away from zero.
  Eigen::Vector2d mid(0.0, 0.5);
  Eigen::Vector2d perp = Eigen::Vector2d(1.0, -2.0).normalized();
  Eigen::Vector2d p = mid + 0.05 * perp;
  Tensor probe({2});
  probe[0] = static_cast<float>(p.x());
  probe[1] = static_cast<float>(p.y());
  return {QuadraticLoss(a1, c1), QuadraticLoss(a2, c2), probe};
}

namespace {

// Row-mixes the output layer so the logit Jacobian at the probe has
// orthonormal rows, and shifts its bias so the logits vanish there.
void calibrate_at_probe(Network& net, const Tensor& probe) {
  if (net.layers.size() != 3 || !std::holds_alternative<DenseLayer>(net.layers[0]) ||
      !std::holds_alternative<ReluLayer>(net.layers[1]) ||
      !std::holds_alternative<DenseLayer>(net.layers[2]))
    throw std::invalid_argument("calibrate_at_probe: expected Dense-Relu-Dense");
  auto& l1 = std::get<DenseLayer>(net.layers[0]);
  auto& l2 = std::get<DenseLayer>(net.layers[2]);
  const int d = l1.in, h = l1.out, k = l2.out;

  Eigen::MatrixXd w1(h, d), w2(k, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < d; ++c) w1(r, c) = l1.weight.data[static_cast<std::size_t>(r * d + c)];
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < h; ++c) w2(r, c) = l2.weight.data[static_cast<std::size_t>(r * h + c)];
  Eigen::VectorXd b1(h);
  for (int r = 0; r < h; ++r) b1[r] = l1.bias.data[static_cast<std::size_t>(r)];

  Eigen::VectorXd pre = w1 * probe.as_double() + b1;
  Eigen::VectorXd hidden = pre.cwiseMax(0.0);
  Eigen::MatrixXd jac = w2 * pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; })
                                 .asDiagonal()
                                 .toDenseMatrix() *
                        w1;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac * jac.transpose());
  if (es.eigenvalues().minCoeff() <= 1e-10)
    throw OracleError("calibrate_at_probe: rank-deficient logit Jacobian");
  Eigen::MatrixXd mix = es.operatorInverseSqrt();
  Eigen::MatrixXd w2_new = mix * w2;
  Eigen::VectorXd b2_new = -w2_new * hidden;

  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < h; ++c)
      l2.weight.data[static_cast<std::size_t>(r * h + c)] = static_cast<float>(w2_new(r, c));
    l2.bias.data[static_cast<std::size_t>(r)] = static_cast<float>(b2_new[r]);
  }
}

}  // namespace

CalibratedMlpPair make_calibrated_mlp_pair(std::uint64_t seed_a, std::uint64_t seed_b, int d,
                                           int num_classes) {
  CalibratedMlpPair pair;
  pair.a = build_network(ModelSpec{.arch = "mlp-s", .init_seed = seed_a}, {d}, num_classes);
  pair.b = build_network(ModelSpec{.arch = "mlp-s", .init_seed = seed_b}, {d}, num_classes);
  RngStream rng(seed_a * 1000003 + seed_b, 0xCA1B);
  pair.probe =
      sample_away_from_kinks({&pair.a, &pair.b}, {d}, rng, 0.05);
  calibrate_at_probe(pair.a, pair.probe);
  calibrate_at_probe(pair.b, pair.probe);
  pair.label = Tensor({num_classes});
  pair.label[0] = 1.0f;
  return pair;
}

}  // namespace st
