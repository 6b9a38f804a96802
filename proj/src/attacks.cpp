#include "st/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "st/errors.hpp"

namespace st {

namespace {

constexpr double kZeroTau = 1e-12;

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Round a double iterate to float32 without letting the rounding step exit
// the epsilon ball or the box: an in-ball double can round half an ULP out.
Tensor from_double_in_ball(const Eigen::VectorXd& x, const std::vector<int>& shape,
                           const Eigen::VectorXd& x_real, float epsilon, float lo, float hi) {
  Tensor out = from_double(x, shape);
  for (int i = 0; i < out.size(); ++i) {
    const float xr = static_cast<float>(x_real[i]);
    float v = std::clamp(out[i], lo, hi);
    while (std::abs(static_cast<double>(v) - static_cast<double>(xr)) >
           static_cast<double>(epsilon))
      v = std::nextafterf(v, xr);
    out[i] = v;
  }
  return out;
}

Eigen::VectorXd model_grad(const LossModel& model, const Eigen::VectorXd& x,
                           const std::vector<int>& shape, const Tensor& y) {
  return model.grad64(x, shape, y);
}

}  // namespace

void AttackConfig::validate() const {
  if (epsilon <= 0.0f) throw ConfigError("AttackConfig: epsilon must be positive");
  if (iters < 1) throw ConfigError("AttackConfig: T must be >= 1");
  if (beta <= 0.0) throw ConfigError("AttackConfig: beta must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("AttackConfig: lambdas must be >= 0");
  if (mu < 0.0) throw ConfigError("AttackConfig: mu must be >= 0");
  if (lo >= hi) throw ConfigError("AttackConfig: lo must be < hi");
  if (ti_kernel % 2 == 0) throw std::invalid_argument("AttackConfig: TI kernel size must be odd");
  if (vmi_samples < 1) throw ConfigError("AttackConfig: vmi_samples must be >= 1");
}

Tensor clip_ball(const Tensor& x, const Tensor& x_real, float epsilon, float lo, float hi) {
  if (!x.same_shape(x_real)) throw std::invalid_argument("clip_ball: shape mismatch");
  Tensor out = x;
  for (int i = 0; i < out.size(); ++i) {
    float v = std::clamp(out[i], x_real[i] - epsilon, x_real[i] + epsilon);
    out[i] = std::clamp(v, lo, hi);
  }
  return out;
}

Eigen::VectorXd clip_ball(const Eigen::VectorXd& x, const Eigen::VectorXd& x_real,
                          double epsilon, double lo, double hi) {
  Eigen::ArrayXd out = x.array().max(x_real.array() - epsilon).min(x_real.array() + epsilon);
  return out.max(lo).min(hi).matrix();
}

Eigen::VectorXd normalize_l2(const Eigen::VectorXd& g, bool* degenerate) {
  const double n = g.norm();
  if (n <= kZeroTau) {
    if (degenerate) *degenerate = true;
    return Eigen::VectorXd::Zero(g.size());
  }
  return g / n;
}

Tensor normalize_l2(const Tensor& g, bool* degenerate) {
  return from_double(normalize_l2(g.as_double(), degenerate), g.shape);
}

Eigen::VectorXd mean_unit_gradient(const std::vector<Eigen::VectorXd>& g_list) {
  if (g_list.empty()) throw std::invalid_argument("mean_unit_gradient: empty gradient list");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(g_list[0].size());
  for (const auto& g : g_list) acc += normalize_l2(g);
  return acc / static_cast<double>(g_list.size());
}

Eigen::VectorXd cos_residual(const Eigen::VectorXd& x_new, const Eigen::VectorXd& x_t,
                             double beta, const Eigen::VectorXd& g_mean, int n_models) {
  if (n_models < 1) throw std::invalid_argument("cos_residual: n_models must be >= 1");
  return x_new - x_t - beta * static_cast<double>(n_models) * g_mean;
}

Eigen::VectorXd whole_direction(const Eigen::VectorXd& g_mean, const Eigen::VectorXd& g_cos,
                                double lambda1, double lambda2, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("whole_direction: beta must be positive");
  return lambda1 * g_mean + (2.0 * lambda2 / (beta * beta)) * g_cos;
}

SweepResult st_inner_sweep(const std::vector<const LossModel*>& surrogates,
                           const Eigen::VectorXd& x_t, const Tensor& y, double beta,
                           double epsilon, const Eigen::VectorXd& x_real,
                           const std::vector<int>& order, double lo, double hi,
                           const std::vector<int>& x_shape) {
  if (surrogates.empty()) throw std::invalid_argument("st_inner_sweep: need >= 1 surrogate");
  SweepResult res;
  Eigen::VectorXd point = x_t;
  for (int idx : order) {
    Eigen::VectorXd g = model_grad(*surrogates[static_cast<std::size_t>(idx)], point, x_shape, y);
    Eigen::VectorXd unit = normalize_l2(g, &res.degenerate);
    point = clip_ball(point + beta * unit, x_real, epsilon, lo, hi);
  }
  res.x_new = std::move(point);
  // Fresh pass at x_t: g_mean wants gradients at x_t, not at sweep points.
  res.grads_at_xt.reserve(surrogates.size());
  for (const LossModel* m : surrogates) res.grads_at_xt.push_back(model_grad(*m, x_t, x_shape, y));
  return res;
}

namespace {

std::vector<double> cosine_matrix_of(const std::vector<Eigen::VectorXd>& grads) {
  const int n = static_cast<int>(grads.size());
  std::vector<double> mat(static_cast<std::size_t>(n * n), 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double d = grads[static_cast<std::size_t>(i)].norm() * grads[static_cast<std::size_t>(j)].norm();
      mat[static_cast<std::size_t>(i * n + j)] =
          d <= kZeroTau ? 0.0 : grads[static_cast<std::size_t>(i)].dot(grads[static_cast<std::size_t>(j)]) / d;
    }
  return mat;
}

}  // namespace

StStepResult st_step(const std::vector<const LossModel*>& surrogates,
                     const Eigen::VectorXd& x_t, const Eigen::VectorXd& x_real,
                     const Tensor& y, const AttackConfig& cfg, MomentumState& state,
                     RngStream& rng, int iter, const std::vector<int>& x_shape) {
  std::vector<int> order(surrogates.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.order == SurrogateOrder::ReshuffleEachIter) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
  }

  SweepResult sweep = st_inner_sweep(surrogates, x_t, y, cfg.beta, cfg.epsilon, x_real, order,
                                     cfg.lo, cfg.hi, x_shape);
  Eigen::VectorXd gm = mean_unit_gradient(sweep.grads_at_xt);
  Eigen::VectorXd gc =
      cos_residual(sweep.x_new, x_t, cfg.beta, gm, static_cast<int>(surrogates.size()));
  Eigen::VectorXd gw = whole_direction(gm, gc, cfg.lambda1, cfg.lambda2, cfg.beta);

  StStepResult out;
  out.row.iter = iter;
  out.row.degenerate_gradient = sweep.degenerate;

  Eigen::VectorXd x_next;
  if (cfg.outer == OuterRule::Raw) {
    x_next = clip_ball(x_t + cfg.outer_scale * gw, x_real, cfg.epsilon, cfg.lo, cfg.hi);
  } else {
    if (state.m.size() == 0) state.m = Eigen::VectorXd::Zero(x_t.size());
    const double l1 = gw.lpNorm<1>();
    if (l1 <= kZeroTau) {
      state.m = cfg.mu * state.m + gw;
      out.row.degenerate_gradient = true;
    } else {
      state.m = cfg.mu * state.m + gw / l1;
    }
    Eigen::VectorXd step = state.m.unaryExpr([](double v) { return sgn(v); });
    x_next = clip_ball(x_t + static_cast<double>(cfg.alpha) * step, x_real, cfg.epsilon, cfg.lo,
                       cfg.hi);
  }

  out.row.x_t = from_double_in_ball(x_t, x_shape, x_real, cfg.epsilon, cfg.lo, cfg.hi);
  out.row.g_mean = from_double(gm, x_shape);
  out.row.g_cos = from_double(gc, x_shape);
  out.row.g_whole = from_double(gw, x_shape);
  out.row.cosine_matrix = cosine_matrix_of(sweep.grads_at_xt);
  out.row.per_model_loss.reserve(surrogates.size());
  Tensor xt_f = from_double(x_t, x_shape);
  for (const LossModel* m : surrogates) out.row.per_model_loss.push_back(m->loss(xt_f, y));
  out.row.linf_from_real = (x_next - x_real).lpNorm<Eigen::Infinity>();
  out.x_next = std::move(x_next);
  return out;
}

AttackTrace run_st(const std::vector<const LossModel*>& surrogates, const Tensor& x_real,
                   const Tensor& y, const AttackConfig& cfg, RngStream rng) {
  cfg.validate();
  AttackTrace trace;
  Eigen::VectorXd xr = x_real.as_double();
  Eigen::VectorXd x = xr;
  MomentumState state;
  for (int t = 0; t < cfg.iters; ++t) {
    StStepResult step = st_step(surrogates, x, xr, y, cfg, state, rng, t, x_real.shape);
    x = std::move(step.x_next);
    trace.rows.push_back(std::move(step.row));
  }
  trace.x_adv = from_double_in_ball(x, x_real.shape, xr, cfg.epsilon, cfg.lo, cfg.hi);
  return trace;
}

Tensor di_transform(const Tensor& x, double p, double max_resize, RngStream& rng) {
  if (x.shape.size() != 3)
    throw std::invalid_argument("di_transform: requires image-shaped input [C,H,W]");
  if (rng.uniform() >= p) return x;
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int min_h = std::max(1, static_cast<int>(std::ceil(h * (1.0 - max_resize))));
  const int min_w = std::max(1, static_cast<int>(std::ceil(w * (1.0 - max_resize))));
  const int nh = min_h + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - min_h + 1)));
  const int nw = min_w + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - min_w + 1)));
  const int off_i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - nh + 1)));
  const int off_j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - nw + 1)));
  Tensor out(x.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < nh; ++i)
      for (int j = 0; j < nw; ++j) {
        const int si = std::min(h - 1, i * h / nh);
        const int sj = std::min(w - 1, j * w / nw);
        out.data[(ch * h + off_i + i) * w + off_j + j] = x.data[(ch * h + si) * w + sj];
      }
  return out;
}

Tensor ti_smooth(const Tensor& g, int kernel_size, double sigma) {
  if (kernel_size % 2 == 0) throw std::invalid_argument("ti_smooth: kernel size must be odd");
  if (kernel_size == 1) return g;
  if (g.shape.size() != 3) throw std::invalid_argument("ti_smooth: requires image-shaped gradient");
  const int k = kernel_size, r = k / 2;
  std::vector<double> kernel(static_cast<std::size_t>(k * k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double v = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * sigma * sigma));
      kernel[static_cast<std::size_t>(i * k + j)] = v;
      sum += v;
    }
  for (double& v : kernel) v /= sum;

  const int c = g.shape[0], h = g.shape[1], w = g.shape[2];
  Tensor out(g.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int ki = -r; ki <= r; ++ki)
          for (int kj = -r; kj <= r; ++kj) {
            const int si = i + ki, sj = j + kj;
            if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
            acc += kernel[static_cast<std::size_t>((ki + r) * k + (kj + r))] *
                   g.data[(ch * h + si) * w + sj];
          }
        out.data[(ch * h + i) * w + j] = static_cast<float>(acc);
      }
  return out;
}

namespace {

// Ensemble gradient via mean of per-model losses (the classical reading of
// attacking (1/n) sum L_i). Optionally routes each model's input through DI.
Eigen::VectorXd ensemble_grad(const std::vector<const LossModel*>& models,
                              const Eigen::VectorXd& x, const std::vector<int>& shape,
                              const Tensor& y, const AttackConfig& cfg, RngStream& rng) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
  Tensor xf = from_double(x, shape);
  for (const LossModel* m : models) {
    Tensor in = xf;
    if (cfg.transform == InputTransform::DI)
      in = di_transform(xf, cfg.di_p, cfg.di_max_resize, rng);
    acc += m->grad(in, y).as_double();
  }
  acc /= static_cast<double>(models.size());
  if (cfg.transform == InputTransform::TI) {
    Tensor smoothed = ti_smooth(from_double(acc, shape), cfg.ti_kernel, cfg.ti_sigma);
    acc = smoothed.as_double();
  }
  return acc;
}

TraceRow make_row(const std::vector<const LossModel*>& models, const Eigen::VectorXd& x_t,
                  const Eigen::VectorXd& x_real, const Tensor& y, int iter,
                  const std::vector<int>& shape, const AttackConfig& cfg) {
  TraceRow row;
  row.iter = iter;
  row.x_t = from_double_in_ball(x_t, shape, x_real, cfg.epsilon, cfg.lo, cfg.hi);
  std::vector<Eigen::VectorXd> grads;
  grads.reserve(models.size());
  for (const LossModel* m : models) {
    row.per_model_loss.push_back(m->loss(row.x_t, y));
    grads.push_back(m->grad(row.x_t, y).as_double());
  }
  row.cosine_matrix = cosine_matrix_of(grads);
  row.linf_from_real = (x_t - x_real).lpNorm<Eigen::Infinity>();
  return row;
}

}  // namespace

AttackTrace run_fgsm(const std::vector<const LossModel*>& models, const Tensor& x_real,
                     const Tensor& y, const AttackConfig& cfg) {
  cfg.validate();
  AttackTrace trace;
  Eigen::VectorXd xr = x_real.as_double();
  RngStream rng(0, 0);
  Eigen::VectorXd g = ensemble_grad(models, xr, x_real.shape, y, cfg, rng);
  Eigen::VectorXd x =
      clip_ball(xr + static_cast<double>(cfg.epsilon) * g.unaryExpr([](double v) { return sgn(v); }),
                xr, cfg.epsilon, cfg.lo, cfg.hi);
  trace.rows.push_back(make_row(models, x, xr, y, 0, x_real.shape, cfg));
  trace.x_adv = from_double_in_ball(x, x_real.shape, xr, cfg.epsilon, cfg.lo, cfg.hi);
  return trace;
}

AttackTrace run_iterative(const std::vector<const LossModel*>& models, const Tensor& x_real,
                          const Tensor& y, const AttackConfig& cfg, RngStream rng) {
  cfg.validate();
  AttackTrace trace;
  Eigen::VectorXd xr = x_real.as_double();
  Eigen::VectorXd x = xr;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(xr.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(xr.size());  // VMI variance state

  for (int t = 0; t < cfg.iters; ++t) {
    Eigen::VectorXd g = ensemble_grad(models, x, x_real.shape, y, cfg, rng);
    Eigen::VectorXd dir = g;
    if (cfg.use_vmi) {
      dir = g + v;
      // Variance term around the current point for the next iteration.
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(xr.size());
      const double radius = cfg.vmi_radius_factor * static_cast<double>(cfg.epsilon);
      for (int s = 0; s < cfg.vmi_samples; ++s) {
        Eigen::VectorXd xp = x;
        for (Eigen::Index i = 0; i < xp.size(); ++i) xp[i] += rng.uniform(-radius, radius);
        acc += ensemble_grad(models, xp, x_real.shape, y, cfg, rng);
      }
      v = acc / static_cast<double>(cfg.vmi_samples) - g;
    }
    const double l1 = dir.lpNorm<1>();
    bool degenerate = l1 <= kZeroTau;
    if (degenerate)
      m = cfg.mu * m + dir;
    else
      m = cfg.mu * m + dir / l1;
    TraceRow row = make_row(models, x, xr, y, t, x_real.shape, cfg);
    row.degenerate_gradient = degenerate;
    Eigen::VectorXd step = m.unaryExpr([](double vv) { return sgn(vv); });
    x = clip_ball(x + static_cast<double>(cfg.alpha) * step, xr, cfg.epsilon, cfg.lo, cfg.hi);
    row.linf_from_real = (x - xr).lpNorm<Eigen::Infinity>();
    trace.rows.push_back(std::move(row));
  }
  trace.x_adv = from_double_in_ball(x, x_real.shape, xr, cfg.epsilon, cfg.lo, cfg.hi);
  return trace;
}

std::vector<double> pairwise_cosines(const std::vector<const LossModel*>& models,
                                     const Tensor& x, const Tensor& y) {
  std::vector<Eigen::VectorXd> grads;
  grads.reserve(models.size());
  for (const LossModel* m : models) grads.push_back(m->grad(x, y).as_double());
  return cosine_matrix_of(grads);
}

double mean_pairwise_cosine(const std::vector<const LossModel*>& models, const Tensor& x,
                            const Tensor& y) {
  const int n = static_cast<int>(models.size());
  if (n < 2) throw std::invalid_argument("mean_pairwise_cosine: need >= 2 models");
  std::vector<double> mat = pairwise_cosines(models, x, y);
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      sum += mat[static_cast<std::size_t>(i * n + j)];
      ++count;
    }
  return sum / count;
}

double AttackTrace::max_budget_violation(const Tensor& x_real, float epsilon, float lo,
                                         float hi) const {
  double worst = -1e30;
  auto check = [&](const Tensor& x) {
    double linf = 0.0, box = -1e30;
    for (int i = 0; i < x.size(); ++i) {
      linf = std::max(linf, std::abs(static_cast<double>(x[i]) - x_real[i]));
      box = std::max(box, std::max(static_cast<double>(lo) - x[i], static_cast<double>(x[i]) - hi));
    }
    worst = std::max(worst, std::max(linf - static_cast<double>(epsilon), box));
  };
  for (const auto& row : rows) check(row.x_t);
  check(x_adv);
  return worst;
}

void AttackTrace::to_jsonl(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (const auto& row : rows) {
    nlohmann::json j;
    j["iter"] = row.iter;
    j["x_t"] = row.x_t.data;
    j["g_mean"] = row.g_mean.data;
    j["g_cos"] = row.g_cos.data;
    j["g_whole"] = row.g_whole.data;
    j["per_model_loss"] = row.per_model_loss;
    j["cosine_matrix"] = row.cosine_matrix;
    j["linf_from_real"] = row.linf_from_real;
    j["degenerate_gradient"] = row.degenerate_gradient;
    f << j.dump() << "\n";
  }
}

void AttackTrace::summary_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "iter,mean_loss,linf_from_real,gmean_norm,gcos_norm,gwhole_norm,degenerate\n";
  for (const auto& row : rows) {
    double mean_loss = 0.0;
    for (double l : row.per_model_loss) mean_loss += l;
    if (!row.per_model_loss.empty()) mean_loss /= static_cast<double>(row.per_model_loss.size());
    f << row.iter << "," << mean_loss << "," << row.linf_from_real << "," << norm_l2(row.g_mean)
      << "," << norm_l2(row.g_cos) << "," << norm_l2(row.g_whole) << ","
      << (row.degenerate_gradient ? 1 : 0) << "\n";
  }
}

}  // namespace st
