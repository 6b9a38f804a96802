#pragma once

#include <string>
#include <vector>

#include "st/network.hpp"
#include "st/tensor.hpp"

namespace st {

enum class Aggregation { PerModelSweep, LossAverage };
enum class SurrogateOrder { Fixed, ReshuffleEachIter };
enum class InputTransform { None, DI, TI };
enum class OuterRule { Raw, MomentumSign };

/// Every knob of the ST attacker, its optimizer composition, and the
/// baselines. epsilon/alpha/beta are in [lo,hi] data units.
struct AttackConfig {
  float epsilon = 12.0f / 255.0f;
  int iters = 5;  // T
  double beta = 0.005;
  double lambda1 = 1.0;
  double lambda2 = 0.03;
  double mu = 1.0;
  float alpha = 12.0f / 255.0f / 5.0f;
  Aggregation aggregation = Aggregation::PerModelSweep;
  SurrogateOrder order = SurrogateOrder::Fixed;
  OuterRule outer = OuterRule::MomentumSign;
  double outer_scale = 1.0;  // scale on g_whole in Raw mode
  InputTransform transform = InputTransform::None;
  double di_p = 0.5;
  double di_max_resize = 0.1;
  int ti_kernel = 5;
  double ti_sigma = 1.5;
  bool use_vmi = false;
  int vmi_samples = 5;
  double vmi_radius_factor = 1.5;
  float lo = 0.0f;
  float hi = 1.0f;

  void validate() const;
};

struct MomentumState {
  Eigen::VectorXd m;  // empty until first use
};

struct TraceRow {
  int iter = 0;
  Tensor x_t;
  Tensor g_mean;
  Tensor g_cos;
  Tensor g_whole;
  std::vector<double> per_model_loss;
  std::vector<double> cosine_matrix;  // row-major n x n
  double linf_from_real = 0.0;
  bool degenerate_gradient = false;
};

struct AttackTrace {
  std::vector<TraceRow> rows;
  Tensor x_adv;
  /// Worst L-infinity budget excess seen over the whole trace (<= 0 when clean).
  double max_budget_violation(const Tensor& x_real, float epsilon, float lo, float hi) const;
  void to_jsonl(const std::string& path) const;
  void summary_csv(const std::string& path) const;
};

// --- primitive operations -------------------------------------------------

/// Elementwise clamp of x into [x_real - eps, x_real + eps] intersected
/// with [lo, hi]. Total function.
Tensor clip_ball(const Tensor& x, const Tensor& x_real, float epsilon, float lo, float hi);
Eigen::VectorXd clip_ball(const Eigen::VectorXd& x, const Eigen::VectorXd& x_real,
                          double epsilon, double lo, double hi);

/// g / ||g||_2, or zero with *degenerate set when ||g||_2 <= 1e-12.
Tensor normalize_l2(const Tensor& g, bool* degenerate = nullptr);
Eigen::VectorXd normalize_l2(const Eigen::VectorXd& g, bool* degenerate = nullptr);

Eigen::VectorXd mean_unit_gradient(const std::vector<Eigen::VectorXd>& g_list);

/// Residual of the inner sweep after removing its first-order part.
/// The sweep displaces by beta * sum of unit gradients, so the subtraction
/// uses beta * n_models * g_mean; what survives is (beta^2/2) times the
/// gradient of the pairwise cosine sum, up to O(beta^3).
Eigen::VectorXd cos_residual(const Eigen::VectorXd& x_new, const Eigen::VectorXd& x_t,
                             double beta, const Eigen::VectorXd& g_mean, int n_models);
Eigen::VectorXd whole_direction(const Eigen::VectorXd& g_mean, const Eigen::VectorXd& g_cos,
                                double lambda1, double lambda2, double beta);

struct SweepResult {
  Eigen::VectorXd x_new;
  std::vector<Eigen::VectorXd> grads_at_xt;  // fresh pass at x_t
  bool degenerate = false;
};

/// One sequential pass over the surrogates: each contributes a clipped
/// normalized-gradient step of size beta. Bookkeeping runs in float64 so
/// the O(beta^2) residual survives subtraction.
SweepResult st_inner_sweep(const std::vector<const LossModel*>& surrogates,
                           const Eigen::VectorXd& x_t, const Tensor& y, double beta,
                           double epsilon, const Eigen::VectorXd& x_real,
                           const std::vector<int>& order, double lo, double hi,
                           const std::vector<int>& x_shape);

struct StStepResult {
  Eigen::VectorXd x_next;
  TraceRow row;
};

StStepResult st_step(const std::vector<const LossModel*>& surrogates,
                     const Eigen::VectorXd& x_t, const Eigen::VectorXd& x_real,
                     const Tensor& y, const AttackConfig& cfg, MomentumState& state,
                     RngStream& rng, int iter, const std::vector<int>& x_shape);

/// Full ST attack: T outer iterations of st_step from x_real.
AttackTrace run_st(const std::vector<const LossModel*>& surrogates, const Tensor& x_real,
                   const Tensor& y, const AttackConfig& cfg, RngStream rng);

// --- baselines --------------------------------------------------------------

/// With probability p: nearest-neighbor downscale and random zero-pad back.
Tensor di_transform(const Tensor& x, double p, double max_resize, RngStream& rng);

/// Depthwise Gaussian smoothing of an image-shaped gradient; kernel sums to 1.
Tensor ti_smooth(const Tensor& g, int kernel_size, double sigma);

AttackTrace run_fgsm(const std::vector<const LossModel*>& models, const Tensor& x_real,
                     const Tensor& y, const AttackConfig& cfg);

/// Iterative sign-step family: BIM (mu=0), MI (mu>0), DI-MI / TI-MI via
/// cfg.transform, VMI via cfg.use_vmi.
AttackTrace run_iterative(const std::vector<const LossModel*>& models, const Tensor& x_real,
                          const Tensor& y, const AttackConfig& cfg, RngStream rng);

/// Pairwise cosine-similarity matrix of per-model input gradients at x.
std::vector<double> pairwise_cosines(const std::vector<const LossModel*>& models,
                                     const Tensor& x, const Tensor& y);
double mean_pairwise_cosine(const std::vector<const LossModel*>& models, const Tensor& x,
                            const Tensor& y);

}  // namespace st
