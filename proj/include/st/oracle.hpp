#pragma once

#include <functional>
#include <vector>

#include "st/network.hpp"
#include "st/tensor.hpp"

namespace st {

struct FdConfig {
  double h = 1e-3;
  enum class Scheme { Central, Forward } scheme = Scheme::Central;
};

/// Central (or forward) finite differences of a scalar function, coordinate
/// by coordinate. Independent ground truth for every gradient in the library.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, const FdConfig& cfg = {});

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   const FdConfig& cfg = {});

/// Sum over unordered pairs of cosine similarities of the given gradients.
double cos_sum(const std::vector<Eigen::VectorXd>& g_list);

/// Direct evaluation of the combined objective: lambda1 * mean loss +
/// lambda2 * pairwise gradient cosine sum.
double objective_st(const std::vector<const LossModel*>& surrogates, const Tensor& x,
                    const Tensor& y, double lambda1, double lambda2);

/// cos_sum as a function of x (surrogate gradients recomputed per probe).
double cos_sum_at(const std::vector<const LossModel*>& surrogates, const Eigen::VectorXd& x,
                  const std::vector<int>& shape, const Tensor& y);

struct TaylorReport {
  std::vector<double> betas;   // strictly decreasing
  std::vector<double> errors;  // relative L2 error per beta
  double slope = 0.0;          // fitted log-log slope
};

/// For each beta: run inner sweeps at x with clipping disabled (averaging the
/// residual over surrogate orderings, which realizes the expectation the
/// derivation takes over the inner loop), rescale by 2/beta^2 and compare
/// against the finite-difference gradient of cos_sum. The fitted slope
/// measures the error's order in beta. If the cosine gradient is numerically
/// zero (perfectly aligned surrogates), errors fall back to |g_cos|/beta,
/// which vanishes exactly when the residual does.
TaylorReport taylor_error_sweep(const std::vector<const LossModel*>& surrogates,
                                const Tensor& x, const Tensor& y,
                                const std::vector<double>& betas,
                                double cos_factor = 2.0);

void taylor_report_csv(const TaylorReport& report, const std::string& path);
void taylor_report_json(const TaylorReport& report, const std::string& path,
                        double slope_lo = 0.7, double slope_hi = 1.5);

/// Resamples x until no pre-activation of any surrogate network sits within
/// margin of a ReLU kink (finite differences across kinks corrupt checks).
Tensor sample_away_from_kinks(const std::vector<const Network*>& nets,
                              const std::vector<int>& shape, RngStream& rng,
                              double margin = 1e-4, int max_tries = 200);

/// Canonical 2-D quadratic toy pair for Taylor-law measurements: one convex
/// and one concave isotropic bowl. Isotropy makes the normalization Jacobian
/// symmetric, so the second-order sweep residual equals the cosine-sum
/// gradient exactly and the O(beta) error law is observable without an
/// O(1) floor. The probe sits on the perpendicular bisector of the centers,
/// slightly off-axis so the cosine gradient is nonzero but the two sweep
/// orderings stay within a few percent of each other.
struct QuadraticPair {
  QuadraticLoss f;
  QuadraticLoss g;
  Tensor probe;
};
QuadraticPair canonical_quadratic_pair();

/// Two tiny one-hidden-layer ReLU MLPs calibrated at a shared probe point so
/// that the first-order error law is observable there: the output layer is row-mixed to
/// make the logit Jacobian row-orthonormal (J J^T = I) and its bias shifted
/// so the logits vanish (uniform softmax). Under those two conditions the
/// loss Hessian and the gradient projector commute at the probe, so the
/// Taylor error of the sweep residual is O(beta) instead of plateauing.
struct CalibratedMlpPair {
  Network a;
  Network b;
  Tensor probe;
  Tensor label;
};
CalibratedMlpPair make_calibrated_mlp_pair(std::uint64_t seed_a, std::uint64_t seed_b, int d,
                                           int num_classes);

}  // namespace st
