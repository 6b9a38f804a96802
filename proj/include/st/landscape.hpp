#pragma once

#include <string>
#include <vector>

#include "st/network.hpp"
#include "st/tensor.hpp"

namespace st {

/// Sum of Gaussian bumps on the plane, with closed-form gradient.
struct GaussianBump {
  double cx = 0.0;
  double cy = 0.0;
  double amplitude = 1.0;
  double width = 1.0;
};

class AnalyticFn {
 public:
  explicit AnalyticFn(std::vector<GaussianBump> bumps);
  double eval(double x, double y) const;
  Eigen::Vector2d grad(double x, double y) const;
  const std::vector<GaussianBump>& bumps() const { return bumps_; }

 private:
  std::vector<GaussianBump> bumps_;
};

/// Exposes f as a loss; the attack machinery ascends losses, so it climbs f.
class AnalyticLoss final : public LossModel {
 public:
  explicit AnalyticLoss(const AnalyticFn& fn) : fn_(&fn) {}
  double loss(const Tensor& x, const Tensor&) const override {
    return fn_->eval(x[0], x[1]);
  }
  Tensor grad(const Tensor& x, const Tensor&) const override {
    Eigen::Vector2d g = fn_->grad(x[0], x[1]);
    return Tensor({2}, {static_cast<float>(g.x()), static_cast<float>(g.y())});
  }
  Eigen::VectorXd grad64(const Eigen::VectorXd& x, const std::vector<int>&,
                         const Tensor&) const override {
    return fn_->grad(x[0], x[1]);
  }

 private:
  const AnalyticFn* fn_;
};

enum class AscentMethod { SumAscent, St };
enum class Terminal { SharedOptimum, SumOptimum, Diverged, Undecided };

struct Trajectory {
  std::vector<Eigen::Vector2d> points;
  std::vector<double> gmean_norm;
  std::vector<double> gcos_norm;
  Eigen::Vector2d terminal = Eigen::Vector2d::Zero();
  Terminal classification = Terminal::Undecided;
};

struct LandscapeConfig {
  int steps = 400;
  double step_size = 0.02;
  double beta = 1e-3;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double capture_radius = 0.15;
  Eigen::Vector2d shared_optimum = Eigen::Vector2d(1.0, 1.0);
  Eigen::Vector2d sum_optimum = Eigen::Vector2d(-1.0, 0.0);
};

/// The canonical two-function landscape: f and g share a bump at (1,1);
/// f alone has a dominant bump at (-1,0). Sum-ascent from the contested
/// region climbs f+g into the dominant bump; ST heads for the shared one.
struct CanonicalLandscape {
  AnalyticFn f;
  AnalyticFn g;
};
CanonicalLandscape canonical_landscape();

Trajectory trace(const AnalyticFn& f, const AnalyticFn& g, const Eigen::Vector2d& start,
                 AscentMethod method, const LandscapeConfig& cfg);

void export_grid(const AnalyticFn& f, const AnalyticFn& g, double lo, double hi,
                 int resolution, const std::string& path);

void trajectory_jsonl(const Trajectory& traj, const std::string& path);

}  // namespace st
