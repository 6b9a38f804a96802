#include "st/landscape.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "st/attacks.hpp"

namespace st {

AnalyticFn::AnalyticFn(std::vector<GaussianBump> bumps) : bumps_(std::move(bumps)) {
  for (const auto& b : bumps_)
    if (b.width <= 0.0) throw std::invalid_argument("AnalyticFn: bump width must be positive");
}

double AnalyticFn::eval(double x, double y) const {
  double v = 0.0;
  for (const auto& b : bumps_) {
    const double dx = x - b.cx, dy = y - b.cy;
    v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
  }
  return v;
}

Eigen::Vector2d AnalyticFn::grad(double x, double y) const {
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (const auto& b : bumps_) {
    const double dx = x - b.cx, dy = y - b.cy;
    const double w2 = b.width * b.width;
    const double e = b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * w2)) / w2;
    g.x() -= dx * e;
    g.y() -= dy * e;
  }
  return g;
}

CanonicalLandscape canonical_landscape() {
  // Documented constants: a shared bump at (1,1) in both functions and a
  // dominant f-only bump at (-1,0). Widths sized so the contested region
  // around the origin feels both pulls.
  AnalyticFn f({{.cx = 1.0, .cy = 1.0, .amplitude = 1.0, .width = 0.55},
                {.cx = -1.0, .cy = 0.0, .amplitude = 2.5, .width = 0.55}});
  AnalyticFn g({{.cx = 1.0, .cy = 1.0, .amplitude = 1.0, .width = 0.55}});
  return {std::move(f), std::move(g)};
}

namespace {

Terminal classify(const Eigen::Vector2d& p, const LandscapeConfig& cfg) {
  if (!p.allFinite()) return Terminal::Diverged;
  if ((p - cfg.shared_optimum).norm() <= cfg.capture_radius) return Terminal::SharedOptimum;
  if ((p - cfg.sum_optimum).norm() <= cfg.capture_radius) return Terminal::SumOptimum;
  return Terminal::Undecided;
}

}  // namespace

Trajectory trace(const AnalyticFn& f, const AnalyticFn& g, const Eigen::Vector2d& start,
                 AscentMethod method, const LandscapeConfig& cfg) {
  Trajectory traj;
  AnalyticLoss lf(f), lg(g);
  const std::vector<const LossModel*> models = {&lf, &lg};
  const std::vector<int> order = {0, 1};
  const std::vector<int> shape = {2};
  const Tensor y_dummy({1});
  const double big = 1e30;

  Eigen::VectorXd p(2);
  p << start.x(), start.y();
  traj.points.emplace_back(start);

  for (int s = 0; s < cfg.steps; ++s) {
    Eigen::VectorXd dir;
    if (method == AscentMethod::SumAscent) {
      Eigen::Vector2d gr = f.grad(p[0], p[1]) + g.grad(p[0], p[1]);
      dir = gr;
      traj.gmean_norm.push_back(gr.norm());
      traj.gcos_norm.push_back(0.0);
    } else {
      // Same inner-sweep code path the attacks use, on the wrapped functions.
      SweepResult sweep =
          st_inner_sweep(models, p, y_dummy, cfg.beta, big, p, order, -big, big, shape);
      Eigen::VectorXd gm = mean_unit_gradient(sweep.grads_at_xt);
      Eigen::VectorXd gc =
          cos_residual(sweep.x_new, p, cfg.beta, gm, static_cast<int>(models.size()));
      dir = whole_direction(gm, gc, cfg.lambda1, cfg.lambda2, cfg.beta);
      traj.gmean_norm.push_back(gm.norm());
      traj.gcos_norm.push_back(gc.norm());
    }
    const double n = dir.norm();
    if (n < 1e-12 || !dir.allFinite()) break;  // flat or degenerate: stop where we are
    p += cfg.step_size * dir / n;
    traj.points.emplace_back(p[0], p[1]);
    if (!p.allFinite()) break;
  }
  traj.terminal = traj.points.back();
  traj.classification = classify(traj.terminal, cfg);
  return traj;
}

void export_grid(const AnalyticFn& f, const AnalyticFn& g, double lo, double hi, int resolution,
                 const std::string& path) {
  if (resolution < 2) throw std::invalid_argument("export_grid: resolution must be >= 2");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "x,y,f,g,f_plus_g,cos_grad\n";
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j) {
      const double x = lo + (hi - lo) * i / (resolution - 1);
      const double y = lo + (hi - lo) * j / (resolution - 1);
      const double fv = f.eval(x, y), gv = g.eval(x, y);
      Eigen::Vector2d gf = f.grad(x, y), gg = g.grad(x, y);
      const double denom = gf.norm() * gg.norm();
      const double cos = denom > 1e-12 ? gf.dot(gg) / denom : 0.0;
      out << x << "," << y << "," << fv << "," << gv << "," << (fv + gv) << "," << cos << "\n";
    }
}

void trajectory_jsonl(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    nlohmann::json j;
    j["step"] = i;
    j["x"] = traj.points[i].x();
    j["y"] = traj.points[i].y();
    if (i < traj.gmean_norm.size()) {
      j["gmean_norm"] = traj.gmean_norm[i];
      j["gcos_norm"] = traj.gcos_norm[i];
    }
    out << j.dump() << "\n";
  }
}

}  // namespace st
