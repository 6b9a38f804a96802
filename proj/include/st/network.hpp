#pragma once

#include <memory>
#include <variant>
#include <vector>

#include "st/tensor.hpp"

namespace st {

// Layer set: enough architecture diversity for small dense/convolutional
// classifiers. Conv2D is stride 1, valid padding only.

struct DenseLayer {
  int in = 0;
  int out = 0;
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

struct ReluLayer {};

struct Conv2DLayer {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 0;
  Tensor weight;  // [out_ch, in_ch, k, k]
  Tensor bias;    // [out_ch]
};

struct FlattenLayer {};

using Layer = std::variant<DenseLayer, ReluLayer, Conv2DLayer, FlattenLayer>;

/// Ordered stack of layers ending in a logits head (no softmax layer).
/// Forward is a pure function of (params, input).
struct Network {
  std::vector<int> input_shape;  // [d] or [C,H,W]
  int num_classes = 0;
  std::vector<Layer> layers;

  int num_params() const;
  /// Flat little-endian-friendly view of all parameters, layer order.
  std::vector<float> flat_params() const;
  void set_flat_params(const std::vector<float>& p);
};

Tensor forward(const Network& net, const Tensor& x);

/// Fused softmax cross-entropy with max subtraction; float64 accumulation.
double cross_entropy(const Tensor& logits, const Tensor& y_onehot);

/// d(cross_entropy)/d(logits) = softmax(logits) - y.
Tensor softmax_minus_y(const Tensor& logits, const Tensor& y_onehot);

/// Gradient of cross_entropy(forward(net, x), y) with respect to x.
Tensor input_gradient(const Network& net, const Tensor& x, const Tensor& y);

double loss_of(const Network& net, const Tensor& x, const Tensor& y);

/// Float64 twins of forward / input_gradient: same math, double activations
/// end to end. The inner-sweep residual is rescaled by 2/beta^2, which would
/// amplify float32 forward rounding past the O(beta^2) signal, so the sweep
/// and the oracle query gradients through this path.
Eigen::VectorXd forward64(const Network& net, const Eigen::VectorXd& x);
Eigen::VectorXd input_gradient64(const Network& net, const Eigen::VectorXd& x, const Tensor& y);

struct ParamGrads {
  // One entry per parameterized layer, in layer order: {dW, db}.
  std::vector<std::pair<Tensor, Tensor>> grads;
};

/// Mean-over-batch parameter gradients of cross-entropy.
ParamGrads param_gradient(const Network& net, const std::vector<Tensor>& xs,
                          const std::vector<Tensor>& ys);

int argmax_class(const Tensor& logits);

/// Smallest |pre-activation| feeding any ReLU (infinity when none).
/// Used to keep finite-difference probes away from kinks.
double min_relu_preactivation(const Network& net, const Tensor& x);

/// Anything an attacker can query: a scalar loss and its input gradient.
/// Networks, quadratic toys and analytic landscape functions all fit.
class LossModel {
 public:
  virtual ~LossModel() = default;
  virtual double loss(const Tensor& x, const Tensor& y) const = 0;
  virtual Tensor grad(const Tensor& x, const Tensor& y) const = 0;
  /// Double-precision gradient for the sweep and the oracle. The default
  /// rounds through the float32 interface; models with an exact double
  /// path override it.
  virtual Eigen::VectorXd grad64(const Eigen::VectorXd& x, const std::vector<int>& shape,
                                 const Tensor& y) const {
    return grad(from_double(x, shape), y).as_double();
  }
};

class NetworkLoss final : public LossModel {
 public:
  explicit NetworkLoss(const Network& net) : net_(&net) {}
  double loss(const Tensor& x, const Tensor& y) const override {
    return loss_of(*net_, x, y);
  }
  Tensor grad(const Tensor& x, const Tensor& y) const override {
    return input_gradient(*net_, x, y);
  }
  Eigen::VectorXd grad64(const Eigen::VectorXd& x, const std::vector<int>&,
                         const Tensor& y) const override {
    return input_gradient64(*net_, x, y);
  }
  const Network& net() const { return *net_; }

 private:
  const Network* net_;
};

/// L(x) = 0.5 (x-c)^T A (x-c); ignores y. Test/oracle workhorse with a
/// closed-form gradient A(x-c).
class QuadraticLoss final : public LossModel {
 public:
  QuadraticLoss(Eigen::MatrixXd a, Eigen::VectorXd center)
      : a_(std::move(a)), center_(std::move(center)) {}
  double loss(const Tensor& x, const Tensor& y) const override;
  Tensor grad(const Tensor& x, const Tensor& y) const override;
  Eigen::VectorXd grad64(const Eigen::VectorXd& x, const std::vector<int>&,
                         const Tensor&) const override {
    return grad_exact(x);
  }
  Eigen::VectorXd grad_exact(const Eigen::VectorXd& x) const {
    return a_ * (x - center_);
  }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd center_;
};

}  // namespace st
