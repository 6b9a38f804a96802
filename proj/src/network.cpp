#include "st/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "st/errors.hpp"

namespace st {

namespace {

using Eigen::Map;
using Eigen::MatrixXf;
using Eigen::VectorXf;

std::vector<int> layer_out_shape(const Layer& layer, const std::vector<int>& in_shape) {
  if (std::holds_alternative<DenseLayer>(layer)) {
    const auto& d = std::get<DenseLayer>(layer);
    if (in_shape.size() != 1 || in_shape[0] != d.in)
      throw ConfigError("Dense layer expects input [" + std::to_string(d.in) + "], got " +
                        shape_str(in_shape));
    return {d.out};
  }
  if (std::holds_alternative<Conv2DLayer>(layer)) {
    const auto& c = std::get<Conv2DLayer>(layer);
    if (in_shape.size() != 3 || in_shape[0] != c.in_ch)
      throw ConfigError("Conv2D expects input [C,H,W] with C=" + std::to_string(c.in_ch) +
                        ", got " + shape_str(in_shape));
    int h = in_shape[1] - c.kernel + 1;
    int w = in_shape[2] - c.kernel + 1;
    if (h <= 0 || w <= 0) throw ConfigError("Conv2D kernel larger than input");
    return {c.out_ch, h, w};
  }
  if (std::holds_alternative<FlattenLayer>(layer)) return {shape_size(in_shape)};
  return in_shape;  // ReLU
}

Tensor dense_forward(const DenseLayer& d, const Tensor& x) {
  Tensor out({d.out});
  Map<const MatrixXf> w(d.weight.data.data(), d.in, d.out);  // column-major view of [out,in] row-major
  out.vec() = w.transpose() * x.vec() + d.bias.vec();
  return out;
}

Tensor conv_forward(const Conv2DLayer& c, const Tensor& x) {
  const int h = x.shape[1], w = x.shape[2];
  const int oh = h - c.kernel + 1, ow = w - c.kernel + 1;
  Tensor out({c.out_ch, oh, ow});
  auto in_at = [&](int ic, int i, int j) { return x.data[(ic * h + i) * w + j]; };
  auto w_at = [&](int oc, int ic, int ki, int kj) {
    return c.weight.data[((oc * c.in_ch + ic) * c.kernel + ki) * c.kernel + kj];
  };
  for (int oc = 0; oc < c.out_ch; ++oc)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = c.bias.data[oc];
        for (int ic = 0; ic < c.in_ch; ++ic)
          for (int ki = 0; ki < c.kernel; ++ki)
            for (int kj = 0; kj < c.kernel; ++kj)
              acc += static_cast<double>(w_at(oc, ic, ki, kj)) * in_at(ic, i + ki, j + kj);
        out.data[(oc * oh + i) * ow + j] = static_cast<float>(acc);
      }
  return out;
}

Tensor layer_forward(const Layer& layer, const Tensor& x) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return dense_forward(*d, x);
  if (const auto* c = std::get_if<Conv2DLayer>(&layer)) return conv_forward(*c, x);
  if (std::holds_alternative<FlattenLayer>(layer)) {
    Tensor out({x.size()});
    out.data = x.data;
    return out;
  }
  // ReLU
  Tensor out = x;
  for (float& v : out.data) v = std::max(v, 0.0f);
  return out;
}

struct BackwardPack {
  Tensor input_grad;
  std::vector<std::pair<Tensor, Tensor>> param_grads;  // per parameterized layer
};

// Runs forward caching per-layer inputs, then backward from dlogits.
BackwardPack backward(const Network& net, const Tensor& x, const Tensor& dlogits,
                      bool want_params) {
  std::vector<Tensor> acts;
  acts.reserve(net.layers.size() + 1);
  acts.push_back(x);
  for (const auto& layer : net.layers) acts.push_back(layer_forward(layer, acts.back()));

  BackwardPack pack;
  if (want_params) {
    for (const auto& layer : net.layers)
      if (std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<Conv2DLayer>(layer))
        pack.param_grads.emplace_back(Tensor{}, Tensor{});
  }

  Tensor delta = dlogits;
  int pidx = static_cast<int>(pack.param_grads.size());
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Layer& layer = net.layers[static_cast<std::size_t>(li)];
    const Tensor& in = acts[static_cast<std::size_t>(li)];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      if (want_params) {
        --pidx;
        Tensor dw({d->out, d->in});
        Tensor db({d->out});
        Map<MatrixXf> dwm(dw.data.data(), d->in, d->out);
        dwm = in.vec() * delta.vec().transpose();
        db.vec() = delta.vec();
        pack.param_grads[static_cast<std::size_t>(pidx)] = {std::move(dw), std::move(db)};
      }
      Tensor dx({d->in});
      Map<const MatrixXf> w(d->weight.data.data(), d->in, d->out);
      dx.vec() = w * delta.vec();
      delta = std::move(dx);
    } else if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
      const int h = in.shape[1], w = in.shape[2];
      const int oh = h - c->kernel + 1, ow = w - c->kernel + 1;
      Tensor dx(in.shape);
      Tensor dw, db;
      if (want_params) {
        dw = Tensor(c->weight.shape);
        db = Tensor(c->bias.shape);
      }
      auto din_at = [&](int ic, int i, int j) -> float& { return dx.data[(ic * h + i) * w + j]; };
      auto in_at = [&](int ic, int i, int j) { return in.data[(ic * h + i) * w + j]; };
      auto w_at = [&](int oc, int ic, int ki, int kj) {
        return c->weight.data[((oc * c->in_ch + ic) * c->kernel + ki) * c->kernel + kj];
      };
      for (int oc = 0; oc < c->out_ch; ++oc)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            float g = delta.data[(oc * oh + i) * ow + j];
            if (want_params) db.data[oc] += g;
            for (int ic = 0; ic < c->in_ch; ++ic)
              for (int ki = 0; ki < c->kernel; ++ki)
                for (int kj = 0; kj < c->kernel; ++kj) {
                  din_at(ic, i + ki, j + kj) += w_at(oc, ic, ki, kj) * g;
                  if (want_params)
                    dw.data[((oc * c->in_ch + ic) * c->kernel + ki) * c->kernel + kj] +=
                        in_at(ic, i + ki, j + kj) * g;
                }
          }
      if (want_params) {
        --pidx;
        pack.param_grads[static_cast<std::size_t>(pidx)] = {std::move(dw), std::move(db)};
      }
      delta = std::move(dx);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      for (int i = 0; i < delta.size(); ++i)
        if (in.data[static_cast<std::size_t>(i)] <= 0.0f) delta.data[static_cast<std::size_t>(i)] = 0.0f;
    } else {  // Flatten
      Tensor dx(in.shape);
      dx.data = delta.data;
      delta = std::move(dx);
    }
  }
  pack.input_grad = std::move(delta);
  return pack;
}

}  // namespace

int Network::num_params() const {
  int n = 0;
  for (const auto& layer : layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) n += d->weight.size() + d->bias.size();
    if (const auto* c = std::get_if<Conv2DLayer>(&layer)) n += c->weight.size() + c->bias.size();
  }
  return n;
}

std::vector<float> Network::flat_params() const {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(num_params()));
  for (const auto& layer : layers) {
    const Tensor* w = nullptr;
    const Tensor* b = nullptr;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) { w = &d->weight; b = &d->bias; }
    if (const auto* c = std::get_if<Conv2DLayer>(&layer)) { w = &c->weight; b = &c->bias; }
    if (w) {
      out.insert(out.end(), w->data.begin(), w->data.end());
      out.insert(out.end(), b->data.begin(), b->data.end());
    }
  }
  return out;
}

void Network::set_flat_params(const std::vector<float>& p) {
  std::size_t off = 0;
  for (auto& layer : layers) {
    Tensor* w = nullptr;
    Tensor* b = nullptr;
    if (auto* d = std::get_if<DenseLayer>(&layer)) { w = &d->weight; b = &d->bias; }
    if (auto* c = std::get_if<Conv2DLayer>(&layer)) { w = &c->weight; b = &c->bias; }
    if (w) {
      if (off + w->data.size() + b->data.size() > p.size())
        throw ConfigError("flat parameter vector too short");
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(off), w->data.size(), w->data.begin());
      off += w->data.size();
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(off), b->data.size(), b->data.begin());
      off += b->data.size();
    }
  }
  if (off != p.size()) throw ConfigError("flat parameter vector length mismatch");
}

Tensor forward(const Network& net, const Tensor& x) {
  if (x.shape != net.input_shape)
    throw ConfigError("forward: input shape " + shape_str(x.shape) + " does not match network input " +
                      shape_str(net.input_shape));
  Tensor cur = x;
  std::vector<int> shape = net.input_shape;
  for (const auto& layer : net.layers) {
    shape = layer_out_shape(layer, shape);
    cur = layer_forward(layer, cur);
  }
  if (cur.size() != net.num_classes) throw ConfigError("network head does not produce num_classes logits");
  return cur;
}

double cross_entropy(const Tensor& logits, const Tensor& y_onehot) {
  if (logits.size() != y_onehot.size())
    throw std::invalid_argument("cross_entropy: length mismatch");
  int cls = -1;
  for (int i = 0; i < y_onehot.size(); ++i) {
    float v = y_onehot[i];
    if (v == 1.0f && cls < 0) cls = i;
    else if (v != 0.0f) throw std::invalid_argument("cross_entropy: y is not one-hot");
  }
  if (cls < 0) throw std::invalid_argument("cross_entropy: y is not one-hot");
  double mx = logits.as_double().maxCoeff();
  double sum = 0.0;
  for (int i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  return std::log(sum) - (static_cast<double>(logits[cls]) - mx);
}

Tensor softmax_minus_y(const Tensor& logits, const Tensor& y_onehot) {
  double mx = logits.as_double().maxCoeff();
  Eigen::VectorXd p = (logits.as_double().array() - mx).exp();
  p /= p.sum();
  Tensor out({logits.size()});
  out.vec() = p.cast<float>() - y_onehot.vec();
  return out;
}

Tensor input_gradient(const Network& net, const Tensor& x, const Tensor& y) {
  Tensor logits = forward(net, x);
  Tensor dlogits = softmax_minus_y(logits, y);
  return backward(net, x, dlogits, /*want_params=*/false).input_grad;
}

double loss_of(const Network& net, const Tensor& x, const Tensor& y) {
  return cross_entropy(forward(net, x), y);
}

namespace {

Eigen::VectorXd dense_forward64(const DenseLayer& d, const Eigen::VectorXd& x) {
  Map<const MatrixXf> w(d.weight.data.data(), d.in, d.out);
  return w.cast<double>().transpose() * x + d.bias.vec().cast<double>();
}

Eigen::VectorXd conv_forward64(const Conv2DLayer& c, const Eigen::VectorXd& x,
                               const std::vector<int>& in_shape) {
  const int h = in_shape[1], w = in_shape[2];
  const int oh = h - c.kernel + 1, ow = w - c.kernel + 1;
  Eigen::VectorXd out(static_cast<Eigen::Index>(c.out_ch) * oh * ow);
  auto in_at = [&](int ic, int i, int j) { return x[(ic * h + i) * w + j]; };
  auto w_at = [&](int oc, int ic, int ki, int kj) {
    return static_cast<double>(
        c.weight.data[((oc * c.in_ch + ic) * c.kernel + ki) * c.kernel + kj]);
  };
  for (int oc = 0; oc < c.out_ch; ++oc)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = c.bias.data[static_cast<std::size_t>(oc)];
        for (int ic = 0; ic < c.in_ch; ++ic)
          for (int ki = 0; ki < c.kernel; ++ki)
            for (int kj = 0; kj < c.kernel; ++kj)
              acc += w_at(oc, ic, ki, kj) * in_at(ic, i + ki, j + kj);
        out[(oc * oh + i) * ow + j] = acc;
      }
  return out;
}

}  // namespace

Eigen::VectorXd forward64(const Network& net, const Eigen::VectorXd& x) {
  Eigen::VectorXd cur = x;
  std::vector<int> shape = net.input_shape;
  for (const auto& layer : net.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      cur = dense_forward64(*d, cur);
    } else if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
      cur = conv_forward64(*c, cur, shape);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      cur = cur.cwiseMax(0.0);
    }  // Flatten: no-op on a flat vector
    shape = layer_out_shape(layer, shape);
  }
  return cur;
}

Eigen::VectorXd input_gradient64(const Network& net, const Eigen::VectorXd& x, const Tensor& y) {
  // Forward, caching per-layer inputs.
  std::vector<Eigen::VectorXd> acts;
  std::vector<std::vector<int>> shapes;
  acts.reserve(net.layers.size() + 1);
  acts.push_back(x);
  shapes.push_back(net.input_shape);
  for (const auto& layer : net.layers) {
    const Eigen::VectorXd& in = acts.back();
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      acts.push_back(dense_forward64(*d, in));
    } else if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
      acts.push_back(conv_forward64(*c, in, shapes.back()));
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      acts.push_back(in.cwiseMax(0.0));
    } else {
      acts.push_back(in);
    }
    shapes.push_back(layer_out_shape(layer, shapes.back()));
  }

  // dlogits = softmax(logits) - y, all double.
  const Eigen::VectorXd& logits = acts.back();
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  Eigen::VectorXd delta = p - y.vec().cast<double>();

  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Layer& layer = net.layers[static_cast<std::size_t>(li)];
    const Eigen::VectorXd& in = acts[static_cast<std::size_t>(li)];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      Map<const MatrixXf> w(d->weight.data.data(), d->in, d->out);
      delta = (w.cast<double>() * delta).eval();
    } else if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
      const auto& in_shape = shapes[static_cast<std::size_t>(li)];
      const int h = in_shape[1], w = in_shape[2];
      const int oh = h - c->kernel + 1, ow = w - c->kernel + 1;
      Eigen::VectorXd dx = Eigen::VectorXd::Zero(in.size());
      auto w_at = [&](int oc, int ic, int ki, int kj) {
        return static_cast<double>(
            c->weight.data[((oc * c->in_ch + ic) * c->kernel + ki) * c->kernel + kj]);
      };
      for (int oc = 0; oc < c->out_ch; ++oc)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            double g = delta[(oc * oh + i) * ow + j];
            for (int ic = 0; ic < c->in_ch; ++ic)
              for (int ki = 0; ki < c->kernel; ++ki)
                for (int kj = 0; kj < c->kernel; ++kj)
                  dx[(ic * h + i + ki) * w + j + kj] += w_at(oc, ic, ki, kj) * g;
          }
      delta = std::move(dx);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      for (Eigen::Index i = 0; i < delta.size(); ++i)
        if (in[i] <= 0.0) delta[i] = 0.0;
    }  // Flatten: gradient passes through unchanged
  }
  return delta;
}

ParamGrads param_gradient(const Network& net, const std::vector<Tensor>& xs,
                          const std::vector<Tensor>& ys) {
  if (xs.empty() || xs.size() != ys.size())
    throw std::invalid_argument("param_gradient: empty or mismatched batch");
  ParamGrads total;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    Tensor logits = forward(net, xs[s]);
    Tensor dlogits = softmax_minus_y(logits, ys[s]);
    auto pack = backward(net, xs[s], dlogits, /*want_params=*/true);
    if (s == 0) {
      total.grads = std::move(pack.param_grads);
    } else {
      for (std::size_t l = 0; l < total.grads.size(); ++l) {
        total.grads[l].first.vec() += pack.param_grads[l].first.vec();
        total.grads[l].second.vec() += pack.param_grads[l].second.vec();
      }
    }
  }
  const float inv = 1.0f / static_cast<float>(xs.size());
  for (auto& [dw, db] : total.grads) {
    dw.vec() *= inv;
    db.vec() *= inv;
  }
  return total;
}

int argmax_class(const Tensor& logits) {
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

double min_relu_preactivation(const Network& net, const Tensor& x) {
  double min_abs = std::numeric_limits<double>::infinity();
  Tensor cur = x;
  for (const auto& layer : net.layers) {
    if (std::holds_alternative<ReluLayer>(layer))
      for (float v : cur.data) min_abs = std::min(min_abs, std::abs(static_cast<double>(v)));
    cur = layer_forward(layer, cur);
  }
  return min_abs;
}

double QuadraticLoss::loss(const Tensor& x, const Tensor&) const {
  Eigen::VectorXd d = x.as_double() - center_;
  return 0.5 * d.dot(a_ * d);
}

Tensor QuadraticLoss::grad(const Tensor& x, const Tensor&) const {
  return from_double(grad_exact(x.as_double()), x.shape);
}

}  // namespace st
