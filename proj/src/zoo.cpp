#include "st/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "st/errors.hpp"

namespace st {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'Z', 'O', 'O', 'C', 'K', 'P'};
constexpr std::uint16_t kVersion = 1;

std::uint64_t fnv1a64(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor he_init(std::vector<int> shape, int fan_in, RngStream& rng) {
  Tensor t(std::move(shape));
  const double scale = std::sqrt(2.0 / std::max(fan_in, 1));
  for (float& v : t.data) v = static_cast<float>(rng.normal() * scale);
  return t;
}

void push_dense(Network& net, int in, int out, RngStream& rng) {
  DenseLayer d;
  d.in = in;
  d.out = out;
  d.weight = he_init({out, in}, in, rng);
  d.bias = Tensor({out});
  net.layers.emplace_back(std::move(d));
}

void push_conv(Network& net, int in_ch, int out_ch, int k, RngStream& rng) {
  Conv2DLayer c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = k;
  c.weight = he_init({out_ch, in_ch, k, k}, in_ch * k * k, rng);
  c.bias = Tensor({out_ch});
  net.layers.emplace_back(std::move(c));
}

}  // namespace

int Dataset::label_of(int i) const {
  const Tensor& y = labels[static_cast<std::size_t>(i)];
  for (int k = 0; k < y.size(); ++k)
    if (y[k] == 1.0f) return k;
  throw std::invalid_argument("dataset label is not one-hot");
}

bool known_arch(const std::string& arch) {
  return arch == "mlp-s" || arch == "mlp-m" || arch == "mlp-wide" || arch == "conv-s" ||
         arch == "conv-m";
}

Network build_network(const ModelSpec& spec, const std::vector<int>& input_shape,
                      int num_classes) {
  if (!known_arch(spec.arch)) throw ConfigError("unknown architecture id: " + spec.arch);
  Network net;
  net.input_shape = input_shape;
  net.num_classes = num_classes;
  RngStream rng(spec.init_seed, 0xA5C3);

  const bool image = input_shape.size() == 3;
  const int d = shape_size(input_shape);

  if (spec.arch.rfind("mlp", 0) == 0) {
    if (image) net.layers.emplace_back(FlattenLayer{});
    if (spec.arch == "mlp-s") {
      push_dense(net, d, 32, rng);
      net.layers.emplace_back(ReluLayer{});
      push_dense(net, 32, num_classes, rng);
    } else if (spec.arch == "mlp-m") {
      push_dense(net, d, 64, rng);
      net.layers.emplace_back(ReluLayer{});
      push_dense(net, 64, 32, rng);
      net.layers.emplace_back(ReluLayer{});
      push_dense(net, 32, num_classes, rng);
    } else {  // mlp-wide
      push_dense(net, d, 128, rng);
      net.layers.emplace_back(ReluLayer{});
      push_dense(net, 128, num_classes, rng);
    }
    return net;
  }

  if (!image) throw ConfigError(spec.arch + " requires an image input shape [C,H,W]");
  const int ch = input_shape[0], h = input_shape[1], w = input_shape[2];
  if (spec.arch == "conv-s") {
    push_conv(net, ch, 4, 3, rng);
    net.layers.emplace_back(ReluLayer{});
    net.layers.emplace_back(FlattenLayer{});
    push_dense(net, 4 * (h - 2) * (w - 2), num_classes, rng);
  } else {  // conv-m
    push_conv(net, ch, 6, 3, rng);
    net.layers.emplace_back(ReluLayer{});
    push_conv(net, 6, 8, 3, rng);
    net.layers.emplace_back(ReluLayer{});
    net.layers.emplace_back(FlattenLayer{});
    push_dense(net, 8 * (h - 4) * (w - 4), num_classes, rng);
  }
  return net;
}

Dataset synth_dataset(std::uint64_t seed, int n_samples, int n_classes,
                      const std::vector<int>& input_shape, double difficulty,
                      const std::string& split) {
  return synth_dataset(seed, n_samples, n_classes, input_shape, difficulty, split, seed);
}

Dataset synth_dataset(std::uint64_t seed, int n_samples, int n_classes,
                      const std::vector<int>& input_shape, double difficulty,
                      const std::string& split, std::uint64_t noise_seed) {
  if (n_classes < 2 || n_samples < n_classes)
    throw std::invalid_argument("synth_dataset requires n_samples >= n_classes >= 2");
  const int d = shape_size(input_shape);
  const bool image = input_shape.size() == 3;
  RngStream mean_rng(seed, 0x1);
  RngStream noise_rng(noise_seed, 0x2);

  // Per-class mean pattern; difficulty pulls every mean toward flat 0.5.
  std::vector<std::vector<double>> means(static_cast<std::size_t>(n_classes),
                                         std::vector<double>(static_cast<std::size_t>(d), 0.5));
  for (int k = 0; k < n_classes; ++k) {
    auto& m = means[static_cast<std::size_t>(k)];
    if (image) {
      const int ch = input_shape[0], h = input_shape[1], w = input_shape[2];
      // A few smooth bumps per class give blob-texture structure.
      const int n_bumps = 3;
      std::vector<double> ci(n_bumps), cj(n_bumps), amp(n_bumps), width(n_bumps);
      for (int b = 0; b < n_bumps; ++b) {
        ci[b] = mean_rng.uniform(0.0, h - 1.0);
        cj[b] = mean_rng.uniform(0.0, w - 1.0);
        amp[b] = mean_rng.uniform(-0.35, 0.35);
        width[b] = mean_rng.uniform(1.0, 2.5);
      }
      for (int c = 0; c < ch; ++c)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            double v = 0.5;
            for (int b = 0; b < n_bumps; ++b) {
              double r2 = (i - ci[b]) * (i - ci[b]) + (j - cj[b]) * (j - cj[b]);
              v += amp[b] * std::exp(-r2 / (2.0 * width[b] * width[b]));
            }
            m[static_cast<std::size_t>((c * h + i) * w + j)] = v;
          }
    } else {
      for (int j = 0; j < d; ++j) m[static_cast<std::size_t>(j)] = mean_rng.uniform(0.2, 0.8);
    }
    for (double& v : m) v = 0.5 + (1.0 - difficulty) * (v - 0.5);
  }

  Dataset ds;
  ds.split = split;
  ds.num_classes = n_classes;
  ds.inputs.reserve(static_cast<std::size_t>(n_samples));
  ds.labels.reserve(static_cast<std::size_t>(n_samples));
  const double sigma = 0.12;
  for (int i = 0; i < n_samples; ++i) {
    const int k = i % n_classes;
    Tensor x(input_shape);
    const auto& m = means[static_cast<std::size_t>(k)];
    for (int j = 0; j < d; ++j) {
      double v = m[static_cast<std::size_t>(j)] + sigma * noise_rng.normal();
      x[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    Tensor y({n_classes});
    y[k] = 1.0f;
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(std::move(y));
  }
  return ds;
}

namespace {

// One PGD pass used for adversarial training batches.
Tensor pgd_example(const Network& net, const Tensor& x, const Tensor& y, float eps, int steps,
                   RngStream& rng) {
  Tensor adv = x;
  for (int i = 0; i < adv.size(); ++i)
    adv[i] = static_cast<float>(
        std::clamp(adv[i] + rng.uniform(-eps, eps), 0.0, 1.0));
  const float alpha = 2.0f * eps / static_cast<float>(steps);
  for (int s = 0; s < steps; ++s) {
    Tensor g = input_gradient(net, adv, y);
    for (int i = 0; i < adv.size(); ++i) {
      float v = adv[i] + alpha * (g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f));
      v = std::clamp(v, x[i] - eps, x[i] + eps);
      adv[i] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return adv;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const Dataset& data, int epochs, float lr,
                  RngStream rng, int batch_size) {
  if (data.split != "train") throw std::invalid_argument("train: dataset split must be 'train'");
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  Network net = build_network(spec, data.inputs[0].shape, data.num_classes);

  const float momentum = 0.9f;
  std::vector<std::pair<Tensor, Tensor>> velocity;

  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);

  RngStream at_rng = rng.split(0x41);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates with the stream RNG keeps epochs reproducible.
    for (int i = data.size() - 1; i > 0; --i) {
      int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < data.size(); start += batch_size) {
      const int end = std::min(start + batch_size, data.size());
      std::vector<Tensor> bx, by;
      bx.reserve(static_cast<std::size_t>(end - start));
      by.reserve(static_cast<std::size_t>(end - start));
      for (int i = start; i < end; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        Tensor x = data.inputs[static_cast<std::size_t>(idx)];
        if (spec.adversarial)
          x = pgd_example(net, x, data.labels[static_cast<std::size_t>(idx)], spec.at_epsilon,
                          spec.at_pgd_steps, at_rng);
        bx.push_back(std::move(x));
        by.push_back(data.labels[static_cast<std::size_t>(idx)]);
      }
      ParamGrads grads = param_gradient(net, bx, by);
      if (velocity.empty()) {
        for (const auto& [dw, db] : grads.grads)
          velocity.emplace_back(Tensor(dw.shape), Tensor(db.shape));
      }
      std::size_t l = 0;
      for (auto& layer : net.layers) {
        Tensor* w = nullptr;
        Tensor* b = nullptr;
        if (auto* dl = std::get_if<DenseLayer>(&layer)) { w = &dl->weight; b = &dl->bias; }
        if (auto* cl = std::get_if<Conv2DLayer>(&layer)) { w = &cl->weight; b = &cl->bias; }
        if (!w) continue;
        auto& [vw, vb] = velocity[l];
        vw.vec() = momentum * vw.vec() + grads.grads[l].first.vec();
        vb.vec() = momentum * vb.vec() + grads.grads[l].second.vec();
        w->vec() -= lr * vw.vec();
        b->vec() -= lr * vb.vec();
        ++l;
      }
    }
    // Divergence check once per epoch.
    double probe = loss_of(net, data.inputs[0], data.labels[0]);
    if (!std::isfinite(probe))
      throw TrainingError("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                          " for arch " + spec.arch);
  }

  TrainResult res;
  res.final_train_accuracy = accuracy(net, data);
  double loss_sum = 0.0;
  for (int i = 0; i < data.size(); ++i)
    loss_sum += loss_of(net, data.inputs[static_cast<std::size_t>(i)],
                        data.labels[static_cast<std::size_t>(i)]);
  res.final_train_loss = loss_sum / data.size();
  res.net = std::move(net);
  return res;
}

double accuracy(const Network& net, const Dataset& data) {
  int hits = 0;
  for (int i = 0; i < data.size(); ++i) {
    Tensor logits = forward(net, data.inputs[static_cast<std::size_t>(i)]);
    if (argmax_class(logits) == data.label_of(i)) ++hits;
  }
  return data.size() ? static_cast<double>(hits) / data.size() : 0.0;
}

void save_checkpoint(const Network& net, const ModelSpec& spec, const std::string& path) {
  nlohmann::json meta;
  meta["arch"] = spec.arch;
  meta["init_seed"] = spec.init_seed;
  meta["trained"] = spec.trained;
  meta["adversarial"] = spec.adversarial;
  meta["at_pgd_steps"] = spec.at_pgd_steps;
  meta["at_epsilon"] = spec.at_epsilon;
  meta["input_shape"] = net.input_shape;
  meta["num_classes"] = net.num_classes;
  const std::string header = meta.dump();
  const std::vector<float> params = net.flat_params();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(kMagic, sizeof(kMagic));
  f.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const std::uint32_t hlen = static_cast<std::uint32_t>(header.size());
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  const std::uint64_t count = params.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  f.write(reinterpret_cast<const char*>(params.data()),
          static_cast<std::streamsize>(params.size() * sizeof(float)));
  const std::uint64_t sum =
      fnv1a64(reinterpret_cast<const unsigned char*>(params.data()), params.size() * sizeof(float));
  f.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

std::pair<Network, ModelSpec> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CorruptCheckpointError("bad magic bytes in " + path);
  std::uint16_t version = 0;
  if (!f.read(reinterpret_cast<char*>(&version), sizeof(version)))
    throw CorruptCheckpointError("truncated checkpoint: " + path);
  if (version != kVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t hlen = 0;
  if (!f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)))
    throw CorruptCheckpointError("truncated checkpoint: " + path);
  std::string header(hlen, '\0');
  if (!f.read(header.data(), hlen)) throw CorruptCheckpointError("truncated checkpoint: " + path);
  std::uint64_t count = 0;
  if (!f.read(reinterpret_cast<char*>(&count), sizeof(count)))
    throw CorruptCheckpointError("truncated checkpoint: " + path);
  std::vector<float> params(count);
  if (!f.read(reinterpret_cast<char*>(params.data()),
              static_cast<std::streamsize>(count * sizeof(float))))
    throw CorruptCheckpointError("truncated checkpoint payload: " + path);
  std::uint64_t sum = 0;
  if (!f.read(reinterpret_cast<char*>(&sum), sizeof(sum)))
    throw CorruptCheckpointError("truncated checkpoint: " + path);
  const std::uint64_t expect =
      fnv1a64(reinterpret_cast<const unsigned char*>(params.data()), params.size() * sizeof(float));
  if (sum != expect) throw CorruptCheckpointError("checksum mismatch in " + path);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpointError("unparseable checkpoint header in " + path);
  }
  ModelSpec spec;
  spec.arch = meta.at("arch").get<std::string>();
  spec.init_seed = meta.at("init_seed").get<std::uint64_t>();
  spec.trained = meta.at("trained").get<bool>();
  spec.adversarial = meta.at("adversarial").get<bool>();
  spec.at_pgd_steps = meta.at("at_pgd_steps").get<int>();
  spec.at_epsilon = meta.at("at_epsilon").get<float>();
  Network net = build_network(spec, meta.at("input_shape").get<std::vector<int>>(),
                              meta.at("num_classes").get<int>());
  net.set_flat_params(params);
  return {std::move(net), std::move(spec)};
}

void export_csv(const Dataset& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  const int d = data.size() ? data.inputs[0].size() : 0;
  for (int j = 0; j < d; ++j) f << "x" << j << ",";
  f << "label\n";
  for (int i = 0; i < data.size(); ++i) {
    const Tensor& x = data.inputs[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j) f << x[j] << ",";
    f << data.label_of(i) << "\n";
  }
}

ZooRecipe default_zoo_recipe() {
  ZooRecipe r;
  r.surrogates = {
      {.arch = "mlp-s", .init_seed = 1},
      {.arch = "mlp-m", .init_seed = 2},
      {.arch = "conv-s", .init_seed = 3},
      {.arch = "mlp-s", .init_seed = 4, .adversarial = true},
  };
  r.targets = {
      {.arch = "mlp-wide", .init_seed = 11},
      {.arch = "conv-m", .init_seed = 12},
      {.arch = "mlp-s", .init_seed = 13},
      {.arch = "mlp-m", .init_seed = 14},
  };
  return r;
}

Zoo train_zoo(const ZooRecipe& recipe, const Dataset& train_data, int epochs, float lr,
              std::uint64_t seed) {
  Zoo zoo;
  std::uint64_t stream = 100;
  for (const auto& spec : recipe.surrogates) {
    TrainResult r = train(spec, train_data, epochs, lr, RngStream(seed, stream++));
    ModelSpec s = spec;
    s.trained = true;
    zoo.surrogates.push_back(std::move(r.net));
    zoo.surrogate_specs.push_back(s);
  }
  for (const auto& spec : recipe.targets) {
    TrainResult r = train(spec, train_data, epochs, lr, RngStream(seed, stream++));
    ModelSpec s = spec;
    s.trained = true;
    zoo.targets.push_back(std::move(r.net));
    zoo.target_specs.push_back(s);
  }
  return zoo;
}

}  // namespace st
