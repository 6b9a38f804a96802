#pragma once

#include <optional>
#include <string>
#include <vector>

#include "st/network.hpp"
#include "st/tensor.hpp"

namespace st {

/// Fixed architecture registry: mlp-s, mlp-m, mlp-wide, conv-s, conv-m.
/// Conv architectures view a d=H*W input as a [1,H,W] image.
struct ModelSpec {
  std::string arch = "mlp-s";
  std::uint64_t init_seed = 0;
  bool trained = false;
  bool adversarial = false;
  int at_pgd_steps = 5;
  float at_epsilon = 8.0f / 255.0f;
};

struct Dataset {
  std::vector<Tensor> inputs;   // entries in [0,1]
  std::vector<Tensor> labels;   // one-hot
  std::string split = "train";  // train | attack-eval
  int num_classes = 0;

  int size() const { return static_cast<int>(inputs.size()); }
  int label_of(int i) const;
};

bool known_arch(const std::string& arch);

/// Seeded He-style initialization for a registry architecture.
Network build_network(const ModelSpec& spec, const std::vector<int>& input_shape,
                      int num_classes);

/// Class-conditional Gaussian blobs on [0,1]^d (or blob textures when the
/// shape is an image). difficulty in [0,1]: 0 = well separated, 1 = all
/// class means identical. The class means depend only on seed; noise_seed
/// (defaulting to seed) draws the per-sample noise, so a fresh split from
/// the same distribution is synth_dataset(seed, ..., other_seed).
Dataset synth_dataset(std::uint64_t seed, int n_samples, int n_classes,
                      const std::vector<int>& input_shape, double difficulty,
                      const std::string& split, std::uint64_t noise_seed);
Dataset synth_dataset(std::uint64_t seed, int n_samples, int n_classes,
                      const std::vector<int>& input_shape, double difficulty,
                      const std::string& split = "train");

struct TrainResult {
  Network net;
  double final_train_accuracy = 0.0;
  double final_train_loss = 0.0;
};

/// SGD with momentum; with the adversarial flag set each batch is replaced
/// by PGD(at_epsilon, at_pgd_steps) adversarial examples before the step.
TrainResult train(const ModelSpec& spec, const Dataset& data, int epochs, float lr,
                  RngStream rng, int batch_size = 32);

double accuracy(const Network& net, const Dataset& data);

void save_checkpoint(const Network& net, const ModelSpec& spec, const std::string& path);
std::pair<Network, ModelSpec> load_checkpoint(const std::string& path);

void export_csv(const Dataset& data, const std::string& path);

/// The default surrogate/target split used by the bench: diverse clean and
/// adversarially trained surrogates, architecture- and seed-disjoint targets.
struct Zoo {
  std::vector<Network> surrogates;
  std::vector<ModelSpec> surrogate_specs;
  std::vector<Network> targets;
  std::vector<ModelSpec> target_specs;
};

struct ZooRecipe {
  std::vector<ModelSpec> surrogates;
  std::vector<ModelSpec> targets;
};

ZooRecipe default_zoo_recipe();

Zoo train_zoo(const ZooRecipe& recipe, const Dataset& train_data, int epochs, float lr,
              std::uint64_t seed);

}  // namespace st
