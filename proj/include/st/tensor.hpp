#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace st {

/// Dense row-major float32 tensor. The universal numeric carrier.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<float> d);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor from_vec(std::vector<float> d) {
    const int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
  }

  int size() const { return static_cast<int>(data.size()); }
  float& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
  float operator[](int i) const { return data[static_cast<std::size_t>(i)]; }

  Eigen::Map<Eigen::VectorXf> vec() {
    return {data.data(), static_cast<Eigen::Index>(data.size())};
  }
  Eigen::Map<const Eigen::VectorXf> vec() const {
    return {data.data(), static_cast<Eigen::Index>(data.size())};
  }
  Eigen::VectorXd as_double() const { return vec().cast<double>(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

int shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

Tensor from_double(const Eigen::VectorXd& v, std::vector<int> shape);

/// L2 norm with float64 accumulation.
double norm_l2(const Tensor& t);
double norm_l1(const Tensor& t);
double norm_linf(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);

/// Counter-based RNG: identical (seed, stream) gives an identical draw
/// sequence on every platform. Splitting streams never overlaps.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  RngStream split(std::uint64_t substream) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (no cached spare; fully stateless-counter).
  double normal();
  std::uint64_t uniform_int(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace st
