#include "st/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace st {

int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<std::size_t>(shape_size(shape)), 0.0f);
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != static_cast<int>(data.size()))
    throw std::invalid_argument("shape " + shape_str(shape) + " does not match data length");
}

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor from_double(const Eigen::VectorXd& v, std::vector<int> shape) {
  Tensor t(std::move(shape));
  if (t.size() != static_cast<int>(v.size()))
    throw std::invalid_argument("vector length does not match shape");
  t.vec() = v.cast<float>();
  return t;
}

double norm_l2(const Tensor& t) { return std::sqrt(t.as_double().squaredNorm()); }
double norm_l1(const Tensor& t) { return t.as_double().lpNorm<1>(); }
double norm_linf(const Tensor& t) {
  return t.size() == 0 ? 0.0 : t.as_double().lpNorm<Eigen::Infinity>();
}
double dot(const Tensor& a, const Tensor& b) { return a.as_double().dot(b.as_double()); }

namespace {

// SplitMix64 finalizer; the whole generator is a keyed hash of
// (seed, stream, counter) so streams never share state.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream RngStream::split(std::uint64_t substream) const {
  return RngStream(seed_, mix64(stream_ ^ mix64(substream + 0x5851f42d4c957f2dULL)));
}

std::uint64_t RngStream::next_u64() {
  std::uint64_t k = mix64(seed_) ^ mix64(stream_ + 0xda942042e4dd58b5ULL);
  return mix64(k ^ mix64(counter_++));
}

double RngStream::uniform() {
  // 53 random bits into [0,1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
  // Rejection-free modulo is fine at desk scale; bias < 2^-64 * n.
  return next_u64() % n;
}

}  // namespace st
