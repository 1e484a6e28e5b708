#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gnm {

// Dense row-major tensor of 64-bit reals. Immutable by convention after
// construction; copies are cheap enough at desk scale.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  std::span<const double> data() const { return data_; }
  std::vector<double>& raw() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

enum class NormOrder { L0, L1, L2, Linf };

Tensor sign(const Tensor& t);
double norm(const Tensor& t, NormOrder p);
Tensor clamp_box(const Tensor& t, const Tensor& lo, const Tensor& hi);
double dot(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double c);

// K-th largest counting duplicates, 1-based: K=1 is the maximum.
double kth_largest(std::span<const double> values, std::size_t k);

// Counter-based deterministic PRNG (splitmix64 core). Identical seed gives
// an identical stream on every platform; child(i) derives an independent
// stream for parallel work.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n)
  double normal();                        // standard normal
  std::uint64_t seed() const { return seed_; }
  Rng child(std::uint64_t index) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Binary tensor format: magic "GSTN", version u16, rank u16, dims u64 LE,
// data f64 LE row-major. Bit-exact round trip.
void save_tensor(std::ostream& out, const Tensor& t);
Tensor load_tensor(std::istream& in);
void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace gnm
