#include "gnm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gnm {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    throw std::invalid_argument("tensor: data length does not match shape");
  for (double v : data_)
    if (!std::isfinite(v))
      throw std::invalid_argument("tensor: non-finite entry");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor sign(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.raw()) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return out;
}

double norm(const Tensor& t, NormOrder p) {
  switch (p) {
    case NormOrder::L0: {
      std::size_t n = 0;
      for (double v : t.data())
        if (v != 0.0) ++n;
      return static_cast<double>(n);
    }
    case NormOrder::L1: {
      double s = 0.0;
      for (double v : t.data()) s += std::abs(v);
      return s;
    }
    case NormOrder::L2: {
      double s = 0.0;
      for (double v : t.data()) s += v * v;
      return std::sqrt(s);
    }
    case NormOrder::Linf: {
      double m = 0.0;
      for (double v : t.data()) m = std::max(m, std::abs(v));
      return m;
    }
  }
  throw std::logic_error("norm: bad order");
}

Tensor clamp_box(const Tensor& t, const Tensor& lo, const Tensor& hi) {
  if (!t.same_shape(lo) || !t.same_shape(hi))
    throw std::invalid_argument("clamp_box: shape mismatch");
  Tensor out = t;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (lo[i] > hi[i]) throw std::invalid_argument("clamp_box: lo > hi");
    out[i] = std::min(std::max(t[i], lo[i]), hi[i]);
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor scale(const Tensor& t, double c) {
  Tensor out = t;
  for (double& v : out.raw()) v *= c;
  return out;
}

double kth_largest(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw std::invalid_argument("kth_largest: empty sequence");
  if (k < 1 || k > values.size())
    throw std::invalid_argument("kth_largest: K out of range");
  std::vector<double> buf(values.begin(), values.end());
  std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   buf.end(), std::greater<double>());
  return buf[k - 1];
}

// ---- Rng --------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n == 0");
  return next_u64() % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Rng Rng::child(std::uint64_t index) const {
  std::uint64_t s = seed_ ^ (0xD1B54A32D192ED03ull * (index + 1));
  std::uint64_t tmp = s;
  return Rng(splitmix64(tmp));
}

// ---- binary format ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'S', 'T', 'N'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw std::runtime_error("tensor load: truncated stream");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("tensor load: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void save_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u16(out, kVersion);
  put_u16(out, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.data()) put_f64(out, v);
}

Tensor load_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor load: bad magic");
  std::uint16_t version = get_u16(in);
  if (version != kVersion)
    throw std::runtime_error("tensor load: unknown format version");
  std::uint16_t rank = get_u16(in);
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get_u64(in));
    n *= d;
  }
  std::vector<double> data(n);
  for (double& v : data) v = get_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  save_tensor(out, t);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  return load_tensor(in);
}

}  // namespace gnm
