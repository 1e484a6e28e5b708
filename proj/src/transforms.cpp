#include "gnm/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gnm {

Tensor momentum_accumulate(MomentumState& state, const Tensor& g) {
  if (!state.accumulated.same_shape(g))
    throw std::invalid_argument("momentum_accumulate: shape mismatch");
  double l1 = norm(g, NormOrder::L1);
  if (l1 == 0.0) return state.accumulated;
  Tensor next = add(scale(state.accumulated, state.mu), scale(g, 1.0 / l1));
  state.accumulated = next;
  return next;
}

namespace {

void check_image(const Tensor& t, const std::vector<std::size_t>& hwc) {
  if (hwc.size() != 3)
    throw std::invalid_argument("image shape must be H x W x C");
  if (t.size() != hwc[0] * hwc[1] * hwc[2])
    throw std::invalid_argument("tensor size does not match image shape");
}

}  // namespace

Tensor diverse_input(const Tensor& x, const std::vector<std::size_t>& hwc,
                     const DiverseInputCfg& cfg, Rng& rng) {
  check_image(x, hwc);
  std::size_t h = hwc[0], w = hwc[1], c = hwc[2];
  if (cfg.low < 1 || cfg.low > cfg.high || cfg.high > std::min(h, w))
    throw std::invalid_argument("diverse_input: bad size range");
  // Draw order is fixed: apply?, size, offsets.
  if (rng.uniform() >= cfg.probability) return x;
  std::size_t r = cfg.low + rng.uniform_int(cfg.high - cfg.low + 1);
  std::size_t top = rng.uniform_int(h - r + 1);
  std::size_t left = rng.uniform_int(w - r + 1);
  Tensor out = Tensor::zeros(std::vector<std::size_t>(x.shape()));
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t si = i * h / r;  // nearest-neighbour source row
    for (std::size_t j = 0; j < r; ++j) {
      std::size_t sj = j * w / r;
      for (std::size_t k = 0; k < c; ++k)
        out[((top + i) * w + (left + j)) * c + k] = x[(si * w + sj) * c + k];
    }
  }
  return out;
}

TiKernel gaussian_kernel(std::size_t w) {
  if (w < 1 || w % 2 == 0)
    throw std::invalid_argument("gaussian_kernel: W must be odd and positive");
  double sigma = static_cast<double>(w) / 3.0;
  std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w) / 2;
  std::vector<double> weights(w);
  double sum = 0.0;
  for (std::ptrdiff_t i = -half; i <= half; ++i) {
    double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    weights[static_cast<std::size_t>(i + half)] = v;
    sum += v;
  }
  for (double& v : weights) v /= sum;
  return TiKernel{Tensor({w}, std::move(weights))};
}

namespace {

// 1-D zero-padded convolution along one axis of a H x W x C block.
void conv_axis(std::vector<double>& data, std::size_t h, std::size_t w,
               std::size_t c, const Tensor& kernel, bool rows) {
  std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel.size()) / 2;
  std::vector<double> out(data.size(), 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::ptrdiff_t o = -half; o <= half; ++o) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + (rows ? o : 0);
          std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + (rows ? 0 : o);
          if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
              jj >= static_cast<std::ptrdiff_t>(w))
            continue;
          s += kernel[static_cast<std::size_t>(o + half)] *
               data[(static_cast<std::size_t>(ii) * w +
                     static_cast<std::size_t>(jj)) * c + k];
        }
        out[(i * w + j) * c + k] = s;
      }
  data = std::move(out);
}

}  // namespace

Tensor ti_smooth(const Tensor& g, const std::vector<std::size_t>& hwc,
                 const TiKernel& kernel) {
  check_image(g, hwc);
  std::vector<double> data(g.data().begin(), g.data().end());
  conv_axis(data, hwc[0], hwc[1], hwc[2], kernel.weights, true);
  conv_axis(data, hwc[0], hwc[1], hwc[2], kernel.weights, false);
  return Tensor(std::vector<std::size_t>(g.shape()), std::move(data));
}

Tensor si_gradient(const Classifier& model, const Tensor& x, std::size_t y,
                   const SiCfg& cfg) {
  if (cfg.copies < 1) throw std::invalid_argument("si_gradient: copies < 1");
  Tensor acc = Tensor::zeros(std::vector<std::size_t>(x.shape()));
  double factor = 1.0;
  for (std::size_t i = 0; i < cfg.copies; ++i) {
    acc = add(acc, model.input_gradient(scale(x, factor), y));
    factor *= 0.5;
  }
  return scale(acc, 1.0 / static_cast<double>(cfg.copies));
}

bool TransformChain::has(TransformKind k) const {
  return std::find(order.begin(), order.end(), k) != order.end();
}

void TransformChain::validate(const std::vector<std::size_t>& hwc) const {
  static const TransformKind canonical[] = {
      TransformKind::DiverseInput, TransformKind::ScaleInvariant,
      TransformKind::TranslationInvariant, TransformKind::Momentum};
  std::size_t pos = 0;
  for (TransformKind k : order) {
    while (pos < 4 && canonical[pos] != k) ++pos;
    if (pos == 4)
      throw std::invalid_argument(
          "transform chain: order must follow DI, SI, TI, MI");
    ++pos;
  }
  if (has(TransformKind::TranslationInvariant) &&
      (ti_kernel_len % 2 == 0 || ti_kernel_len < 1))
    throw std::invalid_argument("transform chain: TI kernel length must be odd");
  if (has(TransformKind::DiverseInput)) {
    if (hwc.size() != 3)
      throw std::invalid_argument("transform chain: DI needs an image shape");
    if (di.low < 1 || di.low > di.high || di.high > std::min(hwc[0], hwc[1]))
      throw std::invalid_argument("transform chain: DI size range out of bounds");
    if (di.probability < 0.0 || di.probability > 1.0)
      throw std::invalid_argument("transform chain: DI probability out of [0,1]");
  }
  if (has(TransformKind::ScaleInvariant) && si.copies < 1)
    throw std::invalid_argument("transform chain: SI copies must be >= 1");
}

std::string TransformChain::name() const {
  if (order.empty()) return "I";
  std::string s;
  if (has(TransformKind::Momentum)) s += 'M';
  if (has(TransformKind::DiverseInput)) s += 'D';
  if (has(TransformKind::TranslationInvariant)) s += 'T';
  if (has(TransformKind::ScaleInvariant)) s += 'S';
  s += 'I';
  return s;
}

TransformChain TransformChain::from_method(const std::string& method) {
  // Method names read outside-in (e.g. "MDTSI"); the executed chain is the
  // canonical order DI, SI, TI, MI.
  if (method.empty() || method.back() != 'I')
    throw std::invalid_argument("unknown method string: " + method);
  TransformChain chain;
  bool mi = false, di = false, ti = false, si = false;
  for (std::size_t i = 0; i + 1 < method.size(); ++i) {
    switch (method[i]) {
      case 'M': mi = true; break;
      case 'D': di = true; break;
      case 'T': ti = true; break;
      case 'S': si = true; break;
      default:
        throw std::invalid_argument("unknown method string: " + method);
    }
  }
  if (di) chain.order.push_back(TransformKind::DiverseInput);
  if (si) chain.order.push_back(TransformKind::ScaleInvariant);
  if (ti) chain.order.push_back(TransformKind::TranslationInvariant);
  if (mi) chain.order.push_back(TransformKind::Momentum);
  return chain;
}

Tensor effective_gradient(const Classifier& model, const Tensor& x,
                          std::size_t y, const TransformChain& chain,
                          const std::vector<std::size_t>& hwc, Rng& rng,
                          MomentumState& state) {
  Tensor point = x;
  if (chain.has(TransformKind::DiverseInput))
    point = diverse_input(x, hwc, chain.di, rng);
  Tensor g = chain.has(TransformKind::ScaleInvariant)
                 ? si_gradient(model, point, y, chain.si)
                 : model.input_gradient(point, y);
  if (chain.has(TransformKind::TranslationInvariant))
    g = ti_smooth(g, hwc, gaussian_kernel(chain.ti_kernel_len));
  if (chain.has(TransformKind::Momentum)) g = momentum_accumulate(state, g);
  return g;
}

}  // namespace gnm
