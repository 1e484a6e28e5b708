#pragma once

#include <string>
#include <vector>

#include "gnm/models.hpp"
#include "gnm/tensor.hpp"

namespace gnm {

struct MomentumState {
  Tensor accumulated;  // zeros before iteration 0
  double mu = 1.0;
};

struct DiverseInputCfg {
  double probability = 0.7;
  std::size_t low = 6;   // intermediate spatial size range
  std::size_t high = 8;
};

struct TiKernel {
  Tensor weights;  // 1-D, odd length, symmetric, sums to 1
  std::size_t length() const { return weights.size(); }
};

struct SiCfg {
  std::size_t copies = 5;
};

// Momentum update g_acc <- mu * g_acc + g / ||g||_1; returns the new
// accumulated gradient as the effective gradient. A zero g leaves the
// accumulator untouched.
Tensor momentum_accumulate(MomentumState& state, const Tensor& g);

// With probability p: nearest-neighbour resize to a random square size in
// [low, high], then random zero-pad back to H x W. Shape is preserved.
Tensor diverse_input(const Tensor& x, const std::vector<std::size_t>& hwc,
                     const DiverseInputCfg& cfg, Rng& rng);

// Truncated Gaussian kernel, sigma = W/3, normalized.
TiKernel gaussian_kernel(std::size_t w);

// Separable 2-D convolution of each channel (rows then columns), zero-padded
// borders.
Tensor ti_smooth(const Tensor& g, const std::vector<std::size_t>& hwc,
                 const TiKernel& kernel);

// Mean of input gradients over scale copies x / 2^i, i = 0..c-1.
Tensor si_gradient(const Classifier& model, const Tensor& x, std::size_t y,
                   const SiCfg& cfg);

enum class TransformKind { DiverseInput, ScaleInvariant, TranslationInvariant, Momentum };

// Ordered transform chain. Valid order is a subsequence of
// [DI, SI, TI, MI]: input transforms first, then gradient transforms.
struct TransformChain {
  std::vector<TransformKind> order;
  DiverseInputCfg di;
  SiCfg si;
  std::size_t ti_kernel_len = 3;
  double mu = 1.0;

  bool empty() const { return order.empty(); }
  bool has(TransformKind k) const;
  void validate(const std::vector<std::size_t>& hwc) const;
  std::string name() const;  // canonical method string, e.g. "MDTSI"

  // Expands method strings like "I", "MI", "DTSI", "MDTSI".
  static TransformChain from_method(const std::string& method);
};

// Runs the chain: DI/SI shape the point the gradient is taken at, TI then MI
// post-process the gradient. Empty chain returns the raw gradient.
Tensor effective_gradient(const Classifier& model, const Tensor& x,
                          std::size_t y, const TransformChain& chain,
                          const std::vector<std::size_t>& hwc, Rng& rng,
                          MomentumState& state);

}  // namespace gnm
