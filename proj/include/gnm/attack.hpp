#pragma once

#include <stdexcept>
#include <vector>

#include "gnm/metrics.hpp"
#include "gnm/models.hpp"
#include "gnm/tensor.hpp"
#include "gnm/transforms.hpp"

namespace gnm {

struct ZeroGradientError : std::runtime_error {
  ZeroGradientError() : std::runtime_error("zero gradient") {}
};

struct InsufficientSupportError : std::runtime_error {
  InsufficientSupportError() : std::runtime_error("insufficient support") {}
};

enum class StepKind { Sign, FixedScaleN, AdaptiveScaleK };

// How a gradient becomes a step. AdaptiveScaleK takes either an explicit K
// or a fraction kappa of the dimension, resolved at attack time.
struct StepRule {
  StepKind kind = StepKind::Sign;
  std::size_t k = 0;     // used when kappa == 0
  double kappa = 0.0;    // fraction of D in (0, 1]

  static StepRule sign_rule() { return {StepKind::Sign, 0, 0.0}; }
  static StepRule fixed_scale() { return {StepKind::FixedScaleN, 0, 0.0}; }
  static StepRule adaptive(std::size_t k) {
    return {StepKind::AdaptiveScaleK, k, 0.0};
  }
  static StepRule adaptive_fraction(double kappa) {
    return {StepKind::AdaptiveScaleK, 0, kappa};
  }

  std::size_t resolve_k(std::size_t dim) const;
  std::string name() const;
};

// zeta = ||sign(g)||_2 / ||g||_2
double scale_n(const Tensor& g);

// zeta = K-th largest of { 1/|g_k| : g_k != 0 }, 1-based K.
double scale_k(const Tensor& g, std::size_t k);

// Sign -> alpha * sign(g); FixedScaleN -> alpha * zeta_N * g;
// AdaptiveScaleK -> alpha * zeta_K * g.
Tensor perturbation_step(const Tensor& g, const StepRule& rule, double alpha);

// Clamp into [x - eps, x + eps], then optionally into [0, 1].
Tensor clip_eps_ball(const Tensor& x_adv, const Tensor& x, double eps,
                     bool valid_range);

struct AttackConfig {
  double eps = 16.0 / 255.0;      // budget on the [0,1] pixel scale
  std::size_t iterations = 10;
  double alpha = 0.0;             // 0 -> eps / iterations
  bool targeted = false;
  std::size_t target = 0;
  StepRule rule;
  TransformChain chain;
  std::vector<std::size_t> image_shape;  // H x W x C, needed by DI/TI
  bool clip_each_iter = true;
  bool valid_range_clip = true;

  double step_size() const {
    return alpha > 0.0 ? alpha : eps / static_cast<double>(iterations);
  }
};

struct AttackResult {
  Tensor x_adv;
  Trace trace;
  bool success = false;
};

AttackResult run_attack(const Classifier& model, const Tensor& x,
                        std::size_t y, const AttackConfig& cfg, Rng& rng);

}  // namespace gnm
