#include "gnm/attack.hpp"

#include <algorithm>
#include <cmath>

namespace gnm {

std::size_t StepRule::resolve_k(std::size_t dim) const {
  if (kind != StepKind::AdaptiveScaleK)
    throw std::logic_error("resolve_k: not an adaptive rule");
  if (kappa > 0.0) {
    if (kappa > 1.0)
      throw std::invalid_argument("StepRule: kappa must be in (0, 1]");
    auto k_res = static_cast<std::size_t>(
        std::ceil(kappa * static_cast<double>(dim)));
    return std::clamp<std::size_t>(k_res, 1, dim);
  }
  if (k < 1 || k > dim)
    throw std::invalid_argument("StepRule: K out of [1, D]");
  return k;
}

std::string StepRule::name() const {
  switch (kind) {
    case StepKind::Sign: return "sign";
    case StepKind::FixedScaleN: return "fgnm_n";
    case StepKind::AdaptiveScaleK: return "fgnm_k";
  }
  return "?";
}

double scale_n(const Tensor& g) {
  double gn = norm(g, NormOrder::L2);
  if (gn == 0.0) throw ZeroGradientError();
  return norm(sign(g), NormOrder::L2) / gn;
}

double scale_k(const Tensor& g, std::size_t k) {
  std::vector<double> candidates;
  candidates.reserve(g.size());
  for (double v : g.data())
    if (v != 0.0) candidates.push_back(1.0 / std::abs(v));
  if (candidates.empty()) throw ZeroGradientError();
  if (k < 1 || k > candidates.size()) throw InsufficientSupportError();
  return kth_largest(candidates, k);
}

Tensor perturbation_step(const Tensor& g, const StepRule& rule, double alpha) {
  if (alpha <= 0.0)
    throw std::invalid_argument("perturbation_step: alpha must be > 0");
  switch (rule.kind) {
    case StepKind::Sign:
      return scale(sign(g), alpha);
    case StepKind::FixedScaleN:
      return scale(g, alpha * scale_n(g));
    case StepKind::AdaptiveScaleK:
      return scale(g, alpha * scale_k(g, rule.resolve_k(g.size())));
  }
  throw std::logic_error("perturbation_step: bad rule");
}

Tensor clip_eps_ball(const Tensor& x_adv, const Tensor& x, double eps,
                     bool valid_range) {
  if (!x_adv.same_shape(x))
    throw std::invalid_argument("clip_eps_ball: shape mismatch");
  Tensor out = x_adv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = std::min(std::max(x_adv[i], x[i] - eps), x[i] + eps);
    if (valid_range) v = std::min(std::max(v, 0.0), 1.0);
    out[i] = v;
  }
  return out;
}

AttackResult run_attack(const Classifier& model, const Tensor& x,
                        std::size_t y, const AttackConfig& cfg, Rng& rng) {
  if (cfg.iterations < 1 || cfg.eps < 0.0)
    throw std::invalid_argument("run_attack: bad budget");
  cfg.chain.validate(cfg.image_shape);
  std::size_t label = cfg.targeted ? cfg.target : y;
  // Targeted mode descends L(., target): steps along -g.
  double direction = cfg.targeted ? -1.0 : 1.0;
  double alpha = cfg.step_size();

  MomentumState state{Tensor::zeros(std::vector<std::size_t>(x.shape())),
                      cfg.chain.mu};
  AttackResult result;
  result.trace.initial_loss = model.loss(x, label);
  Tensor x_t = x;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tensor g_raw = model.input_gradient(x_t, label);
    Tensor g_eff = cfg.chain.empty()
                       ? g_raw
                       : effective_gradient(model, x_t, label, cfg.chain,
                                            cfg.image_shape, rng, state);
    Tensor delta_pre = Tensor::zeros(std::vector<std::size_t>(x.shape()));
    if (alpha > 0.0 && norm(g_eff, NormOrder::L2) != 0.0)
      delta_pre = scale(perturbation_step(g_eff, cfg.rule, alpha), direction);

    Tensor x_next = add(x_t, delta_pre);
    if (cfg.clip_each_iter)
      x_next = clip_eps_ball(x_next, x, cfg.eps, cfg.valid_range_clip);
    Tensor delta_post = sub(x_next, x_t);

    IterationRecord rec;
    rec.t = t;
    rec.mag_pre = norm(delta_pre, NormOrder::L2);
    rec.mag_post = norm(delta_post, NormOrder::L2);
    double g_norm = norm(g_raw, NormOrder::L2);
    rec.cos_pre = (rec.mag_pre > 0.0 && g_norm > 0.0)
                      ? cos_angle(delta_pre, g_raw) : 0.0;
    rec.cos_post = (rec.mag_post > 0.0 && g_norm > 0.0)
                       ? cos_angle(delta_post, g_raw) : 0.0;
    double eff_norm = norm(g_eff, NormOrder::L2);
    rec.cos_post_eff = (rec.mag_post > 0.0 && eff_norm > 0.0)
                           ? cos_angle(delta_post, g_eff) : 0.0;
    rec.clipped_ratio = clipped_ratio(delta_pre, delta_post);
    rec.loss = model.loss(x_next, label);
    result.trace.records.push_back(rec);
    x_t = x_next;
  }
  if (!cfg.clip_each_iter)
    x_t = clip_eps_ball(x_t, x, cfg.eps, cfg.valid_range_clip);
  result.x_adv = x_t;
  std::size_t pred = model.predict(result.x_adv);
  result.success = cfg.targeted ? pred == cfg.target : pred != y;
  result.trace.success = result.success;
  return result;
}

}  // namespace gnm
