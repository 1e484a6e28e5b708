#include "gnm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace gnm {

double cos_angle(const Tensor& a, const Tensor& b) {
  double na = norm(a, NormOrder::L2);
  double nb = norm(b, NormOrder::L2);
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cos_angle: undefined angle (zero vector)");
  double c = dot(a, b) / (na * nb);
  return std::min(1.0, std::max(-1.0, c));
}

double clipped_ratio(const Tensor& delta_pre, const Tensor& delta_post) {
  if (!delta_pre.same_shape(delta_post))
    throw std::invalid_argument("clipped_ratio: shape mismatch");
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < delta_pre.size(); ++i)
    if (std::abs(delta_post[i] - delta_pre[i]) > 1e-12) ++clipped;
  return static_cast<double>(clipped) / static_cast<double>(delta_pre.size());
}

double taylor_gain(const std::vector<std::pair<Tensor, Tensor>>& steps) {
  if (steps.empty()) throw std::invalid_argument("taylor_gain: empty trace");
  double g = 0.0;
  for (const auto& [delta, grad] : steps) g += dot(delta, grad);
  return g;
}

double success_rate(const std::vector<Trace>& traces) {
  if (traces.empty()) throw std::invalid_argument("success_rate: empty input");
  std::size_t hits = 0;
  for (const auto& t : traces)
    if (t.success) ++hits;
  return static_cast<double>(hits) / static_cast<double>(traces.size());
}

std::vector<SweepPoint> aggregate_sweep(
    const std::map<std::size_t, std::vector<Trace>>& traces_by_k,
    const std::map<std::size_t, double>& kappa_by_k) {
  std::vector<SweepPoint> points;
  for (const auto& [k, traces] : traces_by_k) {
    if (traces.empty())
      throw std::invalid_argument("aggregate_sweep: empty group");
    SweepPoint p;
    p.k = k;
    if (auto it = kappa_by_k.find(k); it != kappa_by_k.end())
      p.kappa = it->second;
    double mag = 0.0, cos = 0.0;
    std::size_t count = 0;
    for (const auto& trace : traces)
      for (const auto& rec : trace.records) {
        mag += rec.mag_post;
        cos += rec.cos_post;
        ++count;
      }
    p.mean_mag = mag / static_cast<double>(count);
    p.mean_cos = cos / static_cast<double>(count);
    p.success_rate = success_rate(traces);
    points.push_back(p);
  }
  return points;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string trace_csv_header() {
  return "run_id,method,step_rule,K,t,mag_pre,mag_post,cos_pre,cos_post,"
         "clipped_ratio,loss\n";
}

void append_trace_csv(std::string& out, const TraceRowMeta& meta,
                      const Trace& trace) {
  for (const auto& rec : trace.records) {
    out += meta.run_id;
    out += ',';
    out += meta.method;
    out += ',';
    out += meta.step_rule;
    out += ',';
    out += std::to_string(meta.k);
    out += ',';
    out += std::to_string(rec.t);
    out += ',';
    out += format_real(rec.mag_pre);
    out += ',';
    out += format_real(rec.mag_post);
    out += ',';
    out += format_real(rec.cos_pre);
    out += ',';
    out += format_real(rec.cos_post);
    out += ',';
    out += format_real(rec.clipped_ratio);
    out += ',';
    out += format_real(rec.loss);
    out += '\n';
  }
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "K,kappa,mean_mag,mean_cos,success_rate\n";
  for (const auto& p : points) {
    out += std::to_string(p.k);
    out += ',';
    out += format_real(p.kappa);
    out += ',';
    out += format_real(p.mean_mag);
    out += ',';
    out += format_real(p.mean_cos);
    out += ',';
    out += format_real(p.success_rate);
    out += '\n';
  }
  return out;
}

}  // namespace gnm
