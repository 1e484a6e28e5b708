#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gnm/tensor.hpp"

namespace gnm {

struct IterationRecord {
  std::size_t t = 0;
  double mag_pre = 0.0;       // ||delta|| before clipping
  double mag_post = 0.0;      // ||delta|| after clipping
  double cos_pre = 0.0;       // cos(delta_pre, raw g_t); 0 when undefined
  double cos_post = 0.0;      // cos(delta_post, raw g_t)
  double cos_post_eff = 0.0;  // cos(delta_post, transformed gradient)
  double clipped_ratio = 0.0;
  double loss = 0.0;          // loss after the step
};

struct Trace {
  double initial_loss = 0.0;
  std::vector<IterationRecord> records;
  bool success = false;
};

double cos_angle(const Tensor& a, const Tensor& b);
double clipped_ratio(const Tensor& delta_pre, const Tensor& delta_post);

// First-order estimate of the loss gain along a trajectory:
// sum_t dot(delta_t, g_t).
double taylor_gain(const std::vector<std::pair<Tensor, Tensor>>& steps);

double success_rate(const std::vector<Trace>& traces);

struct SweepPoint {
  std::size_t k = 0;
  double kappa = 0.0;
  double mean_mag = 0.0;   // mean mag_post over all iterations and samples
  double mean_cos = 0.0;   // mean cos_post likewise
  double success_rate = 0.0;
};

std::vector<SweepPoint> aggregate_sweep(
    const std::map<std::size_t, std::vector<Trace>>& traces_by_k,
    const std::map<std::size_t, double>& kappa_by_k = {});

// Reals are printed with 9 significant digits everywhere.
std::string format_real(double v);

struct TraceRowMeta {
  std::string run_id;
  std::string method;
  std::string step_rule;
  std::size_t k = 0;
};

std::string trace_csv_header();
void append_trace_csv(std::string& out, const TraceRowMeta& meta,
                      const Trace& trace);

std::string sweep_csv(const std::vector<SweepPoint>& points);

}  // namespace gnm
