#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gnm/attack.hpp"
#include "gnm/models.hpp"

namespace gnm {

struct ModelSpec {
  std::string name;
  std::string arch;  // "linear" or "mlp:<h1[-h2...]>"
  std::uint64_t seed = 0;
  bool adversarial = false;
};

struct DatasetSpec {
  std::size_t classes = 10;
  std::size_t per_class = 100;       // training points per class
  std::size_t eval_per_class = 50;   // evaluation points per class
  std::vector<std::size_t> image_shape = {8, 8, 1};
  double spread = 0.06;
  double separation = 0.35;

  std::size_t dim() const {
    return image_shape[0] * image_shape[1] * image_shape[2];
  }
};

struct AttackSpec {
  std::string method = "I";   // expands to a transform chain
  std::string step_rule = "sign";  // sign | fgnm_n | fgnm_k
  double kappa = 0.45;        // fgnm_k fraction of D
  double eps255 = 16.0;       // budget on the 0-255 scale
  std::size_t iterations = 10;
  double alpha255 = 0.0;      // 0 -> eps/T
  bool targeted = false;
};

struct ToySpec {
  std::vector<double> start = {0.5, 0.5};
  // optimum = start + eps * offset; inside the eps-box when |offset| <= 1
  std::vector<double> optimum_offset = {0.57, 0.1};
  double sharpness_eps2 = 0.3;  // s = sharpness_eps2 * eps^2
  double amplitude = 1.0;
  double eps = 0.1;
  std::size_t iterations = 10;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  DatasetSpec dataset;
  std::vector<ModelSpec> models;
  AttackSpec attack;
  TrainConfig train;
  std::vector<double> sweep_kappas;
  ToySpec toy;

  static ExperimentConfig desk_default();
  static ExperimentConfig from_json_file(const std::string& path);

  double eps01() const { return attack.eps255 / 255.0; }
  AttackConfig attack_config(std::size_t dim) const;
};

struct TransferMatrix {
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  // cells[i][j] = success rate of source i's adversarial examples on target j
  std::vector<std::vector<double>> cells;

  std::string csv() const;
};

// Deterministic worker pool: fn(i) for i in [0, n); results must be written
// by index so output is identical at any thread count.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

struct Harness {
  ExperimentConfig cfg;
  std::string out_dir;
  std::size_t threads = 1;

  Dataset train_set() const;
  Dataset eval_set() const;
  std::unique_ptr<TrainableClassifier> build_model(const ModelSpec& spec) const;

  // Trains the roster, persists the model binaries, writes train_report.json.
  void cmd_train() const;

  // Full transfer matrix (every roster model as source) plus trace CSV.
  void cmd_attack() const;

  // kappa sweep of the FGNM_K rule on the first model; sweep.csv with
  // columns K, kappa, mean_mag, mean_cos, bb_success, wb_success.
  void cmd_sweep_k() const;

  // Targeted attack against the logit-fused ensemble of all models except
  // hold_out; reports white-box (ensemble) and black-box (hold-out) rates.
  void cmd_ensemble_targeted(const std::string& hold_out) const;

  // Sign / FixedScaleN / AdaptiveScaleK trajectories on the toy landscape,
  // plus a gradient-field grid for quiver plotting.
  void cmd_toy() const;
};

}  // namespace gnm
