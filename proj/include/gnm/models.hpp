#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gnm/tensor.hpp"

namespace gnm {

struct Dataset {
  Tensor inputs;  // N x D
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.shape().at(1); }
  Tensor row(std::size_t i) const;
};

double cross_entropy_loss(const Tensor& logits, std::size_t label);
Tensor softmax(const Tensor& logits);  // log-sum-exp shifted

// Differentiable classifier: logits plus the vector-Jacobian product of the
// logits map, from which the cross-entropy input gradient follows.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::size_t input_dim() const = 0;
  virtual std::size_t class_count() const = 0;
  virtual Tensor logits(const Tensor& x) const = 0;
  virtual Tensor logits_vjp(const Tensor& x, const Tensor& cotangent) const = 0;

  virtual double loss(const Tensor& x, std::size_t y) const;
  virtual Tensor input_gradient(const Tensor& x, std::size_t y) const;
  std::size_t predict(const Tensor& x) const;
};

class TrainableClassifier : public Classifier {
 public:
  // Accumulates parameter gradients over the batch and applies one SGD
  // update. Returns the mean batch loss.
  virtual double batch_update(const std::vector<Tensor>& xs,
                              const std::vector<std::size_t>& ys,
                              double lr) = 0;
  virtual void init_weights(Rng& rng) = 0;
};

class LinearSoftmax : public TrainableClassifier {
 public:
  LinearSoftmax(std::size_t features, std::size_t classes);
  LinearSoftmax(Tensor weights, Tensor bias);  // classes x features, classes

  std::size_t input_dim() const override;
  std::size_t class_count() const override;
  Tensor logits(const Tensor& x) const override;
  Tensor logits_vjp(const Tensor& x, const Tensor& cotangent) const override;
  double batch_update(const std::vector<Tensor>& xs,
                      const std::vector<std::size_t>& ys, double lr) override;
  void init_weights(Rng& rng) override;

  const Tensor& weights() const { return weights_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weights_;
  Tensor bias_;
};

enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };

class Mlp : public TrainableClassifier {
 public:
  struct Layer {
    Tensor weights;  // out x in
    Tensor bias;     // out
    Activation activation = Activation::Identity;
  };

  // Hidden layers are ReLU, the final layer is identity (logits).
  Mlp(std::size_t input, const std::vector<std::size_t>& hidden,
      std::size_t classes);
  explicit Mlp(std::vector<Layer> layers);

  std::size_t input_dim() const override;
  std::size_t class_count() const override;
  Tensor logits(const Tensor& x) const override;
  Tensor logits_vjp(const Tensor& x, const Tensor& cotangent) const override;
  double batch_update(const std::vector<Tensor>& xs,
                      const std::vector<std::size_t>& ys, double lr) override;
  void init_weights(Rng& rng) override;

  const std::vector<Layer>& layers() const { return layers_; }
  // Smallest |pre-activation| over ReLU units; used to dodge kinks in
  // finite-difference checks.
  double min_relu_margin(const Tensor& x) const;

 private:
  std::vector<Layer> layers_;
};

// Smooth analytic 2-D loss L(x) = A * exp(-||x - optimum||^2 / s). The label
// is ignored; prediction is a stub.
class Landscape2D : public Classifier {
 public:
  Landscape2D(double opt_x, double opt_y, double sharpness, double amplitude);

  std::size_t input_dim() const override { return 2; }
  std::size_t class_count() const override { return 1; }
  Tensor logits(const Tensor& x) const override;
  Tensor logits_vjp(const Tensor& x, const Tensor& cotangent) const override;
  double loss(const Tensor& x, std::size_t y) const override;
  Tensor input_gradient(const Tensor& x, std::size_t y) const override;

  double loss_at(const Tensor& x) const;
  Tensor gradient_at(const Tensor& x) const;
  // Spectral bound on the Hessian norm anywhere: 2A/s.
  double hessian_bound() const { return 2.0 * amplitude_ / sharpness_; }
  std::pair<double, double> optimum() const { return {opt_x_, opt_y_}; }

 private:
  double opt_x_, opt_y_, sharpness_, amplitude_;
};

// Logit-fusing ensemble: mean of member logits.
class Ensemble : public Classifier {
 public:
  explicit Ensemble(std::vector<std::shared_ptr<const Classifier>> members);

  std::size_t input_dim() const override;
  std::size_t class_count() const override;
  Tensor logits(const Tensor& x) const override;
  Tensor logits_vjp(const Tensor& x, const Tensor& cotangent) const override;

  const std::vector<std::shared_ptr<const Classifier>>& members() const {
    return members_;
  }

 private:
  std::vector<std::shared_ptr<const Classifier>> members_;
};

struct TrainConfig {
  std::size_t epochs = 40;
  double lr = 0.1;
  std::size_t batch_size = 16;
  bool adversarial = false;
  double adv_eps = 16.0 / 255.0;
  std::size_t adv_iters = 5;
};

struct TrainReport {
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

TrainReport train_sgd(TrainableClassifier& model, const Dataset& data,
                      const TrainConfig& cfg, Rng& rng);

double accuracy(const Classifier& model, const Dataset& data);

// Max relative error between the analytic input gradient and central
// differences with step h; denominator max(|a|, |b|, 1e-12).
double finite_diff_check(const Classifier& model, const Tensor& x,
                         std::size_t y, double h);

// Gaussian clusters with means pushed `separation` away from the centre of
// [0,1]^D along distinct random directions, samples clamped into [0,1].
Dataset synth_dataset(Rng& rng, std::size_t classes, std::size_t per_class,
                      std::size_t dims, double spread,
                      double separation = 0.35);

// Model persistence: manifest (kind, layer shapes, activations) followed by
// the tensors in the shared binary tensor format. Unknown versions refused.
void save_model(const std::string& path, const Classifier& model);
std::unique_ptr<TrainableClassifier> load_model(const std::string& path);

}  // namespace gnm
