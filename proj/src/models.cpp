#include "gnm/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace gnm {

Tensor Dataset::row(std::size_t i) const {
  std::size_t d = dim();
  std::vector<double> buf(d);
  for (std::size_t j = 0; j < d; ++j) buf[j] = inputs[i * d + j];
  return Tensor({d}, std::move(buf));
}

Tensor softmax(const Tensor& logits) {
  double m = logits[0];
  for (double v : logits.data()) m = std::max(m, v);
  Tensor out = logits;
  double z = 0.0;
  for (double& v : out.raw()) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : out.raw()) v /= z;
  return out;
}

double cross_entropy_loss(const Tensor& logits, std::size_t label) {
  if (label >= logits.size())
    throw std::invalid_argument("cross_entropy_loss: label out of range");
  double m = logits[0];
  for (double v : logits.data()) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - m);
  return std::log(z) - (logits[label] - m);
}

double Classifier::loss(const Tensor& x, std::size_t y) const {
  return cross_entropy_loss(logits(x), y);
}

Tensor Classifier::input_gradient(const Tensor& x, std::size_t y) const {
  Tensor p = softmax(logits(x));
  if (y >= p.size())
    throw std::invalid_argument("input_gradient: label out of range");
  p[y] -= 1.0;  // dL/dlogits = softmax - onehot
  return logits_vjp(x, p);
}

std::size_t Classifier::predict(const Tensor& x) const {
  Tensor l = logits(x);
  std::size_t best = 0;
  for (std::size_t i = 1; i < l.size(); ++i)
    if (l[i] > l[best]) best = i;
  return best;
}

// ---- LinearSoftmax ------------------------------------------------------

LinearSoftmax::LinearSoftmax(std::size_t features, std::size_t classes)
    : weights_(Tensor::zeros({classes, features})),
      bias_(Tensor::zeros({classes})) {}

LinearSoftmax::LinearSoftmax(Tensor weights, Tensor bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (weights_.rank() != 2 || bias_.rank() != 1 ||
      weights_.shape()[0] != bias_.shape()[0])
    throw std::invalid_argument("LinearSoftmax: weight/bias shape mismatch");
}

std::size_t LinearSoftmax::input_dim() const { return weights_.shape()[1]; }
std::size_t LinearSoftmax::class_count() const { return weights_.shape()[0]; }

Tensor LinearSoftmax::logits(const Tensor& x) const {
  std::size_t c = class_count(), d = input_dim();
  if (x.size() != d)
    throw std::invalid_argument("LinearSoftmax: input dimension mismatch");
  std::vector<double> out(c);
  for (std::size_t i = 0; i < c; ++i) {
    double s = bias_[i];
    for (std::size_t j = 0; j < d; ++j) s += weights_[i * d + j] * x[j];
    out[i] = s;
  }
  return Tensor({c}, std::move(out));
}

Tensor LinearSoftmax::logits_vjp(const Tensor& x, const Tensor& cot) const {
  std::size_t c = class_count(), d = input_dim();
  if (cot.size() != c)
    throw std::invalid_argument("LinearSoftmax: cotangent length mismatch");
  std::vector<double> g(d, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < d; ++j) g[j] += cot[i] * weights_[i * d + j];
  Tensor out({d}, std::move(g));
  (void)x;
  return out;
}

double LinearSoftmax::batch_update(const std::vector<Tensor>& xs,
                                   const std::vector<std::size_t>& ys,
                                   double lr) {
  std::size_t c = class_count(), d = input_dim(), n = xs.size();
  if (n == 0 || ys.size() != n)
    throw std::invalid_argument("batch_update: empty or mismatched batch");
  std::vector<double> dw(c * d, 0.0), db(c, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    Tensor l = logits(xs[k]);
    total += cross_entropy_loss(l, ys[k]);
    Tensor p = softmax(l);
    p[ys[k]] -= 1.0;
    for (std::size_t i = 0; i < c; ++i) {
      db[i] += p[i];
      for (std::size_t j = 0; j < d; ++j) dw[i * d + j] += p[i] * xs[k][j];
    }
  }
  double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < c * d; ++i) weights_[i] -= lr * inv * dw[i];
  for (std::size_t i = 0; i < c; ++i) bias_[i] -= lr * inv * db[i];
  return total * inv;
}

void LinearSoftmax::init_weights(Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(input_dim()));
  for (double& v : weights_.raw()) v = s * rng.normal();
  for (double& v : bias_.raw()) v = 0.0;
}

// ---- Mlp ----------------------------------------------------------------

Mlp::Mlp(std::size_t input, const std::vector<std::size_t>& hidden,
         std::size_t classes) {
  std::size_t in = input;
  for (std::size_t h : hidden) {
    layers_.push_back({Tensor::zeros({h, in}), Tensor::zeros({h}),
                       Activation::Relu});
    in = h;
  }
  layers_.push_back({Tensor::zeros({classes, in}), Tensor::zeros({classes}),
                     Activation::Identity});
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
  for (std::size_t i = 1; i < layers_.size(); ++i)
    if (layers_[i].weights.shape()[1] != layers_[i - 1].weights.shape()[0])
      throw std::invalid_argument("Mlp: layer dimensions do not chain");
  if (layers_.back().activation != Activation::Identity)
    throw std::invalid_argument("Mlp: final layer must be identity");
}

std::size_t Mlp::input_dim() const { return layers_.front().weights.shape()[1]; }
std::size_t Mlp::class_count() const { return layers_.back().weights.shape()[0]; }

namespace {

void affine(const Mlp::Layer& l, const std::vector<double>& in,
            std::vector<double>& out) {
  std::size_t rows = l.weights.shape()[0], cols = l.weights.shape()[1];
  out.assign(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = l.bias[i];
    for (std::size_t j = 0; j < cols; ++j) s += l.weights[i * cols + j] * in[j];
    out[i] = s;
  }
}

double act_deriv(Activation a, double z) {
  // ReLU subgradient at 0 is 0
  return a == Activation::Relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

double act_apply(Activation a, double z) {
  return a == Activation::Relu ? (z > 0.0 ? z : 0.0) : z;
}

struct ForwardTrace {
  // pre[l] = z of layer l, post[l] = activation output; post[-1] is x
  std::vector<std::vector<double>> pre, post;
};

ForwardTrace forward_all(const std::vector<Mlp::Layer>& layers,
                         const Tensor& x) {
  ForwardTrace tr;
  std::vector<double> a(x.data().begin(), x.data().end());
  for (const auto& l : layers) {
    std::vector<double> z;
    affine(l, a, z);
    tr.pre.push_back(z);
    for (double& v : z) v = act_apply(l.activation, v);
    tr.post.push_back(z);
    a = tr.post.back();
  }
  return tr;
}

// Backprop the cotangent at the logits down to the input; optionally also
// collects parameter gradients.
std::vector<double> backward(const std::vector<Mlp::Layer>& layers,
                             const Tensor& x, const ForwardTrace& tr,
                             const Tensor& cot,
                             std::vector<std::vector<double>>* dw = nullptr,
                             std::vector<std::vector<double>>* db = nullptr) {
  std::vector<double> delta(cot.data().begin(), cot.data().end());
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    std::size_t rows = l.weights.shape()[0], cols = l.weights.shape()[1];
    for (std::size_t i = 0; i < rows; ++i)
      delta[i] *= act_deriv(l.activation, tr.pre[li][i]);
    const std::vector<double>* below;
    std::vector<double> xbuf;
    if (li == 0) {
      xbuf.assign(x.data().begin(), x.data().end());
      below = &xbuf;
    } else {
      below = &tr.post[li - 1];
    }
    if (dw) {
      for (std::size_t i = 0; i < rows; ++i) {
        (*db)[li][i] += delta[i];
        for (std::size_t j = 0; j < cols; ++j)
          (*dw)[li][i * cols + j] += delta[i] * (*below)[j];
      }
    }
    std::vector<double> next(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        next[j] += delta[i] * l.weights[i * cols + j];
    delta = std::move(next);
  }
  return delta;
}

}  // namespace

Tensor Mlp::logits(const Tensor& x) const {
  if (x.size() != input_dim())
    throw std::invalid_argument("Mlp: input dimension mismatch");
  ForwardTrace tr = forward_all(layers_, x);
  return Tensor({class_count()}, tr.post.back());
}

Tensor Mlp::logits_vjp(const Tensor& x, const Tensor& cot) const {
  if (x.size() != input_dim())
    throw std::invalid_argument("Mlp: input dimension mismatch");
  if (cot.size() != class_count())
    throw std::invalid_argument("Mlp: cotangent length mismatch");
  ForwardTrace tr = forward_all(layers_, x);
  return Tensor({input_dim()}, backward(layers_, x, tr, cot));
}

double Mlp::batch_update(const std::vector<Tensor>& xs,
                         const std::vector<std::size_t>& ys, double lr) {
  std::size_t n = xs.size();
  if (n == 0 || ys.size() != n)
    throw std::invalid_argument("batch_update: empty or mismatched batch");
  std::vector<std::vector<double>> dw(layers_.size()), db(layers_.size());
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    dw[li].assign(layers_[li].weights.size(), 0.0);
    db[li].assign(layers_[li].bias.size(), 0.0);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ForwardTrace tr = forward_all(layers_, xs[k]);
    Tensor l({class_count()}, tr.post.back());
    total += cross_entropy_loss(l, ys[k]);
    Tensor p = softmax(l);
    p[ys[k]] -= 1.0;
    backward(layers_, xs[k], tr, p, &dw, &db);
  }
  double inv = 1.0 / static_cast<double>(n);
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    for (std::size_t i = 0; i < layers_[li].weights.size(); ++i)
      layers_[li].weights[i] -= lr * inv * dw[li][i];
    for (std::size_t i = 0; i < layers_[li].bias.size(); ++i)
      layers_[li].bias[i] -= lr * inv * db[li][i];
  }
  return total * inv;
}

void Mlp::init_weights(Rng& rng) {
  for (auto& l : layers_) {
    double s = std::sqrt(2.0 / static_cast<double>(l.weights.shape()[1]));
    for (double& v : l.weights.raw()) v = s * rng.normal();
    for (double& v : l.bias.raw()) v = 0.0;
  }
}

double Mlp::min_relu_margin(const Tensor& x) const {
  ForwardTrace tr = forward_all(layers_, x);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li < layers_.size(); ++li)
    if (layers_[li].activation == Activation::Relu)
      for (double z : tr.pre[li]) m = std::min(m, std::abs(z));
  return m;
}

// ---- Landscape2D --------------------------------------------------------

Landscape2D::Landscape2D(double opt_x, double opt_y, double sharpness,
                         double amplitude)
    : opt_x_(opt_x), opt_y_(opt_y), sharpness_(sharpness),
      amplitude_(amplitude) {
  if (sharpness <= 0.0 || amplitude <= 0.0)
    throw std::invalid_argument("Landscape2D: sharpness and amplitude must be positive");
}

double Landscape2D::loss_at(const Tensor& x) const {
  if (x.size() != 2)
    throw std::invalid_argument("Landscape2D: input must be 2-D");
  double dx = x[0] - opt_x_, dy = x[1] - opt_y_;
  return amplitude_ * std::exp(-(dx * dx + dy * dy) / sharpness_);
}

Tensor Landscape2D::gradient_at(const Tensor& x) const {
  double dx = x[0] - opt_x_, dy = x[1] - opt_y_;
  double f = -2.0 * amplitude_ / sharpness_ *
             std::exp(-(dx * dx + dy * dy) / sharpness_);
  return Tensor({2}, {f * dx, f * dy});
}

Tensor Landscape2D::logits(const Tensor& x) const {
  return Tensor({1}, {loss_at(x)});
}

Tensor Landscape2D::logits_vjp(const Tensor& x, const Tensor& cot) const {
  return scale(gradient_at(x), cot[0]);
}

double Landscape2D::loss(const Tensor& x, std::size_t) const {
  return loss_at(x);
}

Tensor Landscape2D::input_gradient(const Tensor& x, std::size_t) const {
  return gradient_at(x);
}

// ---- Ensemble -----------------------------------------------------------

Ensemble::Ensemble(std::vector<std::shared_ptr<const Classifier>> members)
    : members_(std::move(members)) {
  if (members_.empty()) throw std::invalid_argument("Ensemble: no members");
  for (const auto& m : members_)
    if (m->input_dim() != members_[0]->input_dim() ||
        m->class_count() != members_[0]->class_count())
      throw std::invalid_argument("Ensemble: member dimensions disagree");
}

std::size_t Ensemble::input_dim() const { return members_[0]->input_dim(); }
std::size_t Ensemble::class_count() const { return members_[0]->class_count(); }

Tensor Ensemble::logits(const Tensor& x) const {
  Tensor acc = members_[0]->logits(x);
  for (std::size_t i = 1; i < members_.size(); ++i)
    acc = add(acc, members_[i]->logits(x));
  return scale(acc, 1.0 / static_cast<double>(members_.size()));
}

Tensor Ensemble::logits_vjp(const Tensor& x, const Tensor& cot) const {
  Tensor scaled = scale(cot, 1.0 / static_cast<double>(members_.size()));
  Tensor acc = members_[0]->logits_vjp(x, scaled);
  for (std::size_t i = 1; i < members_.size(); ++i)
    acc = add(acc, members_[i]->logits_vjp(x, scaled));
  return acc;
}

// ---- training -----------------------------------------------------------

namespace {

// Inline I-FGSM for adversarial training; kept local so models does not
// depend on the attack module.
Tensor ifgsm_example(const Classifier& model, const Tensor& x, std::size_t y,
                     double eps, std::size_t iters) {
  double alpha = eps / static_cast<double>(iters);
  Tensor adv = x;
  for (std::size_t t = 0; t < iters; ++t) {
    Tensor g = model.input_gradient(adv, y);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      double v = adv[i] + alpha * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
      v = std::min(std::max(v, x[i] - eps), x[i] + eps);
      adv[i] = std::min(std::max(v, 0.0), 1.0);
    }
  }
  return adv;
}

}  // namespace

TrainReport train_sgd(TrainableClassifier& model, const Dataset& data,
                      const TrainConfig& cfg, Rng& rng) {
  if (data.size() == 0) throw std::invalid_argument("train_sgd: empty dataset");
  std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the deterministic stream
    for (std::size_t i = n; i-- > 1;) {
      std::size_t j = rng.uniform_int(i + 1);
      std::swap(order[i], order[j]);
    }
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, n);
      std::vector<Tensor> xs;
      std::vector<std::size_t> ys;
      for (std::size_t i = start; i < end; ++i) {
        xs.push_back(data.row(order[i]));
        ys.push_back(data.labels[order[i]]);
      }
      if (cfg.adversarial) {
        std::size_t clean = xs.size();
        for (std::size_t i = 0; i < clean; ++i) {
          xs.push_back(ifgsm_example(model, xs[i], ys[i], cfg.adv_eps,
                                     cfg.adv_iters));
          ys.push_back(ys[i]);
        }
      }
      double loss = model.batch_update(xs, ys, cfg.lr);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_sgd: non-finite loss at epoch " +
                                 std::to_string(epoch));
      report.final_loss = loss;
    }
  }
  report.train_accuracy = accuracy(model, data);
  return report;
}

double accuracy(const Classifier& model, const Dataset& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (model.predict(data.row(i)) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double finite_diff_check(const Classifier& model, const Tensor& x,
                         std::size_t y, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");
  Tensor analytic = model.input_gradient(x, y);
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    double up = model.loss(probe, y);
    probe[i] = x[i] - h;
    double down = model.loss(probe, y);
    probe[i] = x[i];
    double numeric = (up - down) / (2.0 * h);
    double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-12});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

Dataset synth_dataset(Rng& rng, std::size_t classes, std::size_t per_class,
                      std::size_t dims, double spread, double separation) {
  if (classes == 0 || per_class == 0 || dims == 0)
    throw std::invalid_argument("synth_dataset: counts must be positive");
  // Distinct mean directions: random unit vectors from one child stream.
  Rng mean_rng = rng.child(0xA11CE);
  std::vector<std::vector<double>> means(classes, std::vector<double>(dims));
  for (std::size_t c = 0; c < classes; ++c) {
    double nrm = 0.0;
    for (double& v : means[c]) {
      v = mean_rng.normal();
      nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    for (double& v : means[c]) v = 0.5 + separation * v / nrm;
  }
  std::size_t n = classes * per_class;
  std::vector<double> inputs(n * dims);
  std::vector<std::size_t> labels(n);
  Rng point_rng = rng.child(0xBEEF);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      std::size_t idx = c * per_class + k;
      labels[idx] = c;
      for (std::size_t j = 0; j < dims; ++j) {
        double v = means[c][j] + spread * point_rng.normal();
        inputs[idx * dims + j] = std::min(std::max(v, 0.0), 1.0);
      }
    }
  }
  return Dataset{Tensor({n, dims}, std::move(inputs)), std::move(labels),
                 classes};
}

// ---- persistence --------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'G', 'S', 'M', 'D'};
constexpr std::uint16_t kModelVersion = 1;
constexpr std::uint16_t kKindLinear = 1;
constexpr std::uint16_t kKindMlp = 2;

void put_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw std::runtime_error("model load: truncated stream");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void save_model(const std::string& path, const Classifier& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(kModelMagic, 4);
  put_u16(out, kModelVersion);
  if (const auto* lin = dynamic_cast<const LinearSoftmax*>(&model)) {
    put_u16(out, kKindLinear);
    save_tensor(out, lin->weights());
    save_tensor(out, lin->bias());
  } else if (const auto* mlp = dynamic_cast<const Mlp*>(&model)) {
    put_u16(out, kKindMlp);
    put_u16(out, static_cast<std::uint16_t>(mlp->layers().size()));
    for (const auto& l : mlp->layers())
      put_u16(out, static_cast<std::uint16_t>(l.activation));
    for (const auto& l : mlp->layers()) {
      save_tensor(out, l.weights);
      save_tensor(out, l.bias);
    }
  } else {
    throw std::invalid_argument("save_model: unsupported model kind");
  }
}

std::unique_ptr<TrainableClassifier> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
    throw std::runtime_error("model load: bad magic");
  if (get_u16(in) != kModelVersion)
    throw std::runtime_error("model load: unknown format version");
  std::uint16_t kind = get_u16(in);
  if (kind == kKindLinear) {
    Tensor w = load_tensor(in);
    Tensor b = load_tensor(in);
    return std::make_unique<LinearSoftmax>(std::move(w), std::move(b));
  }
  if (kind == kKindMlp) {
    std::uint16_t count = get_u16(in);
    std::vector<Activation> acts(count);
    for (auto& a : acts) a = static_cast<Activation>(get_u16(in));
    std::vector<Mlp::Layer> layers;
    for (std::uint16_t i = 0; i < count; ++i) {
      Tensor w = load_tensor(in);
      Tensor b = load_tensor(in);
      layers.push_back({std::move(w), std::move(b), acts[i]});
    }
    return std::make_unique<Mlp>(std::move(layers));
  }
  throw std::runtime_error("model load: unknown model kind");
}

}  // namespace gnm
