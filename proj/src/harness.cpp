#include "gnm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace gnm {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(content.data(),
            static_cast<std::streamsize>(content.size()));
}

StepRule rule_from_string(const std::string& name, double kappa) {
  if (name == "sign") return StepRule::sign_rule();
  if (name == "fgnm_n") return StepRule::fixed_scale();
  if (name == "fgnm_k") return StepRule::adaptive_fraction(kappa);
  throw std::invalid_argument("unknown step rule: " + name);
}

std::uint64_t sample_stream(std::size_t source, std::size_t index) {
  return 0x100000ull + static_cast<std::uint64_t>(source) * 1000003ull +
         static_cast<std::uint64_t>(index);
}

}  // namespace

ExperimentConfig ExperimentConfig::desk_default() {
  ExperimentConfig cfg;
  cfg.models = {
      {"mlp_a", "mlp:32", 1, false},
      {"mlp_b", "mlp:48", 2, false},
      {"mlp_c", "mlp:24-24", 3, false},
      {"mlp_d", "mlp:40", 4, false},
      {"mlp_adv", "mlp:32", 5, true},
  };
  cfg.sweep_kappas = {0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4,
                      0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8,
                      0.85, 0.9, 0.95, 1.0};
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  ordered_json j = ordered_json::parse(in);
  ExperimentConfig cfg = desk_default();
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
    cfg.dataset.per_class = d.value("per_class", cfg.dataset.per_class);
    cfg.dataset.eval_per_class =
        d.value("eval_per_class", cfg.dataset.eval_per_class);
    if (d.contains("image_shape"))
      cfg.dataset.image_shape =
          d["image_shape"].get<std::vector<std::size_t>>();
    cfg.dataset.spread = d.value("spread", cfg.dataset.spread);
    cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
  }
  if (j.contains("models")) {
    cfg.models.clear();
    for (const auto& m : j["models"]) {
      ModelSpec spec;
      spec.name = m.at("name").get<std::string>();
      spec.arch = m.value("arch", std::string("mlp:32"));
      spec.seed = m.value("seed", std::uint64_t{0});
      spec.adversarial = m.value("adversarial", false);
      cfg.models.push_back(spec);
    }
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    cfg.attack.method = a.value("method", cfg.attack.method);
    cfg.attack.step_rule = a.value("step_rule", cfg.attack.step_rule);
    cfg.attack.kappa = a.value("kappa", cfg.attack.kappa);
    cfg.attack.eps255 = a.value("eps255", cfg.attack.eps255);
    cfg.attack.iterations = a.value("iterations", cfg.attack.iterations);
    cfg.attack.alpha255 = a.value("alpha255", cfg.attack.alpha255);
    cfg.attack.targeted = a.value("targeted", cfg.attack.targeted);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
  }
  if (j.contains("sweep_kappas"))
    cfg.sweep_kappas = j["sweep_kappas"].get<std::vector<double>>();
  if (j.contains("toy")) {
    const auto& t = j["toy"];
    if (t.contains("start")) cfg.toy.start = t["start"].get<std::vector<double>>();
    if (t.contains("optimum_offset"))
      cfg.toy.optimum_offset = t["optimum_offset"].get<std::vector<double>>();
    cfg.toy.sharpness_eps2 = t.value("sharpness_eps2", cfg.toy.sharpness_eps2);
    cfg.toy.amplitude = t.value("amplitude", cfg.toy.amplitude);
    cfg.toy.eps = t.value("eps", cfg.toy.eps);
    cfg.toy.iterations = t.value("iterations", cfg.toy.iterations);
  }
  return cfg;
}

AttackConfig ExperimentConfig::attack_config(std::size_t dim) const {
  (void)dim;
  AttackConfig a;
  a.eps = eps01();
  a.iterations = attack.iterations;
  a.alpha = attack.alpha255 > 0.0 ? attack.alpha255 / 255.0 : 0.0;
  a.targeted = attack.targeted;
  a.rule = rule_from_string(attack.step_rule, attack.kappa);
  a.chain = TransformChain::from_method(attack.method);
  a.image_shape = dataset.image_shape;
  // default DI range scales with the image
  std::size_t side = std::min(dataset.image_shape[0], dataset.image_shape[1]);
  a.chain.di.high = side;
  a.chain.di.low = side > 2 ? side - 2 : 1;
  return a;
}

std::string TransferMatrix::csv() const {
  std::string out = "source";
  for (const auto& t : targets) out += "," + t;
  out += '\n';
  for (std::size_t i = 0; i < sources.size(); ++i) {
    out += sources[i];
    for (std::size_t j = 0; j < targets.size(); ++j)
      out += "," + format_real(cells[i][j]);
    out += '\n';
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

Dataset Harness::train_set() const {
  Rng rng = Rng(cfg.seed).child(1);
  return synth_dataset(rng, cfg.dataset.classes, cfg.dataset.per_class,
                       cfg.dataset.dim(), cfg.dataset.spread,
                       cfg.dataset.separation);
}

Dataset Harness::eval_set() const {
  Rng rng = Rng(cfg.seed).child(2);
  return synth_dataset(rng, cfg.dataset.classes, cfg.dataset.eval_per_class,
                       cfg.dataset.dim(), cfg.dataset.spread,
                       cfg.dataset.separation);
}

std::unique_ptr<TrainableClassifier> Harness::build_model(
    const ModelSpec& spec) const {
  std::size_t dim = cfg.dataset.dim();
  std::size_t classes = cfg.dataset.classes;
  std::unique_ptr<TrainableClassifier> model;
  if (spec.arch == "linear") {
    model = std::make_unique<LinearSoftmax>(dim, classes);
  } else if (spec.arch.rfind("mlp:", 0) == 0) {
    std::vector<std::size_t> hidden;
    std::stringstream ss(spec.arch.substr(4));
    std::string part;
    while (std::getline(ss, part, '-')) hidden.push_back(std::stoul(part));
    model = std::make_unique<Mlp>(dim, hidden, classes);
  } else {
    throw std::invalid_argument("unknown architecture: " + spec.arch);
  }
  Rng init = Rng(cfg.seed).child(0x4000 + spec.seed);
  model->init_weights(init);
  return model;
}

namespace {

// Shared manifest writer: config echo, seeds, produced files, summary.
void emit_manifest(const std::string& out_dir, const std::string& command,
                   const ExperimentConfig& cfg,
                   const std::vector<std::string>& files,
                   const ordered_json& summary) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["eps255"] = cfg.attack.eps255;
  m["eps01"] = cfg.eps01();
  ordered_json ds;
  ds["classes"] = cfg.dataset.classes;
  ds["per_class"] = cfg.dataset.per_class;
  ds["eval_per_class"] = cfg.dataset.eval_per_class;
  ds["image_shape"] = cfg.dataset.image_shape;
  ds["spread"] = cfg.dataset.spread;
  ds["separation"] = cfg.dataset.separation;
  m["dataset"] = ds;
  ordered_json at;
  at["method"] = cfg.attack.method;
  at["step_rule"] = cfg.attack.step_rule;
  at["kappa"] = cfg.attack.kappa;
  at["iterations"] = cfg.attack.iterations;
  at["targeted"] = cfg.attack.targeted;
  m["attack"] = at;
  ordered_json models = ordered_json::array();
  for (const auto& spec : cfg.models) {
    ordered_json e;
    e["name"] = spec.name;
    e["arch"] = spec.arch;
    e["seed"] = spec.seed;
    e["adversarial"] = spec.adversarial;
    models.push_back(e);
  }
  m["models"] = models;
  m["files"] = files;
  m["summary"] = summary;
  write_file(out_dir + "/manifest_" + command + ".json", m.dump(2) + "\n");
}

}  // namespace

void Harness::cmd_train() const {
  if (cfg.models.empty()) throw std::invalid_argument("no models in roster");
  Dataset train = train_set();
  Dataset eval = eval_set();
  struct Row {
    std::string name;
    TrainReport report;
    double eval_acc = 0.0;
  };
  std::vector<Row> rows(cfg.models.size());
  std::vector<std::unique_ptr<TrainableClassifier>> models(cfg.models.size());
  parallel_for(cfg.models.size(), threads, [&](std::size_t i) {
    const ModelSpec& spec = cfg.models[i];
    auto model = build_model(spec);
    TrainConfig tc = cfg.train;
    tc.adversarial = spec.adversarial;
    tc.adv_eps = cfg.eps01();
    Rng rng = Rng(cfg.seed).child(0x5000 + spec.seed);
    TrainReport rep = train_sgd(*model, train, tc, rng);
    rows[i] = {spec.name, rep, accuracy(*model, eval)};
    models[i] = std::move(model);
  });
  std::vector<std::string> files;
  for (std::size_t i = 0; i < cfg.models.size(); ++i) {
    std::string path = out_dir + "/models/" + cfg.models[i].name + ".gsmd";
    fs::create_directories(out_dir + "/models");
    save_model(path, *models[i]);
    files.push_back(path);
  }
  ordered_json summary = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json e;
    e["name"] = r.name;
    e["train_accuracy"] = r.report.train_accuracy;
    e["eval_accuracy"] = r.eval_acc;
    e["final_loss"] = r.report.final_loss;
    summary.push_back(e);
  }
  write_file(out_dir + "/train_report.json", summary.dump(2) + "\n");
  files.push_back(out_dir + "/train_report.json");
  emit_manifest(out_dir, "train", cfg, files, summary);
}

namespace {

struct LoadedModels {
  std::vector<std::string> names;
  std::vector<std::unique_ptr<TrainableClassifier>> models;
};

LoadedModels load_roster(const ExperimentConfig& cfg,
                         const std::string& out_dir) {
  LoadedModels lm;
  for (const auto& spec : cfg.models) {
    std::string path = out_dir + "/models/" + spec.name + ".gsmd";
    if (!fs::exists(path))
      throw std::runtime_error("missing model file (run train first): " + path);
    lm.names.push_back(spec.name);
    lm.models.push_back(load_model(path));
  }
  return lm;
}

std::size_t draw_target(Rng& rng, std::size_t y, std::size_t classes) {
  return (y + 1 + rng.uniform_int(classes - 1)) % classes;
}

}  // namespace

void Harness::cmd_attack() const {
  LoadedModels lm = load_roster(cfg, out_dir);
  Dataset eval = eval_set();
  AttackConfig base = cfg.attack_config(cfg.dataset.dim());
  base.chain.validate(base.image_shape);

  TransferMatrix matrix;
  matrix.sources = lm.names;
  matrix.targets = lm.names;
  matrix.cells.assign(lm.names.size(),
                      std::vector<double>(lm.names.size(), 0.0));
  std::string traces = trace_csv_header();

  for (std::size_t s = 0; s < lm.models.size(); ++s) {
    const Classifier& source = *lm.models[s];
    std::vector<std::size_t> correct;
    for (std::size_t i = 0; i < eval.size(); ++i)
      if (source.predict(eval.row(i)) == eval.labels[i]) correct.push_back(i);
    if (correct.empty()) continue;

    struct PerSample {
      AttackResult result;
      std::size_t target_label = 0;
      std::size_t sample = 0;
    };
    std::vector<PerSample> runs(correct.size());
    parallel_for(correct.size(), threads, [&](std::size_t c) {
      std::size_t i = correct[c];
      Tensor x = eval.row(i);
      std::size_t y = eval.labels[i];
      AttackConfig ac = base;
      Rng rng = Rng(cfg.seed).child(sample_stream(s, i));
      if (ac.targeted) {
        Rng trng = Rng(cfg.seed).child(0x7000000ull + i);
        ac.target = draw_target(trng, y, cfg.dataset.classes);
      }
      runs[c] = {run_attack(source, x, y, ac, rng), ac.target, i};
    });

    std::size_t k_resolved =
        base.rule.kind == StepKind::AdaptiveScaleK
            ? base.rule.resolve_k(cfg.dataset.dim()) : 0;
    for (const auto& r : runs) {
      TraceRowMeta meta{lm.names[s] + "/" + std::to_string(r.sample),
                        base.chain.name(), base.rule.name(), k_resolved};
      append_trace_csv(traces, meta, r.result.trace);
    }
    for (std::size_t t = 0; t < lm.models.size(); ++t) {
      std::size_t hits = 0;
      for (const auto& r : runs) {
        std::size_t pred = lm.models[t]->predict(r.result.x_adv);
        bool ok = base.targeted ? pred == r.target_label
                                : pred != eval.labels[r.sample];
        if (ok) ++hits;
      }
      matrix.cells[s][t] =
          static_cast<double>(hits) / static_cast<double>(runs.size());
    }
  }
  write_file(out_dir + "/transfer_matrix.csv", matrix.csv());
  write_file(out_dir + "/traces.csv", traces);
  ordered_json summary;
  summary["matrix_rows"] = matrix.sources.size();
  for (std::size_t s = 0; s < matrix.sources.size(); ++s)
    summary["white_box_" + matrix.sources[s]] = matrix.cells[s][s];
  emit_manifest(out_dir, "attack", cfg,
                {out_dir + "/transfer_matrix.csv", out_dir + "/traces.csv"},
                summary);
}

void Harness::cmd_sweep_k() const {
  if (cfg.sweep_kappas.empty())
    throw std::invalid_argument("sweep: empty kappa grid");
  for (double k : cfg.sweep_kappas)
    if (k <= 0.0 || k > 1.0)
      throw std::invalid_argument("sweep: kappa outside (0, 1]");
  LoadedModels lm = load_roster(cfg, out_dir);
  Dataset eval = eval_set();
  const Classifier& source = *lm.models[0];
  std::vector<std::size_t> correct;
  for (std::size_t i = 0; i < eval.size(); ++i)
    if (source.predict(eval.row(i)) == eval.labels[i]) correct.push_back(i);

  std::string out = "K,kappa,mean_mag,mean_cos,bb_success,wb_success\n";
  for (double kappa : cfg.sweep_kappas) {
    AttackConfig ac = cfg.attack_config(cfg.dataset.dim());
    ac.rule = StepRule::adaptive_fraction(kappa);
    std::size_t k_resolved = ac.rule.resolve_k(cfg.dataset.dim());
    std::vector<AttackResult> results(correct.size());
    parallel_for(correct.size(), threads, [&](std::size_t c) {
      std::size_t i = correct[c];
      Rng rng = Rng(cfg.seed).child(sample_stream(0, i));
      results[c] = run_attack(source, eval.row(i), eval.labels[i], ac, rng);
    });
    double mag = 0.0, cosv = 0.0;
    std::size_t count = 0, wb = 0;
    double bb = 0.0;
    for (std::size_t c = 0; c < results.size(); ++c) {
      for (const auto& rec : results[c].trace.records) {
        mag += rec.mag_post;
        cosv += rec.cos_post;
        ++count;
      }
      if (results[c].success) ++wb;
    }
    std::size_t bb_models = lm.models.size() - 1;
    if (bb_models > 0) {
      std::size_t bb_hits = 0;
      for (std::size_t t = 1; t < lm.models.size(); ++t)
        for (std::size_t c = 0; c < results.size(); ++c)
          if (lm.models[t]->predict(results[c].x_adv) !=
              eval.labels[correct[c]])
            ++bb_hits;
      bb = static_cast<double>(bb_hits) /
           static_cast<double>(bb_models * results.size());
    }
    out += std::to_string(k_resolved) + "," + format_real(kappa) + "," +
           format_real(mag / static_cast<double>(count)) + "," +
           format_real(cosv / static_cast<double>(count)) + "," +
           format_real(bb) + "," +
           format_real(static_cast<double>(wb) /
                       static_cast<double>(results.size())) +
           "\n";
  }
  write_file(out_dir + "/sweep.csv", out);
  ordered_json summary;
  summary["grid_size"] = cfg.sweep_kappas.size();
  summary["samples"] = correct.size();
  emit_manifest(out_dir, "sweep-k", cfg, {out_dir + "/sweep.csv"}, summary);
}

void Harness::cmd_ensemble_targeted(const std::string& hold_out) const {
  if (cfg.models.size() < 2)
    throw std::invalid_argument("ensemble-targeted: roster must have >= 2 models");
  LoadedModels lm = load_roster(cfg, out_dir);
  std::ptrdiff_t hold_idx = -1;
  for (std::size_t i = 0; i < lm.names.size(); ++i)
    if (lm.names[i] == hold_out) hold_idx = static_cast<std::ptrdiff_t>(i);
  if (hold_idx < 0)
    throw std::invalid_argument("hold-out model not in roster: " + hold_out);

  std::vector<std::shared_ptr<const Classifier>> members;
  for (std::size_t i = 0; i < lm.models.size(); ++i)
    if (static_cast<std::ptrdiff_t>(i) != hold_idx)
      members.push_back(std::shared_ptr<const Classifier>(
          lm.models[i].get(), [](const Classifier*) {}));
  Ensemble ensemble(std::move(members));
  const Classifier& holdout = *lm.models[static_cast<std::size_t>(hold_idx)];

  Dataset eval = eval_set();
  std::vector<std::size_t> correct;
  for (std::size_t i = 0; i < eval.size(); ++i)
    if (ensemble.predict(eval.row(i)) == eval.labels[i]) correct.push_back(i);

  AttackConfig ac = cfg.attack_config(cfg.dataset.dim());
  ac.targeted = true;
  ac.iterations = 20;             // targeted defaults: T = 20, alpha = eps/20
  ac.alpha = 0.0;
  struct Run {
    AttackResult result;
    std::size_t target = 0;
  };
  std::vector<Run> runs(correct.size());
  parallel_for(correct.size(), threads, [&](std::size_t c) {
    std::size_t i = correct[c];
    Rng trng = Rng(cfg.seed).child(0x7000000ull + i);
    AttackConfig local = ac;
    local.target = draw_target(trng, eval.labels[i], cfg.dataset.classes);
    Rng rng = Rng(cfg.seed).child(sample_stream(0x77, i));
    runs[c] = {run_attack(ensemble, eval.row(i), eval.labels[i], local, rng),
               local.target};
  });
  std::size_t wb = 0, bb = 0;
  for (const auto& r : runs) {
    if (ensemble.predict(r.result.x_adv) == r.target) ++wb;
    if (holdout.predict(r.result.x_adv) == r.target) ++bb;
  }
  double n = static_cast<double>(runs.size());
  ordered_json report;
  report["hold_out"] = hold_out;
  report["samples"] = runs.size();
  report["ensemble_targeted_success"] = runs.empty() ? 0.0 : wb / n;
  report["hold_out_targeted_success"] = runs.empty() ? 0.0 : bb / n;
  write_file(out_dir + "/ensemble_targeted.json", report.dump(2) + "\n");
  emit_manifest(out_dir, "ensemble-targeted", cfg,
                {out_dir + "/ensemble_targeted.json"}, report);
}

void Harness::cmd_toy() const {
  const ToySpec& toy = cfg.toy;
  if (toy.start.size() != 2 || toy.optimum_offset.size() != 2)
    throw std::invalid_argument("toy: start and optimum_offset must be 2-D");
  double eps = toy.eps;
  double ox = toy.start[0] + eps * toy.optimum_offset[0];
  double oy = toy.start[1] + eps * toy.optimum_offset[1];
  if (std::abs(toy.optimum_offset[0]) > 1.0 ||
      std::abs(toy.optimum_offset[1]) > 1.0)
    std::cerr << "warning: toy optimum lies outside the eps-box\n";
  Landscape2D landscape(ox, oy, toy.sharpness_eps2 * eps * eps,
                        toy.amplitude);
  Tensor start({2}, {toy.start[0], toy.start[1]});

  std::vector<StepRule> rules = {
      StepRule::sign_rule(), StepRule::fixed_scale(),
      StepRule::adaptive_fraction(cfg.attack.kappa)};
  std::vector<std::string> files;
  ordered_json summary;
  for (const auto& rule : rules) {
    AttackConfig ac;
    ac.eps = eps;
    ac.iterations = toy.iterations;
    ac.rule = rule;
    Rng rng = Rng(cfg.seed).child(0x70);
    // replay the trajectory from the trace to emit per-point positions
    Tensor x_t = start;
    std::string csv = "t,x0,x1,loss\n";
    csv += "0," + format_real(x_t[0]) + "," + format_real(x_t[1]) + "," +
           format_real(landscape.loss_at(x_t)) + "\n";
    AttackResult res = run_attack(landscape, start, 0, ac, rng);
    // replay the same loop to emit per-point positions
    Tensor cur = start;
    for (std::size_t t = 0; t < ac.iterations; ++t) {
      Tensor g = landscape.input_gradient(cur, 0);
      Tensor step = Tensor::zeros({2});
      if (norm(g, NormOrder::L2) != 0.0)
        step = perturbation_step(g, rule, ac.step_size());
      cur = clip_eps_ball(add(cur, step), start, eps, ac.valid_range_clip);
      csv += std::to_string(t + 1) + "," + format_real(cur[0]) + "," +
             format_real(cur[1]) + "," + format_real(landscape.loss_at(cur)) +
             "\n";
    }
    std::string path = out_dir + "/toy_" + rule.name() + ".csv";
    write_file(path, csv);
    files.push_back(path);
    summary["final_loss_" + rule.name()] =
        res.trace.records.back().loss;
  }
  // gradient field grid for quiver plots
  std::string grid = "x0,x1,g0,g1,loss\n";
  std::size_t steps = 21;
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j < steps; ++j) {
      double fx = toy.start[0] - 1.5 * eps +
                  3.0 * eps * static_cast<double>(i) /
                      static_cast<double>(steps - 1);
      double fy = toy.start[1] - 1.5 * eps +
                  3.0 * eps * static_cast<double>(j) /
                      static_cast<double>(steps - 1);
      Tensor p({2}, {fx, fy});
      Tensor g = landscape.gradient_at(p);
      grid += format_real(fx) + "," + format_real(fy) + "," +
              format_real(g[0]) + "," + format_real(g[1]) + "," +
              format_real(landscape.loss_at(p)) + "\n";
    }
  write_file(out_dir + "/toy_gradient_field.csv", grid);
  files.push_back(out_dir + "/toy_gradient_field.csv");
  emit_manifest(out_dir, "toy", cfg, files, summary);
}

}  // namespace gnm
