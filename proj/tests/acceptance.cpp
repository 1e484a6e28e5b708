// Acceptance suite: one pass/fail line per criterion. Exit code is the
// number of failed criteria.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gnm/attack.hpp"
#include "gnm/harness.hpp"

using namespace gnm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, const std::string& desc, bool ok,
            const std::string& detail = "") {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", n,
              desc.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// ---- criterion 1: sign-vs-gradient cosine band ----------------------------------

void criterion_1(Rng& rng) {
  const std::vector<std::size_t> dims = {2, 8, 64, 1024, 4096};
  bool ok = true;
  std::string detail;
  for (int trial = 0; trial < 10000 && ok; ++trial) {
    std::size_t d = dims[static_cast<std::size_t>(trial) % dims.size()];
    std::vector<double> data(d, 0.0);
    std::size_t nnz = 0;
    bool equal_case = trial % 10 == 0;
    double mag = 0.25 + rng.uniform();
    for (double& v : data) {
      if (rng.uniform() < 0.15) continue;  // keep some zeros
      v = equal_case ? (rng.uniform() < 0.5 ? mag : -mag) : rng.normal();
      if (v != 0.0) ++nnz;
    }
    if (nnz < 2) {
      data[0] = equal_case ? mag : 1.3;
      data[1] = equal_case ? -mag : -0.7;
      nnz = 2;
      for (std::size_t i = 2; i < d; ++i)
        if (data[i] != 0.0) ++nnz;
    }
    Tensor g({d}, data);
    double c = cos_angle(sign(g), g);
    double lower = 1.0 / std::sqrt(norm(g, NormOrder::L0));
    if (!(c > lower && c <= 1.0)) {
      ok = false;
      detail = "band violated at trial " + std::to_string(trial);
    }
    bool at_one = std::abs(c - 1.0) <= 1e-9;
    // equality holds exactly when all non-zero magnitudes agree
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (double v : g.data())
      if (v != 0.0) {
        double a = std::abs(v);
        if (first) { lo = hi = a; first = false; }
        lo = std::min(lo, a);
        hi = std::max(hi, a);
      }
    bool magnitudes_equal = (hi - lo) <= 1e-12 * hi;
    if (at_one != magnitudes_equal) {
      ok = false;
      detail = "equality characterization failed at trial " +
               std::to_string(trial);
    }
  }
  report(1, "cosine band 1/sqrt(||g||_0) < cos(sign(g), g) <= 1 over 10000 gradients", ok,
         detail);
}

// ---- criterion 2: step-rule identities ---------------------

void criterion_2(Rng& rng) {
  bool ok = true;
  double alpha = 1.6 / 255.0;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::size_t d = 2 + rng.uniform_int(255);
    std::vector<double> data(d);
    for (double& v : data)
      do { v = rng.normal(); } while (v == 0.0);
    Tensor g({d}, std::move(data));
    double root_d = std::sqrt(static_cast<double>(d));
    Tensor ds = perturbation_step(g, StepRule::sign_rule(), alpha);
    if (std::abs(norm(ds, NormOrder::L2) - alpha * root_d) >
        1e-12 * alpha * root_d)
      ok = false;
    Tensor dn = perturbation_step(g, StepRule::fixed_scale(), alpha);
    if (cos_angle(dn, g) < 1.0 - 1e-9) ok = false;
    if (std::abs(norm(dn, NormOrder::L2) - alpha * root_d) > 1e-9) ok = false;
  }
  report(2, "step identities: sign magnitude alpha*sqrt(D); FGNM_N exact "
            "direction and magnitude", ok);
}

// ---- criterion 3: adaptive scale monotonicity -------------------------------

void criterion_3(Rng& rng) {
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::size_t d = 2 + rng.uniform_int(127);
    std::vector<double> data(d);
    for (double& v : data)
      do { v = rng.normal(); } while (v == 0.0);
    Tensor g({d}, data);
    // brute-force oracle: full descending sort of 1/|g_k|
    std::vector<double> oracle;
    for (double v : data) oracle.push_back(1.0 / std::abs(v));
    std::sort(oracle.begin(), oracle.end(), std::greater<double>());
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= d; ++k) {
      double z = scale_k(g, k);
      if (z != oracle[k - 1]) ok = false;
      if (z > prev) ok = false;
      prev = z;
    }
    if (scale_k(g, d) != 1.0 / norm(g, NormOrder::Linf)) ok = false;
  }
  report(3, "zeta(K) non-increasing, zeta(D) = 1/||g||_inf, matches "
            "full-sort oracle", ok);
}

// ---- criterion 4: 2-D clipping geometry ---------------------------------------

void criterion_4() {
  Tensor g({2}, {0.5, 0.1});
  Tensor ones({2}, {1.0, 1.0});
  double angle = std::acos(cos_angle(g, ones)) * 180.0 / 3.14159265358979323846;
  bool angle_ok = std::abs(angle - 33.7) <= 0.05;
  // FGNM_N step exceeding the u budget: clip u to eps, keep v
  Tensor step = perturbation_step(g, StepRule::fixed_scale(), 1.0);
  Tensor clipped({2}, {1.0, step[1]});
  bool clip_ok = cos_angle(clipped, g) > cos_angle(sign(g), g);
  report(4, "2-D geometry: angle 33.7 deg +- 0.05; clipped FGNM_N closer to g "
            "than "
            "sign(g)", angle_ok && clip_ok,
         "angle=" + format_real(angle));
}

// ---- criterion 5: gradient correctness ----------------------------------

void criterion_5(Rng& rng) {
  bool ok = true;
  std::string detail;
  auto random_x = [&](std::size_t d) {
    std::vector<double> data(d);
    for (double& v : data) v = rng.uniform();
    return Tensor({d}, std::move(data));
  };

  LinearSoftmax lin(64, 10);
  lin.init_weights(rng);
  auto mlp = std::make_shared<Mlp>(64, std::vector<std::size_t>{32}, 10);
  mlp->init_weights(rng);
  auto mlp2 = std::make_shared<Mlp>(64, std::vector<std::size_t>{24}, 10);
  mlp2->init_weights(rng);
  Ensemble ens({mlp, mlp2});
  Landscape2D land(0.4, 0.6, 0.3, 1.5);

  for (int trial = 0; trial < 100 && ok; ++trial) {
    std::size_t y = rng.uniform_int(10);
    if (finite_diff_check(lin, random_x(64), y, 1e-5) >= 1e-5) {
      ok = false;
      detail = "linear";
    }
    Tensor x = random_x(64);
    for (int nudge = 0; nudge < 50 && mlp->min_relu_margin(x) < 1e-6; ++nudge)
      x = random_x(64);
    if (finite_diff_check(*mlp, x, y, 1e-5) >= 1e-5) {
      ok = false;
      detail = "mlp";
    }
    Tensor xe = random_x(64);
    for (int nudge = 0;
         nudge < 50 && (mlp->min_relu_margin(xe) < 1e-6 ||
                        mlp2->min_relu_margin(xe) < 1e-6);
         ++nudge)
      xe = random_x(64);
    if (finite_diff_check(ens, xe, y, 1e-5) >= 1e-5) {
      ok = false;
      detail = "ensemble";
    }
    Tensor p({2}, {rng.uniform(), rng.uniform()});
    if (finite_diff_check(land, p, 0, 1e-5) >= 1e-5) {
      ok = false;
      detail = "landscape";
    }
  }
  report(5, "finite_diff_check < 1e-5 for linear, MLP, landscape, ensemble "
            "(100 probes each)", ok, detail);
}

// ---- criterion 6: Taylor diagnostic -------------------------------------

void criterion_6() {
  Landscape2D land(0.52, 0.58, 0.5, 1.0);
  Tensor start({2}, {0.3, 0.3});
  std::size_t T = 10;
  auto taylor_error = [&](double alpha) {
    Tensor x_t = start;
    double gain = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      Tensor g = land.gradient_at(x_t);
      Tensor step = perturbation_step(g, StepRule::fixed_scale(), alpha);
      gain += dot(step, g);
      x_t = add(x_t, step);  // eps large enough that nothing clips
    }
    double truth = land.loss_at(x_t) - land.loss_at(start);
    return std::abs(gain - truth);
  };
  double c_hessian = land.hessian_bound();  // 2A/s
  bool ok = true;
  std::string detail;
  for (double alpha : {1e-2, 1e-3}) {
    double err = taylor_error(alpha);
    // per-step remainder <= 0.5 * C_H * ||delta||^2 with ||delta|| = a*sqrt(2)
    double bound = c_hessian * static_cast<double>(T) * alpha * alpha;
    if (err > bound) {
      ok = false;
      detail = "bound exceeded at alpha=" + format_real(alpha);
    }
    double half = taylor_error(alpha / 2.0);
    if (!(half <= err / 3.0)) {
      ok = false;
      detail = "halving alpha gave ratio " + format_real(err / half);
    }
  }
  report(6, "Taylor diagnostic: |taylor_gain - dL| <= C*T*alpha^2, second-order in "
            "alpha", ok, detail);
}

// ---- desk fixture shared by criteria 7-11 --------------------------------

struct Fixture {
  fs::path dir;
  ExperimentConfig cfg;
  std::unique_ptr<Harness> harness;

  Fixture() {
    dir = fs::temp_directory_path() / "gnm_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    cfg = ExperimentConfig::desk_default();
    cfg.seed = 42;
    harness = std::make_unique<Harness>(Harness{cfg, dir.string(), 4});
    harness->cmd_train();
  }
};

// 4-model roster view (the adversarially trained model is not part of the
// transfer protocol).
ExperimentConfig transfer_config(const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  cfg.models.resize(4);
  return cfg;
}

void criterion_7(const Fixture& fx) {
  Harness h{transfer_config(fx.cfg), fx.dir.string(), 4};
  h.cmd_sweep_k();
  auto rows = parse_csv(slurp((fx.dir / "sweep.csv").string()));
  bool ok = rows.size() == fx.cfg.sweep_kappas.size() + 1;
  std::string detail;
  for (std::size_t i = 2; ok && i < rows.size(); ++i) {
    double mag_prev = std::stod(rows[i - 1][2]), mag = std::stod(rows[i][2]);
    double cos_prev = std::stod(rows[i - 1][3]), cosv = std::stod(rows[i][3]);
    if (mag > mag_prev * 1.01) {
      ok = false;
      detail = "mag rose at row " + std::to_string(i);
    }
    if (cosv < cos_prev - 0.01 * std::abs(cos_prev)) {
      ok = false;
      detail = "cos fell at row " + std::to_string(i);
    }
  }
  report(7, "kappa sweep: mean ||delta|| non-increasing, mean cos "
            "non-decreasing over the kappa grid", ok, detail);
}

void criterion_8(const Fixture& fx) {
  auto model = load_model((fx.dir / "models" / "mlp_a.gsmd").string());
  Harness h{fx.cfg, fx.dir.string(), 1};
  Dataset eval = h.eval_set();
  auto mean_final_clip = [&](const std::string& method) {
    AttackConfig ac;
    ac.eps = fx.cfg.eps01();
    ac.iterations = 10;
    ac.rule = StepRule::fixed_scale();
    ac.chain = TransformChain::from_method(method);
    ac.image_shape = fx.cfg.dataset.image_shape;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < eval.size() && n < 200; ++i) {
      if (model->predict(eval.row(i)) != eval.labels[i]) continue;
      Rng rng = Rng(fx.cfg.seed).child(0x888000 + i);
      AttackResult res =
          run_attack(*model, eval.row(i), eval.labels[i], ac, rng);
      sum += res.trace.records.back().clipped_ratio;
      ++n;
    }
    return sum / static_cast<double>(n);
  };
  double plain = mean_final_clip("I");
  double momentum = mean_final_clip("MI");
  report(8, "momentum clipping: final-iteration clipped ratio MI-FGNM_N > "
            "I-FGNM_N", momentum > plain,
         "MI=" + format_real(momentum) + " I=" + format_real(plain));
}

void criterion_9(const Fixture& fx) {
  Harness h{fx.cfg, fx.dir.string(), 1};
  h.cmd_toy();
  std::map<std::string, std::vector<std::vector<double>>> traj;
  for (const char* rule : {"sign", "fgnm_n", "fgnm_k"}) {
    auto rows =
        parse_csv(slurp((fx.dir / (std::string("toy_") + rule + ".csv"))
                            .string()));
    for (std::size_t i = 1; i < rows.size(); ++i)
      traj[rule].push_back({std::stod(rows[i][1]), std::stod(rows[i][2]),
                            std::stod(rows[i][3])});
  }
  double l_sign = traj["sign"].back()[2];
  double l_n = traj["fgnm_n"].back()[2];
  double l_k = traj["fgnm_k"].back()[2];
  bool order_ok = l_k >= l_n && l_n > l_sign;

  // oscillation: opposite-signed displacement in some coordinate over the
  // last two steps
  const auto& s = traj["sign"];
  std::size_t m = s.size();
  double d0a = s[m - 2][0] - s[m - 3][0], d0b = s[m - 1][0] - s[m - 2][0];
  double d1a = s[m - 2][1] - s[m - 3][1], d1b = s[m - 1][1] - s[m - 2][1];
  bool oscillates = (d0a * d0b < 0.0) || (d1a * d1b < 0.0);
  report(9, "toy landscape: L_K >= L_N > L_sign with sign oscillation",
         order_ok && oscillates,
         "L_K=" + format_real(l_k) + " L_N=" + format_real(l_n) +
             " L_sign=" + format_real(l_sign) +
             (oscillates ? "" : " (no oscillation)"));
}

void criterion_10(const Fixture& fx) {
  ExperimentConfig cfg = transfer_config(fx.cfg);
  std::map<std::string, std::vector<std::vector<double>>> matrices;
  for (const char* rule : {"sign", "fgnm_n", "fgnm_k"}) {
    cfg.attack.step_rule = rule;
    Harness h{cfg, fx.dir.string(), 4};
    h.cmd_attack();
    auto rows = parse_csv(slurp((fx.dir / "transfer_matrix.csv").string()));
    std::vector<std::vector<double>> cells;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      std::vector<double> row;
      for (std::size_t j = 1; j < rows[i].size(); ++j)
        row.push_back(std::stod(rows[i][j]));
      cells.push_back(row);
    }
    matrices[rule] = cells;
  }
  bool wb_ok = true;
  std::string detail;
  for (const auto& [rule, cells] : matrices)
    for (std::size_t s = 0; s < cells.size(); ++s)
      if (cells[s][s] < 0.9) {
        wb_ok = false;
        detail = "white-box " + rule + " source " + std::to_string(s) + " = " +
                 format_real(cells[s][s]);
      }
  auto bb_mean = [](const std::vector<std::vector<double>>& cells,
                    std::size_t s) {
    double sum = 0.0;
    for (std::size_t t = 0; t < cells[s].size(); ++t)
      if (t != s) sum += cells[s][t];
    return sum / static_cast<double>(cells[s].size() - 1);
  };
  int n_wins = 0, k_wins = 0;
  std::string margins;
  for (std::size_t s = 0; s < 4; ++s) {
    double base = bb_mean(matrices["sign"], s);
    if (bb_mean(matrices["fgnm_n"], s) >= base) ++n_wins;
    if (bb_mean(matrices["fgnm_k"], s) >= base) ++k_wins;
    margins += " s" + std::to_string(s) + ":" + format_real(base) + "/" +
               format_real(bb_mean(matrices["fgnm_n"], s)) + "/" +
               format_real(bb_mean(matrices["fgnm_k"], s));
  }
  bool bb_ok = n_wins >= 3 && k_wins >= 3;
  report(10, "transfer: FGNM_N and FGNM_K black-box >= FGSM on >= 3 "
             "of 4 sources; white-box >= 0.9",
         wb_ok && bb_ok, detail + " bb(sign/N/K):" + margins);
}

void criterion_11(const Fixture& fx) {
  fs::path alt = fs::temp_directory_path() / "gnm_acceptance_rerun";
  fs::remove_all(alt);
  fs::create_directories(alt);
  ExperimentConfig cfg = transfer_config(fx.cfg);
  cfg.sweep_kappas = {0.2, 0.6, 1.0};

  Harness h1{cfg, fx.dir.string(), 1};
  Harness h2{cfg, alt.string(), 4};
  h1.cmd_train();
  h2.cmd_train();
  h1.cmd_attack();
  h2.cmd_attack();
  h1.cmd_sweep_k();
  h2.cmd_sweep_k();
  h1.cmd_toy();
  h2.cmd_toy();
  bool ok = true;
  std::string detail;
  for (const char* f :
       {"train_report.json", "transfer_matrix.csv", "traces.csv", "sweep.csv",
        "toy_sign.csv", "toy_fgnm_n.csv", "toy_fgnm_k.csv",
        "toy_gradient_field.csv"}) {
    if (slurp((fx.dir / f).string()) != slurp((alt / f).string())) {
      ok = false;
      detail = f;
    }
  }
  for (const auto& m : cfg.models) {
    std::string rel = "models/" + m.name + ".gsmd";
    if (slurp((fx.dir / rel).string()) != slurp((alt / rel).string())) {
      ok = false;
      detail = rel;
    }
  }
  fs::remove_all(alt);
  report(11, "determinism: byte-identical outputs across re-runs and thread "
             "counts", ok, detail);
}

}  // namespace

int main() {
  Rng rng(20240816);
  criterion_1(rng);
  criterion_2(rng);
  criterion_3(rng);
  criterion_4();
  criterion_5(rng);
  criterion_6();

  Fixture fx;
  criterion_7(fx);
  criterion_8(fx);
  criterion_9(fx);
  criterion_10(fx);
  criterion_11(fx);

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
