#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "gnm/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"FGSM-family L-inf attacks with non-sign (FGNM) step rules"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--threads", threads, "worker threads (1 = serial)");

  auto* train = app.add_subcommand("train", "train the model roster");
  auto* attack =
      app.add_subcommand("attack", "run the transfer-matrix attack protocol");
  auto* sweep = app.add_subcommand("sweep-k", "sweep the FGNM_K kappa grid");
  auto* ens = app.add_subcommand("ensemble-targeted",
                                 "targeted attack on a logit-fused ensemble");
  std::string hold_out;
  ens->add_option("--hold-out", hold_out, "black-box hold-out model name")
      ->required();
  auto* toy =
      app.add_subcommand("toy", "step-rule trajectories on the 2-D landscape");

  CLI11_PARSE(app, argc, argv);

  try {
    gnm::ExperimentConfig cfg =
        config_path.empty() ? gnm::ExperimentConfig::desk_default()
                            : gnm::ExperimentConfig::from_json_file(config_path);
    if (seed_set) cfg.seed = seed_override;
    gnm::Harness harness{cfg, out_dir, threads};
    if (train->parsed()) harness.cmd_train();
    if (attack->parsed()) harness.cmd_attack();
    if (sweep->parsed()) harness.cmd_sweep_k();
    if (ens->parsed()) harness.cmd_ensemble_targeted(hold_out);
    if (toy->parsed()) harness.cmd_toy();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
