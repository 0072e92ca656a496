#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Constant-memory attentive neural process toolkit"};
  app.require_subcommand(1);

  cmanp::cli::CommonArgs args;
  std::string inject_fault;

  auto add_common = [&args](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON configuration file");
    sub->add_option("--set", args.overrides,
                    "Override a config value, e.g. --set train.steps=500");
    sub->add_option("--out", args.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", args.seed, "Master seed override");
    sub->add_option("--checkpoint", args.checkpoint, "Checkpoint to load");
  };

  CLI::App* train = app.add_subcommand("train", "Meta-train a model on 1-d GP regression");
  add_common(train);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out tasks");
  add_common(eval);
  CLI::App* bench_mem = app.add_subcommand(
      "bench-memory", "Certify constant-memory conditioning across context sizes");
  add_common(bench_mem);
  CLI::App* bench_upd = app.add_subcommand(
      "bench-update", "Certify constant-computation updates per new datapoint");
  add_common(bench_upd);
  CLI::App* verify = app.add_subcommand("verify", "Run the property verification suites");
  add_common(verify);
  verify->add_option("--inject-fault", inject_fault,
                     "Deliberately break an implementation detail (unstable-update)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmanp::cli::cmd_train(args);
    if (eval->parsed()) return cmanp::cli::cmd_eval(args);
    if (bench_mem->parsed()) return cmanp::cli::cmd_bench_memory(args);
    if (bench_upd->parsed()) return cmanp::cli::cmd_bench_update(args);
    if (verify->parsed()) return cmanp::cli::cmd_verify(args, inject_fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
