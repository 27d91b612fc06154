// Command-line front end: gen-data, train, eval, gradcheck, compare.
// Exit codes: 0 success, 1 validation error, 2 numeric/runtime failure,
// 3 failed acceptance-style check (gradcheck tolerance, compare orderings).
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "triprompt/runner.hpp"

namespace {

triprompt::RunConfig load(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  return triprompt::load_config(config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"triprompt: triple-prompt multi-label recognition head"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint_path, split = "all", out_file,
              resume_path;
  std::vector<std::string> overrides;
  std::size_t epoch_limit = SIZE_MAX;
  std::size_t gc_configs = 20;
  double gc_tol = 1e-5;
  std::uint64_t gc_seed = 417;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic train/test dataset pair");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--set", overrides, "override config entries, e.g. --set train.lr0=0.01");
  gen->add_option("--out", out_dir, "output dataset root")->required();

  auto* train = app.add_subcommand("train", "train prompt contexts on a dataset");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--set", overrides, "override config entries");
  train->add_option("--data", data_dir, "dataset root from gen-data")->required();
  train->add_option("--out", out_dir, "output dir for checkpoint + loss log")->required();
  train->add_option("--resume", resume_path, "checkpoint to continue from");
  train->add_option("--epoch-limit", epoch_limit,
                    "stop after this many total epochs (for split runs)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset root")->required();
  eval->add_option("--split", split, "class subset: all, seen or unseen");
  eval->add_option("--out", out_file, "write the metrics report JSON here");
  eval->add_option("--config", config_path, "optional config to cross-check the checkpoint hash");
  eval->add_option("--set", overrides, "override config entries (cross-check only)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--configs", gc_configs, "random configs per mode cell");
  gc->add_option("--tol", gc_tol, "max allowed relative error");
  gc->add_option("--seed", gc_seed, "case seed");

  auto* cmp = app.add_subcommand("compare", "mode/WTA ablation grid with ordering checks");
  cmp->add_option("--config", config_path, "run config JSON")->required();
  cmp->add_option("--set", overrides, "override config entries");
  cmp->add_option("--data", data_dir, "dataset root")->required();
  cmp->add_option("--out", out_file, "write the comparison report JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return triprompt::cmd_gen_data(load(config_path, overrides), out_dir);
    if (train->parsed())
      return triprompt::cmd_train(load(config_path, overrides), data_dir, out_dir, resume_path,
                                  epoch_limit);
    if (eval->parsed()) {
      triprompt::EvalRequest req;
      req.checkpoint = checkpoint_path;
      req.data_root = data_dir;
      req.split = split;
      req.out_json = out_file;
      if (!config_path.empty()) {
        const triprompt::RunConfig expect = load(config_path, overrides);
        return triprompt::cmd_eval(req, &expect);
      }
      return triprompt::cmd_eval(req);
    }
    if (gc->parsed()) return triprompt::cmd_gradcheck(gc_configs, gc_tol, gc_seed);
    if (cmp->parsed()) return triprompt::cmd_compare(load(config_path, overrides), data_dir,
                                                     out_file);
  } catch (const triprompt::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const triprompt::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 2;
  }
  return 1;
}
