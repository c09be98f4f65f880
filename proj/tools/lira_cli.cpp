// Command-line front end: shadow / attack / eval / sweep / ood.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lira/errors.hpp"
#include "lira/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::size_t jobs = 0;
  std::optional<std::uint64_t> seed;
  std::vector<double> fpr;
};

void add_common(CLI::App* cmd, Common& c, bool with_fpr) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--out", c.out, "output directory (overrides the config)");
  cmd->add_option("--jobs", c.jobs, "parallel shadow trainings");
  cmd->add_option("--seed", c.seed, "master seed override");
  if (with_fpr) cmd->add_option("--fpr", c.fpr, "comma-separated FPR levels")->delimiter(',');
}

lira::ExperimentConfig resolve(const Common& c) {
  lira::ExperimentConfig cfg = c.config.empty() ? lira::ExperimentConfig{} : lira::ExperimentConfig::load(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.jobs > 0) cfg.jobs = c.jobs;
  if (c.seed) cfg.seed = *c.seed;
  if (!c.fpr.empty()) cfg.fpr_levels = c.fpr;
  cfg.validate();
  return cfg;
}

void print(const std::vector<std::string>& paths) {
  for (const std::string& p : paths) std::cout << p << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Likelihood-ratio membership inference on a synthetic task"};
  app.require_subcommand(1);

  Common shadow_opts;
  CLI::App* shadow = app.add_subcommand("shadow", "train the target and shadow models, write score files");
  add_common(shadow, shadow_opts, false);

  Common attack_opts;
  std::string in_dir;
  lira::AttackPaths paths;
  CLI::App* attack = app.add_subcommand("attack", "score the target with every configured attack");
  add_common(attack, attack_opts, false);
  attack->add_option("--in", in_dir, "directory written by `shadow`");
  attack->add_option("--store", paths.store, "shadow score store");
  attack->add_option("--target", paths.target, "target scores");
  attack->add_option("--task", paths.task, "evaluation pool (labels, features)");
  attack->add_option("--model", paths.model, "target model, for attacks that query it");

  Common eval_opts;
  std::vector<std::string> score_files;
  CLI::App* eval = app.add_subcommand("eval", "ROC curves and a metrics table from score CSVs");
  add_common(eval, eval_opts, true);
  eval->add_option("--scores", score_files, "score CSVs written by `attack`")->required()->delimiter(',');

  Common sweep_opts;
  std::string axis;
  std::vector<std::string> values;
  CLI::App* sweep = app.add_subcommand("sweep", "vary one experiment axis");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--axis", axis, "n_models, n_aug, variance_mode, mismatch_width, "
                                    "mismatch_optimizer, mismatch_augmentation or disjoint")
      ->required();
  sweep->add_option("--values", values, "comma-separated axis values")->required()->delimiter(',');

  Common ood_opts;
  std::string kind = "shifted";
  std::size_t count = 0;
  CLI::App* ood = app.add_subcommand("ood", "privacy scores of injected out-of-distribution examples");
  add_common(ood, ood_opts, false);
  ood->add_option("--kind", kind, "shifted, mislabeled or disjoint_class_mislabeled");
  ood->add_option("--count", count, "number of injected examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*shadow) {
      print(lira::cmd_shadow(resolve(shadow_opts)));
    } else if (*attack) {
      const lira::ExperimentConfig cfg = resolve(attack_opts);
      lira::AttackPaths p = in_dir.empty() ? lira::AttackPaths{} : lira::default_attack_paths(in_dir);
      if (!paths.store.empty()) p.store = paths.store;
      if (!paths.target.empty()) p.target = paths.target;
      if (!paths.task.empty()) p.task = paths.task;
      if (!paths.model.empty()) p.model = paths.model;
      if (p.store.empty() || p.target.empty())
        throw lira::ConfigError("attack needs --in DIR or both --store and --target");
      print(lira::cmd_attack(cfg, p));
    } else if (*eval) {
      const lira::ExperimentConfig cfg = resolve(eval_opts);
      print(lira::cmd_eval(score_files, cfg.fpr_levels, cfg.output_dir));
    } else if (*sweep) {
      const lira::ExperimentConfig cfg = resolve(sweep_opts);
      print(lira::cmd_sweep(cfg, lira::parse_sweep_axis(axis), values));
    } else if (*ood) {
      const lira::ExperimentConfig cfg = resolve(ood_opts);
      lira::OodKind k;
      try {
        k = lira::parse_ood_kind(kind);
      } catch (const std::invalid_argument& e) {
        throw lira::ConfigError(e.what());
      }
      print(lira::cmd_ood(cfg, k, count));
    }
  } catch (const lira::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const lira::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const lira::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return EXIT_SUCCESS;
}
