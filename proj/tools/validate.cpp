// validate: checks whether a logged dataset has the structure an RL agent
// could exploit. See README.md for usage.
//
// Exit codes: 0 pipeline completed (whatever the verdict), 1 runtime failure,
// 2 usage or configuration error, 3 one or more models failed to train.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mdpcheck/mdpcheck.hpp"

namespace {

struct Flags {
  std::string config_path;
  std::optional<int> env;
  std::optional<std::string> out;
  bool reduced = false;
  std::optional<int> jobs;
  std::optional<double> percentile;
  std::optional<std::uint64_t> seed;
};

mdpcheck::RunConfig resolve(const Flags& f) {
  mdpcheck::RunConfig c = mdpcheck::default_config();
  nlohmann::json file = nlohmann::json::object();
  if (!f.config_path.empty()) {
    try {
      file = nlohmann::json::parse(mdpcheck::detail::read_file(f.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw mdpcheck::ConfigError(f.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw mdpcheck::ConfigError(f.config_path + ": expected a JSON object");
  }
  // Flags win over the file; --reduced applies the profile before file keys.
  if (f.reduced) mdpcheck::apply_reduced_profile(c);
  mdpcheck::overlay_config(c, file);
  if (f.env) {
    c.env_id = *f.env;
    c.train_path.reset();
    c.eval_path.reset();
  }
  if (f.out) c.output_dir = *f.out;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.percentile) c.X.global = *f.percentile;
  if (f.seed) c.seeds.master = *f.seed;
  mdpcheck::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset suitability check for reinforcement learning"};
  app.require_subcommand(1, 1);
  Flags f;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--env", f.env, "simulated environment 1-7")->check(CLI::Range(1, 7));
    sub->add_option("--out", f.out, "run directory");
    sub->add_flag("--reduced", f.reduced, "reduced-scale profile (N=5, 300x250 train, 50 eval batches)");
    sub->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--percentile", f.percentile, "significance percentile X in (0, 100)");
    sub->add_option("--seed", f.seed, "master seed");
  };
  auto* gen = app.add_subcommand("generate", "sample train.jsonl and eval.jsonl");
  auto* trn = app.add_subcommand("train", "train the original and shuffled-action ensembles");
  auto* ana = app.add_subcommand("analyze", "compute statistics, report and verdict");
  auto* all = app.add_subcommand("run-all", "generate, train and analyze, reusing unchanged stages");
  for (auto* sub : {gen, trn, ana, all}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(f);
    if (gen->parsed()) {
      mdpcheck::stage_generate(cfg);
    } else if (trn->parsed()) {
      if (!mdpcheck::stage_train(cfg).ok()) return 3;
    } else if (ana->parsed()) {
      mdpcheck::stage_analyze(cfg);
    } else {
      const auto res = mdpcheck::run_all(cfg);
      for (const auto& s : res.skipped) std::cerr << "skipped " << s << " (inputs unchanged)\n";
      if (!res.train.ok()) return 3;
    }
  } catch (const mdpcheck::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mdpcheck::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
