#ifndef MDPCHECK_PIPELINE_HPP_
#define MDPCHECK_PIPELINE_HPP_

// Run orchestration behind the `validate` CLI: configuration resolution,
// the generate / train / analyze stages over a run directory, and content-hash
// based resume for run-all.
//
// Run directory layout:
//   config.json                 effective configuration (every parameter)
//   train.jsonl, eval.jsonl     datasets
//   checkpoints/original_NN.ckpt, checkpoints/baseline_NN.ckpt
//   checkpoints/loss_curves.csv
//   report.json, reward_contribution.csv, action_sensitivity.csv,
//   offset_action_sensitivity.csv, boxplots.svg
//   stages.json                 input hashes of completed stages

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdpcheck/analysis.hpp"
#include "mdpcheck/dataset.hpp"
#include "mdpcheck/env.hpp"
#include "mdpcheck/mdn.hpp"
#include "mdpcheck/report.hpp"
#include "mdpcheck/rng.hpp"

namespace mdpcheck {

namespace fs = std::filesystem;

/// Every seed of a run. Unset entries derive from `master`:
///   env_train    = derive_seed(master, "env-train")
///   env_eval     = derive_seed(master, "env-eval")
///   policy_train = derive_seed(master, "policy-train")
///   policy_eval  = derive_seed(master, "policy-eval")
///   ensemble     = derive_seed(master, "ensemble")      (member j: derive_seed(ensemble, "model", j))
///   eval_shuffle = derive_seed(master, "eval-shuffle")  (per batch: derive_seed(eval_shuffle, "eval-batch", content hash))
struct SeedConfig {
  std::uint64_t master = 0;
  std::optional<std::uint64_t> env_train, env_eval, policy_train, policy_eval, ensemble,
      eval_shuffle;

  std::uint64_t get(const std::optional<std::uint64_t>& v, std::string_view name) const {
    return v ? *v : derive_seed(master, name);
  }
  /// All seeds resolved to concrete values.
  SeedConfig resolved() const {
    SeedConfig r;
    r.master = master;
    r.env_train = get(env_train, "env-train");
    r.env_eval = get(env_eval, "env-eval");
    r.policy_train = get(policy_train, "policy-train");
    r.policy_eval = get(policy_eval, "policy-eval");
    r.ensemble = get(ensemble, "ensemble");
    r.eval_shuffle = get(eval_shuffle, "eval-shuffle");
    return r;
  }
};

struct RunConfig {
  // Environment or external data. When train_path/eval_path are set the
  // simulator is not used.
  int env_id = 1;
  int d = 10;
  int T = 10;
  std::optional<std::string> train_path, eval_path;

  ModelConfig model;  // model.train_batches = optimizer steps, model.batch_size for both stages

  int N = 10;
  int num_train_batches = 1000;
  int num_eval_batches = 200;
  PercentileLevel X;
  PercentileConvention convention = PercentileConvention::exceeded_by;

  SeedConfig seeds;
  std::string output_dir = "run";
  bool reduced_scale = false;
  int jobs = 1;

  bool external() const { return train_path.has_value(); }
};

/// Table-scale defaults: N=10, 1000 train batches, 200 eval batches, batch 1024,
/// K=5, two hidden layers of 32, d=10, T=10, X=75.
inline RunConfig default_config() { return RunConfig{}; }

/// CI-sized profile: N=5, 300 train batches of 250, 50 eval batches.
inline void apply_reduced_profile(RunConfig& c) {
  c.reduced_scale = true;
  c.N = 5;
  c.num_train_batches = 300;
  c.model.train_batches = 300;
  c.model.batch_size = 250;
  c.num_eval_batches = 50;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const SeedConfig s = c.seeds.resolved();
  nlohmann::json j;
  nlohmann::json env;
  if (c.external()) {
    env["env_id"] = "external";
    env["train_path"] = *c.train_path;
    env["eval_path"] = c.eval_path.value_or("");
  } else {
    env["env_id"] = c.env_id;
  }
  env["d"] = c.d;
  env["T"] = c.T;
  j["env"] = env;
  j["model"] = c.model;
  nlohmann::json per_feature = nlohmann::json::array();
  for (const auto& v : c.X.per_feature) per_feature.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  j["analysis"] = {{"N", c.N},
                   {"num_train_batches", c.num_train_batches},
                   {"num_eval_batches", c.num_eval_batches},
                   {"X", c.X.global},
                   {"X_per_feature", per_feature},
                   {"percentile_convention", to_string(c.convention)}};
  j["seeds"] = {{"master", s.master},
                {"env_train", *s.env_train},
                {"env_eval", *s.env_eval},
                {"policy_train", *s.policy_train},
                {"policy_eval", *s.policy_eval},
                {"ensemble", *s.ensemble},
                {"eval_shuffle", *s.eval_shuffle}};
  j["output_dir"] = c.output_dir;
  j["reduced_scale"] = c.reduced_scale;
  j["jobs"] = c.jobs;
  return j;
}

/// Overlays the keys present in `j` onto `c`. When j sets reduced_scale, the
/// reduced profile is applied first and explicit keys override it.
inline void overlay_config(RunConfig& c, const nlohmann::json& j) {
  try {
    if (j.value("reduced_scale", false)) apply_reduced_profile(c);
    if (j.contains("env")) {
      const auto& e = j["env"];
      if (e.contains("env_id")) {
        if (e["env_id"].is_string()) {
          if (e["env_id"] != "external") throw ConfigError("env.env_id must be 1..7 or \"external\"");
        } else {
          c.env_id = e["env_id"].get<int>();
        }
      }
      if (e.contains("train_path")) c.train_path = e["train_path"].get<std::string>();
      if (e.contains("eval_path")) c.eval_path = e["eval_path"].get<std::string>();
      if (e.contains("d")) c.d = e["d"].get<int>();
      if (e.contains("T")) c.T = e["T"].get<int>();
    }
    if (j.contains("model")) {
      from_json(j["model"], c.model);
    }
    if (j.contains("analysis")) {
      const auto& a = j["analysis"];
      if (a.contains("N")) c.N = a["N"].get<int>();
      if (a.contains("num_train_batches")) c.num_train_batches = a["num_train_batches"].get<int>();
      if (a.contains("num_eval_batches")) c.num_eval_batches = a["num_eval_batches"].get<int>();
      if (a.contains("X")) c.X.global = a["X"].get<double>();
      if (a.contains("X_per_feature")) {
        c.X.per_feature.clear();
        for (const auto& v : a["X_per_feature"]) {
          c.X.per_feature.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        }
      }
      if (a.contains("percentile_convention")) {
        const auto s = a["percentile_convention"].get<std::string>();
        if (s == "exceeded_by") {
          c.convention = PercentileConvention::exceeded_by;
        } else if (s == "standard") {
          c.convention = PercentileConvention::standard;
        } else {
          throw ConfigError("unknown percentile_convention \"" + s + "\"");
        }
      }
    }
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      auto opt = [&](const char* key, std::optional<std::uint64_t>& dst) {
        if (s.contains(key)) dst = s[key].get<std::uint64_t>();
      };
      if (s.contains("master")) c.seeds.master = s["master"].get<std::uint64_t>();
      opt("env_train", c.seeds.env_train);
      opt("env_eval", c.seeds.env_eval);
      opt("policy_train", c.seeds.policy_train);
      opt("policy_eval", c.seeds.policy_eval);
      opt("ensemble", c.seeds.ensemble);
      opt("eval_shuffle", c.seeds.eval_shuffle);
    }
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("jobs")) c.jobs = j["jobs"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline void validate(const RunConfig& c) {
  if (!c.external()) EnvSpec{c.env_id, c.d, c.T, 0}.validate();
  if (c.external() && !c.eval_path) throw ConfigError("external data needs both train_path and eval_path");
  if (c.model.d != c.d) throw ConfigError("model.d must equal env.d");
  c.model.validate();
  if (c.N < 1) throw ConfigError("N must be >= 1");
  if (c.num_train_batches < 1 || c.num_eval_batches < 1) {
    throw ConfigError("num_train_batches and num_eval_batches must be >= 1");
  }
  auto check_level = [](double x) {
    if (!(x > 0.0 && x < 100.0)) throw ConfigError("percentile X must be in (0, 100)");
  };
  check_level(c.X.global);
  for (const auto& v : c.X.per_feature)
    if (v) check_level(*v);
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
}

struct RunPaths {
  fs::path root;
  fs::path config() const { return root / "config.json"; }
  fs::path train() const { return root / "train.jsonl"; }
  fs::path eval() const { return root / "eval.jsonl"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path checkpoint(EnsembleKind kind, std::size_t j) const {
    std::string index = std::to_string(j);
    if (index.size() < 2) index.insert(0, 2 - index.size(), '0');
    return checkpoints() / (std::string(kind == EnsembleKind::original ? "original" : "baseline") +
                            "_" + index + ".ckpt");
  }
  fs::path loss_curves() const { return checkpoints() / "loss_curves.csv"; }
  fs::path report() const { return root / "report.json"; }
  fs::path csv(StatisticKind k) const { return root / (std::string(to_string(k)) + ".csv"); }
  fs::path svg() const { return root / "boxplots.svg"; }
  fs::path stages() const { return root / "stages.json"; }
};

inline std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t hash_file(const fs::path& p, std::uint64_t h = 0xCBF29CE484222325ULL) {
  return hash_bytes(detail::read_file(p.string()), h);
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Stage input keys. A stage is skipped by run-all when its stored key matches.
inline std::string generate_key(const RunConfig& c) {
  const auto j = to_json(c);
  nlohmann::json k = {{"env", j["env"]},
                      {"batch_size", c.model.batch_size},
                      {"num_train_batches", c.num_train_batches},
                      {"num_eval_batches", c.num_eval_batches},
                      {"seeds", j["seeds"]}};
  std::uint64_t h = hash_bytes(k.dump());
  if (c.external()) {
    h = hash_file(*c.train_path, h);
    h = hash_file(*c.eval_path, h);
  }
  return hex(h);
}

inline std::string train_key(const RunConfig& c, const RunPaths& paths) {
  const auto j = to_json(c);
  nlohmann::json k = {{"model", j["model"]}, {"N", c.N}, {"ensemble", j["seeds"]["ensemble"]}};
  return hex(hash_file(paths.train(), hash_bytes(k.dump())));
}

inline std::string analyze_key(const RunConfig& c, const RunPaths& paths) {
  const auto j = to_json(c);
  nlohmann::json k = {{"analysis", j["analysis"]},
                      {"eval_shuffle", j["seeds"]["eval_shuffle"]},
                      {"env", j["env"]},
                      {"batch_size", c.model.batch_size}};
  std::uint64_t h = hash_file(paths.eval(), hash_bytes(k.dump()));
  for (auto kind : {EnsembleKind::original, EnsembleKind::shuffled_baseline})
    for (std::size_t m = 0; m < static_cast<std::size_t>(c.N); ++m)
      h = hash_file(paths.checkpoint(kind, m), h);
  return hex(h);
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  detail::write_file(p.string(), text);
}

inline void write_effective_config(const RunConfig& c, const RunPaths& paths) {
  write_text(paths.config(), to_json(c).dump(2) + "\n");
}

/// generate: writes train.jsonl and eval.jsonl.
inline void stage_generate(const RunConfig& c, std::ostream& log = std::cout) {
  validate(c);
  RunPaths paths{c.output_dir};
  fs::create_directories(paths.root);
  write_effective_config(c, paths);
  if (c.external()) {
    for (auto [src, dst] : {std::pair{*c.train_path, paths.train()},
                            std::pair{*c.eval_path, paths.eval()}}) {
      if (!fs::exists(src)) throw IoError("missing dataset " + src);
      const Dataset ds = load(src);
      if (ds.d() != c.d) throw ValidationError(src + ": d=" + std::to_string(ds.d()) + ", config d=" + std::to_string(c.d));
      save(ds, dst.string());
    }
    log << "copied external datasets into " << paths.root.string() << "\n";
    return;
  }
  const SeedConfig s = c.seeds.resolved();
  const auto bs = static_cast<std::size_t>(c.model.batch_size);
  Env train_env({c.env_id, c.d, c.T, *s.env_train});
  save(collect(train_env, static_cast<std::size_t>(c.num_train_batches), bs, *s.policy_train,
               RemainderPolicy::pad_episodes),
       paths.train().string());
  Env eval_env({c.env_id, c.d, c.T, *s.env_eval});
  save(collect(eval_env, static_cast<std::size_t>(c.num_eval_batches), bs, *s.policy_eval,
               RemainderPolicy::pad_episodes),
       paths.eval().string());
  log << "generated env " << c.env_id << ": " << c.num_train_batches * c.model.batch_size
      << " train / " << c.num_eval_batches * c.model.batch_size << " eval transitions\n";
}

struct TrainOutcome {
  std::vector<std::string> failures;  // one message per failed model
  bool ok() const { return failures.empty(); }
};

/// train: 2N checkpoints. A failing model is reported and the rest continue.
inline TrainOutcome stage_train(const RunConfig& c, std::ostream& log = std::cout) {
  validate(c);
  RunPaths paths{c.output_dir};
  if (!fs::exists(paths.train())) throw IoError("missing " + paths.train().string() + " (run generate)");
  if (!fs::exists(paths.eval())) throw IoError("missing " + paths.eval().string() + " (run generate)");
  write_effective_config(c, paths);
  const Dataset train_ds = load(paths.train().string());
  if (train_ds.d() != c.d) throw ValidationError("train.jsonl d does not match config");
  fs::create_directories(paths.checkpoints());

  const SeedConfig s = c.seeds.resolved();
  const auto n = static_cast<std::size_t>(c.N);
  std::vector<std::optional<TrainResult>> results(2 * n);
  std::vector<std::string> errors(2 * n);
  parallel_for(2 * n, c.jobs, [&](std::size_t task) {
    const bool baseline = task >= n;
    const std::size_t j = task % n;
    try {
      results[task] = train_member(train_ds, c.model, *s.ensemble, j, baseline);
    } catch (const Error& e) {
      errors[task] = e.what();
    }
  });

  TrainOutcome out;
  std::string curves = "model";
  for (int step = 0; step < c.model.train_batches; ++step) curves += ",s" + std::to_string(step);
  curves += '\n';
  for (std::size_t task = 0; task < 2 * n; ++task) {
    const auto kind = task >= n ? EnsembleKind::shuffled_baseline : EnsembleKind::original;
    const std::size_t j = task % n;
    const auto path = paths.checkpoint(kind, j);
    if (!results[task]) {
      out.failures.push_back(errors[task]);
      log << "FAILED " << errors[task] << "\n";
      fs::remove(path);
      continue;
    }
    Checkpoint ck{results[task]->params, results[task]->loss_curve,
                  {{"kind", to_string(kind)}, {"index", j}}};
    save_checkpoint(ck, path.string());
    curves += path.stem().string();
    for (double v : ck.loss_curve) curves += "," + format_number(v);
    curves += '\n';
  }
  write_text(paths.loss_curves(), curves);
  log << "trained " << 2 * n - out.failures.size() << "/" << 2 * n << " models\n";
  return out;
}

inline Ensemble load_ensemble(const RunConfig& c, EnsembleKind kind) {
  RunPaths paths{c.output_dir};
  Ensemble ens;
  ens.kind = kind;
  ens.config = c.model;
  const SeedConfig s = c.seeds.resolved();
  for (std::size_t j = 0; j < static_cast<std::size_t>(c.N); ++j) {
    const auto path = paths.checkpoint(kind, j);
    if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string() + " (run train)");
    auto ck = load_checkpoint(path.string(), c.model);
    if (ck.params.config.seed != member_seed(*s.ensemble, j)) {
      throw CheckpointError(path.string() + " was trained with a different seed than the config");
    }
    ens.seeds.push_back(ck.params.config.seed);
    ens.models.push_back(std::move(ck.params));
    ens.loss_curves.push_back(std::move(ck.loss_curve));
  }
  return ens;
}

struct AnalyzeOutcome {
  AnalysisResult result;
  nlohmann::json report;
};

/// report.json content without timings.
inline nlohmann::json build_report(const RunConfig& c, const AnalysisResult& r) {
  RunPaths paths{c.output_dir};
  nlohmann::json rep;
  rep["verdict"] = to_json(r.verdict);
  rep["reward_report"] = to_json(r.reward_report);
  rep["action_report"] = to_json(r.action_report);
  rep["config"] = to_json(c);
  if (!c.external()) {
    const auto pattern = expected_significance(c.env_id, c.d);
    rep["expected"] = to_json(pattern);
    rep["expected"]["matches"] = pattern.matches(r.reward_report.significant,
                                                 r.action_report.significant, r.verdict.outcome);
  }
  rep["artifacts"] = {{"reward_contribution", paths.csv(StatisticKind::reward_contribution).filename().string()},
                      {"action_sensitivity", paths.csv(StatisticKind::action_sensitivity).filename().string()},
                      {"offset_action_sensitivity",
                       paths.csv(StatisticKind::offset_action_sensitivity).filename().string()},
                      {"boxplots", paths.svg().filename().string()}};
  return rep;
}

inline std::string render_run_boxplots(const RunConfig& c, const AnalysisResult& r) {
  std::optional<ExpectedPattern> pattern;
  if (!c.external()) pattern = expected_significance(c.env_id, c.d);
  std::vector<PlotPanel> panels{
      {"Reward contribution", &r.reward, &r.reward_report, pattern ? &pattern->reward : nullptr},
      {"Offset action sensitivity", &r.offset, &r.action_report,
       pattern ? &pattern->action : nullptr}};
  return render_boxplots(panels);
}

/// analyze: report.json, population CSVs, boxplots.svg; prints the verdict.
inline AnalyzeOutcome stage_analyze(const RunConfig& c, std::ostream& out = std::cout) {
  validate(c);
  const auto t0 = std::chrono::steady_clock::now();
  RunPaths paths{c.output_dir};
  if (!fs::exists(paths.eval())) throw IoError("missing " + paths.eval().string() + " (run generate)");
  write_effective_config(c, paths);
  const Ensemble original = load_ensemble(c, EnsembleKind::original);
  const Ensemble baseline = load_ensemble(c, EnsembleKind::shuffled_baseline);
  const Dataset eval_ds = load(paths.eval().string());
  if (eval_ds.d() != c.d) throw ValidationError("eval.jsonl d does not match config");

  AnalysisOptions opt;
  opt.batch_size = static_cast<std::size_t>(c.model.batch_size);
  opt.shuffle_seed = *c.seeds.resolved().eval_shuffle;
  opt.level = c.X;
  opt.convention = c.convention;
  opt.jobs = c.jobs;

  AnalyzeOutcome res;
  res.result = analyze(original, baseline, eval_ds, opt);
  const auto& r = res.result;
  write_text(paths.csv(StatisticKind::reward_contribution), population_to_csv(r.reward));
  write_text(paths.csv(StatisticKind::action_sensitivity), population_to_csv(r.sensitivity));
  write_text(paths.csv(StatisticKind::offset_action_sensitivity), population_to_csv(r.offset));
  write_text(paths.svg(), render_run_boxplots(c, r));

  res.report = build_report(c, r);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.report["timings"] = {{"analyze_seconds", secs}};
  write_text(paths.report(), res.report.dump(2) + "\n");

  out << "VERDICT: " << to_string(r.verdict.outcome) << "\n";
  auto list = [](const std::vector<int>& v) {
    std::string s = "{";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s + "}";
  };
  out << "reward-contributing: " << list(r.verdict.reward_features)
      << "  action-sensitive: " << list(r.verdict.action_features)
      << "  both: " << list(r.verdict.actionable_features) << "\n";
  return res;
}

struct RunAllOutcome {
  std::vector<std::string> ran;      // stage names that executed
  std::vector<std::string> skipped;  // stage names reused from a previous run
  TrainOutcome train;
  std::optional<AnalyzeOutcome> analysis;
};

/// generate -> train -> analyze, skipping stages whose input key is unchanged
/// and whose outputs still exist.
inline RunAllOutcome run_all(const RunConfig& c, std::ostream& out = std::cout) {
  validate(c);
  RunPaths paths{c.output_dir};
  fs::create_directories(paths.root);
  nlohmann::json stamps = nlohmann::json::object();
  if (fs::exists(paths.stages())) {
    try {
      stamps = nlohmann::json::parse(detail::read_file(paths.stages().string()));
    } catch (const nlohmann::json::exception&) {
      stamps = nlohmann::json::object();
    }
  }
  auto save_stamps = [&] { write_text(paths.stages(), stamps.dump(2) + "\n"); };
  RunAllOutcome res;

  auto outputs_exist = [&](const std::string& stage) {
    if (stage == "generate") return fs::exists(paths.train()) && fs::exists(paths.eval());
    if (stage == "train") {
      for (auto kind : {EnsembleKind::original, EnsembleKind::shuffled_baseline})
        for (std::size_t j = 0; j < static_cast<std::size_t>(c.N); ++j)
          if (!fs::exists(paths.checkpoint(kind, j))) return false;
      return true;
    }
    return fs::exists(paths.report()) && fs::exists(paths.svg());
  };
  auto fresh = [&](const std::string& stage, const std::string& key) {
    return stamps.contains(stage) && stamps[stage] == key && outputs_exist(stage);
  };

  const auto gk = generate_key(c);
  if (fresh("generate", gk)) {
    res.skipped.push_back("generate");
  } else {
    stamps.erase("train");
    stamps.erase("analyze");
    stage_generate(c, out);
    stamps["generate"] = gk;
    save_stamps();
    res.ran.push_back("generate");
  }

  const auto tk = train_key(c, paths);
  if (fresh("train", tk)) {
    res.skipped.push_back("train");
  } else {
    stamps.erase("analyze");
    res.train = stage_train(c, out);
    if (!res.train.ok()) {
      save_stamps();
      return res;
    }
    stamps["train"] = tk;
    save_stamps();
    res.ran.push_back("train");
  }

  const auto ak = analyze_key(c, paths);
  if (fresh("analyze", ak)) {
    res.skipped.push_back("analyze");
    const auto rep = nlohmann::json::parse(detail::read_file(paths.report().string()));
    out << "VERDICT: " << rep["verdict"]["outcome"].get<std::string>() << "\n";
  } else {
    res.analysis = stage_analyze(c, out);
    stamps["analyze"] = ak;
    save_stamps();
    res.ran.push_back("analyze");
  }
  return res;
}

}  // namespace mdpcheck

#endif  // MDPCHECK_PIPELINE_HPP_
