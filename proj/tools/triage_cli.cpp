// Command-line front end: dataset generation, model training, policy and
// baseline runs, experiment sweeps, and report rebuilding.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "triage/actions.hpp"
#include "triage/baselines.hpp"
#include "triage/classifier.hpp"
#include "triage/data.hpp"
#include "triage/env.hpp"
#include "triage/experiment.hpp"
#include "triage/gmm.hpp"
#include "triage/qpolicy.hpp"
#include "triage/untrimmed.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace triage;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string out;
  std::string config;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

void need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
}

json trace_json(const EpisodeTrace& tr, const ActionSet& actions) {
  json j;
  j["video"] = tr.video_id;
  j["label"] = tr.label;
  j["initial_confidence"] = tr.initial_confidence;
  j["initial_prediction"] = tr.initial_prediction;
  j["final_prediction"] = tr.final_prediction;
  j["final_confidence"] = tr.final_confidence;
  j["cost"] = episode_cost(tr);
  json steps = json::array();
  for (const auto& s : tr.steps) {
    json st;
    st["k"] = s.k;
    st["action"] = s.action;
    st["name"] = actions.describe(s.action);
    st["time"] = s.time;
    st["observation"] = std::isnan(s.observation) ? json() : json(s.observation);
    st["reward"] = s.reward;
    st["return"] = s.ret;
    st["cost"] = s.cost;
    st["confidence"] = s.confidence;
    st["prediction"] = s.prediction;
    steps.push_back(std::move(st));
  }
  j["steps"] = std::move(steps);
  return j;
}

struct EvalSummary {
  double accuracy = 0.0;
  double confidence = 0.0;
  double cost = 0.0;
};

EvalSummary write_traces(const fs::path& path, const std::vector<EpisodeTrace>& traces,
                         const ActionSet& actions) {
  std::string text;
  std::vector<int> p, y;
  EvalSummary s;
  for (const auto& tr : traces) {
    text += trace_json(tr, actions).dump() + "\n";
    p.push_back(tr.final_prediction);
    y.push_back(tr.label);
    s.confidence += tr.final_confidence;
    s.cost += episode_cost(tr);
  }
  write_text(path, text);
  s.accuracy = accuracy(p, y);
  s.confidence /= traces.size();
  s.cost /= traces.size();
  return s;
}

int resolve_buffer(int buffer, const Dataset& ds) {
  return buffer > 0 ? buffer
                    : std::max(1, static_cast<int>(std::llround(ds.median_length() / 2)));
}

// ---------------------------------------------------------------------------
// Options shared by the policy and baseline runners.

struct RunnerOptions {
  std::string data;
  std::string train_data;
  std::string classifier;
  std::string gmm;
  std::string policy;
  std::string setting = "batch";
  std::string grid = "halves";
  std::string pool = "max";
  double budget_frac = 1.0;
  std::vector<double> detector_fps{8.0};
  int buffer = 0;
  int beta = 0;
  int target_activity = 0;
  int placements = 5;
  int windows_per_clip = 4;
  double threshold = 0.5;
  double gamma = 0.4;
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

void add_runner_flags(CLI::App* cmd, RunnerOptions& o, bool with_setting) {
  cmd->add_option("--data", o.data, "Evaluation dataset manifest")->required();
  cmd->add_option("--classifier", o.classifier, "Recognizer model JSON")->required();
  cmd->add_option("--gmm", o.gmm, "GMM model JSON (batch)");
  cmd->add_option("--grid", o.grid, "Batch volume grid: halves|spatial");
  cmd->add_option("--budget-frac", o.budget_frac, "Batch budget as a fraction of all actions");
  cmd->add_option("--detector-fps", o.detector_fps, "Detector speed(s), frames per second");
  cmd->add_option("--buffer", o.buffer, "Stream buffer size in frames (0: half median length)");
  cmd->add_option("--pool", o.pool, "Streaming descriptor: max|mean");
  cmd->add_option("--gamma", o.gamma, "Discount used for the logged returns");
  cmd->add_option("--beta", o.beta, "Longest detection window in frames (0: ceil(N/3))");
  cmd->add_option("--target-activity", o.target_activity, "Untrimmed target activity");
  cmd->add_option("--placements", o.placements, "Untrimmed placements per positive clip");
  cmd->add_option("--threshold", o.threshold, "Detection threshold for frame labels and F1");
  cmd->add_option("--thresholds", o.thresholds, "AMOC thresholds");
  if (with_setting)
    cmd->add_option("--setting", o.setting, "batch|streaming|untrimmed")
        ->check(CLI::IsMember({"batch", "streaming", "untrimmed"}));
}

ActionSet runner_actions(const RunnerOptions& o, const Dataset& ds) {
  if (o.setting == "batch") return ActionSet::batch(ds.num_channels, parse_grid(o.grid));
  if (o.pool == "mean") {
    if (o.setting != "streaming") throw ConfigError("mean pooling applies to streaming only");
    return ActionSet::streaming_frames();
  }
  if (o.pool != "max") throw ConfigError("unknown pool mode '" + o.pool + "'");
  return ActionSet::streaming(ds.num_channels);
}

void run_with(const Globals& g, const RunnerOptions& o, const std::string& name,
              const std::function<std::unique_ptr<Selector>(const ActionSet&, double)>& make) {
  need(g.out, "--out");
  const Dataset ds = load_dataset(o.data);
  const auto clf = LinearClassifier::load(o.classifier);
  const fs::path out(g.out);
  const ActionSet actions = runner_actions(o, ds);
  const std::uint64_t eval_seed = derive_seed(g.seed, 0xe7a1);

  if (o.setting == "batch") {
    need(o.gmm, "--gmm");
    const auto gmm = DiagonalGMM::load(o.gmm);
    if (!(o.budget_frac > 0.0 && o.budget_frac <= 1.0))
      throw ConfigError("--budget-frac must lie in (0,1]");
    const int k = std::clamp(static_cast<int>(std::llround(o.budget_frac * actions.size())), 1,
                             actions.size());
    BatchEnvironment env(ds.records, actions, clf, gmm, k, o.gamma);
    const auto sel = make(actions, 0.0);
    const auto s = write_traces(out / "traces.jsonl", run_episodes(env, *sel, eval_seed), actions);
    std::ostringstream csv;
    csv << "selector,budget_fraction,budget_actions,episodes,accuracy,mean_final_confidence,"
           "mean_cost\n"
        << name << "," << format_double(o.budget_frac) << "," << k << "," << ds.size() << ","
        << format_double(s.accuracy) << "," << format_double(s.confidence) << ","
        << format_double(s.cost) << "\n";
    write_text(out / "summary.csv", csv.str());
    return;
  }

  const int buffer = resolve_buffer(o.buffer, ds);
  if (o.setting == "streaming") {
    std::ostringstream csv;
    csv << "selector,detector_speed,buffer,episodes,accuracy,mean_final_confidence,mean_cost\n";
    for (double fps : o.detector_fps) {
      StreamingEnvironment env(ds.records, actions, clf, StreamConfig{fps, buffer, o.gamma, nullptr});
      const auto sel = make(actions, fps);
      const auto s = write_traces(out / ("traces_fps" + format_double(fps) + ".jsonl"),
                                  run_episodes(env, *sel, eval_seed), actions);
      csv << name << "," << format_double(fps) << "," << buffer << "," << ds.size() << ","
          << format_double(s.accuracy) << "," << format_double(s.confidence) << ","
          << format_double(s.cost) << "\n";
    }
    write_text(out / "summary.csv", csv.str());
    return;
  }

  const int beta = o.beta > 0 ? o.beta : default_beta(ds.num_channels);
  const auto videos = make_untrimmed_set(ds, o.target_activity, o.placements,
                                         derive_seed(g.seed, 0x17, 1));
  std::ostringstream f1_csv, amoc_csv;
  f1_csv << "selector,detector_speed,buffer,beta,streams,f1,mean_cost\n";
  amoc_csv << "selector,detector_speed,threshold,fpr,nt2d\n";
  for (double fps : o.detector_fps) {
    UntrimmedEnvironment env(videos, actions, clf,
                             UntrimmedConfig{fps, buffer, beta, o.gamma, o.threshold, nullptr});
    const auto sel = make(actions, fps);
    const auto results = run_untrimmed(env, *sel, eval_seed);
    std::string text;
    std::vector<DetectionTrace> dets;
    double cost = 0.0;
    for (const auto& r : results) {
      json j = trace_json(r.episode, actions);
      j["cost"] = r.detection.cost;
      j["span"] = {r.detection.span_begin, r.detection.span_end};
      j["frame_confidence"] = r.detection.confidence;
      j["frame_label"] = r.detection.label;
      text += j.dump() + "\n";
      dets.push_back(r.detection);
      cost += r.detection.cost;
    }
    write_text(out / ("traces_fps" + format_double(fps) + ".jsonl"), text);
    f1_csv << name << "," << format_double(fps) << "," << buffer << "," << beta << ","
           << results.size() << "," << format_double(f1_score(dets, o.threshold)) << ","
           << format_double(cost / results.size()) << "\n";
    for (const auto& p : amoc_curve(dets, o.thresholds))
      amoc_csv << name << "," << format_double(fps) << "," << format_double(p.threshold) << ","
               << format_double(p.fpr) << "," << format_double(p.nt2d) << "\n";
  }
  write_text(out / "f1.csv", f1_csv.str());
  write_text(out / "amoc.csv", amoc_csv.str());
}

// ---------------------------------------------------------------------------
// Training commands

struct ClassifierOptions {
  std::string data;
  std::string kind = "multiclass";
  double l2 = 1.0;
  int target_activity = 0;
  int beta = 0;
  int windows_per_clip = 4;
};

void train_classifier_cmd(const Globals& g, const ClassifierOptions& o) {
  need(g.out, "--out");
  const Dataset ds = load_dataset(o.data);
  TrainOptions t;
  t.l2 = o.l2;
  LinearClassifier clf;
  if (o.kind == "window") {
    const int beta = o.beta > 0 ? o.beta : default_beta(ds.num_channels);
    clf = train_window_classifier(ds, o.target_activity, beta, o.windows_per_clip,
                                  derive_seed(g.seed, 0x3d), t);
  } else {
    const bool mean = o.kind == "mean";
    Mat x(ds.size(), mean ? 0 : ds.num_channels);
    std::vector<int> y;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& r = ds.records[i];
      if (mean) {
        if (!r.dense) throw LoadError("record '" + r.id + "' has no dense descriptors");
        if (x.cols() == 0) x.resize(ds.size(), r.dense->cols());
        x.row(i) = r.dense->colwise().mean();
      } else {
        x.row(i) = r.full_descriptor().transpose();
      }
      y.push_back(r.label);
    }
    clf = train_classifier(x, y, ds.num_classes, ClassifierKind::kMulticlass, t);
  }
  clf.save(g.out);
}

struct GmmCliOptions {
  std::string data;
  std::string grid = "halves";
  int components = 5;
  int max_iterations = 200;
};

void train_gmm_cmd(const Globals& g, const GmmCliOptions& o) {
  need(g.out, "--out");
  const Dataset ds = load_dataset(o.data);
  const auto actions = ActionSet::batch(ds.num_channels, parse_grid(o.grid));
  Mat obs(ds.size(), actions.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    obs.row(i) = full_observations(ds.records[i], actions).transpose();
  GmmOptions opts;
  opts.components = o.components;
  opts.max_iterations = o.max_iterations;
  opts.seed = derive_seed(g.seed, 0x6a11);
  const auto fit = fit_gmm(obs, opts);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
  fit.model.save(g.out);
}

struct PolicyCliOptions {
  RunnerOptions run;
  PolicyIterationConfig pi;
  std::string diagnostics;
};

void train_policy_cmd(const Globals& g, PolicyCliOptions o) {
  need(g.out, "--out");
  const Dataset ds = load_dataset(o.run.data);
  const auto clf = LinearClassifier::load(o.run.classifier);
  const ActionSet actions = runner_actions(o.run, ds);
  o.pi.seed = g.seed;
  o.pi.gamma = o.run.gamma;
  if (o.run.detector_fps.size() != 1)
    throw UsageError("train-policy takes a single --detector-fps value");
  const double fps = o.run.detector_fps.front();

  PolicyIterationResult res;
  std::optional<DiagonalGMM> gmm;
  std::vector<UntrimmedRecord> videos;
  if (o.run.setting == "batch") {
    need(o.run.gmm, "--gmm");
    gmm = DiagonalGMM::load(o.run.gmm);
    BatchEnvironment env(ds.records, actions, clf, *gmm, actions.size(), o.pi.gamma);
    res = policy_iteration(env, o.pi);
  } else if (o.run.setting == "streaming") {
    StreamingEnvironment env(ds.records, actions, clf,
                             StreamConfig{fps, resolve_buffer(o.run.buffer, ds), o.pi.gamma, nullptr});
    res = policy_iteration(env, o.pi);
  } else {
    videos = make_untrimmed_set(ds, o.run.target_activity, o.run.placements,
                                derive_seed(g.seed, 0x17, 0));
    const int beta = o.run.beta > 0 ? o.run.beta : default_beta(ds.num_channels);
    UntrimmedEnvironment env(videos, actions, clf,
                             UntrimmedConfig{fps, resolve_buffer(o.run.buffer, ds), beta,
                                             o.pi.gamma, o.run.threshold, nullptr});
    res = policy_iteration(env, o.pi);
  }
  res.model.save(g.out);
  if (!o.diagnostics.empty()) {
    std::ostringstream csv;
    csv << "round,epsilon,episodes,samples_added,samples_total,mean_return,"
           "mean_final_confidence,accuracy,mean_cost\n";
    for (const auto& d : res.diagnostics)
      csv << d.round << "," << format_double(d.epsilon) << "," << d.episodes << ","
          << d.samples_added << "," << d.samples_total << "," << format_double(d.mean_return)
          << "," << format_double(d.mean_final_confidence) << "," << format_double(d.accuracy)
          << "," << format_double(d.mean_cost) << "\n";
    write_text(o.diagnostics, csv.str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic feature prioritization for activity recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output path (file or directory, per command)");
  app.add_option("--config", g.config, "JSON configuration file");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic dataset");
  double split = 0.0;
  gen->add_option("--train-fraction", split,
                  "Also write train/ and test/ splits with this per-class fraction");

  // train-classifier
  ClassifierOptions copts;
  auto* tc = app.add_subcommand("train-classifier", "Fit the recognizer");
  tc->add_option("--data", copts.data, "Training manifest")->required();
  tc->add_option("--kind", copts.kind, "multiclass|window|mean")
      ->check(CLI::IsMember({"multiclass", "window", "mean"}));
  tc->add_option("--l2", copts.l2, "L2 penalty on weights");
  tc->add_option("--target-activity", copts.target_activity, "Target for --kind window");
  tc->add_option("--beta", copts.beta, "Longest window for --kind window (0: ceil(N/3))");
  tc->add_option("--windows-per-clip", copts.windows_per_clip, "Windows sampled per clip");

  // train-gmm
  GmmCliOptions gopts;
  auto* tg = app.add_subcommand("train-gmm", "Fit the imputation mixture");
  tg->add_option("--data", gopts.data, "Training manifest")->required();
  tg->add_option("--grid", gopts.grid, "halves|spatial");
  tg->add_option("--components", gopts.components, "Mixture components");
  tg->add_option("--max-iterations", gopts.max_iterations, "EM iteration cap");

  // train-policy
  PolicyCliOptions popts;
  auto* tp = app.add_subcommand("train-policy", "Learn a prioritization policy");
  add_runner_flags(tp, popts.run, true);
  tp->add_option("--iterations", popts.pi.iterations, "Policy-iteration rounds");
  tp->add_option("--epsilon0", popts.pi.epsilon0, "Exploration rate of round 1");
  tp->add_option("--epsilon-step", popts.pi.epsilon_step, "Exploration decrease per round");
  tp->add_option("--epsilon-floor", popts.pi.epsilon_floor, "Lowest exploration rate");
  tp->add_option("--ridge", popts.pi.ridge, "Ridge penalty");
  tp->add_option("--diagnostics", popts.diagnostics, "Per-round diagnostics CSV");

  // policy runners
  RunnerOptions rb, rs, ru;
  rb.setting = "batch";
  rs.setting = "streaming";
  ru.setting = "untrimmed";
  auto* run_batch = app.add_subcommand("run-batch", "Evaluate a policy in batch mode");
  add_runner_flags(run_batch, rb, false);
  run_batch->add_option("--policy", rb.policy, "Policy model JSON")->required();
  auto* run_stream = app.add_subcommand("run-streaming", "Evaluate a policy on streams");
  add_runner_flags(run_stream, rs, false);
  run_stream->add_option("--policy", rs.policy, "Policy model JSON")->required();
  auto* run_untr = app.add_subcommand("run-untrimmed", "Detect an activity in untrimmed streams");
  add_runner_flags(run_untr, ru, false);
  run_untr->add_option("--policy", ru.policy, "Policy model JSON")->required();

  // baseline
  RunnerOptions bo;
  std::string method;
  auto* base = app.add_subcommand("baseline", "Evaluate a fixed-strategy baseline");
  add_runner_flags(base, bo, true);
  base->add_option("--method", method, "passive|objpref|dt-static|dt-top|exhaustive")
      ->required()
      ->check(CLI::IsMember({"passive", "objpref", "dt-static", "dt-top", "exhaustive"}));
  base->add_option("--train-data", bo.train_data, "Training manifest for ranked baselines");
  base->add_option("--windows-per-clip", bo.windows_per_clip, "Untrimmed DT window samples");

  // experiment + report
  auto* exp = app.add_subcommand("experiment", "Run a configured sweep over seeds");
  std::string run_dir;
  auto* rep = app.add_subcommand("report", "Rebuild CSV tables from a run directory");
  rep->add_option("--run", run_dir, "Directory written by the experiment command")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      need(g.config, "--config");
      need(g.out, "--out");
      SyntheticConfig sc = synthetic_config_from_json(read_text(g.config));
      sc.seed = g.seed;
      const Dataset ds = gen_synthetic(sc);
      save_dataset(ds, g.out);
      if (split > 0.0) {
        auto [train, test] = split_dataset(ds, split);
        save_dataset(train, fs::path(g.out) / "train");
        save_dataset(test, fs::path(g.out) / "test");
      }
    } else if (tc->parsed()) {
      train_classifier_cmd(g, copts);
    } else if (tg->parsed()) {
      train_gmm_cmd(g, gopts);
    } else if (tp->parsed()) {
      train_policy_cmd(g, popts);
    } else if (run_batch->parsed() || run_stream->parsed() || run_untr->parsed()) {
      const RunnerOptions& o = run_batch->parsed() ? rb : run_stream->parsed() ? rs : ru;
      const auto model = QModel::load(o.policy);
      run_with(g, o, "policy", [&](const ActionSet& actions, double) {
        if (model.num_actions() != actions.size())
          throw ConfigError("policy " + o.policy + " has " + std::to_string(model.num_actions()) +
                            " actions, the setting has " + std::to_string(actions.size()));
        return std::make_unique<GreedySelector>(model, 0.0);
      });
    } else if (base->parsed()) {
      ExperimentConfig cfg;
      cfg.setting = parse_setting(bo.setting);
      cfg.target_activity = bo.target_activity;
      cfg.windows_per_clip = bo.windows_per_clip;
      SeedContext ctx;
      ctx.seed = g.seed;
      const bool ranked = method != "passive" && method != "exhaustive";
      if (ranked) {
        need(bo.train_data, "--train-data");
        ctx.train = load_dataset(bo.train_data);
      } else {
        ctx.train = load_dataset(bo.data);
      }
      ctx.beta = bo.beta > 0 ? bo.beta : default_beta(ctx.train.num_channels);
      run_with(g, bo, method, [&](const ActionSet& actions, double fps) {
        ctx.actions = actions;
        std::vector<std::string> warnings;
        auto sel = make_baseline(method, cfg, ctx, fps, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        return sel;
      });
    } else if (exp->parsed()) {
      need(g.config, "--config");
      need(g.out, "--out");
      const auto cfg = ExperimentConfig::from_json(read_text(g.config));
      const auto res = run_experiment(cfg, g.out);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    } else if (rep->parsed()) {
      need(g.out, "--out");
      rebuild_report(run_dir, g.out);
    }
  } catch (const triage::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
