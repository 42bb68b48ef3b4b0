#include "triage/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace triage {

using json = nlohmann::json;

namespace {

const std::set<std::string> kSelectors{"policy",    "passive", "objpref",
                                       "dt-static", "dt-top",  "exhaustive"};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw LoadError("cannot write " + p.string());
  out << text;
}

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path))
    throw LoadError(std::string("missing ") + what + " file: " + path);
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["setting"] = setting_name(c.setting);
  j["selectors"] = c.selectors;
  j["budget_fractions"] = c.budget_fractions;
  j["detector_speeds"] = c.detector_speeds;
  j["seeds"] = c.seeds;
  j["synthetic"] = c.synthetic ? json::parse(synthetic_config_to_json(*c.synthetic)) : json();
  j["train_fraction"] = c.train_fraction;
  j["train_manifest"] = c.train_manifest;
  j["test_manifest"] = c.test_manifest;
  j["classifier_model"] = c.classifier_model;
  j["gmm_model"] = c.gmm_model;
  j["policy_model"] = c.policy_model;
  j["grid"] = grid_name(c.grid);
  j["buffer"] = c.buffer;
  j["beta"] = c.beta;
  j["gmm_components"] = c.gmm_components;
  j["l2"] = c.l2;
  j["policy"] = {{"iterations", c.policy.iterations},   {"gamma", c.policy.gamma},
                 {"epsilon0", c.policy.epsilon0},       {"epsilon_step", c.policy.epsilon_step},
                 {"epsilon_floor", c.policy.epsilon_floor}, {"ridge", c.policy.ridge}};
  j["target_activity"] = c.target_activity;
  j["placements"] = c.placements;
  j["windows_per_clip"] = c.windows_per_clip;
  j["detection_threshold"] = c.detection_threshold;
  j["amoc_thresholds"] = c.amoc_thresholds;
  j["curve_bins"] = c.curve_bins;
  return j;
}

ExperimentConfig config_from(const json& j) {
  ExperimentConfig c;
  static const std::set<std::string> known{
      "setting",        "selectors",        "budget_fractions", "detector_speeds",
      "seeds",          "synthetic",        "train_fraction",   "train_manifest",
      "test_manifest",  "classifier_model", "gmm_model",        "policy_model",
      "grid",           "buffer",           "beta",             "gmm_components",
      "l2",             "policy",           "target_activity",  "placements",
      "windows_per_clip", "detection_threshold", "amoc_thresholds", "curve_bins"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("experiment config: unknown field '" + k + "'");
  if (j.contains("setting")) c.setting = parse_setting(j["setting"].get<std::string>());
  if (j.contains("selectors")) c.selectors = j["selectors"].get<std::vector<std::string>>();
  if (j.contains("budget_fractions"))
    c.budget_fractions = j["budget_fractions"].get<std::vector<double>>();
  if (j.contains("detector_speeds"))
    c.detector_speeds = j["detector_speeds"].get<std::vector<double>>();
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("synthetic") && !j["synthetic"].is_null())
    c.synthetic = synthetic_config_from_json(j["synthetic"].dump());
  auto str = [&](const char* k, std::string& dst) {
    if (j.contains(k)) dst = j[k].get<std::string>();
  };
  str("train_manifest", c.train_manifest);
  str("test_manifest", c.test_manifest);
  str("classifier_model", c.classifier_model);
  str("gmm_model", c.gmm_model);
  str("policy_model", c.policy_model);
  if (j.contains("train_fraction")) c.train_fraction = j["train_fraction"].get<double>();
  if (j.contains("grid")) c.grid = parse_grid(j["grid"].get<std::string>());
  if (j.contains("buffer")) c.buffer = j["buffer"].get<int>();
  if (j.contains("beta")) c.beta = j["beta"].get<int>();
  if (j.contains("gmm_components")) c.gmm_components = j["gmm_components"].get<int>();
  if (j.contains("l2")) c.l2 = j["l2"].get<double>();
  if (j.contains("policy")) {
    const json& p = j["policy"];
    static const std::set<std::string> pk{"iterations",   "gamma",         "epsilon0",
                                          "epsilon_step", "epsilon_floor", "ridge"};
    for (const auto& [k, v] : p.items())
      if (!pk.count(k)) throw ConfigError("experiment config: unknown policy field '" + k + "'");
    c.policy.iterations = p.value("iterations", c.policy.iterations);
    c.policy.gamma = p.value("gamma", c.policy.gamma);
    c.policy.epsilon0 = p.value("epsilon0", c.policy.epsilon0);
    c.policy.epsilon_step = p.value("epsilon_step", c.policy.epsilon_step);
    c.policy.epsilon_floor = p.value("epsilon_floor", c.policy.epsilon_floor);
    c.policy.ridge = p.value("ridge", c.policy.ridge);
  }
  if (j.contains("target_activity")) c.target_activity = j["target_activity"].get<int>();
  if (j.contains("placements")) c.placements = j["placements"].get<int>();
  if (j.contains("windows_per_clip")) c.windows_per_clip = j["windows_per_clip"].get<int>();
  if (j.contains("detection_threshold"))
    c.detection_threshold = j["detection_threshold"].get<double>();
  if (j.contains("amoc_thresholds"))
    c.amoc_thresholds = j["amoc_thresholds"].get<std::vector<double>>();
  if (j.contains("curve_bins")) c.curve_bins = j["curve_bins"].get<int>();
  return c;
}

std::vector<double> sweep_points(const ExperimentConfig& cfg) {
  return cfg.setting == ExperimentSetting::kBatch ? cfg.budget_fractions : cfg.detector_speeds;
}

int budget_actions(double fraction, int total) {
  return std::clamp(static_cast<int>(std::llround(fraction * total)), 1, total);
}

std::vector<int> iota_vec(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

DetectionTrace to_detection(const EpisodeSummary& e) {
  DetectionTrace d;
  d.id = e.video_id;
  d.confidence = e.frame_confidence;
  d.span_begin = e.span_begin;
  d.span_end = e.span_end;
  d.cost = e.cost;
  return d;
}

// Episodes grouped by (point, selector, seed), preserving episode order.
struct Groups {
  std::map<std::tuple<double, std::string, std::uint64_t>, std::vector<const EpisodeSummary*>> g;

  explicit Groups(const std::vector<EpisodeSummary>& eps) {
    for (const auto& e : eps) g[{e.point, e.selector, e.seed}].push_back(&e);
  }
  const std::vector<const EpisodeSummary*>& at(double point, const std::string& sel,
                                               std::uint64_t seed) const {
    auto it = g.find({point, sel, seed});
    if (it == g.end())
      throw LoadError("traces lack episodes for selector '" + sel + "' at point " +
                      format_double(point) + ", seed " + std::to_string(seed));
    return it->second;
  }
};

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) {
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }
  Csv& cell(const std::string& s) {
    out_ << (first_ ? "" : ",") << s;
    first_ = false;
    return *this;
  }
  Csv& cell(double v) { return cell(format_double(v)); }
  void end() {
    out_ << "\n";
    first_ = true;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
  bool first_ = true;
};

template <typename F>
MeanSd over_seeds(const ExperimentConfig& cfg, const Groups& groups, double point,
                  const std::string& sel, F metric) {
  std::vector<double> v;
  for (auto seed : cfg.seeds) v.push_back(metric(groups.at(point, sel, seed)));
  return mean_sd(v);
}

double group_accuracy(const std::vector<const EpisodeSummary*>& eps) {
  std::vector<int> p, y;
  for (const auto* e : eps) {
    p.push_back(e->prediction);
    y.push_back(e->label);
  }
  return accuracy(p, y);
}

double group_mean(const std::vector<const EpisodeSummary*>& eps,
                  double EpisodeSummary::*field) {
  double s = 0.0;
  for (const auto* e : eps) s += e->*field;
  return eps.empty() ? 0.0 : s / eps.size();
}

std::vector<EpisodeSummary> copy_group(const std::vector<const EpisodeSummary*>& eps) {
  std::vector<EpisodeSummary> out;
  for (const auto* e : eps) out.push_back(*e);
  return out;
}

std::vector<DetectionTrace> detections(const std::vector<const EpisodeSummary*>& eps) {
  std::vector<DetectionTrace> out;
  for (const auto* e : eps) out.push_back(to_detection(*e));
  return out;
}

void add_mean_sd_header(std::vector<std::string>& h, const std::string& prefix) {
  h.push_back(prefix + "_mean");
  h.push_back(prefix + "_sd");
}

}  // namespace

ExperimentSetting parse_setting(const std::string& name) {
  if (name == "batch") return ExperimentSetting::kBatch;
  if (name == "streaming") return ExperimentSetting::kStreaming;
  if (name == "untrimmed") return ExperimentSetting::kUntrimmed;
  throw ConfigError("unknown setting '" + name + "' (batch|streaming|untrimmed)");
}

std::string setting_name(ExperimentSetting s) {
  switch (s) {
    case ExperimentSetting::kBatch: return "batch";
    case ExperimentSetting::kStreaming: return "streaming";
    case ExperimentSetting::kUntrimmed: return "untrimmed";
  }
  return "batch";
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment: seed list is empty");
  if (selectors.empty()) throw ConfigError("experiment: selector list is empty");
  std::set<std::string> seen;
  for (const auto& s : selectors) {
    if (!kSelectors.count(s)) throw ConfigError("experiment: unknown selector '" + s + "'");
    if (!seen.insert(s).second) throw ConfigError("experiment: duplicate selector '" + s + "'");
    if (s == "objpref" && setting != ExperimentSetting::kBatch)
      throw ConfigError("experiment: objpref applies to the batch setting only");
    if (s == "dt-top" && setting == ExperimentSetting::kBatch)
      throw ConfigError("experiment: dt-top needs a detector speed (streaming settings)");
  }
  const auto points = sweep_points(*this);
  if (points.empty())
    throw ConfigError(setting == ExperimentSetting::kBatch ? "experiment: budget grid is empty"
                                                           : "experiment: speed grid is empty");
  if (std::set<double>(points.begin(), points.end()).size() != points.size())
    throw ConfigError("experiment: duplicate sweep point");
  for (double p : points) {
    if (setting == ExperimentSetting::kBatch && !(p > 0.0 && p <= 1.0))
      throw ConfigError("experiment: budget fractions must lie in (0,1]");
    if (setting != ExperimentSetting::kBatch && !(p > 0.0))
      throw ConfigError("experiment: detector speeds must be positive");
  }
  if (synthetic.has_value() == !train_manifest.empty())
    throw ConfigError("experiment: give exactly one of 'synthetic' or 'train_manifest'");
  if (synthetic) synthetic->validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("experiment: train_fraction must lie in (0,1)");
  if (buffer < 0 || beta < 0) throw ConfigError("experiment: buffer and beta must be >= 0");
  if (gmm_components < 1) throw ConfigError("experiment: gmm_components must be >= 1");
  if (!(l2 >= 0.0)) throw ConfigError("experiment: l2 must be nonnegative");
  if (policy.iterations < 1) throw ConfigError("experiment: policy iterations must be >= 1");
  if (!(policy.gamma >= 0.0 && policy.gamma <= 1.0))
    throw ConfigError("experiment: gamma must lie in [0,1]");
  if (!(policy.ridge >= 0.0)) throw ConfigError("experiment: ridge must be nonnegative");
  if (placements < 1 || placements > 5)
    throw ConfigError("experiment: placements must lie in [1,5]");
  if (windows_per_clip < 1) throw ConfigError("experiment: windows_per_clip must be >= 1");
  if (setting == ExperimentSetting::kUntrimmed && amoc_thresholds.empty())
    throw ConfigError("experiment: AMOC threshold list is empty");
  if (curve_bins < 1) throw ConfigError("experiment: curve_bins must be >= 1");
}

std::string ExperimentConfig::to_json() const { return config_json(*this).dump(2) + "\n"; }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

std::uint64_t ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_json(*this).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Episode summaries

std::string EpisodeSummary::to_json_line() const {
  json j;
  j["seed"] = seed;
  j["selector"] = selector;
  j["point"] = point;
  j["video"] = video_id;
  j["label"] = label;
  j["prediction"] = prediction;
  j["initial_confidence"] = initial_confidence;
  j["final_confidence"] = final_confidence;
  j["cost"] = cost;
  j["confidences"] = confidences;
  if (!frame_confidence.empty()) {
    j["frame_confidence"] = frame_confidence;
    j["span"] = {span_begin, span_end};
  }
  return j.dump();
}

EpisodeSummary EpisodeSummary::from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    EpisodeSummary e;
    e.seed = j.at("seed").get<std::uint64_t>();
    e.selector = j.at("selector").get<std::string>();
    e.point = j.at("point").get<double>();
    e.video_id = j.at("video").get<std::string>();
    e.label = j.at("label").get<int>();
    e.prediction = j.at("prediction").get<int>();
    e.initial_confidence = j.at("initial_confidence").get<double>();
    e.final_confidence = j.at("final_confidence").get<double>();
    e.cost = j.at("cost").get<double>();
    e.confidences = j.at("confidences").get<std::vector<double>>();
    if (j.contains("frame_confidence")) {
      e.frame_confidence = j["frame_confidence"].get<std::vector<double>>();
      e.span_begin = j.at("span").at(0).get<int>();
      e.span_end = j.at("span").at(1).get<int>();
    }
    return e;
  } catch (const json::exception& ex) {
    throw LoadError(std::string("trace line: ") + ex.what());
  }
}

EpisodeSummary summarize(const EpisodeTrace& trace, std::uint64_t seed,
                         const std::string& selector, double point) {
  EpisodeSummary e;
  e.seed = seed;
  e.selector = selector;
  e.point = point;
  e.video_id = trace.video_id;
  e.label = trace.label;
  e.prediction = trace.final_prediction;
  e.initial_confidence = trace.initial_confidence;
  e.final_confidence = trace.final_confidence;
  e.cost = episode_cost(trace);
  for (const auto& s : trace.steps) e.confidences.push_back(s.confidence);
  return e;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw ConfigError("accuracy: empty input");
  if (predictions.size() != labels.size())
    throw ConfigError("accuracy: prediction/label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / labels.size();
}

std::vector<double> confidence_curve(const std::vector<EpisodeSummary>& episodes, int bins) {
  if (bins < 1) throw ConfigError("confidence_curve: bins must be >= 1");
  if (episodes.empty()) return {};
  std::vector<double> curve(bins, 0.0);
  for (const auto& e : episodes) {
    const auto k = static_cast<double>(e.confidences.size());
    for (int b = 0; b < bins; ++b) {
      const double frac = bins == 1 ? 1.0 : static_cast<double>(b) / (bins - 1);
      const auto idx = static_cast<std::size_t>(std::llround(frac * k));
      curve[b] += idx == 0 ? e.initial_confidence : e.confidences[idx - 1];
    }
  }
  for (double& c : curve) c /= static_cast<double>(episodes.size());
  return curve;
}

MeanSd mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() == 1) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (v.size() - 1))};
}

// ---------------------------------------------------------------------------
// Aggregation

ReportTables aggregate(const ExperimentConfig& cfg, const std::vector<EpisodeSummary>& episodes) {
  const Groups groups(episodes);
  const auto points = sweep_points(cfg);
  ReportTables t;

  if (cfg.setting == ExperimentSetting::kBatch) {
    std::vector<std::string> h{"budget_fraction", "budget_actions"};
    for (const auto& s : cfg.selectors) {
      add_mean_sd_header(h, s + "_accuracy");
      add_mean_sd_header(h, s + "_confidence");
    }
    Csv csv(h);
    for (double p : points) {
      csv.cell(p);
      const auto& any = groups.at(p, cfg.selectors.front(), cfg.seeds.front());
      csv.cell(std::to_string(any.front()->confidences.size()));
      for (const auto& s : cfg.selectors) {
        const auto acc = over_seeds(cfg, groups, p, s, group_accuracy);
        const auto conf = over_seeds(cfg, groups, p, s, [](const auto& g) {
          return group_mean(g, &EpisodeSummary::final_confidence);
        });
        csv.cell(acc.mean).cell(acc.sd).cell(conf.mean).cell(conf.sd);
      }
      csv.end();
    }
    t.files.emplace_back("accuracy_vs_budget.csv", csv.str());
    return t;
  }

  if (cfg.setting == ExperimentSetting::kStreaming) {
    std::vector<std::string> h{"detector_speed"};
    for (const auto& s : cfg.selectors) {
      add_mean_sd_header(h, s + "_accuracy");
      add_mean_sd_header(h, s + "_cost");
    }
    Csv acc_csv(h);
    Csv curve_csv({"detector_speed", "selector", "step_fraction", "confidence_mean",
                   "confidence_sd"});
    for (double p : points) {
      acc_csv.cell(p);
      for (const auto& s : cfg.selectors) {
        const auto acc = over_seeds(cfg, groups, p, s, group_accuracy);
        const auto cost = over_seeds(cfg, groups, p, s, [](const auto& g) {
          return group_mean(g, &EpisodeSummary::cost);
        });
        acc_csv.cell(acc.mean).cell(acc.sd).cell(cost.mean).cell(cost.sd);

        std::vector<std::vector<double>> per_seed;
        for (auto seed : cfg.seeds)
          per_seed.push_back(confidence_curve(copy_group(groups.at(p, s, seed)), cfg.curve_bins));
        for (int b = 0; b < cfg.curve_bins; ++b) {
          std::vector<double> v;
          for (const auto& c : per_seed) v.push_back(c[b]);
          const auto ms = mean_sd(v);
          const double frac = cfg.curve_bins == 1 ? 1.0 : static_cast<double>(b) / (cfg.curve_bins - 1);
          curve_csv.cell(p).cell(s).cell(frac).cell(ms.mean).cell(ms.sd);
          curve_csv.end();
        }
      }
      acc_csv.end();
    }
    t.files.emplace_back("accuracy_vs_speed.csv", acc_csv.str());
    t.files.emplace_back("confidence_vs_step.csv", curve_csv.str());
    return t;
  }

  std::vector<std::string> fh{"detector_speed"}, ch{"detector_speed"};
  for (const auto& s : cfg.selectors) {
    add_mean_sd_header(fh, s + "_f1");
    add_mean_sd_header(ch, s + "_cost");
  }
  Csv f1_csv(fh), cost_csv(ch);
  Csv amoc_csv({"detector_speed", "selector", "threshold", "fpr_mean", "fpr_sd", "nt2d_mean",
                "nt2d_sd"});
  for (double p : points) {
    f1_csv.cell(p);
    cost_csv.cell(p);
    for (const auto& s : cfg.selectors) {
      const auto f1 = over_seeds(cfg, groups, p, s, [&](const auto& g) {
        const auto d = detections(g);
        return f1_score(d, cfg.detection_threshold);
      });
      const auto cost = over_seeds(cfg, groups, p, s, [](const auto& g) {
        return group_mean(g, &EpisodeSummary::cost);
      });
      f1_csv.cell(f1.mean).cell(f1.sd);
      cost_csv.cell(cost.mean).cell(cost.sd);

      // Per-seed curves are matched by threshold, then averaged.
      std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_threshold;
      for (auto seed : cfg.seeds) {
        const auto d = detections(groups.at(p, s, seed));
        for (const auto& pt : amoc_curve(d, cfg.amoc_thresholds)) {
          by_threshold[pt.threshold].first.push_back(pt.fpr);
          by_threshold[pt.threshold].second.push_back(pt.nt2d);
        }
      }
      for (auto it = by_threshold.rbegin(); it != by_threshold.rend(); ++it) {
        const auto fpr = mean_sd(it->second.first);
        const auto nt2d = mean_sd(it->second.second);
        amoc_csv.cell(p).cell(s).cell(it->first).cell(fpr.mean).cell(fpr.sd).cell(nt2d.mean).cell(
            nt2d.sd);
        amoc_csv.end();
      }
    }
    f1_csv.end();
    cost_csv.end();
  }
  t.files.emplace_back("f1_vs_speed.csv", f1_csv.str());
  t.files.emplace_back("cost_vs_speed.csv", cost_csv.str());
  t.files.emplace_back("amoc.csv", amoc_csv.str());
  return t;
}

// ---------------------------------------------------------------------------
// Per-seed preparation

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedContext ctx;
  ctx.seed = seed;
  if (cfg.synthetic) {
    SyntheticConfig sc = *cfg.synthetic;
    sc.seed = seed;
    std::tie(ctx.train, ctx.test) = split_dataset(gen_synthetic(sc), cfg.train_fraction);
  } else {
    require_file(cfg.train_manifest, "train manifest");
    if (cfg.test_manifest.empty()) {
      std::tie(ctx.train, ctx.test) =
          split_dataset(load_dataset(cfg.train_manifest), cfg.train_fraction);
    } else {
      require_file(cfg.test_manifest, "test manifest");
      ctx.train = load_dataset(cfg.train_manifest);
      ctx.test = load_dataset(cfg.test_manifest);
      if (ctx.test.num_channels != ctx.train.num_channels ||
          ctx.test.num_classes != ctx.train.num_classes)
        throw ConfigError("experiment: train and test manifests disagree on L or N");
    }
  }
  const int N = ctx.train.num_channels;
  TrainOptions topts;
  topts.l2 = cfg.l2;
  ctx.buffer = cfg.buffer > 0
                   ? cfg.buffer
                   : std::max(1, static_cast<int>(std::llround(ctx.train.median_length() / 2)));
  ctx.beta = cfg.beta > 0 ? cfg.beta : default_beta(N);

  auto load_classifier = [&]() -> std::optional<LinearClassifier> {
    if (cfg.classifier_model.empty()) return std::nullopt;
    require_file(cfg.classifier_model, "classifier model");
    return LinearClassifier::load(cfg.classifier_model);
  };

  switch (cfg.setting) {
    case ExperimentSetting::kBatch: {
      ctx.actions = ActionSet::batch(N, cfg.grid);
      Mat obs(ctx.train.size(), ctx.actions.size());
      for (std::size_t i = 0; i < ctx.train.size(); ++i)
        obs.row(i) = full_observations(ctx.train.records[i], ctx.actions).transpose();
      if (!cfg.gmm_model.empty()) {
        require_file(cfg.gmm_model, "GMM model");
        ctx.gmm = DiagonalGMM::load(cfg.gmm_model);
      } else {
        GmmOptions g;
        g.components = cfg.gmm_components;
        g.seed = derive_seed(seed, 0x6a11);
        ctx.gmm = fit_gmm(obs, g).model;
      }
      if (auto c = load_classifier()) {
        ctx.classifier = *c;
      } else {
        const std::vector<bool> all(ctx.actions.size(), true);
        Mat x(ctx.train.size(), N);
        std::vector<int> y;
        for (std::size_t i = 0; i < ctx.train.size(); ++i) {
          x.row(i) = batch_descriptor(ctx.actions, *ctx.gmm, all, obs.row(i).transpose()).transpose();
          y.push_back(ctx.train.records[i].label);
        }
        ctx.classifier = train_classifier(x, y, ctx.train.num_classes, ClassifierKind::kMulticlass, topts);
      }
      break;
    }
    case ExperimentSetting::kStreaming: {
      ctx.actions = ActionSet::streaming(N);
      if (auto c = load_classifier()) {
        ctx.classifier = *c;
      } else {
        Mat x(ctx.train.size(), N);
        std::vector<int> y;
        for (std::size_t i = 0; i < ctx.train.size(); ++i) {
          x.row(i) = ctx.train.records[i].full_descriptor().transpose();
          y.push_back(ctx.train.records[i].label);
        }
        ctx.classifier = train_classifier(x, y, ctx.train.num_classes, ClassifierKind::kMulticlass, topts);
      }
      break;
    }
    case ExperimentSetting::kUntrimmed: {
      if (cfg.target_activity < 0 || cfg.target_activity >= ctx.train.num_classes)
        throw ConfigError("experiment: target activity out of range");
      ctx.actions = ActionSet::streaming(N);
      if (auto c = load_classifier()) {
        ctx.classifier = *c;
      } else {
        ctx.classifier = train_window_classifier(ctx.train, cfg.target_activity, ctx.beta,
                                                 cfg.windows_per_clip, derive_seed(seed, 0x3d), topts);
      }
      ctx.untrimmed_train = make_untrimmed_set(ctx.train, cfg.target_activity, cfg.placements,
                                               derive_seed(seed, 0x17, 0));
      ctx.untrimmed_test = make_untrimmed_set(ctx.test, cfg.target_activity, cfg.placements,
                                              derive_seed(seed, 0x17, 1));
      break;
    }
  }
  if (ctx.classifier.dim() != N)
    throw ConfigError("experiment: classifier dimension " + std::to_string(ctx.classifier.dim()) +
                      " does not match " + std::to_string(N) + " object channels");
  return ctx;
}

std::unique_ptr<Selector> make_baseline(const std::string& name, const ExperimentConfig& cfg,
                                        const SeedContext& ctx, double detector_speed,
                                        std::vector<std::string>* warnings) {
  const bool batch = cfg.setting == ExperimentSetting::kBatch;
  if (name == "passive") return std::make_unique<PassiveSelector>(ctx.actions.skip_index());
  if (name == "exhaustive") {
    const int n = batch ? ctx.actions.size() : ctx.actions.num_objects();
    return std::make_unique<StaticSelector>(
        StaticOrdering{iota_vec(n), batch ? OrderingMode::kPreference : OrderingMode::kCycle},
        "exhaustive");
  }

  // Attribute matrix for the attribute-ranking baselines.
  Mat x;
  std::vector<int> y;
  int classes = ctx.train.num_classes;
  if (batch) {
    x.resize(ctx.train.size(), ctx.actions.size());
    for (std::size_t i = 0; i < ctx.train.size(); ++i) {
      x.row(i) = full_observations(ctx.train.records[i], ctx.actions).transpose();
      y.push_back(ctx.train.records[i].label);
    }
  } else if (cfg.setting == ExperimentSetting::kStreaming) {
    x.resize(ctx.train.size(), ctx.actions.num_objects());
    for (std::size_t i = 0; i < ctx.train.size(); ++i) {
      x.row(i) = ctx.train.records[i].full_descriptor().transpose();
      y.push_back(ctx.train.records[i].label);
    }
  } else {
    auto s = window_training_set(ctx.train, cfg.target_activity, ctx.beta, cfg.windows_per_clip,
                                 derive_seed(ctx.seed, 0x3d));
    x = std::move(s.x);
    y = std::move(s.y);
    classes = 2;
  }

  if (name == "objpref") {
    if (!batch) throw ConfigError("objpref applies to the batch setting only");
    return std::make_unique<StaticSelector>(object_pref_order(x, y, classes), "objpref");
  }
  if (name == "dt-static" || name == "dt-top") {
    const auto tree = train_decision_tree(x, y, classes);
    const int p = std::max(1, static_cast<int>(std::llround(detector_speed)));
    auto dt = dt_selectors(tree.ranked_features(), p, iota_vec(static_cast<int>(x.cols())));
    if (warnings)
      for (auto& w : dt.warnings) {
        if (name == "dt-static" && w.rfind("P=", 0) == 0) continue;  // P only shapes DT-Top
        warnings->push_back(name + ": " + w);
      }
    return std::make_unique<StaticSelector>(name == "dt-static" ? dt.dt_static : dt.dt_top);
  }
  throw ConfigError("unknown baseline '" + name + "'");
}

// ---------------------------------------------------------------------------
// Sweeps

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult res;
  std::optional<QModel> fixed_policy;
  if (!cfg.policy_model.empty()) {
    require_file(cfg.policy_model, "policy model");
    fixed_policy = QModel::load(cfg.policy_model);
  }
  const auto points = sweep_points(cfg);

  for (auto seed : cfg.seeds) {
    const SeedContext ctx = prepare_seed(cfg, seed);
    const std::uint64_t eval_seed = derive_seed(seed, 0xe7a1);
    PolicyIterationConfig pcfg = cfg.policy;

    auto learned = [&](const Environment& train_env, std::size_t point_index) {
      if (fixed_policy) {
        if (fixed_policy->num_actions() != train_env.actions().size() ||
            fixed_policy->feature_dim() != train_env.feature_dim())
          throw ConfigError("policy model " + cfg.policy_model + " does not match the action set");
        return GreedySelector(*fixed_policy, 0.0);
      }
      pcfg.seed = derive_seed(seed, 0x901, point_index);
      return GreedySelector(policy_iteration(train_env, pcfg).model, 0.0);
    };

    if (cfg.setting == ExperimentSetting::kBatch) {
      const int M = ctx.actions.size();
      // The policy learns from full-length episodes and is then cut at each budget.
      std::optional<GreedySelector> policy;
      if (std::count(cfg.selectors.begin(), cfg.selectors.end(), "policy")) {
        BatchEnvironment train_env(ctx.train.records, ctx.actions, ctx.classifier, *ctx.gmm, M,
                                   cfg.policy.gamma);
        policy.emplace(learned(train_env, 0));
      }
      std::map<std::string, std::unique_ptr<Selector>> baselines;
      for (const auto& s : cfg.selectors)
        if (s != "policy") baselines[s] = make_baseline(s, cfg, ctx, 0.0, &res.warnings);
      for (double p : points) {
        BatchEnvironment env(ctx.test.records, ctx.actions, ctx.classifier, *ctx.gmm,
                             budget_actions(p, M), cfg.policy.gamma);
        for (const auto& s : cfg.selectors) {
          const Selector& sel = s == "policy" ? static_cast<const Selector&>(*policy) : *baselines[s];
          for (const auto& tr : run_episodes(env, sel, eval_seed))
            res.episodes.push_back(summarize(tr, seed, s, p));
        }
      }
      continue;
    }

    for (std::size_t pi = 0; pi < points.size(); ++pi) {
      const double speed = points[pi];
      std::map<std::string, std::unique_ptr<Selector>> sels;
      if (cfg.setting == ExperimentSetting::kStreaming) {
        StreamConfig sc{speed, ctx.buffer, cfg.policy.gamma, nullptr};
        StreamingEnvironment train_env(ctx.train.records, ctx.actions, ctx.classifier, sc);
        StreamingEnvironment env(ctx.test.records, ctx.actions, ctx.classifier, sc);
        for (const auto& s : cfg.selectors)
          sels[s] = s == "policy" ? std::make_unique<GreedySelector>(learned(train_env, pi))
                                  : make_baseline(s, cfg, ctx, speed, &res.warnings);
        for (const auto& s : cfg.selectors)
          for (const auto& tr : run_episodes(env, *sels[s], eval_seed))
            res.episodes.push_back(summarize(tr, seed, s, speed));
      } else {
        UntrimmedConfig uc{speed, ctx.buffer, ctx.beta, cfg.policy.gamma, cfg.detection_threshold,
                           nullptr};
        UntrimmedEnvironment train_env(ctx.untrimmed_train, ctx.actions, ctx.classifier, uc);
        UntrimmedEnvironment env(ctx.untrimmed_test, ctx.actions, ctx.classifier, uc);
        for (const auto& s : cfg.selectors)
          sels[s] = s == "policy" ? std::make_unique<GreedySelector>(learned(train_env, pi))
                                  : make_baseline(s, cfg, ctx, speed, &res.warnings);
        for (const auto& s : cfg.selectors)
          for (const auto& r : run_untrimmed(env, *sels[s], eval_seed)) {
            auto e = summarize(r.episode, seed, s, speed);
            e.cost = r.detection.cost;
            e.frame_confidence = r.detection.confidence;
            e.span_begin = r.detection.span_begin;
            e.span_end = r.detection.span_end;
            res.episodes.push_back(std::move(e));
          }
      }
    }
  }

  std::sort(res.warnings.begin(), res.warnings.end());
  res.warnings.erase(std::unique(res.warnings.begin(), res.warnings.end()), res.warnings.end());
  // Tables are derived from the persisted form so that a report rebuilt from
  // traces.jsonl matches byte for byte.
  std::vector<EpisodeSummary> persisted;
  persisted.reserve(res.episodes.size());
  for (const auto& e : res.episodes)
    persisted.push_back(EpisodeSummary::from_json_line(e.to_json_line()));
  res.tables = aggregate(cfg, persisted);
  return res;
}

void write_traces(const std::filesystem::path& path, const std::vector<EpisodeSummary>& episodes) {
  std::string text;
  for (const auto& e : episodes) text += e.to_json_line() + "\n";
  write_file(path, text);
}

std::vector<EpisodeSummary> read_traces(const std::filesystem::path& path) {
  require_file(path.string(), "trace");
  std::istringstream in(read_file(path));
  std::vector<EpisodeSummary> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(EpisodeSummary::from_json_line(line));
    } catch (const LoadError& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_tables(const ReportTables& tables, const std::filesystem::path& out_dir) {
  for (const auto& [name, text] : tables.files) write_file(out_dir / name, text);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  auto res = run_experiment(cfg);
  std::filesystem::create_directories(out_dir);
  write_traces(out_dir / "traces.jsonl", res.episodes);
  write_tables(res.tables, out_dir);
  json summary;
  summary["format"] = "triage-experiment";
  summary["csv_schema"] = 1;
  summary["config"] = config_json(cfg);
  summary["config_hash"] = hex64(cfg.hash());
  summary["seeds"] = cfg.seeds;
  summary["episodes"] = res.episodes.size();
  std::vector<std::string> files{"traces.jsonl"};
  for (const auto& f : res.tables.files) files.push_back(f.first);
  summary["files"] = files;
  summary["warnings"] = res.warnings;
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  return res;
}

ReportTables rebuild_report(const std::filesystem::path& run_dir,
                            const std::filesystem::path& out_dir) {
  const auto summary_path = run_dir / "summary.json";
  require_file(summary_path.string(), "run summary");
  json summary;
  try {
    summary = json::parse(read_file(summary_path));
  } catch (const json::exception& e) {
    throw LoadError(summary_path.string() + ": " + e.what());
  }
  if (!summary.contains("config")) throw LoadError(summary_path.string() + ": no config");
  const ExperimentConfig cfg = config_from(summary["config"]);
  auto tables = aggregate(cfg, read_traces(run_dir / "traces.jsonl"));
  write_tables(tables, out_dir);
  return tables;
}

}  // namespace triage
