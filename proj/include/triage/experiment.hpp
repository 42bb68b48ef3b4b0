#ifndef TRIAGE_EXPERIMENT_HPP
#define TRIAGE_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "triage/baselines.hpp"
#include "triage/data.hpp"
#include "triage/env.hpp"
#include "triage/qpolicy.hpp"
#include "triage/untrimmed.hpp"

namespace triage {

enum class ExperimentSetting { kBatch, kStreaming, kUntrimmed };

ExperimentSetting parse_setting(const std::string& name);
std::string setting_name(ExperimentSetting s);

struct ExperimentConfig {
  ExperimentSetting setting = ExperimentSetting::kBatch;
  std::vector<std::string> selectors{"policy", "passive"};
  std::vector<double> budget_fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> detector_speeds{1, 2, 4, 8};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  // Data: either a synthetic generator (reseeded per run seed) or manifests.
  std::optional<SyntheticConfig> synthetic;
  double train_fraction = 2.0 / 3.0;
  std::string train_manifest;
  std::string test_manifest;
  // Optional pre-trained models; trained per seed when empty.
  std::string classifier_model;
  std::string gmm_model;
  std::string policy_model;

  VolumeGrid grid = VolumeGrid::kTemporalHalves;
  int buffer = 0;  // 0: half the median training clip length
  int beta = 0;    // 0: ceil(N/3)
  int gmm_components = 5;
  double l2 = 1.0;
  PolicyIterationConfig policy;

  int target_activity = 0;
  int placements = 5;
  int windows_per_clip = 4;
  double detection_threshold = 0.5;
  std::vector<double> amoc_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int curve_bins = 11;

  void validate() const;
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  /// FNV-1a over the canonical JSON form.
  std::uint64_t hash() const;
};

/// One evaluated episode, as persisted in traces.jsonl.
struct EpisodeSummary {
  std::uint64_t seed = 0;
  std::string selector;
  double point = 0.0;  // budget fraction or detector speed
  std::string video_id;
  int label = 0;
  int prediction = 0;
  double initial_confidence = 0.0;
  double final_confidence = 0.0;
  double cost = 0.0;
  std::vector<double> confidences;  // true-class posterior after each step
  // Untrimmed only.
  std::vector<double> frame_confidence;
  int span_begin = 0;
  int span_end = 0;

  std::string to_json_line() const;
  static EpisodeSummary from_json_line(const std::string& line);
};

EpisodeSummary summarize(const EpisodeTrace& trace, std::uint64_t seed,
                         const std::string& selector, double point);

/// Fraction of matching entries; throws on empty or unequal input.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Mean true-class confidence over `bins` evenly spaced fractions of each
/// episode (bin 0 is the initial state, the last bin the final state).
std::vector<double> confidence_curve(const std::vector<EpisodeSummary>& episodes, int bins);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};
/// Sample standard deviation (0 for a single value).
MeanSd mean_sd(const std::vector<double>& values);

/// Name -> file contents for every CSV derived from the persisted episodes.
struct ReportTables {
  std::vector<std::pair<std::string, std::string>> files;
};
ReportTables aggregate(const ExperimentConfig& cfg, const std::vector<EpisodeSummary>& episodes);

/// Everything trained for one (seed, setting) before evaluation.
struct SeedContext {
  std::uint64_t seed = 0;
  Dataset train;
  Dataset test;
  LinearClassifier classifier;
  std::optional<DiagonalGMM> gmm;
  ActionSet actions;
  int buffer = 1;
  int beta = 1;
  std::vector<UntrimmedRecord> untrimmed_train;
  std::vector<UntrimmedRecord> untrimmed_test;
};

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Builds a named baseline for the context's setting. "policy" is not a
/// baseline; `detector_speed` sets DT-Top's P.
std::unique_ptr<Selector> make_baseline(const std::string& name, const ExperimentConfig& cfg,
                                        const SeedContext& ctx, double detector_speed,
                                        std::vector<std::string>* warnings = nullptr);

struct ExperimentResult {
  std::vector<EpisodeSummary> episodes;
  ReportTables tables;
  std::vector<std::string> warnings;
};

/// Runs the full sweep in memory.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Runs the sweep and writes traces.jsonl, the CSV tables, and summary.json
/// under `out_dir`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Re-derives the CSV tables from a run directory's summary.json and
/// traces.jsonl, writing them to `out_dir`.
ReportTables rebuild_report(const std::filesystem::path& run_dir,
                            const std::filesystem::path& out_dir);

std::vector<EpisodeSummary> read_traces(const std::filesystem::path& path);
void write_traces(const std::filesystem::path& path, const std::vector<EpisodeSummary>& episodes);
void write_tables(const ReportTables& tables, const std::filesystem::path& out_dir);

}  // namespace triage

#endif  // TRIAGE_EXPERIMENT_HPP
