#ifndef TRIAGE_UNTRIMMED_HPP
#define TRIAGE_UNTRIMMED_HPP

#include <deque>
#include <span>
#include <string>
#include <vector>

#include "triage/classifier.hpp"
#include "triage/data.hpp"
#include "triage/env.hpp"

namespace triage {

/// Per-frame observed detector maxima for the most recent beta frames.
/// Unobserved entries are 0.
class WindowBank {
 public:
  WindowBank(int beta, int channels);

  int beta() const { return beta_; }
  int channels() const { return channels_; }
  /// Index of the newest frame, -1 before the first arrival.
  int newest() const { return newest_; }
  /// Frames currently stored (<= beta).
  int stored() const { return static_cast<int>(rows_.size()); }
  int oldest() const { return newest_ - stored() + 1; }

  /// Appends frame newest()+1; evicts anything older than beta frames.
  void arrive();
  /// Folds an observation of `frame`; ignored once the frame left the bank.
  void observe(int frame, int channel, double x);
  /// Max-pool descriptor over frames [end-length+1, end].
  Vec window(int end, int length) const;

 private:
  int beta_, channels_;
  int newest_ = -1;
  std::deque<Vec> rows_;
};

struct WindowPrediction {
  double confidence = 0.0;
  int length = 1;
};

/// Scores every window of length 1..min(beta, available) ending at
/// `current_frame`; keeps the most confident, ties to the shortest.
WindowPrediction window_predict(const LinearClassifier& binary, const WindowBank& bank,
                                int current_frame);

/// Offline full-observation window search over a whole score matrix.
std::vector<double> offline_window_confidences(const LinearClassifier& binary,
                                               const Mat& frames, int beta);

struct DetectionTrace {
  std::string id;
  std::vector<double> confidence;  // one per frame
  std::vector<int> label;          // 1 when confidence >= threshold
  int span_begin = 0;
  int span_end = 0;
  double cost = 0.0;

  int length() const { return static_cast<int>(confidence.size()); }
};

/// Frame-level F1 over all frames of all traces.
double f1_score(std::span<const DetectionTrace> traces, double threshold);

struct AmocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double nt2d = 0.0;
};

/// For each threshold: a trace is a false positive if any frame outside its
/// span reaches the threshold; its NT2D is (first firing frame inside or
/// after the span start - start) / span length, capped at 1, and 1 if it
/// never fires within the span. Points are ordered by FPR, then threshold
/// descending.
std::vector<AmocPoint> amoc_curve(std::span<const DetectionTrace> traces,
                                  std::span<const double> thresholds);

struct UntrimmedConfig {
  double detector_speed = 8.0;
  int buffer = 10;
  int beta = 3;
  double gamma = 0.4;
  double threshold = 0.5;
  StreamAudit* audit = nullptr;
};

struct UntrimmedResult {
  DetectionTrace detection;
  EpisodeTrace episode;
};

/// Streaming detection over an untrimmed record. Frame c is labeled by window
/// search when frame c+1 arrives (or the stream ends). The step reward is
/// the change in confidence of the true label of the issue-time frame.
UntrimmedResult untrimmed_episode(const UntrimmedRecord& video, const ActionSet& actions,
                                  EpisodePolicy& policy, const UntrimmedConfig& cfg,
                                  const LinearClassifier& binary);

/// ceil(N / 3).
int default_beta(int num_objects);

struct WindowSamples {
  Mat x;               // one max-pooled window per row
  std::vector<int> y;  // 1 for target windows
};

/// `windows_per_clip` random windows (length 1..beta) from each target clip,
/// and the same number of windows drawn uniformly from clips of other
/// activities.
WindowSamples window_training_set(const Dataset& train, int target, int beta,
                                  int windows_per_clip, std::uint64_t seed);

/// Binary window recognizer for `target`, fit on window_training_set.
LinearClassifier train_window_classifier(const Dataset& train, int target, int beta,
                                         int windows_per_clip, std::uint64_t seed,
                                         const TrainOptions& opts = {});

class UntrimmedEnvironment : public Environment {
 public:
  UntrimmedEnvironment(const std::vector<UntrimmedRecord>& videos, ActionSet actions,
                       const LinearClassifier& binary, UntrimmedConfig cfg);
  std::size_t num_episodes() const override { return videos_.size(); }
  const ActionSet& actions() const override { return actions_; }
  int feature_dim() const override { return actions_.num_objects() + actions_.size(); }
  EpisodeTrace run(std::size_t index, EpisodePolicy& policy) const override;
  UntrimmedResult run_full(std::size_t index, EpisodePolicy& policy) const;

 private:
  const std::vector<UntrimmedRecord>& videos_;
  ActionSet actions_;
  const LinearClassifier& binary_;
  UntrimmedConfig cfg_;
};

std::vector<UntrimmedResult> run_untrimmed(const UntrimmedEnvironment& env,
                                           const Selector& selector, std::uint64_t seed);

}  // namespace triage

#endif  // TRIAGE_UNTRIMMED_HPP
