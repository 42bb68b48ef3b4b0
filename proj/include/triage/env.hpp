#ifndef TRIAGE_ENV_HPP
#define TRIAGE_ENV_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <vector>

#include "triage/actions.hpp"
#include "triage/classifier.hpp"
#include "triage/data.hpp"
#include "triage/descriptor.hpp"
#include "triage/gmm.hpp"
#include "triage/qpolicy.hpp"
#include "triage/selector.hpp"

namespace triage {

/// r = f(psi_after, y) - f(psi_before, y).
double step_reward(const LinearClassifier& clf, const Vec& psi_before, const Vec& psi_after,
                   int y_true);

/// Classifier input in batch mode: unobserved actions are filled by GMM
/// imputation, then each object takes the max over its volumes.
Vec batch_descriptor(const ActionSet& actions, const DiagonalGMM& gmm,
                     const std::vector<bool>& performed, const Vec& observations);

/// Runs a batch episode of K actions; never repeats an action.
EpisodeTrace batch_episode(const VideoRecord& video, const ActionSet& actions,
                           EpisodePolicy& policy, int budget, const LinearClassifier& clf,
                           const DiagonalGMM& gmm, double gamma);

/// Record of every frame read made through a stream buffer.
/// Counters are atomic so one audit can be shared by parallel episodes.
struct StreamAudit {
  std::atomic<long> reads{0};
  std::atomic<long> future_reads{0};   // frame index above the clock
  std::atomic<long> evicted_reads{0};  // frame index below the buffer start
  std::atomic<long> steps{0};
};

/// Clock, FIFO buffer, and cost ledger of one streaming episode.
///
/// Time advances in detector work: an action that touches b frames costs b
/// units and occupies b / speed seconds. Frames arrive at 1 fps.
class StreamCore {
 public:
  StreamCore(int length, int buffer, double speed, StreamAudit* audit = nullptr);

  int clock() const { return frame_; }
  bool finished() const { return frame_ >= length_; }
  int buffer_begin() const { return std::max(0, frame_ - buffer_ + 1); }
  int buffer_size() const { return frame_ - buffer_begin() + 1; }
  double spent() const { return spent_; }

  /// Checked read of frame `t`; records the access in the audit.
  double read(const Mat& frames, int t, int channel) const;
  Vec read_row(const Mat& dense, int t) const;

  /// Charges `units` of detector work and returns the number of frames that
  /// arrived meanwhile.
  int work(double units);
  /// Skip: wait for the next frame. Returns 1.
  int wait();

 private:
  void audit_access(int t) const;

  int length_, buffer_;
  double speed_;
  StreamAudit* audit_;
  int frame_ = 0;
  double partial_ = 0.0;  // work units done since the current frame arrived
  double spent_ = 0.0;
};

struct StreamConfig {
  double detector_speed = 8.0;
  int buffer = 10;
  double gamma = 0.4;
  StreamAudit* audit = nullptr;
};

/// Streaming episode over a trimmed clip: psi starts from the first frame and
/// the episode ends when the clock passes the last frame. Works with either a
/// buffer-detector action set (max-pool) or frame extraction (mean-pool).
EpisodeTrace streaming_episode(const VideoRecord& video, const ActionSet& actions,
                               EpisodePolicy& policy, const StreamConfig& cfg,
                               const LinearClassifier& clf);

/// Legal streaming actions at clock t: Skip, plus every extractor that has
/// not yet run on the current buffer. Re-running one at the same clock would
/// read the identical buffer again, so it is excluded until a frame arrives.
/// Frame 0 is already folded into psi, so clock 0 offers Skip only.
void stream_candidates(const ActionSet& actions, const ActionHistory& history, int t,
                       std::vector<int>& out);

/// A source of training/evaluation episodes for one setting.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t num_episodes() const = 0;
  virtual const ActionSet& actions() const = 0;
  virtual int feature_dim() const = 0;
  virtual EpisodeTrace run(std::size_t index, EpisodePolicy& policy) const = 0;
};

class BatchEnvironment : public Environment {
 public:
  BatchEnvironment(const std::vector<VideoRecord>& videos, ActionSet actions,
                   const LinearClassifier& clf, const DiagonalGMM& gmm, int budget, double gamma);
  std::size_t num_episodes() const override { return videos_.size(); }
  const ActionSet& actions() const override { return actions_; }
  int feature_dim() const override { return actions_.num_objects() + actions_.size(); }
  EpisodeTrace run(std::size_t index, EpisodePolicy& policy) const override;

 private:
  const std::vector<VideoRecord>& videos_;
  ActionSet actions_;
  const LinearClassifier& clf_;
  const DiagonalGMM& gmm_;
  int budget_;
  double gamma_;
};

class StreamingEnvironment : public Environment {
 public:
  StreamingEnvironment(const std::vector<VideoRecord>& videos, ActionSet actions,
                       const LinearClassifier& clf, StreamConfig cfg);
  std::size_t num_episodes() const override { return videos_.size(); }
  const ActionSet& actions() const override { return actions_; }
  int feature_dim() const override;
  EpisodeTrace run(std::size_t index, EpisodePolicy& policy) const override;

 private:
  const std::vector<VideoRecord>& videos_;
  ActionSet actions_;
  const LinearClassifier& clf_;
  StreamConfig cfg_;
};

/// Worker count from TRIAGE_WORKERS (default: hardware concurrency).
int worker_count();

/// Runs fn(i) for i in [0, n) on a bounded worker pool.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Runs every episode of `env` under `selector`; episode i uses
/// derive_seed(seed, i). Output order follows episode order.
std::vector<EpisodeTrace> run_episodes(const Environment& env, const Selector& selector,
                                       std::uint64_t seed);

}  // namespace triage

#endif  // TRIAGE_ENV_HPP
