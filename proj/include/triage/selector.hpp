#ifndef TRIAGE_SELECTOR_HPP
#define TRIAGE_SELECTOR_HPP

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "triage/common.hpp"

namespace triage {

/// What a policy sees before choosing the next action.
struct Decision {
  const Vec& phi;                 // state-action feature [psi, dt]
  std::span<const int> candidates;  // legal action indices, ascending
  int step = 0;
  int clock = 0;                  // current frame (streaming) or 0 (batch)
};

/// Per-episode decision maker; may carry mutable state such as a generator
/// or a cycling cursor.
class EpisodePolicy {
 public:
  virtual ~EpisodePolicy() = default;
  virtual int choose(const Decision& d) = 0;
};

/// Immutable factory shared across concurrent episodes.
class Selector {
 public:
  virtual ~Selector() = default;
  virtual std::unique_ptr<EpisodePolicy> start(std::uint64_t episode_seed) const = 0;
  virtual std::string name() const = 0;
};

/// One executed action.
struct StepRecord {
  int k = 0;
  int action = 0;
  int time = 0;
  Vec phi;
  double observation = std::numeric_limits<double>::quiet_NaN();  // NaN for Skip
  double reward = 0.0;
  double ret = 0.0;
  double cost = 0.0;
  double confidence = 0.0;  // true-class posterior after the action
  int prediction = 0;       // predicted class after the action
};

struct EpisodeTrace {
  std::string video_id;
  int label = 0;
  double initial_confidence = 0.0;
  int initial_prediction = 0;
  int final_prediction = 0;
  double final_confidence = 0.0;
  std::vector<StepRecord> steps;
};

/// Sum of per-action costs (detector-frame invocation units).
double episode_cost(const EpisodeTrace& trace);

/// Fills StepRecord::ret with discounted returns of the rewards.
void assign_returns(EpisodeTrace& trace, double gamma);

}  // namespace triage

#endif  // TRIAGE_SELECTOR_HPP
