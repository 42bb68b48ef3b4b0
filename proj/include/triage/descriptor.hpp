#ifndef TRIAGE_DESCRIPTOR_HPP
#define TRIAGE_DESCRIPTOR_HPP

#include <optional>
#include <vector>

#include "triage/common.hpp"

namespace triage {

enum class PoolMode { kMax, kMean };

/// Running video representation built from partial observations.
///
/// Max-pool keeps, per object channel, the highest detection probability seen
/// so far. Mean-pool keeps the running average of every frame descriptor
/// submitted.
class DescriptorState {
 public:
  /// `dim` is N for max-pool, D for mean-pool. With `first_frame` the state
  /// starts from that single observation, otherwise it is empty.
  DescriptorState(PoolMode mode, int dim,
                  const std::optional<Vec>& first_frame = std::nullopt);

  PoolMode mode() const { return mode_; }
  int dim() const { return static_cast<int>(psi_.size()); }
  const Vec& psi() const { return psi_; }
  long count() const { return count_; }
  const std::vector<bool>& observed() const { return observed_; }

  void update_max(int channel, double x);
  void update_mean(const Vec& frame_descriptor);

 private:
  PoolMode mode_;
  Vec psi_;
  long count_ = 0;
  std::vector<bool> observed_;
};

}  // namespace triage

#endif  // TRIAGE_DESCRIPTOR_HPP
