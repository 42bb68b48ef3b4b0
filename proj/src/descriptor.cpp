#include "triage/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace triage {

DescriptorState::DescriptorState(PoolMode mode, int dim, const std::optional<Vec>& first_frame)
    : mode_(mode), psi_(Vec::Zero(dim)), observed_(dim, false) {
  if (dim <= 0) throw ConfigError("descriptor dimension must be positive");
  if (!first_frame) return;
  if (first_frame->size() != dim)
    throw ConfigError("first frame has dimension " + std::to_string(first_frame->size()) +
                      ", descriptor expects " + std::to_string(dim));
  if (mode_ == PoolMode::kMax) {
    for (int n = 0; n < dim; ++n) update_max(n, (*first_frame)(n));
  } else {
    update_mean(*first_frame);
  }
}

void DescriptorState::update_max(int channel, double x) {
  if (mode_ != PoolMode::kMax) throw UsageError("update_max on a mean-pool descriptor");
  if (channel < 0 || channel >= dim())
    throw ConfigError("channel " + std::to_string(channel) + " out of range");
  if (!(x >= 0.0 && x <= 1.0))
    throw ConfigError("max-pool observation must be a probability in [0,1]");
  psi_(channel) = std::max(psi_(channel), x);
  observed_[channel] = true;
}

void DescriptorState::update_mean(const Vec& d) {
  if (mode_ != PoolMode::kMean) throw UsageError("update_mean on a max-pool descriptor");
  if (d.size() != psi_.size())
    throw ConfigError("frame descriptor has dimension " + std::to_string(d.size()) +
                      ", expected " + std::to_string(psi_.size()));
  ++count_;
  psi_ += (d - psi_) / static_cast<double>(count_);
  std::fill(observed_.begin(), observed_.end(), true);
}

}  // namespace triage
