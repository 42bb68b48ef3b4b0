#include "triage/env.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace triage {

double step_reward(const LinearClassifier& clf, const Vec& before, const Vec& after, int y) {
  return clf.posterior(after, y) - clf.posterior(before, y);
}

Vec batch_descriptor(const ActionSet& actions, const DiagonalGMM& gmm,
                     const std::vector<bool>& performed, const Vec& observations) {
  if (gmm.dim() != actions.size())
    throw ConfigError("GMM dimension " + std::to_string(gmm.dim()) +
                      " does not match action count " + std::to_string(actions.size()));
  const Vec full = complete_observations(gmm, performed, observations);
  Vec desc = Vec::Zero(actions.num_objects());
  for (int o = 0; o < actions.num_objects(); ++o)
    for (int v = 0; v < actions.num_volumes(); ++v)
      desc(o) = std::max(desc(o), full(actions.batch_index(o, v)));
  return desc;
}

namespace {

void check_choice(int a, std::span<const int> candidates) {
  if (!std::binary_search(candidates.begin(), candidates.end(), a))
    throw UsageError("policy chose illegal action " + std::to_string(a));
}

}  // namespace

EpisodeTrace batch_episode(const VideoRecord& video, const ActionSet& actions,
                           EpisodePolicy& policy, int budget, const LinearClassifier& clf,
                           const DiagonalGMM& gmm, double gamma) {
  if (!actions.is_batch()) throw UsageError("batch_episode needs a batch action set");
  const int M = actions.size();
  if (budget < 0 || budget > M)
    throw ConfigError("batch budget " + std::to_string(budget) + " outside [0," +
                      std::to_string(M) + "]");
  if (video.channels() != actions.num_objects())
    throw ConfigError("video '" + video.id + "' channel count does not match action set");

  std::vector<bool> performed(M, false);
  Vec obs = Vec::Zero(M);
  DescriptorState state(PoolMode::kMax, actions.num_objects());
  ActionHistory history(M);

  EpisodeTrace trace;
  trace.video_id = video.id;
  trace.label = video.label;
  Vec desc = batch_descriptor(actions, gmm, performed, obs);
  Vec post = clf.posteriors(desc);
  trace.initial_confidence = post(video.label);
  trace.initial_prediction = argmax_lowest(post);

  std::vector<int> candidates(M);
  std::iota(candidates.begin(), candidates.end(), 0);
  for (int k = 0; k < budget; ++k) {
    const Vec phi = state_action_features(state.psi(), history, 0, Setting::kBatch);
    const int a = policy.choose(Decision{phi, candidates, k, 0});
    check_choice(a, candidates);
    const auto& d = std::get<DetectInVolume>(actions[a]);
    const double x = observe_volume(video, d.object, actions.volume(d.volume));
    performed[a] = true;
    obs(a) = x;
    state.update_max(d.object, x);
    history.record(a, 0);
    candidates.erase(std::find(candidates.begin(), candidates.end(), a));

    const double before = post(video.label);
    desc = batch_descriptor(actions, gmm, performed, obs);
    post = clf.posteriors(desc);
    StepRecord s;
    s.k = k;
    s.action = a;
    s.time = 0;
    s.phi = phi;
    s.observation = x;
    s.reward = post(video.label) - before;
    s.cost = 1.0;
    s.confidence = post(video.label);
    s.prediction = argmax_lowest(post);
    trace.steps.push_back(std::move(s));
  }
  trace.final_prediction = argmax_lowest(post);
  trace.final_confidence = post(video.label);
  assign_returns(trace, gamma);
  return trace;
}

// ---------------------------------------------------------------------------

StreamCore::StreamCore(int length, int buffer, double speed, StreamAudit* audit)
    : length_(length), buffer_(buffer), speed_(speed), audit_(audit) {
  if (length < 1) throw ConfigError("stream needs at least one frame");
  if (buffer < 1) throw ConfigError("buffer size must be at least 1");
  if (!(speed > 0)) throw ConfigError("detector speed must be positive");
}

void StreamCore::audit_access(int t) const {
  if (!audit_) return;
  ++audit_->reads;
  if (t > frame_) ++audit_->future_reads;
  if (t < buffer_begin()) ++audit_->evicted_reads;
}

double StreamCore::read(const Mat& frames, int t, int channel) const {
  audit_access(t);
  if (t < buffer_begin() || t > frame_)
    throw UsageError("stream read of frame " + std::to_string(t) + " outside buffer [" +
                     std::to_string(buffer_begin()) + "," + std::to_string(frame_) + "]");
  return frames(t, channel);
}

Vec StreamCore::read_row(const Mat& dense, int t) const {
  audit_access(t);
  if (t < buffer_begin() || t > frame_)
    throw UsageError("stream read of frame " + std::to_string(t) + " outside buffer");
  return dense.row(t).transpose();
}

int StreamCore::work(double units) {
  spent_ += units;
  partial_ += units;
  int arrived = 0;
  while (partial_ >= speed_) {
    partial_ -= speed_;
    ++frame_;
    ++arrived;
  }
  if (audit_) ++audit_->steps;
  return arrived;
}

int StreamCore::wait() {
  ++frame_;
  partial_ = 0.0;
  if (audit_) ++audit_->steps;
  return 1;
}

EpisodeTrace streaming_episode(const VideoRecord& video, const ActionSet& actions,
                               EpisodePolicy& policy, const StreamConfig& cfg,
                               const LinearClassifier& clf) {
  if (actions.is_batch()) throw UsageError("streaming_episode needs a streaming action set");
  const bool frame_mode = actions.num_objects() == 0;
  if (frame_mode && !video.dense)
    throw ConfigError("video '" + video.id + "' has no dense descriptors for frame extraction");
  if (!frame_mode && video.channels() != actions.num_objects())
    throw ConfigError("video '" + video.id + "' channel count does not match action set");

  StreamCore core(video.frames(), cfg.buffer, cfg.detector_speed, cfg.audit);
  auto first = [&]() -> Vec {
    if (frame_mode) return core.read_row(*video.dense, 0);
    Vec d(video.channels());
    for (int n = 0; n < video.channels(); ++n) d(n) = core.read(video.scores, 0, n);
    return d;
  }();
  DescriptorState state(frame_mode ? PoolMode::kMean : PoolMode::kMax,
                        static_cast<int>(first.size()), first);
  const int M = actions.size();
  ActionHistory history(M);
  std::vector<int> candidates;

  EpisodeTrace trace;
  trace.video_id = video.id;
  trace.label = video.label;
  Vec post = clf.posteriors(state.psi());
  trace.initial_confidence = post(video.label);
  trace.initial_prediction = argmax_lowest(post);

  for (int k = 0; !core.finished(); ++k) {
    const int t = core.clock();
    const Vec phi = state_action_features(state.psi(), history, t, Setting::kStreaming);
    stream_candidates(actions, history, t, candidates);
    const int a = policy.choose(Decision{phi, candidates, k, t});
    check_choice(a, candidates);
    StepRecord s;
    s.k = k;
    s.action = a;
    s.time = t;
    s.phi = phi;
    const auto& spec = actions[a];
    if (const auto* d = std::get_if<DetectInBuffer>(&spec)) {
      double x = 0.0;
      for (int f = core.buffer_begin(); f <= t; ++f)
        x = std::max(x, core.read(video.scores, f, d->object));
      s.observation = x;
      s.cost = core.buffer_size();
      state.update_max(d->object, x);
      core.work(s.cost);
    } else if (std::holds_alternative<ExtractFrame>(spec)) {
      const Vec d = core.read_row(*video.dense, t);
      s.observation = d.norm();
      s.cost = 1.0;
      state.update_mean(d);
      core.work(s.cost);
    } else {
      core.wait();
    }
    history.record(a, t);
    const double before = post(video.label);
    post = clf.posteriors(state.psi());
    s.reward = post(video.label) - before;
    s.confidence = post(video.label);
    s.prediction = argmax_lowest(post);
    trace.steps.push_back(std::move(s));
  }
  trace.final_prediction = argmax_lowest(post);
  trace.final_confidence = post(video.label);
  assign_returns(trace, cfg.gamma);
  return trace;
}

void stream_candidates(const ActionSet& actions, const ActionHistory& history, int t,
                       std::vector<int>& out) {
  out.clear();
  for (int m = 0; m < actions.size(); ++m) {
    const bool skip = std::holds_alternative<Skip>(actions[m]);
    if (skip || (t > 0 && history.last(m) != t)) out.push_back(m);
  }
}

// ---------------------------------------------------------------------------

double episode_cost(const EpisodeTrace& trace) {
  double c = 0.0;
  for (const auto& s : trace.steps) c += s.cost;
  return c;
}

void assign_returns(EpisodeTrace& trace, double gamma) {
  std::vector<double> r;
  r.reserve(trace.steps.size());
  for (const auto& s : trace.steps) r.push_back(s.reward);
  const auto g = compute_returns(r, gamma);
  for (std::size_t k = 0; k < g.size(); ++k) trace.steps[k].ret = g[k];
}

BatchEnvironment::BatchEnvironment(const std::vector<VideoRecord>& videos, ActionSet actions,
                                   const LinearClassifier& clf, const DiagonalGMM& gmm,
                                   int budget, double gamma)
    : videos_(videos), actions_(std::move(actions)), clf_(clf), gmm_(gmm), budget_(budget),
      gamma_(gamma) {
  if (budget_ < 0 || budget_ > actions_.size())
    throw ConfigError("batch budget outside [0, M]");
}

EpisodeTrace BatchEnvironment::run(std::size_t index, EpisodePolicy& policy) const {
  return batch_episode(videos_.at(index), actions_, policy, budget_, clf_, gmm_, gamma_);
}

StreamingEnvironment::StreamingEnvironment(const std::vector<VideoRecord>& videos,
                                           ActionSet actions, const LinearClassifier& clf,
                                           StreamConfig cfg)
    : videos_(videos), actions_(std::move(actions)), clf_(clf), cfg_(cfg) {}

int StreamingEnvironment::feature_dim() const {
  return clf_.dim() + actions_.size();
}

EpisodeTrace StreamingEnvironment::run(std::size_t index, EpisodePolicy& policy) const {
  return streaming_episode(videos_.at(index), actions_, policy, cfg_, clf_);
}

int worker_count() {
  if (const char* env = std::getenv("TRIAGE_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

std::vector<EpisodeTrace> run_episodes(const Environment& env, const Selector& selector,
                                       std::uint64_t seed) {
  std::vector<EpisodeTrace> out(env.num_episodes());
  parallel_for(out.size(), [&](std::size_t i) {
    auto policy = selector.start(derive_seed(seed, i));
    out[i] = env.run(i, *policy);
  });
  return out;
}

}  // namespace triage
