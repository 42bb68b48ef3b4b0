#include "triage/untrimmed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace triage {

WindowBank::WindowBank(int beta, int channels) : beta_(beta), channels_(channels) {
  if (beta < 1) throw ConfigError("window bound beta must be at least 1");
  if (channels < 1) throw ConfigError("window bank needs at least one channel");
}

void WindowBank::arrive() {
  ++newest_;
  rows_.push_back(Vec::Zero(channels_));
  while (static_cast<int>(rows_.size()) > beta_) rows_.pop_front();
}

void WindowBank::observe(int frame, int channel, double x) {
  if (frame > newest_) throw UsageError("window bank: observation of a future frame");
  if (frame < oldest()) return;
  double& v = rows_[frame - oldest()](channel);
  v = std::max(v, x);
}

Vec WindowBank::window(int end, int length) const {
  if (end > newest_ || end - length + 1 < oldest() || length < 1)
    throw UsageError("window bank: window [" + std::to_string(end - length + 1) + "," +
                     std::to_string(end) + "] not stored");
  Vec d = Vec::Zero(channels_);
  for (int f = end - length + 1; f <= end; ++f) d = d.cwiseMax(rows_[f - oldest()]);
  return d;
}

WindowPrediction window_predict(const LinearClassifier& binary, const WindowBank& bank,
                                int current_frame) {
  if (bank.stored() == 0 || current_frame < bank.oldest() || current_frame > bank.newest())
    throw UsageError("window_predict: frame " + std::to_string(current_frame) + " not in bank");
  const int longest = std::min(bank.beta(), current_frame - bank.oldest() + 1);
  WindowPrediction best{-1.0, 1};
  Vec d = Vec::Zero(bank.channels());
  for (int len = 1; len <= longest; ++len) {
    // Windows grow backwards, so the max-pool can be extended one frame at a time.
    d = d.cwiseMax(bank.window(current_frame - len + 1, 1));
    const double c = binary.posterior(d, 1);
    if (c > best.confidence) best = {c, len};
  }
  return best;
}

std::vector<double> offline_window_confidences(const LinearClassifier& binary, const Mat& frames,
                                               int beta) {
  std::vector<double> out(frames.rows());
  for (Eigen::Index c = 0; c < frames.rows(); ++c) {
    double best = -1.0;
    Vec d = Vec::Zero(frames.cols());
    for (Eigen::Index len = 1; len <= std::min<Eigen::Index>(beta, c + 1); ++len) {
      d = d.cwiseMax(frames.row(c - len + 1).transpose());
      best = std::max(best, binary.posterior(d, 1));
    }
    out[c] = best;
  }
  return out;
}

double f1_score(std::span<const DetectionTrace> traces, double threshold) {
  long tp = 0, fp = 0, fn = 0;
  for (const auto& tr : traces) {
    for (int f = 0; f < tr.length(); ++f) {
      const bool truth = f >= tr.span_begin && f < tr.span_end;
      const bool pred = tr.confidence[f] >= threshold;
      if (pred && truth) ++tp;
      else if (pred) ++fp;
      else if (truth) ++fn;
    }
  }
  const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

std::vector<AmocPoint> amoc_curve(std::span<const DetectionTrace> traces,
                                  std::span<const double> thresholds) {
  if (thresholds.empty()) throw ConfigError("amoc_curve: empty threshold list");
  if (traces.empty()) throw ConfigError("amoc_curve: no traces");
  std::vector<AmocPoint> out;
  for (double th : thresholds) {
    double fp = 0.0, nt2d = 0.0;
    for (const auto& tr : traces) {
      const int len = tr.span_end - tr.span_begin;
      if (len <= 0) throw ConfigError("amoc_curve: trace '" + tr.id + "' has an empty span");
      bool false_alarm = false;
      int fire = -1;
      for (int f = 0; f < tr.length(); ++f) {
        if (tr.confidence[f] < th) continue;
        if (f < tr.span_begin || f >= tr.span_end) false_alarm = true;
        else if (fire < 0) fire = f;
      }
      fp += false_alarm ? 1.0 : 0.0;
      nt2d += fire < 0 ? 1.0
                       : std::min(1.0, static_cast<double>(fire - tr.span_begin) / len);
    }
    const double n = static_cast<double>(traces.size());
    out.push_back({th, fp / n, nt2d / n});
  }
  std::stable_sort(out.begin(), out.end(), [](const AmocPoint& a, const AmocPoint& b) {
    return a.fpr < b.fpr || (a.fpr == b.fpr && a.threshold > b.threshold);
  });
  return out;
}

int default_beta(int num_objects) { return std::max(1, (num_objects + 2) / 3); }

UntrimmedResult untrimmed_episode(const UntrimmedRecord& video, const ActionSet& actions,
                                  EpisodePolicy& policy, const UntrimmedConfig& cfg,
                                  const LinearClassifier& binary) {
  if (actions.is_batch() || actions.num_objects() == 0)
    throw UsageError("untrimmed_episode needs a buffer-detector action set");
  if (binary.kind() != ClassifierKind::kBinary)
    throw ConfigError("untrimmed detection needs a binary classifier");
  const int N = actions.num_objects();
  if (video.frames.cols() != N)
    throw ConfigError("untrimmed record '" + video.id + "' channel count mismatch");
  const int T = video.length();

  StreamCore core(T, cfg.buffer, cfg.detector_speed, cfg.audit);
  WindowBank bank(cfg.beta, N);
  bank.arrive();
  for (int n = 0; n < N; ++n) bank.observe(0, n, core.read(video.frames, 0, n));

  UntrimmedResult res;
  DetectionTrace& det = res.detection;
  det.id = video.id;
  det.span_begin = video.span_begin;
  det.span_end = video.span_end;
  EpisodeTrace& ep = res.episode;
  ep.video_id = video.id;
  ep.label = video.target;

  auto truth_confidence = [&](int frame) {
    const double c = window_predict(binary, bank, frame).confidence;
    return video.positive_at(frame) ? c : 1.0 - c;
  };
  auto emit = [&](int frame) {
    const double c = window_predict(binary, bank, frame).confidence;
    det.confidence.push_back(c);
    det.label.push_back(c >= cfg.threshold ? 1 : 0);
  };

  ep.initial_confidence = truth_confidence(0);
  const int M = actions.size();
  ActionHistory history(M);
  std::vector<int> candidates;

  for (int k = 0; !core.finished(); ++k) {
    const int t = core.clock();
    const Vec psi = bank.window(t, std::min(bank.stored(), t - bank.oldest() + 1));
    const Vec phi = state_action_features(psi, history, t, Setting::kStreaming);
    stream_candidates(actions, history, t, candidates);
    const int a = policy.choose(Decision{phi, candidates, k, t});
    if (!std::binary_search(candidates.begin(), candidates.end(), a))
      throw UsageError("policy chose illegal action " + std::to_string(a));
    StepRecord s;
    s.k = k;
    s.action = a;
    s.time = t;
    s.phi = phi;
    const double before = truth_confidence(t);
    int arrived = 0;
    if (const auto* d = std::get_if<DetectInBuffer>(&actions[a])) {
      double x = 0.0;
      for (int f = core.buffer_begin(); f <= t; ++f) {
        const double v = core.read(video.frames, f, d->object);
        x = std::max(x, v);
        bank.observe(f, d->object, v);
      }
      s.observation = x;
      s.cost = core.buffer_size();
      s.confidence = truth_confidence(t);
      arrived = core.work(s.cost);
    } else if (std::holds_alternative<Skip>(actions[a])) {
      s.confidence = before;
      arrived = core.wait();
    } else {
      throw UsageError("untrimmed detection supports detect and skip actions only");
    }
    history.record(a, t);
    s.reward = s.confidence - before;
    s.prediction = window_predict(binary, bank, t).confidence >= cfg.threshold ? 1 : 0;
    ep.steps.push_back(std::move(s));
    for (int i = 0; i < arrived && t + i < T; ++i) {
      emit(t + i);
      if (t + i + 1 < T) bank.arrive();
    }
  }
  det.cost = core.spent();
  ep.final_confidence = ep.steps.empty() ? ep.initial_confidence : ep.steps.back().confidence;
  ep.final_prediction = det.label.empty() ? 0 : det.label.back();
  assign_returns(ep, cfg.gamma);
  return res;
}

WindowSamples window_training_set(const Dataset& train, int target, int beta,
                                  int windows_per_clip, std::uint64_t seed) {
  if (beta < 1 || windows_per_clip < 1)
    throw ConfigError("window training set: beta and windows_per_clip must be positive");
  std::vector<const VideoRecord*> pos, neg;
  for (const auto& r : train.records) (r.label == target ? pos : neg).push_back(&r);
  if (pos.empty() || neg.empty())
    throw ConfigError("window training set: need clips of the target and of other activities");
  Rng rng(derive_seed(seed, 0x7714, target));
  auto sample_window = [&](const VideoRecord& r) {
    const int len = 1 + static_cast<int>(uniform_index(rng, std::min(beta, r.frames())));
    const int start = static_cast<int>(uniform_index(rng, r.frames() - len + 1));
    return Vec(r.scores.middleRows(start, len).colwise().maxCoeff().transpose());
  };
  const std::size_t count = pos.size() * windows_per_clip;
  WindowSamples out{Mat(2 * count, train.num_channels), std::vector<int>(2 * count)};
  std::size_t row = 0;
  for (const auto* r : pos)
    for (int w = 0; w < windows_per_clip; ++w) {
      out.x.row(row) = sample_window(*r).transpose();
      out.y[row++] = 1;
    }
  for (std::size_t i = 0; i < count; ++i) {
    out.x.row(row) = sample_window(*neg[uniform_index(rng, neg.size())]).transpose();
    out.y[row++] = 0;
  }
  return out;
}

LinearClassifier train_window_classifier(const Dataset& train, int target, int beta,
                                         int windows_per_clip, std::uint64_t seed,
                                         const TrainOptions& opts) {
  const auto s = window_training_set(train, target, beta, windows_per_clip, seed);
  return train_classifier(s.x, s.y, 2, ClassifierKind::kBinary, opts);
}

UntrimmedEnvironment::UntrimmedEnvironment(const std::vector<UntrimmedRecord>& videos,
                                           ActionSet actions, const LinearClassifier& binary,
                                           UntrimmedConfig cfg)
    : videos_(videos), actions_(std::move(actions)), binary_(binary), cfg_(cfg) {}

EpisodeTrace UntrimmedEnvironment::run(std::size_t index, EpisodePolicy& policy) const {
  return run_full(index, policy).episode;
}

UntrimmedResult UntrimmedEnvironment::run_full(std::size_t index, EpisodePolicy& policy) const {
  return untrimmed_episode(videos_.at(index), actions_, policy, cfg_, binary_);
}

std::vector<UntrimmedResult> run_untrimmed(const UntrimmedEnvironment& env,
                                           const Selector& selector, std::uint64_t seed) {
  std::vector<UntrimmedResult> out(env.num_episodes());
  parallel_for(out.size(), [&](std::size_t i) {
    auto policy = selector.start(derive_seed(seed, i));
    out[i] = env.run_full(i, *policy);
  });
  return out;
}

}  // namespace triage
