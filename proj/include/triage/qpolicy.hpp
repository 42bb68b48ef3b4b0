#ifndef TRIAGE_QPOLICY_HPP
#define TRIAGE_QPOLICY_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "triage/selector.hpp"

namespace triage {

enum class Setting { kBatch, kStreaming };

/// Last issue time of every action in the current episode.
class ActionHistory {
 public:
  explicit ActionHistory(int num_actions) : last_(num_actions) {}
  void record(int action, int time) { last_.at(action) = time; }
  bool performed(int action) const { return last_.at(action).has_value(); }
  const std::optional<int>& last(int action) const { return last_.at(action); }
  int size() const { return static_cast<int>(last_.size()); }

 private:
  std::vector<std::optional<int>> last_;
};

/// phi = [psi, dt]. Streaming: dt(m) = t_now - last time of m, 0 if never
/// performed. Batch: dt(m) is 1 if m was performed, else 0.
Vec state_action_features(const Vec& psi, const ActionHistory& history, int t_now,
                          Setting setting);

/// Per-action linear Q models over bias-augmented state-action features.
struct QModel {
  Mat theta;  // M x (F + 1); last column is the bias
  double gamma = 0.4;
  double ridge = 1.0;

  int num_actions() const { return static_cast<int>(theta.rows()); }
  int feature_dim() const { return static_cast<int>(theta.cols()) - 1; }

  static QModel zeros(int num_actions, int feature_dim, double gamma, double ridge);
  double q_value(const Vec& phi, int action) const;
  Vec q_values(const Vec& phi) const;

  std::string to_json() const;
  static QModel from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static QModel load(const std::filesystem::path& path);
};

/// Epsilon-greedy choice among `candidates`; greedy ties go to the lowest index.
int select_action(const QModel& model, const Vec& phi, std::span<const int> candidates,
                  double epsilon, Rng& rng);

/// G_k = sum_{j>=k} gamma^(j-k) r_j.
std::vector<double> compute_returns(std::span<const double> rewards, double gamma);

struct QSample {
  int action = 0;
  Vec phi;
  double target = 0.0;
};

/// Sufficient statistics of per-action ridge problems; adding samples in any
/// grouping yields the same fit.
class RidgeAccumulator {
 public:
  RidgeAccumulator(int num_actions, int feature_dim);
  void add(int action, const Vec& phi, double target);
  void add(const QSample& s) { add(s.action, s.phi, s.target); }
  std::size_t count() const { return total_; }
  std::size_t count(int action) const { return counts_.at(action); }
  /// Minimizes sum (G - theta.phi^)^2 + ridge*|theta_w|^2 per action; the
  /// bias is unpenalized. Actions without samples keep zero weights.
  QModel solve(double ridge, double gamma) const;

 private:
  int num_actions_, feature_dim_;
  std::vector<Mat> gram_;
  std::vector<Vec> rhs_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
};

QModel fit_q(std::span<const QSample> samples, int num_actions, int feature_dim, double ridge,
             double gamma);

/// Epsilon-greedy policy over a frozen Q model. epsilon = 1 is the uniform
/// random policy.
class GreedySelector : public Selector {
 public:
  GreedySelector(QModel model, double epsilon) : model_(std::move(model)), epsilon_(epsilon) {}
  std::unique_ptr<EpisodePolicy> start(std::uint64_t episode_seed) const override;
  std::string name() const override { return "policy"; }
  const QModel& model() const { return model_; }

 private:
  QModel model_;
  double epsilon_;
};

/// Uniform choice among candidates every step.
class RandomSelector : public Selector {
 public:
  std::unique_ptr<EpisodePolicy> start(std::uint64_t episode_seed) const override;
  std::string name() const override { return "random"; }
};

class Environment;

struct PolicyIterationConfig {
  int iterations = 8;
  double gamma = 0.4;
  double epsilon0 = 0.5;
  double epsilon_step = 0.1;
  double epsilon_floor = 0.05;
  double ridge = 1.0;
  std::uint64_t seed = 1;

  /// Exploration rate of round i >= 1 (round 0 is the random policy).
  double epsilon(int round) const;
};

struct IterationDiagnostics {
  int round = 0;
  double epsilon = 1.0;
  std::size_t episodes = 0;
  std::size_t samples_added = 0;
  std::size_t samples_total = 0;
  double mean_return = 0.0;  // mean G_0 over episodes
  double mean_final_confidence = 0.0;
  double accuracy = 0.0;
  double mean_cost = 0.0;
};

struct PolicyIterationResult {
  QModel model;
  std::vector<IterationDiagnostics> diagnostics;
};

/// Alternates rollouts over every training episode with refits on the union
/// of all samples gathered so far.
PolicyIterationResult policy_iteration(const Environment& env, const PolicyIterationConfig& cfg);

}  // namespace triage

#endif  // TRIAGE_QPOLICY_HPP
