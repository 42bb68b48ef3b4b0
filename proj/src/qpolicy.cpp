#include "triage/qpolicy.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "triage/env.hpp"

namespace triage {

using json = nlohmann::json;

Vec state_action_features(const Vec& psi, const ActionHistory& history, int t_now,
                          Setting setting) {
  const Eigen::Index n = psi.size();
  Vec phi(n + history.size());
  phi.head(n) = psi;
  for (int m = 0; m < history.size(); ++m) {
    const auto& last = history.last(m);
    double dt = 0.0;
    if (last) dt = setting == Setting::kBatch ? 1.0 : static_cast<double>(t_now - *last);
    phi(n + m) = dt;
  }
  return phi;
}

QModel QModel::zeros(int num_actions, int feature_dim, double gamma, double ridge) {
  if (num_actions < 1) throw ConfigError("QModel needs at least one action");
  QModel q;
  q.theta = Mat::Zero(num_actions, feature_dim + 1);
  q.gamma = gamma;
  q.ridge = ridge;
  return q;
}

double QModel::q_value(const Vec& phi, int action) const {
  if (action < 0 || action >= num_actions())
    throw ConfigError("unknown action " + std::to_string(action));
  if (phi.size() != feature_dim())
    throw ConfigError("state-action feature has length " + std::to_string(phi.size()) +
                      ", model expects " + std::to_string(feature_dim()));
  return theta.row(action).head(feature_dim()).dot(phi) + theta(action, feature_dim());
}

Vec QModel::q_values(const Vec& phi) const {
  if (phi.size() != feature_dim())
    throw ConfigError("state-action feature length mismatch");
  return theta.leftCols(feature_dim()) * phi + theta.col(feature_dim());
}

std::string QModel::to_json() const {
  json j;
  j["format"] = "triage-qmodel";
  j["gamma"] = gamma;
  j["ridge"] = ridge;
  j["theta"] = json::array();
  for (Eigen::Index r = 0; r < theta.rows(); ++r) {
    std::vector<double> row(theta.cols());
    for (Eigen::Index c = 0; c < theta.cols(); ++c) row[c] = theta(r, c);
    j["theta"].push_back(row);
  }
  return j.dump(2);
}

QModel QModel::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const auto rows = j.at("theta").get<std::vector<std::vector<double>>>();
    if (rows.empty() || rows.front().empty()) throw LoadError("qmodel: empty theta");
    QModel q;
    q.theta.resize(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw LoadError("qmodel: ragged theta");
      for (std::size_t c = 0; c < rows[r].size(); ++c) q.theta(r, c) = rows[r][c];
    }
    q.gamma = j.value("gamma", 0.4);
    q.ridge = j.value("ridge", 1.0);
    return q;
  } catch (const json::exception& e) {
    throw LoadError(std::string("qmodel: ") + e.what());
  }
}

void QModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json() << '\n';
}

QModel QModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open policy " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

int select_action(const QModel& model, const Vec& phi, std::span<const int> candidates,
                  double epsilon, Rng& rng) {
  if (candidates.empty()) throw UsageError("select_action: empty candidate set");
  // The exploration draw happens every step so the stream position does not
  // depend on the model.
  const bool explore = uniform01(rng) < epsilon;
  if (explore) return candidates[uniform_index(rng, candidates.size())];
  const Vec q = model.q_values(phi);
  int best = candidates[0];
  for (int a : candidates)
    if (q(a) > q(best) || (q(a) == q(best) && a < best)) best = a;
  return best;
}

std::vector<double> compute_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    acc = rewards[k] + gamma * acc;
    g[k] = acc;
  }
  return g;
}

RidgeAccumulator::RidgeAccumulator(int num_actions, int feature_dim)
    : num_actions_(num_actions), feature_dim_(feature_dim),
      gram_(num_actions, Mat::Zero(feature_dim + 1, feature_dim + 1)),
      rhs_(num_actions, Vec::Zero(feature_dim + 1)), counts_(num_actions, 0) {}

void RidgeAccumulator::add(int action, const Vec& phi, double target) {
  if (action < 0 || action >= num_actions_) throw ConfigError("sample action out of range");
  if (phi.size() != feature_dim_) throw ConfigError("sample feature length mismatch");
  Vec x(feature_dim_ + 1);
  x.head(feature_dim_) = phi;
  x(feature_dim_) = 1.0;
  gram_[action].selfadjointView<Eigen::Lower>().rankUpdate(x);
  rhs_[action] += target * x;
  ++counts_[action];
  ++total_;
}

QModel RidgeAccumulator::solve(double ridge, double gamma) const {
  if (!(ridge > 0)) throw ConfigError("ridge strength must be positive");
  QModel q = QModel::zeros(num_actions_, feature_dim_, gamma, ridge);
  for (int a = 0; a < num_actions_; ++a) {
    if (counts_[a] == 0) continue;
    Mat A = gram_[a].selfadjointView<Eigen::Lower>();
    A.diagonal().head(feature_dim_).array() += ridge;
    q.theta.row(a) = A.ldlt().solve(rhs_[a]).transpose();
  }
  return q;
}

QModel fit_q(std::span<const QSample> samples, int num_actions, int feature_dim, double ridge,
             double gamma) {
  RidgeAccumulator acc(num_actions, feature_dim);
  for (const auto& s : samples) acc.add(s);
  return acc.solve(ridge, gamma);
}

namespace {

class GreedyPolicy : public EpisodePolicy {
 public:
  GreedyPolicy(const QModel& model, double epsilon, std::uint64_t seed)
      : model_(model), epsilon_(epsilon), rng_(seed) {}
  int choose(const Decision& d) override {
    return select_action(model_, d.phi, d.candidates, epsilon_, rng_);
  }

 private:
  const QModel& model_;
  double epsilon_;
  Rng rng_;
};

class UniformPolicy : public EpisodePolicy {
 public:
  explicit UniformPolicy(std::uint64_t seed) : rng_(seed) {}
  int choose(const Decision& d) override {
    if (d.candidates.empty()) throw UsageError("no legal action");
    return d.candidates[uniform_index(rng_, d.candidates.size())];
  }

 private:
  Rng rng_;
};

}  // namespace

std::unique_ptr<EpisodePolicy> GreedySelector::start(std::uint64_t seed) const {
  return std::make_unique<GreedyPolicy>(model_, epsilon_, seed);
}

std::unique_ptr<EpisodePolicy> RandomSelector::start(std::uint64_t seed) const {
  return std::make_unique<UniformPolicy>(seed);
}

double PolicyIterationConfig::epsilon(int round) const {
  if (round <= 0) return 1.0;
  return std::max(epsilon_floor, epsilon0 - epsilon_step * (round - 1));
}

PolicyIterationResult policy_iteration(const Environment& env, const PolicyIterationConfig& cfg) {
  if (env.num_episodes() == 0) throw ConfigError("policy_iteration: empty training set");
  if (cfg.iterations < 1) throw ConfigError("policy_iteration: need at least one iteration");
  if (cfg.gamma < 0 || cfg.gamma > 1) throw ConfigError("policy_iteration: gamma outside [0,1]");
  const int M = env.actions().size();
  const int F = env.feature_dim();
  RidgeAccumulator acc(M, F);
  PolicyIterationResult result;
  result.model = QModel::zeros(M, F, cfg.gamma, cfg.ridge);

  for (int round = 0; round < cfg.iterations; ++round) {
    const double eps = cfg.epsilon(round);
    std::unique_ptr<Selector> selector;
    if (round == 0)
      selector = std::make_unique<RandomSelector>();
    else
      selector = std::make_unique<GreedySelector>(result.model, eps);
    auto traces = run_episodes(env, *selector, derive_seed(cfg.seed, 0x9017, round));

    IterationDiagnostics diag;
    diag.round = round;
    diag.epsilon = eps;
    diag.episodes = traces.size();
    for (auto& tr : traces) {
      assign_returns(tr, cfg.gamma);
      for (const auto& s : tr.steps) acc.add(s.action, s.phi, s.ret);
      diag.samples_added += tr.steps.size();
      diag.mean_return += tr.steps.empty() ? 0.0 : tr.steps.front().ret;
      diag.mean_final_confidence += tr.final_confidence;
      diag.accuracy += tr.final_prediction == tr.label ? 1.0 : 0.0;
      diag.mean_cost += episode_cost(tr);
    }
    const double n = static_cast<double>(traces.size());
    diag.mean_return /= n;
    diag.mean_final_confidence /= n;
    diag.accuracy /= n;
    diag.mean_cost /= n;
    diag.samples_total = acc.count();
    result.model = acc.solve(cfg.ridge, cfg.gamma);
    result.diagnostics.push_back(diag);
  }
  return result;
}

}  // namespace triage
