#include <doctest.h>

#include <array>
#include <cmath>

#include "../support.hpp"
#include "triage/classifier.hpp"
#include "triage/env.hpp"
#include "triage/gmm.hpp"
#include "triage/qpolicy.hpp"

using namespace triage;
using namespace triage::testing;

namespace {

std::vector<std::vector<double>> to_rows(const Mat& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

}  // namespace

TEST_CASE("empty history gives zero recency") {
  ActionHistory h(5);
  const Vec phi = state_action_features(vec({0.1, 0.2, 0.3, 0.4}), h, 7, Setting::kStreaming);
  CHECK(phi.size() == 9);
  CHECK(phi.tail(5) == Vec::Zero(5));
  CHECK(phi.head(4) == vec({0.1, 0.2, 0.3, 0.4}));
}

TEST_CASE("streaming recency is the time since the last issue") {
  ActionHistory h(3);
  h.record(1, 3);
  CHECK(state_action_features(vec({0.0}), h, 10, Setting::kStreaming)(2) == 7.0);
  h.record(1, 8);
  CHECK(state_action_features(vec({0.0}), h, 10, Setting::kStreaming)(2) == 2.0);
  // Performed at the current time collides with never performed.
  h.record(0, 10);
  CHECK(state_action_features(vec({0.0}), h, 10, Setting::kStreaming)(1) == 0.0);
}

TEST_CASE("batch recency is a performed indicator") {
  ActionHistory h(3);
  h.record(2, 0);
  const Vec phi = state_action_features(vec({0.5, 0.5}), h, 0, Setting::kBatch);
  CHECK(phi.tail(3) == vec({0.0, 0.0, 1.0}));
}

TEST_CASE("q_value examples") {
  QModel q = QModel::zeros(3, 4, 0.4, 1.0);
  CHECK(q.q_value(vec({1, 2, 3, 4}), 1) == 0.0);
  q.theta(0, 0) = 1.0;
  CHECK(q.q_value(vec({0.5, 9, 9, 9}), 0) == 0.5);
  CHECK_THROWS_AS(q.q_value(vec({1, 2, 3, 4}), 3), ConfigError);
  CHECK_THROWS_AS(q.q_value(vec({1, 2}), 0), ConfigError);

  Rng rng(1);
  q.theta = random_matrix(rng, 3, 5, -1, 1);
  const Vec phi = random_matrix(rng, 4, 1, -1, 1);
  for (int a = 0; a < 3; ++a) {
    double longhand = q.theta(a, 4);
    for (int i = 0; i < 4; ++i) longhand += q.theta(a, i) * phi(i);
    CHECK(q.q_value(phi, a) == doctest::Approx(longhand).epsilon(1e-14));
    CHECK(q.q_values(phi)(a) == doctest::Approx(longhand).epsilon(1e-14));
  }
}

TEST_CASE("greedy selection takes the best candidate, lowest index on ties") {
  QModel q = QModel::zeros(2, 1, 0.4, 1.0);
  q.theta(0, 1) = 0.1;
  q.theta(1, 1) = 0.9;
  Rng rng(3);
  const std::array<int, 2> both{0, 1};
  for (int i = 0; i < 100; ++i) CHECK(select_action(q, vec({0.0}), both, 0.0, rng) == 1);
  q.theta(0, 1) = 0.9;
  CHECK(select_action(q, vec({0.0}), both, 0.0, rng) == 0);
  const std::array<int, 1> only{0};
  q.theta(1, 1) = 5.0;
  CHECK(select_action(q, vec({0.0}), only, 0.0, rng) == 0);
  CHECK_THROWS_AS(select_action(q, vec({0.0}), std::span<const int>{}, 0.0, rng), UsageError);
}

TEST_CASE("epsilon one is uniform within a binomial bound") {
  QModel q = QModel::zeros(3, 1, 0.4, 1.0);
  q.theta(2, 1) = 10.0;
  const std::array<int, 3> c{0, 1, 2};
  Rng rng(11);
  std::array<int, 3> counts{};
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[select_action(q, vec({0.0}), c, 1.0, rng)];
  // Each frequency lies within about 4.5 binomial standard deviations of 1/3.
  for (int k : counts) {
    CHECK(k / double(n) >= 0.32);
    CHECK(k / double(n) <= 0.35);
  }
}

TEST_CASE("return examples and recursion") {
  const std::vector<double> one{0.7};
  CHECK(compute_returns(one, 0.4) == one);
  const std::vector<double> r{1.0, 1.0};
  const auto g = compute_returns(r, 0.5);
  CHECK(g[0] == 1.5);
  CHECK(g[1] == 1.0);
  const std::vector<double> rs{0.3, -0.2, 0.5, 0.1};
  CHECK(compute_returns(rs, 0.0) == rs);

  Rng rng(2);
  std::vector<double> rr(50);
  for (auto& x : rr) x = uniform01(rng) - 0.5;
  const auto gg = compute_returns(rr, 0.4);
  for (std::size_t k = 0; k + 1 < rr.size(); ++k)
    CHECK(std::fabs(gg[k] - (rr[k] + 0.4 * gg[k + 1])) <= 1e-12);
  CHECK(gg.back() == rr.back());
}

TEST_CASE("one sample with vanishing ridge interpolates") {
  const std::vector<QSample> s{{0, vec({1.0}), 2.0}};
  // phi_hat = [1, 1]: the min-norm interpolant splits the target.
  const QModel q = fit_q(s, 1, 1, 1e-10, 0.4);
  CHECK(q.q_value(vec({1.0}), 0) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("duplicated samples match the normal equations with halved ridge") {
  Rng rng(13);
  const Mat phis = random_matrix(rng, 6, 3);
  std::vector<double> y(6);
  for (auto& v : y) v = uniform01(rng);
  std::vector<QSample> once, twice;
  for (int i = 0; i < 6; ++i) {
    once.push_back({0, phis.row(i).transpose(), y[i]});
    twice.push_back(once.back());
    twice.push_back(once.back());
  }
  const QModel a = fit_q(twice, 1, 3, 1.0, 0.4);
  const auto oracle = ridge_normal_equations(to_rows(phis), y, 0.5);
  for (int i = 0; i < 4; ++i) CHECK(a.theta(0, i) == doctest::Approx(oracle[i]).epsilon(1e-10));
  const QModel b = fit_q(once, 1, 3, 0.5, 0.4);
  CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ridge fit matches a direct normal-equation solve") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int dim = 1 + static_cast<int>(uniform_index(rng, 8));
    const Mat phis = random_matrix(rng, 20, dim, -1, 1);
    std::vector<double> y(20);
    for (auto& v : y) v = 2.0 * uniform01(rng) - 1.0;
    std::vector<QSample> s;
    for (int i = 0; i < 20; ++i) s.push_back({1, phis.row(i).transpose(), y[i]});
    const double lambda = 0.1 + uniform01(rng);
    const QModel q = fit_q(s, 3, dim, lambda, 0.4);
    const auto oracle = ridge_normal_equations(to_rows(phis), y, lambda);
    for (int i = 0; i <= dim; ++i) CHECK(std::fabs(q.theta(1, i) - oracle[i]) < 1e-8);
    CHECK(q.theta.row(0).isZero());
    CHECK(q.theta.row(2).isZero());
  }
}

TEST_CASE("accumulator grouping does not change the fit") {
  Rng rng(8);
  std::vector<QSample> s;
  for (int i = 0; i < 40; ++i)
    s.push_back({static_cast<int>(uniform_index(rng, 2)), random_matrix(rng, 3, 1), uniform01(rng)});
  RidgeAccumulator a(2, 3), b(2, 3);
  for (const auto& x : s) a.add(x);
  for (std::size_t i = s.size(); i-- > 0;) b.add(s[i]);
  CHECK(a.count() == 40);
  CHECK(a.count(0) + a.count(1) == 40);
  CHECK((a.solve(1.0, 0.4).theta - b.solve(1.0, 0.4).theta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(a.solve(0.0, 0.4), ConfigError);
}

TEST_CASE("policy model JSON round trip is exact") {
  Rng rng(4);
  QModel q = QModel::zeros(4, 6, 0.3, 2.0);
  q.theta = random_matrix(rng, 4, 7, -5, 5);
  const auto back = QModel::from_json(q.to_json());
  CHECK(back.theta == q.theta);
  CHECK(back.gamma == 0.3);
  CHECK(back.ridge == 2.0);
}

TEST_CASE("default exploration schedule") {
  PolicyIterationConfig c;
  CHECK(c.iterations == 8);
  CHECK(c.gamma == 0.4);
  CHECK(c.epsilon(0) == 1.0);
  CHECK(c.epsilon(1) == doctest::Approx(0.5));
  CHECK(c.epsilon(2) == doctest::Approx(0.4));
  CHECK(c.epsilon(5) == doctest::Approx(0.1));
  CHECK(c.epsilon(6) == doctest::Approx(0.05));
  CHECK(c.epsilon(7) == doctest::Approx(0.05));
}

namespace {

// Two activities told apart by channel 0 alone; channels 1-3 are shared.
struct PlantedBatch {
  Dataset train, test;
  ActionSet actions = ActionSet::batch(4, VolumeGrid::kTemporalHalves);
  LinearClassifier clf;
  DiagonalGMM gmm;

  PlantedBatch() {
    SyntheticConfig cfg;
    cfg.num_classes = 2;
    cfg.num_channels = 4;
    cfg.clips_per_class = 60;
    cfg.span_min = 0.7;
    cfg.span_max = 1.0;
    cfg.presence = {{0.0, 0.5, 0.5, 0.5}, {1.0, 0.5, 0.5, 0.5}};
    cfg.seed = 5;
    std::tie(train, test) = split_dataset(gen_synthetic(cfg), 0.5);
    Mat obs(train.size(), actions.size());
    for (std::size_t i = 0; i < train.size(); ++i)
      obs.row(i) = full_observations(train.records[i], actions).transpose();
    GmmOptions go;
    go.components = 3;
    gmm = fit_gmm(obs, go).model;
    Mat desc(train.size(), 4);
    std::vector<int> y;
    const std::vector<bool> all(actions.size(), true);
    for (std::size_t i = 0; i < train.size(); ++i) {
      desc.row(i) = batch_descriptor(actions, gmm, all, obs.row(i).transpose()).transpose();
      y.push_back(train.records[i].label);
    }
    clf = train_classifier(desc, y, 2, ClassifierKind::kMulticlass);
  }
};

}  // namespace

TEST_CASE("policy iteration learns to look at the separating channel first") {
  PlantedBatch p;
  BatchEnvironment env(p.train.records, p.actions, p.clf, p.gmm, p.actions.size(), 0.4);
  const auto res = policy_iteration(env, PolicyIterationConfig{});
  REQUIRE(res.diagnostics.size() == 8);

  BatchEnvironment test_env(p.test.records, p.actions, p.clf, p.gmm, 1, 0.4);
  const auto traces = run_episodes(test_env, GreedySelector(res.model, 0.0), 9);
  int hits = 0;
  for (const auto& tr : traces) hits += p.actions.object_of(tr.steps.at(0).action) == 0;
  CHECK(hits >= 0.9 * traces.size());
}

TEST_CASE("policy iteration bookkeeping and determinism") {
  PlantedBatch p;
  BatchEnvironment env(p.train.records, p.actions, p.clf, p.gmm, 3, 0.4);
  PolicyIterationConfig cfg;
  cfg.iterations = 3;
  cfg.seed = 17;
  const auto a = policy_iteration(env, cfg);
  const auto b = policy_iteration(env, cfg);
  CHECK(a.model.theta == b.model.theta);
  std::size_t total = 0;
  for (const auto& d : a.diagnostics) {
    total += d.samples_added;
    CHECK(d.samples_added == 3 * p.train.size());
    CHECK(d.samples_total == total);
  }
  CHECK(a.diagnostics[0].epsilon == 1.0);

  const std::vector<VideoRecord> none;
  BatchEnvironment empty(none, p.actions, p.clf, p.gmm, 3, 0.4);
  CHECK_THROWS_AS(policy_iteration(empty, cfg), ConfigError);
}
