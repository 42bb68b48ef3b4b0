#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "../support.hpp"
#include "triage/descriptor.hpp"

using namespace triage;
using namespace triage::testing;

TEST_CASE("mean-pool first frame becomes psi with count one") {
  DescriptorState s(PoolMode::kMean, 3, vec({0.3, -1.0, 2.0}));
  CHECK(s.psi() == vec({0.3, -1.0, 2.0}));
  CHECK(s.count() == 1);
}

TEST_CASE("max-pool without a first frame is empty") {
  DescriptorState s(PoolMode::kMax, 4);
  CHECK(s.psi() == Vec::Zero(4));
  CHECK(std::none_of(s.observed().begin(), s.observed().end(), [](bool b) { return b; }));
}

TEST_CASE("max-pool first frame is copied") {
  DescriptorState s(PoolMode::kMax, 2, vec({0.2, 0.7}));
  CHECK(s.psi() == vec({0.2, 0.7}));
  CHECK(s.observed() == std::vector<bool>{true, true});
}

TEST_CASE("first frame of the wrong size is rejected") {
  CHECK_THROWS_AS(DescriptorState(PoolMode::kMax, 3, vec({0.1, 0.2})), ConfigError);
}

TEST_CASE("update_max keeps the larger value and is idempotent") {
  DescriptorState s(PoolMode::kMax, 2, vec({0.3, 0.7}));
  s.update_max(0, 0.5);
  CHECK(s.psi()(0) == 0.5);
  s.update_max(1, 0.5);
  CHECK(s.psi()(1) == 0.7);
  const Vec once = s.psi();
  s.update_max(0, 0.5);
  CHECK(s.psi() == once);
}

TEST_CASE("update_max marks the channel observed") {
  DescriptorState s(PoolMode::kMax, 3);
  s.update_max(1, 0.0);
  CHECK(s.observed() == std::vector<bool>{false, true, false});
}

TEST_CASE("pool-mode misuse and bad arguments are rejected") {
  DescriptorState mx(PoolMode::kMax, 2);
  CHECK_THROWS_AS(mx.update_mean(vec({1.0, 2.0})), UsageError);
  CHECK_THROWS(mx.update_max(5, 0.5));
  DescriptorState mn(PoolMode::kMean, 2);
  CHECK_THROWS_AS(mn.update_max(0, 0.5), UsageError);
  CHECK_THROWS_AS(mn.update_mean(vec({1.0})), ConfigError);
}

TEST_CASE("update_mean examples") {
  DescriptorState a(PoolMode::kMean, 2, vec({1.0, 0.0}));
  a.update_mean(vec({0.0, 1.0}));
  CHECK(a.psi()(0) == doctest::Approx(0.5));
  CHECK(a.psi()(1) == doctest::Approx(0.5));
  CHECK(a.count() == 2);

  DescriptorState b(PoolMode::kMean, 2);
  b.update_mean(vec({0.25, -4.0}));
  CHECK(b.psi() == vec({0.25, -4.0}));

  DescriptorState c(PoolMode::kMean, 1);
  for (double x : {1.0, 2.0, 3.0}) c.update_mean(vec({x}));
  CHECK(c.psi()(0) == doctest::Approx(2.0));
  CHECK(c.count() == 3);
}

TEST_CASE("max-pool coordinates never decrease") {
  Rng rng(5);
  DescriptorState s(PoolMode::kMax, 6);
  Vec prev = s.psi();
  for (int i = 0; i < 2000; ++i) {
    s.update_max(static_cast<int>(uniform_index(rng, 6)), uniform01(rng));
    CHECK((s.psi().array() >= prev.array()).all());
    prev = s.psi();
  }
}

TEST_CASE("both pools are insensitive to update order") {
  Rng rng(17);
  std::vector<std::pair<int, double>> ups;
  std::vector<Vec> frames;
  for (int i = 0; i < 200; ++i) {
    ups.emplace_back(static_cast<int>(uniform_index(rng, 5)), uniform01(rng));
    frames.push_back(random_matrix(rng, 4, 1, -3.0, 3.0));
  }
  std::vector<std::size_t> perm(ups.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    DescriptorState a(PoolMode::kMax, 5), b(PoolMode::kMax, 5);
    DescriptorState ma(PoolMode::kMean, 4), mb(PoolMode::kMean, 4);
    for (std::size_t i = 0; i < ups.size(); ++i) {
      a.update_max(ups[i].first, ups[i].second);
      b.update_max(ups[perm[i]].first, ups[perm[i]].second);
      ma.update_mean(frames[i]);
      mb.update_mean(frames[perm[i]]);
    }
    CHECK(a.psi() == b.psi());
    CHECK((ma.psi() - mb.psi()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("mean-pool equals the arithmetic mean of all frames") {
  Rng rng(23);
  const Mat frames = random_matrix(rng, 500, 3, -1.0, 1.0);
  DescriptorState s(PoolMode::kMean, 3, Vec(frames.row(0).transpose()));
  for (int t = 1; t < frames.rows(); ++t) s.update_mean(frames.row(t).transpose());
  const Vec mean = frames.colwise().mean().transpose();
  CHECK((s.psi() - mean).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("observing every frame reproduces the full descriptor") {
  Rng rng(31);
  const auto clip = make_clip("v", 0, random_matrix(rng, 17, 6));
  DescriptorState s(PoolMode::kMax, 6);
  for (int t = 0; t < clip.frames(); ++t)
    for (int n = 0; n < clip.channels(); ++n) s.update_max(n, clip.scores(t, n));
  CHECK(s.psi() == clip.full_descriptor());
}
