#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support.hpp"
#include "triage/baselines.hpp"
#include "triage/untrimmed.hpp"

using namespace triage;
using namespace triage::testing;

namespace {

DetectionTrace trace(std::vector<double> conf, int begin, int end, const std::string& id = "t") {
  DetectionTrace t;
  t.id = id;
  t.confidence = std::move(conf);
  t.span_begin = begin;
  t.span_end = end;
  return t;
}

class AlwaysSkip : public Selector {
 public:
  std::unique_ptr<EpisodePolicy> start(std::uint64_t) const override {
    struct P : EpisodePolicy {
      int choose(const Decision& d) override { return d.candidates.back(); }
    };
    return std::make_unique<P>();
  }
  std::string name() const override { return "skip"; }
};

StaticSelector exhaustive(int n) {
  StaticOrdering o;
  o.ranked.resize(n);
  std::iota(o.ranked.begin(), o.ranked.end(), 0);
  o.mode = OrderingMode::kCycle;
  return StaticSelector(o, "exhaustive");
}

struct UntrimmedFixture {
  Dataset data;
  std::vector<UntrimmedRecord> videos;
  LinearClassifier binary;
  ActionSet actions = ActionSet::streaming(6);

  UntrimmedFixture() {
    SyntheticConfig cfg;
    cfg.num_classes = 3;
    cfg.num_channels = 6;
    cfg.clips_per_class = 8;
    cfg.seed = 12;
    data = gen_synthetic(cfg);
    binary = train_window_classifier(data, 0, 2, 4, 5);
    videos = make_untrimmed_set(data, 0, 2, 9);
  }
};

}  // namespace

TEST_CASE("window bank keeps at most beta frames") {
  WindowBank bank(3, 2);
  for (int f = 0; f < 10; ++f) {
    bank.arrive();
    bank.observe(f, 0, 0.1 * f);
    CHECK(bank.stored() <= 3);
    CHECK(bank.newest() == f);
  }
  CHECK(bank.oldest() == 7);
  bank.observe(2, 1, 1.0);  // evicted frame: ignored
  CHECK(bank.window(9, 3)(1) == 0.0);
  CHECK(bank.window(9, 3)(0) == doctest::Approx(0.9));
  CHECK(bank.window(8, 2)(0) == doctest::Approx(0.8));
  CHECK_THROWS_AS(bank.observe(10, 0, 0.5), UsageError);
  CHECK_THROWS_AS(bank.window(9, 4), UsageError);
}

TEST_CASE("frame zero evaluates only the length-one window") {
  LinearClassifier clf(ClassifierKind::kBinary, mat(1, 2, {3.0, -1.0}), 1.0);
  WindowBank bank(5, 1);
  bank.arrive();
  bank.observe(0, 0, 0.7);
  const auto p = window_predict(clf, bank, 0);
  CHECK(p.length == 1);
  CHECK(p.confidence == doctest::Approx(sigmoid(3.0 * 0.7 - 1.0)));
}

TEST_CASE("planted two-frame positive selects the two-frame window") {
  // Channels: A and B support the target, C contradicts it.
  LinearClassifier clf(ClassifierKind::kBinary, mat(1, 4, {2.0, 2.0, -5.0, -3.0}), 1.0);
  WindowBank bank(3, 3);
  const Mat frames = mat(3, 3, {0, 0, 1,   // t-2: C
                                1, 0, 0,   // t-1: A
                                0, 1, 0}); // t:   B
  for (int f = 0; f < 3; ++f) {
    bank.arrive();
    for (int n = 0; n < 3; ++n) bank.observe(f, n, frames(f, n));
  }
  // Hand enumeration: len1 sigma(-1), len2 sigma(1), len3 sigma(-4).
  const auto p = window_predict(clf, bank, 2);
  CHECK(p.length == 2);
  CHECK(p.confidence == doctest::Approx(sigmoid(1.0)));
  CHECK(sigmoid(1.0) > sigmoid(-1.0));
  CHECK(sigmoid(1.0) > sigmoid(-4.0));
}

TEST_CASE("zero classifier ties resolve to the shortest window") {
  LinearClassifier clf(ClassifierKind::kBinary, Mat::Zero(1, 3), 1.0);
  WindowBank bank(4, 2);
  for (int f = 0; f < 6; ++f) bank.arrive();
  const auto p = window_predict(clf, bank, 5);
  CHECK(p.confidence == 0.5);
  CHECK(p.length == 1);
}

TEST_CASE("window search matches an offline enumeration") {
  Rng rng(3);
  LinearClassifier clf(ClassifierKind::kBinary, random_matrix(rng, 1, 5, -3, 3), 1.0);
  const Mat frames = random_matrix(rng, 30, 4);
  const int beta = 4;
  const auto off = offline_window_confidences(clf, frames, beta);
  WindowBank bank(beta, 4);
  for (int f = 0; f < 30; ++f) {
    bank.arrive();
    for (int n = 0; n < 4; ++n) bank.observe(f, n, frames(f, n));
    double best = -1;
    for (int len = 1; len <= std::min(beta, f + 1); ++len) {
      const Vec d = frames.middleRows(f - len + 1, len).colwise().maxCoeff().transpose();
      best = std::max(best, clf.posterior(d, 1));
    }
    CHECK(window_predict(clf, bank, f).confidence == doctest::Approx(best).epsilon(1e-15));
    CHECK(off[f] == doctest::Approx(best).epsilon(1e-15));
  }
}

TEST_CASE("F1 examples") {
  const std::vector<DetectionTrace> perfect{trace({0, 1, 1, 0}, 1, 3)};
  CHECK(f1_score(perfect, 0.5) == 1.0);
  const std::vector<DetectionTrace> silent{trace({0, 0, 0, 0}, 1, 3)};
  CHECK(f1_score(silent, 0.5) == 0.0);
  const std::vector<DetectionTrace> half{trace({0, 1, 0, 0}, 1, 3)};
  CHECK(f1_score(half, 0.5) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("F1 ignores trace order") {
  Rng rng(5);
  std::vector<DetectionTrace> ts;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> c(15);
    for (auto& x : c) x = uniform01(rng);
    const int b = static_cast<int>(uniform_index(rng, 10));
    ts.push_back(trace(c, b, b + 5));
  }
  const double f = f1_score(ts, 0.4);
  std::reverse(ts.begin(), ts.end());
  CHECK(f1_score(ts, 0.4) == f);
}

TEST_CASE("immediate perfect detection scores zero NT2D and no false positives") {
  const std::vector<DetectionTrace> t{trace({0, 0, 1, 0, 0}, 2, 4)};
  const std::vector<double> th{0.5};
  const auto c = amoc_curve(t, th);
  REQUIRE(c.size() == 1);
  CHECK(c[0].fpr == 0.0);
  CHECK(c[0].nt2d == 0.0);
}

TEST_CASE("a trace that never fires has NT2D one") {
  const std::vector<DetectionTrace> t{trace({0.1, 0.2, 0.3}, 0, 2)};
  const std::vector<double> th{0.5};
  CHECK(amoc_curve(t, th)[0].nt2d == 1.0);
  CHECK(amoc_curve(t, th)[0].fpr == 0.0);
}

TEST_CASE("hand-computed curve on three traces") {
  const std::vector<DetectionTrace> t{
      trace({0, 0, 0, 0.6, 0, 0.9, 0, 0, 0, 0}, 4, 8, "a"),
      trace({0, 0, 1.0, 0, 0, 0, 0}, 2, 6, "b"),
      trace(std::vector<double>(10, 0.55), 0, 5, "c"),
  };
  const std::vector<double> th{0.5, 0.8};
  const auto c = amoc_curve(t, th);
  REQUIRE(c.size() == 2);
  // theta 0.8: a fires at 5 (NT2D 1/4), b at its start, c never.
  CHECK(c[0].threshold == 0.8);
  CHECK(c[0].fpr == 0.0);
  CHECK(c[0].nt2d == doctest::Approx((0.25 + 0.0 + 1.0) / 3.0).epsilon(1e-15));
  // theta 0.5: a fires early at 3 (false positive), c fires outside its span.
  CHECK(c[1].threshold == 0.5);
  CHECK(c[1].fpr == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c[1].nt2d == doctest::Approx(0.25 / 3.0).epsilon(1e-15));
}

TEST_CASE("false-positive rate does not increase with the threshold") {
  Rng rng(8);
  std::vector<DetectionTrace> ts;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> c(30);
    for (auto& x : c) x = uniform01(rng);
    const int b = static_cast<int>(uniform_index(rng, 20));
    ts.push_back(trace(c, b, b + 1 + static_cast<int>(uniform_index(rng, 10))));
  }
  std::vector<double> th;
  for (int i = 1; i < 20; ++i) th.push_back(i / 20.0);
  auto curve = amoc_curve(ts, th);
  std::sort(curve.begin(), curve.end(),
            [](const AmocPoint& a, const AmocPoint& b) { return a.threshold < b.threshold; });
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].fpr <= curve[i - 1].fpr);
  CHECK_THROWS_AS(amoc_curve(ts, std::vector<double>{}), ConfigError);
}

TEST_CASE("default window bound is a third of the object count, rounded up") {
  CHECK(default_beta(8) == 3);
  CHECK(default_beta(9) == 3);
  CHECK(default_beta(75) == 25);
  CHECK(default_beta(1) == 1);
}

TEST_CASE("window training set is count-matched") {
  UntrimmedFixture f;
  const auto s = window_training_set(f.data, 0, 3, 4, 1);
  const long pos = std::count(s.y.begin(), s.y.end(), 1);
  CHECK(pos == 8 * 4);
  CHECK(static_cast<long>(s.y.size()) == 2 * pos);
  CHECK(s.x.rows() == static_cast<Eigen::Index>(s.y.size()));
  CHECK(s.x.minCoeff() >= 0.0);
  CHECK(s.x.maxCoeff() <= 1.0);
}

TEST_CASE("skipping everything still labels every frame at no cost") {
  UntrimmedFixture f;
  UntrimmedEnvironment env(f.videos, f.actions, f.binary, UntrimmedConfig{8.0, 5, 2, 0.4, 0.5});
  const auto res = run_untrimmed(env, AlwaysSkip(), 1);
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(res[i].detection.length() == f.videos[i].length());
    CHECK(res[i].detection.cost == 0.0);
    CHECK(res[i].detection.label.size() == res[i].detection.confidence.size());
  }
}

TEST_CASE("exhaustive detection at a huge speed reproduces the offline search") {
  UntrimmedFixture f;
  const auto ex = exhaustive(6);
  UntrimmedEnvironment env(f.videos, f.actions, f.binary, UntrimmedConfig{1e6, 4, 3, 0.4, 0.5});
  const auto res = run_untrimmed(env, ex, 2);
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto off = offline_window_confidences(f.binary, f.videos[i].frames, 3);
    REQUIRE(res[i].detection.confidence.size() == off.size());
    for (std::size_t c = 0; c < off.size(); ++c) CHECK(res[i].detection.confidence[c] == off[c]);
  }
}

TEST_CASE("cost ledger is the sum of buffer sizes over detects") {
  UntrimmedFixture f;
  RandomSelector random;
  StreamAudit audit;
  UntrimmedConfig cfg{3.0, 4, 2, 0.4, 0.5, &audit};
  UntrimmedEnvironment env(f.videos, f.actions, f.binary, cfg);
  for (const auto& r : run_untrimmed(env, random, 4)) {
    double sum = 0.0;
    for (const auto& s : r.episode.steps) {
      if (s.action != 6) {
        CHECK(s.cost == std::min(s.time + 1, 4));
      } else {
        CHECK(s.cost == 0.0);
      }
      sum += s.cost;
    }
    CHECK(r.detection.cost == sum);
  }
  CHECK(audit.future_reads == 0);
  CHECK(audit.evicted_reads == 0);
}

TEST_CASE("untrimmed detection needs a binary classifier") {
  UntrimmedFixture f;
  LinearClassifier multi(ClassifierKind::kMulticlass, Mat::Zero(3, 7), 1.0);
  RandomSelector random;
  auto p = random.start(0);
  CHECK_THROWS_AS(untrimmed_episode(f.videos[0], f.actions, *p, UntrimmedConfig{}, multi),
                  ConfigError);
}
