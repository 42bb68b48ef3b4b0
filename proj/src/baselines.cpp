#include "triage/baselines.hpp"

#include <algorithm>
#include <numeric>

namespace triage {

namespace {

bool legal(std::span<const int> candidates, int a) {
  return std::binary_search(candidates.begin(), candidates.end(), a);
}

class PassivePolicy : public EpisodePolicy {
 public:
  PassivePolicy(std::optional<int> skip, std::uint64_t seed) : skip_(skip), rng_(seed) {}
  int choose(const Decision& d) override {
    pool_.clear();
    for (int a : d.candidates)
      if (!skip_ || a != *skip_) pool_.push_back(a);
    if (pool_.empty()) {
      // Every detector already ran on this buffer; waiting is all that is left.
      if (skip_ && legal(d.candidates, *skip_)) return *skip_;
      throw UsageError("passive selector: no legal action");
    }
    return pool_[uniform_index(rng_, pool_.size())];
  }

 private:
  std::optional<int> skip_;
  Rng rng_;
  std::vector<int> pool_;
};

class OrderingPolicy : public EpisodePolicy {
 public:
  explicit OrderingPolicy(const StaticOrdering& o) : o_(o) {}
  int choose(const Decision& d) override {
    if (d.candidates.empty()) throw UsageError("static selector: no legal action");
    const auto& r = o_.ranked;
    if (o_.mode == OrderingMode::kPreference) {
      for (int a : r)
        if (legal(d.candidates, a)) return a;
      return d.candidates.front();
    }
    for (std::size_t tries = 0; tries < r.size(); ++tries) {
      const int a = r[cursor_++ % r.size()];
      if (legal(d.candidates, a)) return a;
    }
    return d.candidates.back();
  }

 private:
  const StaticOrdering& o_;
  std::size_t cursor_ = 0;
};

}  // namespace

std::unique_ptr<EpisodePolicy> PassiveSelector::start(std::uint64_t seed) const {
  return std::make_unique<PassivePolicy>(skip_, seed);
}

StaticSelector::StaticSelector(StaticOrdering ordering, std::string name)
    : ordering_(std::move(ordering)), name_(std::move(name)) {}

std::unique_ptr<EpisodePolicy> StaticSelector::start(std::uint64_t) const {
  return std::make_unique<OrderingPolicy>(ordering_);
}

StaticOrdering object_pref_order(const Mat& obs, const std::vector<int>& labels, int L) {
  if (obs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ConfigError("object_pref_order: observation/label count mismatch");
  Mat sums = Mat::Zero(L, obs.cols());
  std::vector<int> counts(L, 0);
  for (Eigen::Index i = 0; i < obs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= L) throw ConfigError("object_pref_order: label out of range");
    sums.row(y) += obs.row(i);
    ++counts[y];
  }
  Vec score = Vec::Constant(obs.cols(), -1.0);
  for (int c = 0; c < L; ++c) {
    if (counts[c] == 0) continue;
    score = score.cwiseMax((sums.row(c) / counts[c]).transpose());
  }
  StaticOrdering o;
  o.mode = OrderingMode::kPreference;
  o.ranked.resize(obs.cols());
  std::iota(o.ranked.begin(), o.ranked.end(), 0);
  std::stable_sort(o.ranked.begin(), o.ranked.end(),
                   [&](int a, int b) { return score(a) > score(b); });
  return o;
}

// ---------------------------------------------------------------------------
// CART

double gini(const std::vector<int>& counts, int total) {
  if (total <= 0) return 0.0;
  double s = 0.0;
  for (int c : counts) {
    const double p = static_cast<double>(c) / total;
    s += p * p;
  }
  return 1.0 - s;
}

namespace {

struct Builder {
  const Mat& x;
  const std::vector<int>& y;
  int L;
  TreeOptions opts;
  DecisionTree tree;
  Vec gain;

  int majority(const std::vector<int>& counts) const {
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  int build(std::vector<int>& idx, int depth) {
    std::vector<int> counts(L, 0);
    for (int i : idx) ++counts[y[i]];
    const int n = static_cast<int>(idx.size());
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    {
      TreeNode& node = tree.nodes.back();
      node.samples = n;
      node.impurity = gini(counts, n);
      node.prediction = majority(counts);
    }
    const double impurity = tree.nodes[node_id].impurity;
    if (depth >= opts.max_depth || n < 2 * opts.min_leaf || impurity <= 0.0) return node_id;

    int best_f = -1;
    double best_thr = 0.0, best_child = impurity * n;  // weighted child impurity
    std::vector<int> order = idx;
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return x(a, f) < x(b, f) || (x(a, f) == x(b, f) && a < b);
      });
      std::vector<int> left(L, 0), right = counts;
      for (int k = 0; k + 1 < n; ++k) {
        const int i = order[k];
        ++left[y[i]];
        --right[y[i]];
        const int nl = k + 1, nr = n - nl;
        const double v = x(i, f), v_next = x(order[k + 1], f);
        if (v == v_next || nl < opts.min_leaf || nr < opts.min_leaf) continue;
        const double child = nl * gini(left, nl) + nr * gini(right, nr);
        if (child < best_child - 1e-12) {
          best_child = child;
          best_f = static_cast<int>(f);
          best_thr = 0.5 * (v + v_next);
        }
      }
    }
    if (best_f < 0) return node_id;

    gain(best_f) += impurity * n - best_child;
    std::vector<int> li, ri;
    for (int i : idx) (x(i, best_f) <= best_thr ? li : ri).push_back(i);
    const int l = build(li, depth + 1);
    const int r = build(ri, depth + 1);
    TreeNode& node = tree.nodes[node_id];
    node.feature = best_f;
    node.threshold = best_thr;
    node.left = l;
    node.right = r;
    return node_id;
  }
};

}  // namespace

DecisionTree train_decision_tree(const Mat& x, const std::vector<int>& y, int L,
                                 const TreeOptions& opts) {
  if (x.rows() != static_cast<Eigen::Index>(y.size()))
    throw ConfigError("train_decision_tree: attribute/label count mismatch");
  if (x.rows() == 0) throw ConfigError("train_decision_tree: no examples");
  for (int v : y)
    if (v < 0 || v >= L) throw ConfigError("train_decision_tree: label out of range");
  Builder b{x, y, L, opts, {}, Vec::Zero(x.cols())};
  std::vector<int> idx(x.rows());
  std::iota(idx.begin(), idx.end(), 0);
  b.build(idx, 0);
  const double total = b.gain.sum();
  b.tree.importances = total > 0 ? Vec(b.gain / total) : Vec(Vec::Zero(x.cols()));
  return std::move(b.tree);
}

int DecisionTree::predict(const Vec& v) const {
  int i = 0;
  while (nodes[i].feature >= 0) i = v(nodes[i].feature) <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].prediction;
}

std::vector<int> DecisionTree::ranked_features() const {
  std::vector<int> r;
  for (Eigen::Index f = 0; f < importances.size(); ++f)
    if (importances(f) > 0) r.push_back(static_cast<int>(f));
  std::stable_sort(r.begin(), r.end(),
                   [&](int a, int b) { return importances(a) > importances(b); });
  return r;
}

DtSelectors dt_selectors(const std::vector<int>& ranked, int top_p,
                         const std::vector<int>& to_action) {
  if (top_p < 1) throw ConfigError("DT-Top needs P >= 1");
  std::vector<std::string> warnings;
  std::vector<int> actions;
  for (int f : ranked) actions.push_back(to_action.empty() ? f : to_action.at(f));
  if (actions.empty()) {
    warnings.push_back("decision tree selected no attributes; using index order");
    if (to_action.empty()) throw ConfigError("dt_selectors: empty ranking and no feature map");
    actions = to_action;
  }
  std::vector<int> top = actions;
  if (top_p > static_cast<int>(top.size())) {
    warnings.push_back("P=" + std::to_string(top_p) + " exceeds " +
                       std::to_string(top.size()) + " ranked features; using all");
  } else {
    top.resize(top_p);
  }
  return DtSelectors{StaticSelector({actions, OrderingMode::kCycle}, "dt-static"),
                     StaticSelector({top, OrderingMode::kTopCycle}, "dt-top"),
                     std::move(warnings)};
}

}  // namespace triage
