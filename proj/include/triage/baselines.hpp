#ifndef TRIAGE_BASELINES_HPP
#define TRIAGE_BASELINES_HPP

#include <string>
#include <utility>
#include <vector>

#include "triage/actions.hpp"
#include "triage/selector.hpp"

namespace triage {

/// Random baseline. Batch: uniform over unperformed actions. Streaming:
/// uniform over legal detect actions; Skip only when no detector is legal.
class PassiveSelector : public Selector {
 public:
  explicit PassiveSelector(std::optional<int> skip_index) : skip_(skip_index) {}
  std::unique_ptr<EpisodePolicy> start(std::uint64_t episode_seed) const override;
  std::string name() const override { return "passive"; }

 private:
  std::optional<int> skip_;
};

enum class OrderingMode { kPreference, kCycle, kTopCycle };

/// Fixed action ranking. Preference (batch) takes the best-ranked legal
/// action, falling back to the lowest legal index once the ranking is used
/// up. Cycle walks the ranking round-robin; TopCycle does the same over the
/// first P entries only. When no ranked action is legal the cycling modes
/// take the highest-index candidate, which is Skip in streaming action sets.
struct StaticOrdering {
  std::vector<int> ranked;
  OrderingMode mode = OrderingMode::kPreference;
};

class StaticSelector : public Selector {
 public:
  StaticSelector(StaticOrdering ordering, std::string name);
  std::unique_ptr<EpisodePolicy> start(std::uint64_t episode_seed) const override;
  std::string name() const override { return name_; }
  const StaticOrdering& ordering() const { return ordering_; }

 private:
  StaticOrdering ordering_;
  std::string name_;
};

/// Object-Preference ranking: score(a) = max over activities of the mean
/// observation of a within that activity; descending, ties by index.
/// `observations` holds one row per training clip and one column per action.
StaticOrdering object_pref_order(const Mat& observations, const std::vector<int>& labels,
                                 int num_classes);

struct TreeOptions {
  int max_depth = 12;
  int min_leaf = 2;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1, right = -1;
  int prediction = 0;
  int samples = 0;
  double impurity = 0.0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  Vec importances;              // normalized; all zero when the tree never splits

  int predict(const Vec& x) const;
  /// Features with positive importance, most important first (ties by index).
  std::vector<int> ranked_features() const;
};

double gini(const std::vector<int>& class_counts, int total);

/// CART with Gini splits at midpoints between consecutive distinct values.
DecisionTree train_decision_tree(const Mat& attributes, const std::vector<int>& labels,
                                 int num_classes, const TreeOptions& opts = {});

struct DtSelectors {
  StaticSelector dt_static;
  StaticSelector dt_top;
  std::vector<std::string> warnings;
};

/// DT-Static cycles the full ranking; DT-Top cycles its top P entries.
/// `ranked` is mapped through `to_action` (feature index -> action index).
DtSelectors dt_selectors(const std::vector<int>& ranked, int top_p,
                         const std::vector<int>& to_action = {});

}  // namespace triage

#endif  // TRIAGE_BASELINES_HPP
