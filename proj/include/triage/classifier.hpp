#ifndef TRIAGE_CLASSIFIER_HPP
#define TRIAGE_CLASSIFIER_HPP

#include <filesystem>
#include <string>

#include "triage/common.hpp"

namespace triage {

enum class ClassifierKind { kMulticlass, kBinary };

struct TrainOptions {
  double l2 = 1.0;
  int max_iterations = 5000;
  double gradient_tolerance = 1e-6;
};

/// Regularized logistic loss for one one-vs-all model over bias-augmented
/// inputs. `targets` are +1/-1. The bias (last coordinate) is not penalized.
double logistic_objective(const Vec& w, const Mat& augmented, const Vec& targets, double l2);
Vec logistic_gradient(const Vec& w, const Mat& augmented, const Vec& targets, double l2);

/// Appends the constant-1 bias column.
Mat augment(const Mat& x);

/// Recognizer f(psi, y) = P(y | X) built from one-vs-all logistic models.
///
/// Multiclass posteriors normalize the per-class sigmoids so they sum to one.
/// A binary model holds a single weight row; its positive-class posterior is
/// the plain sigmoid.
class LinearClassifier {
 public:
  LinearClassifier() = default;
  LinearClassifier(ClassifierKind kind, Mat weights, double l2);

  ClassifierKind kind() const { return kind_; }
  int num_classes() const { return kind_ == ClassifierKind::kBinary ? 2 : static_cast<int>(weights_.rows()); }
  int dim() const { return static_cast<int>(weights_.cols()) - 1; }
  double l2() const { return l2_; }
  const Mat& weights() const { return weights_; }

  /// Unnormalized per-model sigmoids (length L, or 1 for binary).
  Vec sigmoids(const Vec& psi) const;
  Vec posteriors(const Vec& psi) const;
  double posterior(const Vec& psi, int y) const;
  int predict(const Vec& psi) const;

  std::string to_json() const;
  static LinearClassifier from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static LinearClassifier load(const std::filesystem::path& path);

 private:
  void check_dim(const Vec& psi) const;

  ClassifierKind kind_ = ClassifierKind::kMulticlass;
  Mat weights_;
  double l2_ = 1.0;
};

/// Fits one model per class (multiclass) or a single positive-vs-rest model
/// (binary; labels must be 0/1). Rows of `descriptors` are examples.
LinearClassifier train_classifier(const Mat& descriptors, const std::vector<int>& labels,
                                  int num_classes, ClassifierKind kind,
                                  const TrainOptions& opts = {});

/// Index of the largest entry; ties resolve to the lowest index.
int argmax_lowest(const Vec& v);

}  // namespace triage

#endif  // TRIAGE_CLASSIFIER_HPP
