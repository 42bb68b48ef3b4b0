#include "triage/classifier.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace triage {

using json = nlohmann::json;

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Vec penalty_mask(Eigen::Index size) {
  Vec m = Vec::Ones(size);
  m(size - 1) = 0.0;
  return m;
}

}  // namespace

Mat augment(const Mat& x) {
  Mat a(x.rows(), x.cols() + 1);
  a.leftCols(x.cols()) = x;
  a.col(x.cols()).setOnes();
  return a;
}

double logistic_objective(const Vec& w, const Mat& a, const Vec& s, double l2) {
  const Vec z = a * w;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(-s(i) * z(i));
  const Vec wm = w.cwiseProduct(penalty_mask(w.size()));
  return loss + 0.5 * l2 * wm.squaredNorm();
}

Vec logistic_gradient(const Vec& w, const Mat& a, const Vec& s, double l2) {
  const Vec z = a * w;
  Vec coef(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) coef(i) = -s(i) * sigmoid(-s(i) * z(i));
  Vec g = a.transpose() * coef;
  g += l2 * w.cwiseProduct(penalty_mask(w.size()));
  return g;
}

namespace {

// Full-batch gradient descent with Armijo backtracking. The trial step is the
// Barzilai-Borwein estimate from the previous iterate.
Vec fit_logistic(const Mat& a, const Vec& s, const TrainOptions& opts) {
  Vec w = Vec::Zero(a.cols());
  double f = logistic_objective(w, a, s, opts.l2);
  Vec g = logistic_gradient(w, a, s, opts.l2);
  double step = 1.0;
  for (int it = 0; it < opts.max_iterations && g.norm() >= opts.gradient_tolerance; ++it) {
    double t = step;
    Vec w_new;
    double f_new = 0.0;
    const double gg = g.squaredNorm();
    for (int bt = 0; bt < 60; ++bt) {
      w_new = w - t * g;
      f_new = logistic_objective(w_new, a, s, opts.l2);
      if (f_new <= f - 1e-4 * t * gg) break;
      t *= 0.5;
    }
    if (!(f_new <= f)) break;  // no descent possible at machine precision
    const Vec g_new = logistic_gradient(w_new, a, s, opts.l2);
    const Vec dw = w_new - w, dg = g_new - g;
    const double denom = dw.dot(dg);
    step = denom > 0 ? dw.squaredNorm() / denom : 2.0 * t;
    w = std::move(w_new);
    g = g_new;
    f = f_new;
  }
  return w;
}

}  // namespace

LinearClassifier train_classifier(const Mat& x, const std::vector<int>& labels, int num_classes,
                                  ClassifierKind kind, const TrainOptions& opts) {
  if (x.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ConfigError("train_classifier: descriptor/label count mismatch");
  if (!x.allFinite()) throw ConfigError("train_classifier: non-finite descriptor");
  const Mat a = augment(x);
  if (kind == ClassifierKind::kBinary) {
    bool has[2] = {false, false};
    for (int y : labels) {
      if (y != 0 && y != 1) throw ConfigError("train_classifier: binary labels must be 0 or 1");
      has[y] = true;
    }
    if (!has[0] || !has[1]) throw ConfigError("train_classifier: binary model needs both classes");
    Vec s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) s(i) = labels[i] == 1 ? 1.0 : -1.0;
    Mat w(1, a.cols());
    w.row(0) = fit_logistic(a, s, opts).transpose();
    return LinearClassifier(kind, std::move(w), opts.l2);
  }
  if (num_classes < 1) throw ConfigError("train_classifier: need at least one class");
  std::vector<int> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ConfigError("train_classifier: label out of range");
    ++counts[y];
  }
  for (int c = 0; c < num_classes; ++c)
    if (counts[c] == 0)
      throw ConfigError("train_classifier: class " + std::to_string(c) + " has no examples");
  Mat w(num_classes, a.cols());
  for (int c = 0; c < num_classes; ++c) {
    Vec s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) s(i) = labels[i] == c ? 1.0 : -1.0;
    w.row(c) = fit_logistic(a, s, opts).transpose();
  }
  return LinearClassifier(kind, std::move(w), opts.l2);
}

LinearClassifier::LinearClassifier(ClassifierKind kind, Mat weights, double l2)
    : kind_(kind), weights_(std::move(weights)), l2_(l2) {
  if (weights_.rows() < 1 || weights_.cols() < 1)
    throw ConfigError("classifier weights must be non-empty");
  if (kind_ == ClassifierKind::kBinary && weights_.rows() != 1)
    throw ConfigError("binary classifier holds exactly one weight row");
}

void LinearClassifier::check_dim(const Vec& psi) const {
  if (psi.size() != dim())
    throw ConfigError("classifier expects dimension " + std::to_string(dim()) + ", got " +
                      std::to_string(psi.size()));
}

Vec LinearClassifier::sigmoids(const Vec& psi) const {
  check_dim(psi);
  Vec z = weights_.leftCols(dim()) * psi + weights_.col(dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
  return z;
}

Vec LinearClassifier::posteriors(const Vec& psi) const {
  const Vec s = sigmoids(psi);
  if (kind_ == ClassifierKind::kBinary) {
    Vec p(2);
    p << 1.0 - s(0), s(0);
    return p;
  }
  return s / s.sum();
}

double LinearClassifier::posterior(const Vec& psi, int y) const {
  if (y < 0 || y >= num_classes()) throw ConfigError("posterior: class index out of range");
  return posteriors(psi)(y);
}

int argmax_lowest(const Vec& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

int LinearClassifier::predict(const Vec& psi) const { return argmax_lowest(posteriors(psi)); }

std::string LinearClassifier::to_json() const {
  json j;
  j["format"] = "triage-classifier";
  j["kind"] = kind_ == ClassifierKind::kBinary ? "binary" : "multiclass";
  j["l2"] = l2_;
  j["weights"] = json::array();
  for (Eigen::Index r = 0; r < weights_.rows(); ++r) {
    std::vector<double> row(weights_.cols());
    for (Eigen::Index c = 0; c < weights_.cols(); ++c) row[c] = weights_(r, c);
    j["weights"].push_back(row);
  }
  return j.dump(2);
}

LinearClassifier LinearClassifier::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const auto kind = j.at("kind").get<std::string>() == "binary" ? ClassifierKind::kBinary
                                                                  : ClassifierKind::kMulticlass;
    const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw LoadError("classifier: empty weights");
    Mat w(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw LoadError("classifier: ragged weights");
      for (std::size_t c = 0; c < rows[r].size(); ++c) w(r, c) = rows[r][c];
    }
    return LinearClassifier(kind, std::move(w), j.value("l2", 1.0));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("classifier: ") + e.what());
  }
}

void LinearClassifier::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json() << '\n';
}

LinearClassifier LinearClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open classifier " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace triage
