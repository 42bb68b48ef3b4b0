#include "triage/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace triage {

using json = nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((v.array() - m).exp().sum());
}

// log N(x | mean, diag(var)) over the coordinates selected by `mask`
// (all coordinates when mask is empty).
double log_normal(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& mean,
                  const Eigen::Ref<const Vec>& var, const std::vector<bool>* mask) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    if (mask && !(*mask)[d]) continue;
    const double diff = x(d) - mean(d);
    acc += -0.5 * (kLog2Pi + std::log(var(d)) + diff * diff / var(d));
  }
  return acc;
}

Vec log_joint(const DiagonalGMM& g, const Eigen::Ref<const Vec>& x, const std::vector<bool>* mask) {
  Vec lp(g.components());
  for (int k = 0; k < g.components(); ++k) {
    lp(k) = g.weights(k) > 0
                ? std::log(g.weights(k)) +
                      log_normal(x, g.means.row(k).transpose(), g.variances.row(k).transpose(), mask)
                : kNegInf;
  }
  return lp;
}

}  // namespace

double DiagonalGMM::log_likelihood(const Mat& data) const {
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    total += log_sum_exp(log_joint(*this, data.row(i).transpose(), nullptr));
  return total / static_cast<double>(data.rows());
}

GmmFit fit_gmm(const Mat& data, const GmmOptions& opts) {
  const Eigen::Index rows = data.rows(), dim = data.cols();
  if (rows == 0 || dim == 0) throw ConfigError("fit_gmm: empty data");
  if (opts.components < 1) throw ConfigError("fit_gmm: need at least one component");
  if (rows < opts.components)
    throw ConfigError("fit_gmm: " + std::to_string(rows) + " rows cannot seed " +
                      std::to_string(opts.components) + " components");
  if (!data.allFinite()) throw ConfigError("fit_gmm: non-finite data");
  const int n = opts.components;

  // k-means++ seeding.
  Rng rng(derive_seed(opts.seed, 0x6e11));
  std::vector<Eigen::Index> centers{static_cast<Eigen::Index>(uniform_index(rng, rows))};
  Vec d2 = (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < n) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0) {
      pick = static_cast<Eigen::Index>(uniform_index(rng, rows));
    } else {
      double u = uniform01(rng) * total;
      for (pick = 0; pick < rows - 1; ++pick) {
        u -= d2(pick);
        if (u < 0) break;
      }
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
  }

  GmmFit fit;
  DiagonalGMM& g = fit.model;
  g.weights = Vec::Constant(n, 1.0 / n);
  g.means.resize(n, dim);
  for (int k = 0; k < n; ++k) g.means.row(k) = data.row(centers[k]);
  const Eigen::RowVectorXd mu = data.colwise().mean();
  Eigen::RowVectorXd var = (data.rowwise() - mu).array().square().colwise().mean();
  var = var.cwiseMax(opts.variance_floor);
  g.variances = var.replicate(n, 1);

  Mat resp(rows, n);
  double prev = kNegInf;
  bool floored_warned = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    // E-step.
    double ll = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      Vec lp = log_joint(g, data.row(i).transpose(), nullptr);
      const double lse = log_sum_exp(lp);
      ll += lse;
      resp.row(i) = (lp.array() - lse).exp().transpose();
    }
    ll /= static_cast<double>(rows);
    fit.log_likelihood_trace.push_back(ll);
    fit.iterations = it + 1;
    if (it > 0 && std::abs(ll - prev) < opts.tolerance) break;
    prev = ll;

    // M-step.
    const Vec nk = resp.colwise().sum().transpose();
    for (int k = 0; k < n; ++k) {
      if (nk(k) <= 1e-12) {
        g.weights(k) = 0.0;
        g.variances.row(k).setConstant(opts.variance_floor);
        fit.warnings.push_back("component " + std::to_string(k) + " lost all responsibility");
        continue;
      }
      g.weights(k) = nk(k) / static_cast<double>(rows);
      const Eigen::RowVectorXd m = (resp.col(k).transpose() * data) / nk(k);
      g.means.row(k) = m;
      Eigen::RowVectorXd v =
          (resp.col(k).transpose() * (data.rowwise() - m).array().square().matrix()) / nk(k);
      if ((v.array() < opts.variance_floor).any() && !floored_warned) {
        fit.warnings.push_back("variance floored at " + format_double(opts.variance_floor));
        floored_warned = true;
      }
      g.variances.row(k) = v.cwiseMax(opts.variance_floor);
    }
    g.weights /= g.weights.sum();
  }
  return fit;
}

Vec responsibilities(const DiagonalGMM& g, const std::vector<bool>& observed, const Vec& values) {
  if (observed.size() != static_cast<std::size_t>(g.dim()) || values.size() != g.dim())
    throw ConfigError("GMM responsibilities: mask/value dimension mismatch");
  const Vec lp = log_joint(g, values, &observed);
  const double lse = log_sum_exp(lp);
  return (lp.array() - lse).exp().matrix();
}

Vec impute(const DiagonalGMM& g, const std::vector<bool>& observed, const Vec& values) {
  const Vec w = responsibilities(g, observed, values);
  const Vec cond_mean = g.means.transpose() * w;
  Vec out(std::count(observed.begin(), observed.end(), false));
  Eigen::Index j = 0;
  for (int d = 0; d < g.dim(); ++d)
    if (!observed[d]) out(j++) = cond_mean(d);
  return out;
}

Vec complete_observations(const DiagonalGMM& g, const std::vector<bool>& observed,
                          const Vec& values) {
  const Vec u = impute(g, observed, values);
  Vec full = values;
  Eigen::Index j = 0;
  for (int d = 0; d < g.dim(); ++d)
    if (!observed[d]) full(d) = std::clamp(u(j++), 0.0, 1.0);
  return full;
}

std::string DiagonalGMM::to_json() const {
  auto rows = [](const Mat& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
      a.push_back(row);
    }
    return a;
  };
  json j;
  j["format"] = "triage-gmm";
  j["weights"] = std::vector<double>(weights.data(), weights.data() + weights.size());
  j["means"] = rows(means);
  j["variances"] = rows(variances);
  return j.dump(2);
}

DiagonalGMM DiagonalGMM::from_json(const std::string& text) {
  auto to_mat = [](const json& a) {
    const auto v = a.get<std::vector<std::vector<double>>>();
    if (v.empty()) throw LoadError("gmm: empty matrix");
    Mat m(v.size(), v.front().size());
    for (std::size_t r = 0; r < v.size(); ++r) {
      if (v[r].size() != v.front().size()) throw LoadError("gmm: ragged matrix");
      for (std::size_t c = 0; c < v[r].size(); ++c) m(r, c) = v[r][c];
    }
    return m;
  };
  try {
    const json j = json::parse(text);
    DiagonalGMM g;
    const auto w = j.at("weights").get<std::vector<double>>();
    g.weights = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
    g.means = to_mat(j.at("means"));
    g.variances = to_mat(j.at("variances"));
    if (g.means.rows() != g.weights.size() || g.variances.rows() != g.weights.size() ||
        g.variances.cols() != g.means.cols())
      throw LoadError("gmm: inconsistent shapes");
    if ((g.variances.array() <= 0).any()) throw LoadError("gmm: non-positive variance");
    return g;
  } catch (const json::exception& e) {
    throw LoadError(std::string("gmm: ") + e.what());
  }
}

void DiagonalGMM::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json() << '\n';
}

DiagonalGMM DiagonalGMM::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open gmm " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace triage
