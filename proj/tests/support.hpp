#ifndef TRIAGE_TESTS_SUPPORT_HPP
#define TRIAGE_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "triage/common.hpp"
#include "triage/classifier.hpp"
#include "triage/data.hpp"
#include "triage/gmm.hpp"

namespace triage::testing {

/// Solves A x = b by Gaussian elimination with partial pivoting, using plain
/// nested vectors so it shares no code with the library's Eigen solvers.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> a,
                                       std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

/// Ridge normal equations (X^T X + lambda*D) theta = X^T y, where X rows are
/// [phi, 1] and D penalizes every coordinate except the trailing bias.
inline std::vector<double> ridge_normal_equations(const std::vector<std::vector<double>>& phis,
                                                  const std::vector<double>& targets,
                                                  double lambda) {
  const std::size_t d = phis.empty() ? 1 : phis[0].size() + 1;
  std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
  std::vector<double> rhs(d, 0.0);
  for (std::size_t i = 0; i < phis.size(); ++i) {
    std::vector<double> row = phis[i];
    row.push_back(1.0);
    for (std::size_t p = 0; p < d; ++p) {
      rhs[p] += row[p] * targets[i];
      for (std::size_t q = 0; q < d; ++q) a[p][q] += row[p] * row[q];
    }
  }
  for (std::size_t p = 0; p + 1 < d; ++p) a[p][p] += lambda;
  return gauss_solve(a, rhs);
}

inline VideoRecord make_clip(const std::string& id, int label, const Mat& scores) {
  VideoRecord r;
  r.id = id;
  r.label = label;
  r.scores = scores;
  return r;
}

/// Row-major literal helper: rows x cols values.
inline Mat mat(int rows, int cols, std::initializer_list<double> values) {
  Mat m(rows, cols);
  auto it = values.begin();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = *it++;
  return m;
}

inline Vec vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline Mat random_matrix(Rng& rng, int rows, int cols, double lo = 0.0, double hi = 1.0) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = lo + (hi - lo) * uniform01(rng);
  return m;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("triage_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

struct McEstimate {
  Vec mean;
  Vec se;
};

// Self-normalized importance sampling of E[x_u | x_p] from the joint: draw a
// component and all coordinates, weight by the observed-coordinate density.
inline McEstimate monte_carlo_conditional(const DiagonalGMM& g, const std::vector<bool>& observed,
                                          const Vec& values, int samples, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::discrete_distribution<int> pick(g.weights.data(), g.weights.data() + g.weights.size());
  std::vector<int> unobs;
  for (int d = 0; d < g.dim(); ++d)
    if (!observed[d]) unobs.push_back(d);
  const int u = static_cast<int>(unobs.size());
  std::vector<double> ws(samples);
  Mat xs(samples, u);
  for (int i = 0; i < samples; ++i) {
    const int k = pick(gen);
    double w = 1.0;
    for (int d = 0; d < g.dim(); ++d)
      if (observed[d]) w *= normal_pdf(values(d), g.means(k, d), g.variances(k, d));
    ws[i] = w;
    for (int j = 0; j < u; ++j)
      xs(i, j) = g.means(k, unobs[j]) + std::sqrt(g.variances(k, unobs[j])) * z(gen);
  }
  const double sw = std::accumulate(ws.begin(), ws.end(), 0.0);
  McEstimate e{Vec::Zero(u), Vec::Zero(u)};
  for (int i = 0; i < samples; ++i) e.mean += ws[i] * xs.row(i).transpose();
  e.mean /= sw;
  for (int i = 0; i < samples; ++i)
    e.se += (ws[i] * (xs.row(i).transpose() - e.mean)).array().square().matrix();
  e.se = e.se.cwiseSqrt() / sw;
  return e;
}

/// Relative error between the analytic gradient and central differences.
inline double fd_relative_error(const Vec& w, const Mat& a, const Vec& s, double l2) {
  const Vec g = logistic_gradient(w, a, s, l2);
  Vec fd(w.size());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vec wp = w, wm = w;
    wp(i) += h;
    wm(i) -= h;
    fd(i) = (logistic_objective(wp, a, s, l2) - logistic_objective(wm, a, s, l2)) / (2 * h);
  }
  return (g - fd).norm() / std::max(1e-12, std::max(g.norm(), fd.norm()));
}

}  // namespace triage::testing

#endif  // TRIAGE_TESTS_SUPPORT_HPP
