#ifndef TRIAGE_GMM_HPP
#define TRIAGE_GMM_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "triage/common.hpp"

namespace triage {

struct GmmOptions {
  int components = 5;
  int max_iterations = 200;
  double tolerance = 1e-6;  // on mean log-likelihood improvement
  double variance_floor = 1e-4;
  std::uint64_t seed = 1;
};

/// Mixture of axis-aligned Gaussians over full action-observation vectors.
struct DiagonalGMM {
  Vec weights;    // n
  Mat means;      // n x M
  Mat variances;  // n x M

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  double log_likelihood(const Mat& data) const;  // mean per row

  std::string to_json() const;
  static DiagonalGMM from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DiagonalGMM load(const std::filesystem::path& path);
};

struct GmmFit {
  DiagonalGMM model;
  std::vector<double> log_likelihood_trace;  // mean log-likelihood after each EM step
  std::vector<std::string> warnings;
  int iterations = 0;
};

/// EM with k-means++ seeding; rows of `data` are observations.
GmmFit fit_gmm(const Mat& data, const GmmOptions& opts = {});

/// Posterior component weights given only the observed coordinates.
/// An empty observation set returns the prior weights.
Vec responsibilities(const DiagonalGMM& gmm, const std::vector<bool>& observed,
                     const Vec& values);

/// Conditional expectation of the unobserved coordinates, in coordinate
/// order. `values` is full-length; entries at unobserved positions are ignored.
Vec impute(const DiagonalGMM& gmm, const std::vector<bool>& observed, const Vec& values);

/// Writes observed values and clamped [0,1] imputations into one full vector.
Vec complete_observations(const DiagonalGMM& gmm, const std::vector<bool>& observed,
                          const Vec& values);

}  // namespace triage

#endif  // TRIAGE_GMM_HPP
