#ifndef TRIAGE_DATA_HPP
#define TRIAGE_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "triage/common.hpp"

namespace triage {

/// Number of spatial cells used by the spatio-temporal action grid (2x2).
inline constexpr int kSpatialCells = 4;

/// One trimmed clip: per-frame detection probabilities for N object channels.
struct VideoRecord {
  std::string id;
  int label = 0;
  double fps = 1.0;
  Mat scores;  // T x N, entries in [0,1]
  // Optional T x N spatial cell index in [0, kSpatialCells) of each detection.
  std::optional<Eigen::MatrixXi> cells;
  // Optional T x D frame descriptors for mean-pool mode.
  std::optional<Mat> dense;

  int frames() const { return static_cast<int>(scores.rows()); }
  int channels() const { return static_cast<int>(scores.cols()); }
  /// Column-wise max over all frames: the fully observed bag-of-objects.
  Vec full_descriptor() const;
};

struct Dataset {
  int num_classes = 0;
  int num_channels = 0;
  std::vector<VideoRecord> records;

  std::size_t size() const { return records.size(); }
  /// Throws LoadError naming the offending record on any invariant violation.
  void validate() const;
  /// Median clip length in frames.
  double median_length() const;
};

/// A concatenation of trimmed clips with exactly one positive span.
struct UntrimmedRecord {
  std::string id;
  int target = 0;
  Mat frames;      // T x N
  int span_begin = 0;
  int span_end = 0;  // exclusive
  std::vector<std::string> sources;

  int length() const { return static_cast<int>(frames.rows()); }
  bool positive_at(int frame) const {
    return frame >= span_begin && frame < span_end;
  }
};

struct SyntheticConfig {
  int num_classes = 4;
  int num_channels = 8;
  int clips_per_class = 25;
  int min_length = 10;
  int max_length = 30;

  /// presence[c][n] = p(object n | activity c). Generated from the seed when
  /// empty, using the signature parameters below.
  std::vector<std::vector<double>> presence;
  int signature_size = 3;
  double signature_prob = 0.9;
  double background_prob = 0.05;

  double present_mean = 0.8;
  double absent_mean = 0.1;
  /// Spread of the beta-shaped score noise (1/concentration); 0 gives
  /// deterministic scores equal to the means.
  double noise = 0.05;
  /// Fraction of the clip over which a present object is visible.
  double span_min = 0.25;
  double span_max = 0.6;

  bool spatial_cells = false;
  int dense_dim = 0;
  double dense_noise = 0.5;

  std::uint64_t seed = 1;

  void validate() const;
};

SyntheticConfig synthetic_config_from_json(const std::string& text);
std::string synthetic_config_to_json(const SyntheticConfig& cfg);

/// Resolved p(object|activity) table, generating signatures when unset.
std::vector<std::vector<double>> resolve_presence(const SyntheticConfig& cfg);

Dataset gen_synthetic(const SyntheticConfig& cfg);

/// Reads a manifest plus the CSV matrices it references.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json and one CSV per matrix under `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Builds `placements` five-clip records per positive, with the positive at
/// distinct slots and four distinct negatives drawn from `negatives`.
std::vector<UntrimmedRecord> concat_untrimmed(
    const std::vector<VideoRecord>& positives,
    const std::vector<VideoRecord>& negatives, int placements,
    std::uint64_t seed);

/// Splits a dataset into target-activity positives and the rest, then
/// concatenates.
std::vector<UntrimmedRecord> make_untrimmed_set(const Dataset& ds, int target,
                                                int placements,
                                                std::uint64_t seed);

/// Deterministic split: `train_fraction` of each class goes to the first set.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                          double train_fraction);

Mat read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(const std::filesystem::path& path, const Mat& m);

}  // namespace triage

#endif  // TRIAGE_DATA_HPP
