#include "triage/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace triage {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Vec VideoRecord::full_descriptor() const {
  return scores.colwise().maxCoeff().transpose();
}

void Dataset::validate() const {
  if (num_classes <= 0) throw LoadError("dataset: num_classes must be positive");
  if (num_channels <= 0) throw LoadError("dataset: num_channels must be positive");
  for (const auto& r : records) {
    const std::string who = "record '" + r.id + "': ";
    if (r.label < 0 || r.label >= num_classes)
      throw LoadError(who + "label " + std::to_string(r.label) +
                      " outside [0," + std::to_string(num_classes) + ")");
    if (r.scores.rows() < 1) throw LoadError(who + "no frames");
    if (r.scores.cols() != num_channels)
      throw LoadError(who + "has " + std::to_string(r.scores.cols()) +
                      " channels, expected " + std::to_string(num_channels));
    if (!(r.fps > 0)) throw LoadError(who + "fps must be positive");
    for (Eigen::Index t = 0; t < r.scores.rows(); ++t)
      for (Eigen::Index n = 0; n < r.scores.cols(); ++n) {
        const double s = r.scores(t, n);
        if (!std::isfinite(s) || s < 0.0 || s > 1.0)
          throw LoadError(who + "score " + format_double(s) + " at frame " +
                          std::to_string(t) + " channel " + std::to_string(n) +
                          " outside [0,1]");
      }
    if (r.cells) {
      if (r.cells->rows() != r.scores.rows() || r.cells->cols() != r.scores.cols())
        throw LoadError(who + "cell matrix shape differs from score matrix");
      if (r.cells->minCoeff() < 0 || r.cells->maxCoeff() >= kSpatialCells)
        throw LoadError(who + "cell index outside [0," +
                        std::to_string(kSpatialCells) + ")");
    }
    if (r.dense) {
      if (r.dense->rows() != r.scores.rows())
        throw LoadError(who + "dense descriptor rows differ from frame count");
      if (!r.dense->allFinite()) throw LoadError(who + "non-finite dense descriptor");
    }
  }
  if (!records.empty() && records.front().dense) {
    const auto d = records.front().dense->cols();
    for (const auto& r : records)
      if (!r.dense || r.dense->cols() != d)
        throw LoadError("record '" + r.id + "': inconsistent dense descriptor dimension");
  }
}

double Dataset::median_length() const {
  if (records.empty()) return 0.0;
  std::vector<int> lens;
  lens.reserve(records.size());
  for (const auto& r : records) lens.push_back(r.frames());
  std::sort(lens.begin(), lens.end());
  const std::size_t m = lens.size() / 2;
  if (lens.size() % 2 == 1) return lens[m];
  return 0.5 * (lens[m - 1] + lens[m]);
}

// ---------------------------------------------------------------------------
// CSV

Mat read_csv_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      const char* b = p;
      while (b < comma && *b == ' ') ++b;
      double v = 0.0;
      auto res = std::from_chars(b, comma, v);
      if (res.ec != std::errc{} || res.ptr != comma)
        throw LoadError(path.string() + ":" + std::to_string(lineno) +
                        ": malformed number");
      row.push_back(v);
      if (comma == end) break;
      p = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw LoadError(path.string() + ":" + std::to_string(lineno) +
                      ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw LoadError(path.string() + ": empty matrix");
  Mat m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void write_csv_matrix(const fs::path& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Manifest

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.num_classes = j.at("num_classes").get<int>();
    ds.num_channels = j.at("num_channels").get<int>();
    for (const auto& jr : j.at("records")) {
      VideoRecord r;
      r.id = jr.at("id").get<std::string>();
      r.label = jr.at("label").get<int>();
      r.fps = jr.value("fps", 1.0);
      try {
        r.scores = read_csv_matrix(base / jr.at("scores").get<std::string>());
        if (jr.contains("cells"))
          r.cells = read_csv_matrix(base / jr.at("cells").get<std::string>())
                        .cast<int>();
        if (jr.contains("dense"))
          r.dense = read_csv_matrix(base / jr.at("dense").get<std::string>());
      } catch (const LoadError& e) {
        throw LoadError("record '" + r.id + "': " + e.what());
      }
      ds.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw LoadError("manifest " + manifest_path.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir / "scores");
  json j;
  j["format"] = "triage-dataset";
  j["version"] = 1;
  j["num_classes"] = ds.num_classes;
  j["num_channels"] = ds.num_channels;
  j["records"] = json::array();
  for (const auto& r : ds.records) {
    json jr;
    jr["id"] = r.id;
    jr["label"] = r.label;
    jr["fps"] = r.fps;
    const std::string stem = "scores/" + r.id;
    jr["scores"] = stem + ".csv";
    write_csv_matrix(dir / (stem + ".csv"), r.scores);
    if (r.cells) {
      jr["cells"] = stem + ".cells.csv";
      write_csv_matrix(dir / (stem + ".cells.csv"), r.cells->cast<double>());
    }
    if (r.dense) {
      jr["dense"] = stem + ".dense.csv";
      write_csv_matrix(dir / (stem + ".dense.csv"), *r.dense);
    }
    j["records"].push_back(std::move(jr));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic generation

void SyntheticConfig::validate() const {
  if (num_classes <= 0 || num_channels <= 0)
    throw ConfigError("synthetic config: need at least one activity and one object");
  if (clips_per_class <= 0) throw ConfigError("synthetic config: clips_per_class must be positive");
  if (min_length < 1 || max_length < min_length)
    throw ConfigError("synthetic config: empty clip length range");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(signature_prob) || !prob(background_prob) || !prob(present_mean) ||
      !prob(absent_mean))
    throw ConfigError("synthetic config: probabilities must lie in [0,1]");
  if (noise < 0.0) throw ConfigError("synthetic config: noise must be nonnegative");
  if (!(span_min > 0.0) || span_max < span_min || span_max > 1.0)
    throw ConfigError("synthetic config: span fractions must satisfy 0 < min <= max <= 1");
  if (signature_size < 0) throw ConfigError("synthetic config: negative signature size");
  if (dense_dim < 0) throw ConfigError("synthetic config: negative dense_dim");
  if (!presence.empty()) {
    if (presence.size() != static_cast<std::size_t>(num_classes))
      throw ConfigError("synthetic config: presence table needs one row per activity");
    for (const auto& row : presence) {
      if (row.size() != static_cast<std::size_t>(num_channels))
        throw ConfigError("synthetic config: presence row needs one entry per object");
      for (double p : row)
        if (!prob(p)) throw ConfigError("synthetic config: presence outside [0,1]");
    }
  }
}

SyntheticConfig synthetic_config_from_json(const std::string& text) {
  SyntheticConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  c.num_channels = j.value("num_channels", c.num_channels);
  c.clips_per_class = j.value("clips_per_class", c.clips_per_class);
  c.min_length = j.value("min_length", c.min_length);
  c.max_length = j.value("max_length", c.max_length);
  if (j.contains("presence"))
    c.presence = j["presence"].get<std::vector<std::vector<double>>>();
  c.signature_size = j.value("signature_size", c.signature_size);
  c.signature_prob = j.value("signature_prob", c.signature_prob);
  c.background_prob = j.value("background_prob", c.background_prob);
  c.present_mean = j.value("present_mean", c.present_mean);
  c.absent_mean = j.value("absent_mean", c.absent_mean);
  c.noise = j.value("noise", c.noise);
  c.span_min = j.value("span_min", c.span_min);
  c.span_max = j.value("span_max", c.span_max);
  c.spatial_cells = j.value("spatial_cells", c.spatial_cells);
  c.dense_dim = j.value("dense_dim", c.dense_dim);
  c.dense_noise = j.value("dense_noise", c.dense_noise);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string synthetic_config_to_json(const SyntheticConfig& c) {
  json j;
  j["num_classes"] = c.num_classes;
  j["num_channels"] = c.num_channels;
  j["clips_per_class"] = c.clips_per_class;
  j["min_length"] = c.min_length;
  j["max_length"] = c.max_length;
  if (!c.presence.empty()) j["presence"] = c.presence;
  j["signature_size"] = c.signature_size;
  j["signature_prob"] = c.signature_prob;
  j["background_prob"] = c.background_prob;
  j["present_mean"] = c.present_mean;
  j["absent_mean"] = c.absent_mean;
  j["noise"] = c.noise;
  j["span_min"] = c.span_min;
  j["span_max"] = c.span_max;
  j["spatial_cells"] = c.spatial_cells;
  j["dense_dim"] = c.dense_dim;
  j["dense_noise"] = c.dense_noise;
  j["seed"] = c.seed;
  return j.dump(2);
}

namespace {

double standard_normal(Rng& rng) {
  // Box-Muller; the second variate is discarded to keep the stream simple.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Marsaglia-Tsang.
double sample_gamma(Rng& rng, double shape) {
  if (shape < 1.0) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

double sample_score(Rng& rng, double mean, double noise) {
  if (noise == 0.0 || mean <= 0.0 || mean >= 1.0) return mean;
  const double kappa = 1.0 / noise;
  const double a = sample_gamma(rng, mean * kappa);
  const double b = sample_gamma(rng, (1.0 - mean) * kappa);
  const double s = a / (a + b);
  return std::clamp(s, 0.0, 1.0);
}

std::string clip_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%06d", index);
  return buf;
}

}  // namespace

std::vector<std::vector<double>> resolve_presence(const SyntheticConfig& cfg) {
  cfg.validate();
  if (!cfg.presence.empty()) return cfg.presence;
  const int L = cfg.num_classes, N = cfg.num_channels;
  const int s = std::min(cfg.signature_size, N);
  Rng rng(derive_seed(cfg.seed, 0x5157));
  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<double>> p(L, std::vector<double>(N, cfg.background_prob));
  // Signatures walk the shuffled object list so that activities overlap only
  // once the object bank is exhausted.
  for (int c = 0; c < L; ++c)
    for (int j = 0; j < s; ++j) p[c][perm[(c * s + j) % N]] = cfg.signature_prob;
  return p;
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
  const auto presence = resolve_presence(cfg);
  const int L = cfg.num_classes, N = cfg.num_channels;
  Rng rng(derive_seed(cfg.seed, 0xda7a));

  // Class prototypes for dense frame descriptors.
  std::vector<Vec> prototypes;
  if (cfg.dense_dim > 0) {
    for (int c = 0; c < L; ++c) {
      Vec v(cfg.dense_dim);
      for (int d = 0; d < cfg.dense_dim; ++d) v(d) = standard_normal(rng);
      prototypes.push_back(std::move(v));
    }
  }

  Dataset ds;
  ds.num_classes = L;
  ds.num_channels = N;
  int index = 0;
  for (int i = 0; i < cfg.clips_per_class; ++i) {
    for (int c = 0; c < L; ++c) {
      VideoRecord r;
      r.id = clip_id(index++);
      r.label = c;
      const int T = cfg.min_length +
                    static_cast<int>(uniform_index(rng, cfg.max_length - cfg.min_length + 1));
      r.scores.resize(T, N);
      if (cfg.spatial_cells) r.cells = Eigen::MatrixXi(T, N);
      for (int n = 0; n < N; ++n) {
        const bool present = uniform01(rng) < presence[c][n];
        int begin = T, end = T;
        if (present) {
          const double frac = cfg.span_min + (cfg.span_max - cfg.span_min) * uniform01(rng);
          const int len = std::clamp(static_cast<int>(std::lround(frac * T)), 1, T);
          begin = static_cast<int>(uniform_index(rng, T - len + 1));
          end = begin + len;
        }
        const int home_cell = static_cast<int>(uniform_index(rng, kSpatialCells));
        for (int t = 0; t < T; ++t) {
          const bool on = t >= begin && t < end;
          r.scores(t, n) = sample_score(rng, on ? cfg.present_mean : cfg.absent_mean, cfg.noise);
          if (cfg.spatial_cells)
            (*r.cells)(t, n) = on ? home_cell
                                  : static_cast<int>(uniform_index(rng, kSpatialCells));
        }
      }
      if (cfg.dense_dim > 0) {
        // Informative frames carry the class prototype; the rest are noise.
        const double frac = cfg.span_min + (cfg.span_max - cfg.span_min) * uniform01(rng);
        const int len = std::clamp(static_cast<int>(std::lround(frac * T)), 1, T);
        const int begin = static_cast<int>(uniform_index(rng, T - len + 1));
        Mat dense(T, cfg.dense_dim);
        for (int t = 0; t < T; ++t) {
          const double gain = (t >= begin && t < begin + len) ? 1.0 : 0.15;
          for (int d = 0; d < cfg.dense_dim; ++d)
            dense(t, d) = gain * prototypes[c](d) + cfg.dense_noise * standard_normal(rng);
        }
        r.dense = std::move(dense);
      }
      ds.records.push_back(std::move(r));
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Untrimmed concatenation

std::vector<UntrimmedRecord> concat_untrimmed(const std::vector<VideoRecord>& positives,
                                              const std::vector<VideoRecord>& negatives,
                                              int placements, std::uint64_t seed) {
  constexpr int kSlots = 5;
  if (placements < 1 || placements > kSlots)
    throw ConfigError("concat_untrimmed: placements must be in [1,5]");
  if (negatives.size() < kSlots - 1)
    throw ConfigError("concat_untrimmed: need at least 4 negative clips, have " +
                      std::to_string(negatives.size()));
  std::vector<UntrimmedRecord> out;
  out.reserve(positives.size() * placements);
  for (std::size_t p = 0; p < positives.size(); ++p) {
    const auto& pos = positives[p];
    Rng rng(derive_seed(seed, p));
    std::vector<int> slots(kSlots);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    for (int k = 0; k < placements; ++k) {
      const int slot = slots[k];
      // Partial Fisher-Yates: distinct negatives within a record.
      std::vector<std::size_t> pool(negatives.size());
      std::iota(pool.begin(), pool.end(), 0);
      for (int j = 0; j < kSlots - 1; ++j) {
        const std::size_t pick = j + uniform_index(rng, pool.size() - j);
        std::swap(pool[j], pool[pick]);
      }
      std::vector<const VideoRecord*> parts;
      int neg = 0;
      for (int s = 0; s < kSlots; ++s)
        parts.push_back(s == slot ? &pos : &negatives[pool[neg++]]);

      UntrimmedRecord u;
      u.id = pos.id + "@" + std::to_string(slot);
      u.target = pos.label;
      int total = 0;
      for (const auto* part : parts) total += part->frames();
      u.frames.resize(total, pos.channels());
      int offset = 0;
      for (int s = 0; s < kSlots; ++s) {
        const auto* part = parts[s];
        if (part->channels() != pos.channels())
          throw ConfigError("concat_untrimmed: channel count mismatch in '" + part->id + "'");
        u.frames.middleRows(offset, part->frames()) = part->scores;
        if (s == slot) {
          u.span_begin = offset;
          u.span_end = offset + part->frames();
        }
        u.sources.push_back(part->id);
        offset += part->frames();
      }
      out.push_back(std::move(u));
    }
  }
  return out;
}

std::vector<UntrimmedRecord> make_untrimmed_set(const Dataset& ds, int target,
                                                int placements, std::uint64_t seed) {
  std::vector<VideoRecord> pos, neg;
  for (const auto& r : ds.records) (r.label == target ? pos : neg).push_back(r);
  if (pos.empty())
    throw ConfigError("no clips of target activity " + std::to_string(target));
  return concat_untrimmed(pos, neg, placements, seed);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction) {
  Dataset a, b;
  a.num_classes = b.num_classes = ds.num_classes;
  a.num_channels = b.num_channels = ds.num_channels;
  std::vector<int> total(ds.num_classes, 0), seen(ds.num_classes, 0);
  for (const auto& r : ds.records) ++total[r.label];
  for (const auto& r : ds.records) {
    const int quota = static_cast<int>(std::floor(train_fraction * total[r.label] + 1e-9));
    (seen[r.label]++ < quota ? a : b).records.push_back(r);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace triage
