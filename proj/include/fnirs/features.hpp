#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "fnirs/types.hpp"

namespace fnirs::feat {

struct WindowSpec {
  double length_s = 2.0;
  double overlap_frac = 0.5;

  void validate() const;
};

struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<Label> labels;
  Eigen::MatrixXd values;  // [n_trials x n_features]

  Eigen::Index n_trials() const { return values.rows(); }
  Eigen::Index n_features() const { return values.cols(); }
  void validate() const;
};

enum class FeatureSet { kStats, kBandPower, kTemporalMean, kUnion };

FeatureSet feature_set_from_string(const std::string& s);
std::string feature_set_to_string(FeatureSet which);

// Start indices of length-L windows: L = floor(length_s*fs), hop = L -
// floor(overlap_frac*L), starts 0, hop, 2*hop, ... while start+L <= n.
struct WindowLayout {
  Eigen::Index length = 0;
  Eigen::Index hop = 0;
  std::vector<Eigen::Index> starts;
};
WindowLayout sliding_windows(Eigen::Index n_samples, const WindowSpec& w, double fs);

// (mean, peak = max |x|, skewness m3/m2^1.5, excess kurtosis m4/m2^2 - 3);
// biased central moments; skewness/kurtosis are 0 when m2 < 1e-15.
std::array<double, 4> stat_features(const Eigen::VectorXd& window);

// Hann-windowed periodogram summed over bins with f1 <= k*fs/L <= f2,
// one-sided (k up to L/2).
double band_power(const Eigen::VectorXd& window, std::pair<double, double> band, double fs);

// Per-stream means over [5,10) s and [10,15) s; columns `<stream>_w1`, `_w2`.
FeatureMatrix temporal_mean_features(const EpochSet& es);

FeatureMatrix assemble_feature_matrix(const EpochSet& es, FeatureSet which,
                                      const WindowSpec& w = {});

void save_feature_matrix(const FeatureMatrix& fm, const std::string& path);
FeatureMatrix load_feature_matrix(const std::string& path);

}  // namespace fnirs::feat
