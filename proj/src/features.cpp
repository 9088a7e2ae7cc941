#include "fnirs/features.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "fnirs/csv.hpp"
#include "fnirs/signal.hpp"

namespace fnirs::feat {

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676655900577;

constexpr std::pair<double, double> kBandLow{1.0, 3.0};
constexpr std::pair<double, double> kBandHigh{4.0, 6.0};

std::string window_name(const std::string& stream, std::size_t index, const char* kind) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_win%02zu_", index);
  return stream + buf + kind;
}

std::string band_name(std::pair<double, double> band) {
  return "bp" + std::to_string(static_cast<int>(band.first)) + "to" +
         std::to_string(static_cast<int>(band.second));
}

}  // namespace

void WindowSpec::validate() const {
  if (!(length_s > 0.0)) throw std::invalid_argument("window length must be positive");
  if (overlap_frac < 0.0 || overlap_frac >= 1.0) {
    throw std::invalid_argument("overlap fraction must lie in [0, 1)");
  }
}

void FeatureMatrix::validate() const {
  if (static_cast<Eigen::Index>(labels.size()) != values.rows()) {
    throw std::invalid_argument("feature matrix label count must equal row count");
  }
  if (static_cast<Eigen::Index>(names.size()) != values.cols()) {
    throw std::invalid_argument("feature matrix name count must equal column count");
  }
  if (!values.allFinite()) throw std::invalid_argument("feature matrix contains non-finite values");
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) {
    throw std::invalid_argument("feature matrix column names must be unique");
  }
}

FeatureSet feature_set_from_string(const std::string& s) {
  if (s == "stats") return FeatureSet::kStats;
  if (s == "bandpower") return FeatureSet::kBandPower;
  if (s == "temporal_mean") return FeatureSet::kTemporalMean;
  if (s == "union") return FeatureSet::kUnion;
  throw std::invalid_argument("unknown feature set '" + s +
                              "'; allowed: stats, bandpower, temporal_mean, union");
}

std::string feature_set_to_string(FeatureSet which) {
  switch (which) {
    case FeatureSet::kStats: return "stats";
    case FeatureSet::kBandPower: return "bandpower";
    case FeatureSet::kTemporalMean: return "temporal_mean";
    case FeatureSet::kUnion: return "union";
  }
  throw std::logic_error("invalid feature set value");
}

WindowLayout sliding_windows(Eigen::Index n_samples, const WindowSpec& w, double fs) {
  w.validate();
  if (!(fs > 0.0)) throw std::invalid_argument("fs must be positive");
  WindowLayout layout;
  layout.length = signal::snapped_floor(w.length_s * fs);
  if (layout.length < 2) throw std::invalid_argument("window shorter than 2 samples");
  if (n_samples < layout.length) {
    throw std::invalid_argument("epoch of " + std::to_string(n_samples) +
                                " samples is shorter than one " +
                                std::to_string(layout.length) + "-sample window");
  }
  const Eigen::Index skip = signal::snapped_floor(w.overlap_frac * static_cast<double>(layout.length));
  layout.hop = layout.length - skip;
  if (layout.hop < 1) throw std::invalid_argument("window overlap leaves no hop");
  for (Eigen::Index start = 0; start + layout.length <= n_samples; start += layout.hop) {
    layout.starts.push_back(start);
  }
  return layout;
}

std::array<double, 4> stat_features(const Eigen::VectorXd& window) {
  if (window.size() < 2) throw std::invalid_argument("statistics need at least 2 samples");
  const double n = static_cast<double>(window.size());
  const double mean = window.mean();
  const Eigen::ArrayXd centered = window.array() - mean;
  const double m2 = centered.square().sum() / n;
  const double peak = window.cwiseAbs().maxCoeff();
  double skew = 0.0;
  double kurt = 0.0;
  if (m2 >= 1e-15) {
    const double m3 = centered.cube().sum() / n;
    const double m4 = centered.square().square().sum() / n;
    skew = m3 / std::pow(m2, 1.5);
    kurt = m4 / (m2 * m2) - 3.0;
  }
  return {mean, peak, skew, kurt};
}

namespace {

// One-sided Hann periodogram: returns P[k] for k = 0..L/2 with
// P[k] = |X[k]|^2 / sum(w^2), X the DFT of the Hann-windowed samples.
Eigen::VectorXd hann_periodogram(const Eigen::VectorXd& window) {
  const Eigen::Index L = window.size();
  Eigen::VectorXd tapered(L);
  double wsum2 = 0.0;
  for (Eigen::Index j = 0; j < L; ++j) {
    const double w = 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(j) /
                                           static_cast<double>(L - 1)));
    tapered(j) = w * window(j);
    wsum2 += w * w;
  }
  const Eigen::Index n_bins = L / 2 + 1;
  Eigen::VectorXd p(n_bins);
  for (Eigen::Index k = 0; k < n_bins; ++k) {
    const double theta = -kTwoPi * static_cast<double>(k) / static_cast<double>(L);
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    double re = 0.0, im = 0.0;
    double wr = 1.0, wi = 0.0;  // e^{i theta j}, advanced incrementally
    for (Eigen::Index j = 0; j < L; ++j) {
      re += tapered(j) * wr;
      im += tapered(j) * wi;
      const double nwr = wr * cs - wi * sn;
      wi = wr * sn + wi * cs;
      wr = nwr;
    }
    p(k) = (re * re + im * im) / wsum2;
  }
  return p;
}

double band_sum(const Eigen::VectorXd& periodogram, Eigen::Index L, double fs,
                std::pair<double, double> band) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < periodogram.size(); ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(L);
    if (f >= band.first - 1e-9 && f <= band.second + 1e-9) total += periodogram(k);
  }
  return total;
}

}  // namespace

double band_power(const Eigen::VectorXd& window, std::pair<double, double> band, double fs) {
  if (window.size() < 4) throw std::invalid_argument("band power needs at least 4 samples");
  if (!(band.first >= 0.0) || !(band.first <= band.second) || band.second > fs / 2.0) {
    throw std::invalid_argument("band outside the Nyquist range");
  }
  return band_sum(hann_periodogram(window), window.size(), fs, band);
}

FeatureMatrix temporal_mean_features(const EpochSet& es) {
  es.validate();
  const long k_lo_epoch = signal::snapped_ceil(es.window_s.first * es.fs);
  const long w1_lo = signal::snapped_ceil(5.0 * es.fs);
  const long w1_hi = signal::snapped_ceil(10.0 * es.fs) - 1;
  const long w2_lo = signal::snapped_ceil(10.0 * es.fs);
  const long w2_hi = signal::snapped_ceil(15.0 * es.fs) - 1;
  const long k_hi_epoch = k_lo_epoch + static_cast<long>(es.n_samples()) - 1;
  if (w1_lo < k_lo_epoch || w2_hi > k_hi_epoch) {
    throw std::invalid_argument("temporal mean windows [5,15) s lie outside the epoch");
  }

  FeatureMatrix fm;
  fm.labels = es.labels;
  fm.values.resize(es.n_trials(), 2 * es.n_streams());
  for (const auto& stream : es.stream_names) {
    fm.names.push_back(stream + "_w1");
    fm.names.push_back(stream + "_w2");
  }
  for (int tr = 0; tr < es.n_trials(); ++tr) {
    const auto& m = es.data[static_cast<std::size_t>(tr)];
    for (int st = 0; st < es.n_streams(); ++st) {
      fm.values(tr, 2 * st) = m.row(st).segment(w1_lo - k_lo_epoch, w1_hi - w1_lo + 1).mean();
      fm.values(tr, 2 * st + 1) = m.row(st).segment(w2_lo - k_lo_epoch, w2_hi - w2_lo + 1).mean();
    }
  }
  fm.validate();
  return fm;
}

namespace {

FeatureMatrix window_features(const EpochSet& es, const WindowSpec& w, bool stats) {
  const WindowLayout layout = sliding_windows(es.n_samples(), w, es.fs);
  const std::size_t per_window = stats ? 4 : 2;
  const std::size_t n_cols = es.stream_names.size() * layout.starts.size() * per_window;

  FeatureMatrix fm;
  fm.labels = es.labels;
  fm.values.resize(es.n_trials(), static_cast<Eigen::Index>(n_cols));
  for (const auto& stream : es.stream_names) {
    for (std::size_t wi = 0; wi < layout.starts.size(); ++wi) {
      if (stats) {
        fm.names.push_back(window_name(stream, wi, "mean"));
        fm.names.push_back(window_name(stream, wi, "peak"));
        fm.names.push_back(window_name(stream, wi, "skew"));
        fm.names.push_back(window_name(stream, wi, "kurt"));
      } else {
        fm.names.push_back(window_name(stream, wi, band_name(kBandLow).c_str()));
        fm.names.push_back(window_name(stream, wi, band_name(kBandHigh).c_str()));
      }
    }
  }

  for (int tr = 0; tr < es.n_trials(); ++tr) {
    const auto& m = es.data[static_cast<std::size_t>(tr)];
    Eigen::Index col = 0;
    for (int st = 0; st < es.n_streams(); ++st) {
      for (const Eigen::Index start : layout.starts) {
        const Eigen::VectorXd window = m.row(st).segment(start, layout.length);
        if (stats) {
          const auto s = stat_features(window);
          fm.values(tr, col++) = s[0];
          fm.values(tr, col++) = s[1];
          fm.values(tr, col++) = s[2];
          fm.values(tr, col++) = s[3];
        } else {
          const Eigen::VectorXd p = hann_periodogram(window);
          fm.values(tr, col++) = band_sum(p, layout.length, es.fs, kBandLow);
          fm.values(tr, col++) = band_sum(p, layout.length, es.fs, kBandHigh);
        }
      }
    }
  }
  fm.validate();
  return fm;
}

FeatureMatrix concat(const FeatureMatrix& a, const FeatureMatrix& b) {
  FeatureMatrix out;
  out.labels = a.labels;
  out.names = a.names;
  out.names.insert(out.names.end(), b.names.begin(), b.names.end());
  out.values.resize(a.values.rows(), a.values.cols() + b.values.cols());
  out.values << a.values, b.values;
  return out;
}

}  // namespace

FeatureMatrix assemble_feature_matrix(const EpochSet& es, FeatureSet which,
                                      const WindowSpec& w) {
  es.validate();
  switch (which) {
    case FeatureSet::kStats:
      return window_features(es, w, true);
    case FeatureSet::kBandPower:
      return window_features(es, w, false);
    case FeatureSet::kTemporalMean:
      return temporal_mean_features(es);
    case FeatureSet::kUnion: {
      FeatureMatrix fm = concat(window_features(es, w, true), window_features(es, w, false));
      fm = concat(fm, temporal_mean_features(es));
      fm.validate();
      return fm;
    }
  }
  throw std::logic_error("invalid feature set value");
}

void save_feature_matrix(const FeatureMatrix& fm, const std::string& path) {
  fm.validate();
  std::string out = "trial,label";
  for (const auto& name : fm.names) out += "," + name;
  out += "\n";
  for (Eigen::Index r = 0; r < fm.values.rows(); ++r) {
    out += std::to_string(r) + "," + label_to_string(fm.labels[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < fm.values.cols(); ++c) {
      out += ",";
      out += csv::format_double(fm.values(r, c));
    }
    out += "\n";
  }
  csv::write_file_atomic(path, out);
}

FeatureMatrix load_feature_matrix(const std::string& path) {
  const std::string content = csv::read_file(path);
  const auto lines = csv::split_lines(content);
  if (lines.empty()) throw std::runtime_error(path + ": empty file");
  const auto header = csv::split_fields(lines[0]);
  if (header.size() < 3 || header[0] != "trial" || header[1] != "label") {
    throw std::runtime_error(path + ": malformed header (want trial,label,<features...>)");
  }
  FeatureMatrix fm;
  for (std::size_t c = 2; c < header.size(); ++c) fm.names.emplace_back(header[c]);
  const std::size_t n_rows = lines.size() - 1;
  fm.values.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(fm.names.size()));
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto fields = csv::split_fields(lines[r + 1]);
    if (fields.size() != header.size()) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) +
                               " has wrong field count");
    }
    if (fields[0] != std::to_string(r)) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) +
                               ": trial indices must be 0-based and consecutive");
    }
    fm.labels.push_back(label_from_string(std::string(fields[1])));
    for (std::size_t c = 2; c < fields.size(); ++c) {
      double v = 0.0;
      if (!csv::parse_double(fields[c], v) || !std::isfinite(v)) {
        throw std::runtime_error(path + ": data row " + std::to_string(r + 1) + ", column " +
                                 fm.names[c - 2] + ": bad value");
      }
      fm.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 2)) = v;
    }
  }
  fm.validate();
  return fm;
}

}  // namespace fnirs::feat
