#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fnirs {

enum class Label { MA = 0, MI = 1, IS = 2 };

inline constexpr int kNumClasses = 3;

std::string label_to_string(Label l);
Label label_from_string(const std::string& s);

struct ChannelMeta {
  int id = 0;  // 1-based
  double wavelength_lo_nm = 760.0;
  double wavelength_hi_nm = 850.0;
  double source_detector_distance_mm = 30.0;
};

// Raw optical-density recording. Columns are (ch01_wl1, ch01_wl2, ch02_wl1, ...),
// two wavelengths per channel, rows uniformly spaced at 1/fs.
struct Recording {
  double fs = 0.0;
  std::vector<ChannelMeta> channels;
  Eigen::MatrixXd samples;  // [n_samples x 2*n_channels], dimensionless delta-OD

  int n_channels() const { return static_cast<int>(channels.size()); }
  Eigen::Index n_samples() const { return samples.rows(); }
  void validate() const;  // throws std::invalid_argument on violation
};

struct Event {
  double onset_s = 0.0;
  Label label = Label::MA;
};

struct EventList {
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }
  void validate() const;
};

// Hemoglobin concentration series. Columns alternate chNN_HbO, chNN_HbR.
struct HemoSeries {
  double fs = 0.0;
  std::vector<std::string> stream_names;
  Eigen::MatrixXd streams;  // [n_samples x 2*n_channels], mM

  Eigen::Index n_samples() const { return streams.rows(); }
  int n_streams() const { return static_cast<int>(streams.cols()); }
};

// Per-trial windows cut around event onsets.
struct EpochSet {
  double fs = 0.0;
  std::pair<double, double> window_s{-5.0, 25.0};
  std::vector<Label> labels;
  std::vector<std::string> stream_names;
  std::vector<Eigen::MatrixXd> data;  // per trial: [n_streams x n_epoch_samples]

  int n_trials() const { return static_cast<int>(data.size()); }
  int n_streams() const { return static_cast<int>(stream_names.size()); }
  Eigen::Index n_samples() const { return data.empty() ? 0 : data.front().cols(); }
  void validate() const;
};

// Deterministic synthetic dataset parameters. Amplitudes are peak HbO
// concentration changes in mM; each class drives the anterior (first half)
// and posterior (second half) channel groups separately. Noise levels are
// standard deviations / amplitudes in mM before forward optical conversion.
struct SynthConfig {
  std::uint64_t seed = 1;
  int n_trials_per_class = 30;
  double fs = 13.3;
  int n_channels = 16;

  // Trial block layout in seconds: introduction, task, rest; lead-in/out.
  double intro_s = 2.0;
  double task_s = 10.0;
  double rest_s = 18.0;
  double lead_s = 30.0;
  double tail_s = 30.0;

  // Class response: amplitude per channel group and response peak latency.
  // Mental arithmetic is the dominant response (strongest amplitude,
  // anterior-weighted, late sustained peak); motor imagery is weaker,
  // posterior-weighted, and early; idle state carries no evoked response.
  double amp_ma_anterior = 0.0160;
  double amp_ma_posterior = 0.0080;
  double amp_mi_anterior = 0.0030;
  double amp_mi_posterior = 0.0090;
  double amp_is_anterior = 0.0;
  double amp_is_posterior = 0.0;
  double peak_ma_s = 16.0;
  double peak_mi_s = 5.0;
  double hbr_ratio = -0.4;  // HbR response as a fraction of HbO response

  // Per-trial lognormal amplitude jitter (sigma of log gain).
  double trial_gain_jitter = 0.35;

  // Idle-state trials occasionally carry a weak spontaneous response.
  double spurious_rate = 0.05;
  double spurious_amp = 0.0040;

  // Nuisance/noise levels (mM).
  double noise_drift = 0.0060;
  double noise_cardiac = 0.0036;
  double noise_respiratory = 0.0042;
  double noise_mayer = 0.0030;
  double noise_inband = 0.0015;
  double noise_systemic = 0.0020;
  double noise_white = 0.0036;

  void validate() const;
};

}  // namespace fnirs
