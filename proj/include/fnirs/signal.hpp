#pragma once

#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "fnirs/types.hpp"

namespace fnirs::signal {

// Snapped float->index conversions: tolerate ~1e-9 representation error in
// products like seconds*fs before committing to an integer sample index.
long snapped_ceil(double x);
long snapped_floor(double x);

// Modified Beer-Lambert parameters. Extinction rows are wavelengths (lo, hi),
// columns are chromophores (HbO, HbR), units 1/(mM*cm).
struct MbllParams {
  Eigen::Matrix2d extinction;
  double dpf_lo = 6.0;
  double dpf_hi = 6.0;
  double distance_cm = 3.0;  // used when a recording carries no per-channel distance

  static MbllParams defaults();
  void validate() const;
};

// Keyed text config: `epsilon_hbo_lo`, `epsilon_hbo_hi`, `epsilon_hbr_lo`,
// `epsilon_hbr_hi`, `dpf_lo`, `dpf_hi`, optional `distance_cm`. Missing keys
// keep defaults; unknown keys are errors.
MbllParams load_mbll_config(const std::string& path);
void save_mbll_config(const MbllParams& p, const std::string& path);

// Solves the per-channel 2x2 system dOD(lambda) = eps * [HbO, HbR] * d * DPF
// for every sample. Output streams alternate chNN_HbO, chNN_HbR (mM).
HemoSeries mbll_convert(const Recording& rec, const MbllParams& p);

// Forward model over one channel's concentration pair: columns (HbO, HbR) ->
// columns (dOD_lo, dOD_hi). Inverse of the conversion above.
Eigen::MatrixXd mbll_forward(const Eigen::MatrixXd& hemo_pair, const MbllParams& p,
                             double distance_cm);

struct SecondOrderSection {
  double b0 = 0, b1 = 0, b2 = 0;  // numerator
  double a1 = 0, a2 = 0;          // denominator (a0 == 1)
};

struct FilterSpec {
  std::vector<SecondOrderSection> sections;
  double fs = 0.0;
  int order = 0;
  double f_lo = 0.0;
  double f_hi = 0.0;
};

// Analog Butterworth prototype -> band transform -> bilinear discretization
// with frequency pre-warping, returned as stable second-order sections.
FilterSpec design_butterworth_bandpass(int order, double f_lo, double f_hi, double fs);

// Cascade frequency response at f hertz.
std::complex<double> filter_response(const FilterSpec& spec, double f_hz);

// Single forward pass of the cascade, each section starting from its
// step-response steady state scaled by the first sample.
Eigen::VectorXd sosfilt(const FilterSpec& spec, const Eigen::VectorXd& x);

// Zero-phase filtering: odd-reflection padding of length 3*(2*order), then
// the average of the forward-backward and backward-forward cascades, which
// makes time-reversal symmetry exact in floating point.
Eigen::VectorXd filtfilt(const FilterSpec& spec, const Eigen::VectorXd& x);
Eigen::MatrixXd filtfilt_columns(const FilterSpec& spec, const Eigen::MatrixXd& x);

// Cuts [window lo, window hi] seconds around each event onset. Epoch k ranges
// over [ceil(lo*fs), floor(hi*fs)] relative to the rounded onset sample.
EpochSet segment_epochs(const HemoSeries& h, const EventList& ev,
                        std::pair<double, double> window_s = {-5.0, 25.0});

// Subtracts the per-trial, per-stream mean over the pre-onset reference
// window [-1, 0) s.
EpochSet baseline_correct(const EpochSet& es);

std::vector<std::string> stream_names_for(int n_channels);

}  // namespace fnirs::signal
