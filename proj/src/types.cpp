#include "fnirs/types.hpp"

#include <cmath>
#include <stdexcept>

namespace fnirs {

std::string label_to_string(Label l) {
  switch (l) {
    case Label::MA: return "MA";
    case Label::MI: return "MI";
    case Label::IS: return "IS";
  }
  throw std::logic_error("invalid label value");
}

Label label_from_string(const std::string& s) {
  if (s == "MA") return Label::MA;
  if (s == "MI") return Label::MI;
  if (s == "IS") return Label::IS;
  throw std::invalid_argument("unknown label '" + s + "'; allowed: MA, MI, IS");
}

void Recording::validate() const {
  if (!(fs > 0.0)) throw std::invalid_argument("recording fs must be positive");
  if (channels.empty()) throw std::invalid_argument("recording has no channels");
  if (samples.cols() != 2 * static_cast<Eigen::Index>(channels.size())) {
    throw std::invalid_argument("recording column count must be 2 x channel count");
  }
  for (const auto& ch : channels) {
    if (!(ch.wavelength_lo_nm > 0.0) || !(ch.wavelength_hi_nm > ch.wavelength_lo_nm)) {
      throw std::invalid_argument("channel wavelengths must satisfy 0 < lo < hi");
    }
    if (!(ch.source_detector_distance_mm > 0.0)) {
      throw std::invalid_argument("channel distance must be positive");
    }
  }
  if (!samples.allFinite()) throw std::invalid_argument("recording contains non-finite samples");
}

void EventList::validate() const {
  double prev = -1.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].onset_s < 0.0) throw std::invalid_argument("event onset must be >= 0");
    if (i > 0 && !(events[i].onset_s > prev)) {
      throw std::invalid_argument("event onsets must be strictly increasing (violated at index " +
                                  std::to_string(i) + ")");
    }
    prev = events[i].onset_s;
  }
}

void EpochSet::validate() const {
  if (!(fs > 0.0)) throw std::invalid_argument("epoch set fs must be positive");
  if (labels.size() != data.size()) throw std::invalid_argument("labels length must equal trial count");
  const Eigen::Index ns = n_samples();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].rows() != static_cast<Eigen::Index>(stream_names.size())) {
      throw std::invalid_argument("trial " + std::to_string(i) + " stream count mismatch");
    }
    if (data[i].cols() != ns) {
      throw std::invalid_argument("trial " + std::to_string(i) + " sample count mismatch");
    }
    if (!data[i].allFinite()) {
      throw std::invalid_argument("trial " + std::to_string(i) + " contains non-finite samples");
    }
  }
}

void SynthConfig::validate() const {
  if (n_trials_per_class <= 0) throw std::invalid_argument("n_trials_per_class must be positive");
  if (!(fs > 0.0)) throw std::invalid_argument("fs must be positive");
  if (n_channels <= 0 || n_channels % 2 != 0) {
    throw std::invalid_argument("n_channels must be positive and even");
  }
  if (intro_s < 0 || task_s <= 0 || rest_s < 0 || lead_s < 0 || tail_s < 0) {
    throw std::invalid_argument("trial layout durations must be non-negative (task positive)");
  }
  const double amps[] = {amp_ma_anterior, amp_ma_posterior, amp_mi_anterior,
                         amp_mi_posterior, amp_is_anterior, amp_is_posterior,
                         spurious_amp};
  for (double a : amps) {
    if (a < 0.0) throw std::invalid_argument("class amplitudes must be >= 0");
  }
  const double noises[] = {noise_drift,  noise_cardiac, noise_respiratory, noise_mayer,
                           noise_inband, noise_systemic, noise_white,
                           trial_gain_jitter};
  for (double n : noises) {
    if (n < 0.0) throw std::invalid_argument("noise levels must be >= 0");
  }
  if (spurious_rate < 0.0 || spurious_rate > 1.0) {
    throw std::invalid_argument("spurious_rate must lie in [0, 1]");
  }
  if (!(peak_ma_s > 0.0) || !(peak_mi_s > 0.0)) {
    throw std::invalid_argument("response peak latencies must be positive");
  }
}

}  // namespace fnirs
