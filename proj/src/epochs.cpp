#include <cmath>
#include <stdexcept>

#include "fnirs/signal.hpp"

namespace fnirs::signal {

EpochSet segment_epochs(const HemoSeries& h, const EventList& ev,
                        std::pair<double, double> window_s) {
  if (!(window_s.first < window_s.second)) {
    throw std::invalid_argument("epoch window must satisfy lo < hi");
  }
  ev.validate();
  const long k_lo = snapped_ceil(window_s.first * h.fs);
  const long k_hi = snapped_floor(window_s.second * h.fs);
  const long n = static_cast<long>(h.n_samples());

  EpochSet es;
  es.fs = h.fs;
  es.window_s = window_s;
  es.stream_names = h.stream_names;
  for (std::size_t i = 0; i < ev.events.size(); ++i) {
    const long onset = std::llround(ev.events[i].onset_s * h.fs);
    if (onset + k_lo < 0 || onset + k_hi >= n) {
      throw std::runtime_error("trial " + std::to_string(i) + " epoch window (samples " +
                               std::to_string(onset + k_lo) + ".." + std::to_string(onset + k_hi) +
                               ") lies outside the recording (0.." + std::to_string(n - 1) + ")");
    }
    es.data.push_back(h.streams.middleRows(onset + k_lo, k_hi - k_lo + 1).transpose());
    es.labels.push_back(ev.events[i].label);
  }
  es.validate();
  return es;
}

EpochSet baseline_correct(const EpochSet& es) {
  es.validate();
  if (es.window_s.first > -1.0 || es.window_s.second < 0.0) {
    throw std::invalid_argument("reference window empty: epoch must include [-1, 0) s");
  }
  const long k_lo_epoch = snapped_ceil(es.window_s.first * es.fs);
  const long b_lo = snapped_ceil(-1.0 * es.fs);
  const long b_hi = -1;
  if (b_lo > b_hi) throw std::invalid_argument("reference window empty at this sampling rate");

  EpochSet out = es;
  const Eigen::Index col0 = b_lo - k_lo_epoch;
  const Eigen::Index ncols = b_hi - b_lo + 1;
  for (auto& trial : out.data) {
    const Eigen::VectorXd ref = trial.middleCols(col0, ncols).rowwise().mean();
    trial.colwise() -= ref;
  }
  return out;
}

}  // namespace fnirs::signal
