#include <cmath>
#include <map>
#include <vector>

#include "fnirs/io.hpp"
#include "fnirs/rng.hpp"
#include "fnirs/signal.hpp"

namespace fnirs::io {

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676655900577;

double gamma_pdf(double t, double shape) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape));
}

// Canonical hemodynamic impulse kernel: difference of two gamma densities,
// main lobe peaking at peak_s, undershoot at peak_s + 10, 25 s support,
// normalized to unit maximum.
std::vector<double> hemodynamic_kernel(double fs, double peak_s) {
  const long n = signal::snapped_ceil(25.0 * fs);
  std::vector<double> k(static_cast<std::size_t>(n));
  double peak = 0.0;
  for (long i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    k[static_cast<std::size_t>(i)] =
        gamma_pdf(t, peak_s + 1.0) - gamma_pdf(t, peak_s + 11.0) / 6.0;
    peak = std::max(peak, k[static_cast<std::size_t>(i)]);
  }
  if (peak > 0.0) {
    for (double& v : k) v /= peak;
  }
  return k;
}

// Task boxcar convolved with the kernel, normalized to unit maximum.
std::vector<double> response_curve(double fs, double task_s, double peak_s) {
  const std::vector<double> kernel = hemodynamic_kernel(fs, peak_s);
  const std::size_t box = static_cast<std::size_t>(std::llround(task_s * fs));
  std::vector<double> out(box + kernel.size() - 1, 0.0);
  for (std::size_t i = 0; i < box; ++i) {
    for (std::size_t j = 0; j < kernel.size(); ++j) out[i + j] += kernel[j];
  }
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, v);
  if (peak > 0.0) {
    for (double& v : out) v /= peak;
  }
  return out;
}

void add_response(Eigen::MatrixXd& dst, Eigen::Index col, long start,
                  const std::vector<double>& curve, double gain) {
  const long n = dst.rows();
  for (std::size_t j = 0; j < curve.size(); ++j) {
    const long idx = start + static_cast<long>(j);
    if (idx >= 0 && idx < n) dst(idx, col) += gain * curve[j];
  }
}

Eigen::VectorXd inband_noise(const signal::FilterSpec& band, rng::Xoshiro256pp& gen, long n) {
  Eigen::VectorXd white(n);
  for (long i = 0; i < n; ++i) white(i) = gen.normal();
  Eigen::VectorXd shaped = signal::sosfilt(band, white);
  const double sd = std::sqrt(shaped.squaredNorm() / static_cast<double>(n));
  if (sd > 0.0) shaped /= sd;
  return shaped;
}

}  // namespace

std::pair<Recording, EventList> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const double fs = cfg.fs;
  const double period = cfg.intro_s + cfg.task_s + cfg.rest_s;
  const int n_trials = 3 * cfg.n_trials_per_class;
  const long n = std::llround((cfg.lead_s + period * n_trials + cfg.tail_s) * fs);
  const int nch = cfg.n_channels;

  // Balanced, seed-shuffled label sequence and the trial onset grid.
  std::vector<Label> labels;
  for (int c = 0; c < kNumClasses; ++c) {
    labels.insert(labels.end(), static_cast<std::size_t>(cfg.n_trials_per_class),
                  static_cast<Label>(c));
  }
  rng::Xoshiro256pp label_gen(rng::derive_seed(cfg.seed, "synth/labels"));
  label_gen.shuffle(labels);

  EventList events;
  for (int i = 0; i < n_trials; ++i) {
    Event e;
    e.onset_s = cfg.lead_s + period * i + cfg.intro_s;
    e.label = labels[static_cast<std::size_t>(i)];
    events.events.push_back(e);
  }

  Eigen::MatrixXd hbo = Eigen::MatrixXd::Zero(n, nch);
  Eigen::MatrixXd hbr = Eigen::MatrixXd::Zero(n, nch);

  // Class responses plus the trial-locked systemic nuisance.
  std::map<double, std::vector<double>> curve_cache;
  auto curve_for = [&](double peak_s) -> const std::vector<double>& {
    auto it = curve_cache.find(peak_s);
    if (it == curve_cache.end()) {
      it = curve_cache.emplace(peak_s, response_curve(fs, cfg.task_s, peak_s)).first;
    }
    return it->second;
  };

  rng::Xoshiro256pp trial_gen(rng::derive_seed(cfg.seed, "synth/trials"));
  const int half = nch / 2;
  for (int i = 0; i < n_trials; ++i) {
    const Label lab = events.events[static_cast<std::size_t>(i)].label;
    const long onset = std::llround(events.events[static_cast<std::size_t>(i)].onset_s * fs);
    const double gain = std::exp(cfg.trial_gain_jitter * trial_gen.normal());
    const double systemic = cfg.noise_systemic * std::exp(0.6 * trial_gen.normal());
    const double spurious_draw = trial_gen.uniform();
    const double spurious_gain = cfg.spurious_amp * std::exp(0.3 * trial_gen.normal());
    const double spurious_peak = 6.0 + 4.0 * trial_gen.uniform();

    if (systemic > 0.0) {
      const auto& sys_curve = curve_for(6.5);
      for (int c = 0; c < nch; ++c) {
        add_response(hbo, c, onset, sys_curve, systemic);
        add_response(hbr, c, onset, sys_curve, -0.25 * systemic);
      }
    }

    double amp_ant = 0.0;
    double amp_pos = 0.0;
    double peak_s = cfg.peak_ma_s;
    switch (lab) {
      case Label::MA:
        amp_ant = cfg.amp_ma_anterior;
        amp_pos = cfg.amp_ma_posterior;
        peak_s = cfg.peak_ma_s;
        break;
      case Label::MI:
        amp_ant = cfg.amp_mi_anterior;
        amp_pos = cfg.amp_mi_posterior;
        peak_s = cfg.peak_mi_s;
        break;
      case Label::IS:
        amp_ant = cfg.amp_is_anterior;
        amp_pos = cfg.amp_is_posterior;
        if (spurious_draw < cfg.spurious_rate) {
          amp_ant += spurious_gain;
          amp_pos += 0.8 * spurious_gain;
          peak_s = spurious_peak;
        }
        break;
    }
    if (amp_ant == 0.0 && amp_pos == 0.0) continue;

    const auto& curve = curve_for(peak_s);
    for (int c = 0; c < nch; ++c) {
      const double a = (c < half ? amp_ant : amp_pos) * gain;
      if (a == 0.0) continue;
      add_response(hbo, c, onset, curve, a);
      add_response(hbr, c, onset, curve, cfg.hbr_ratio * a);
    }
  }

  // Channel noise: shared and private in-band processes, sinusoidal cardiac /
  // respiratory / Mayer components, random-walk drift, white noise.
  rng::Xoshiro256pp noise_gen(rng::derive_seed(cfg.seed, "synth/noise"));
  const bool want_inband = cfg.noise_inband > 0.0;
  signal::FilterSpec band;
  Eigen::VectorXd shared_inband;
  if (want_inband) {
    band = signal::design_butterworth_bandpass(2, 0.02, 0.09, fs);
    shared_inband = inband_noise(band, noise_gen, n);
  }
  const double drift_step = cfg.noise_drift / std::sqrt(static_cast<double>(n));

  for (int c = 0; c < nch; ++c) {
    const double cardiac_f = 1.0 + 0.05 * noise_gen.normal();
    const double cardiac_ph = kTwoPi * noise_gen.uniform();
    const double resp_ph = kTwoPi * noise_gen.uniform();
    const double mayer_f = 0.095 + 0.01 * noise_gen.normal();
    const double mayer_ph = kTwoPi * noise_gen.uniform();
    const double mayer_mod_ph = kTwoPi * noise_gen.uniform();

    Eigen::VectorXd priv_o, priv_r;
    if (want_inband) {
      priv_o = inband_noise(band, noise_gen, n);
      priv_r = inband_noise(band, noise_gen, n);
    }

    double walk_o = 0.0;
    double walk_r = 0.0;
    for (long i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double cardiac = cfg.noise_cardiac * std::sin(kTwoPi * cardiac_f * t + cardiac_ph);
      const double resp = cfg.noise_respiratory * std::sin(kTwoPi * 0.3 * t + resp_ph);
      const double mayer_mod = 1.0 + 0.5 * std::sin(kTwoPi * 0.011 * t + mayer_mod_ph);
      const double mayer = cfg.noise_mayer * mayer_mod * std::sin(kTwoPi * mayer_f * t + mayer_ph);
      walk_o += drift_step * noise_gen.normal();
      walk_r += 0.6 * drift_step * noise_gen.normal();
      double ib_o = 0.0;
      double ib_r = 0.0;
      if (want_inband) {
        ib_o = cfg.noise_inband * (0.6 * shared_inband(i) + 0.8 * priv_o(i));
        ib_r = cfg.noise_inband * (0.4 * shared_inband(i) + 0.6 * priv_r(i));
      }
      hbo(i, c) += cardiac + resp + mayer + walk_o + ib_o + cfg.noise_white * noise_gen.normal();
      hbr(i, c) += 0.5 * (cardiac + resp) + 0.8 * cfg.noise_mayer * mayer_mod *
                       std::sin(kTwoPi * mayer_f * t + mayer_ph + 0.8) +
                   walk_r + ib_r + cfg.noise_white * noise_gen.normal();
    }
  }

  // Express as optical density via the forward model with default optics.
  Recording rec;
  rec.fs = fs;
  const signal::MbllParams mbll = signal::MbllParams::defaults();
  rec.samples.resize(n, 2 * nch);
  for (int c = 0; c < nch; ++c) {
    ChannelMeta meta;
    meta.id = c + 1;
    rec.channels.push_back(meta);
    Eigen::MatrixXd pair(n, 2);
    pair.col(0) = hbo.col(c);
    pair.col(1) = hbr.col(c);
    rec.samples.middleCols(2 * c, 2) =
        signal::mbll_forward(pair, mbll, meta.source_detector_distance_mm / 10.0);
  }
  rec.validate();
  events.validate();
  return {std::move(rec), std::move(events)};
}

}  // namespace fnirs::io
