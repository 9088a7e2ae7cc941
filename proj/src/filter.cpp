#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "fnirs/signal.hpp"

namespace fnirs::signal {

namespace {

using cplx = std::complex<double>;

constexpr double kPi = 3.14159265358979323846264338327950288;

// One pass of the section cascade (transposed direct form II), each section
// started from its step-response steady state scaled by the first sample.
void sosfilt_inplace(const std::vector<SecondOrderSection>& sections, Eigen::VectorXd& x) {
  for (const auto& s : sections) {
    const double h1 = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double x0 = x(0);
    double s1 = (h1 - s.b0) * x0;
    double s2 = (s.b2 - s.a2 * h1) * x0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double xi = x(i);
      const double yi = s.b0 * xi + s1;
      s1 = s.b1 * xi - s.a1 * yi + s2;
      s2 = s.b2 * xi - s.a2 * yi;
      x(i) = yi;
    }
  }
}

}  // namespace

FilterSpec design_butterworth_bandpass(int order, double f_lo, double f_hi, double fs) {
  if (order < 1) throw std::invalid_argument("filter order must be >= 1");
  if (!(0.0 < f_lo) || !(f_lo < f_hi) || !(f_hi < fs / 2.0)) {
    throw std::invalid_argument("invalid band edges: need 0 < f_lo < f_hi < fs/2");
  }

  // Pre-warped analog edge frequencies (rad/s) for the bilinear transform.
  const double w_lo = 2.0 * fs * std::tan(kPi * f_lo / fs);
  const double w_hi = 2.0 * fs * std::tan(kPi * f_hi / fs);
  const double w0 = std::sqrt(w_lo * w_hi);
  const double bw = w_hi - w_lo;

  // Low-pass prototype poles on the unit circle, left half plane; the band
  // transform s -> (s^2 + w0^2)/(bw*s) maps each to a quadratic pair.
  std::vector<cplx> zpoles;
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2.0 * k + order - 1.0) / (2.0 * order);
    const cplx proto(std::cos(theta), std::sin(theta));
    const cplx bp = bw * proto;
    const cplx disc = std::sqrt(bp * bp - 4.0 * w0 * w0);
    for (const cplx s : {(bp + disc) / 2.0, (bp - disc) / 2.0}) {
      zpoles.push_back((2.0 * fs + s) / (2.0 * fs - s));  // bilinear map
    }
  }

  // Group into conjugate-pair (or real-pair) denominators. Numerators carry
  // the 2*order digital zeros, one (z-1)(z+1) = z^2 - 1 per section.
  std::vector<cplx> upper;
  std::vector<double> reals;
  for (const cplx z : zpoles) {
    if (std::abs(z.imag()) <= 1e-10 * std::max(1.0, std::abs(z.real()))) {
      reals.push_back(z.real());
    } else if (z.imag() > 0.0) {
      upper.push_back(z);
    }
  }
  std::sort(reals.begin(), reals.end());
  std::sort(upper.begin(), upper.end(),
            [](const cplx& a, const cplx& b) { return a.real() < b.real(); });

  FilterSpec spec;
  spec.fs = fs;
  spec.order = order;
  spec.f_lo = f_lo;
  spec.f_hi = f_hi;
  for (const cplx z : upper) {
    SecondOrderSection s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    spec.sections.push_back(s);
  }
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    SecondOrderSection s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -(reals[i] + reals[i + 1]);
    s.a2 = reals[i] * reals[i + 1];
    spec.sections.push_back(s);
  }
  if (spec.sections.size() != static_cast<std::size_t>(order)) {
    throw std::logic_error("bandpass design produced unexpected section count");
  }

  for (const auto& s : spec.sections) {
    // Roots of z^2 + a1 z + a2 must lie strictly inside the unit circle.
    const cplx d = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    const double r1 = std::abs((-s.a1 + d) / 2.0);
    const double r2 = std::abs((-s.a1 - d) / 2.0);
    if (r1 >= 1.0 || r2 >= 1.0) throw std::logic_error("bandpass design produced unstable section");
  }

  // Normalize so the digital band center has unit gain, splitting the scale
  // evenly across sections to keep coefficients well-conditioned.
  const double w0_digital_hz = 2.0 * std::atan(w0 / (2.0 * fs)) * fs / (2.0 * kPi);
  const double raw_gain = std::abs(filter_response(spec, w0_digital_hz));
  if (!(raw_gain > 0.0) || !std::isfinite(raw_gain)) {
    throw std::logic_error("bandpass design produced degenerate center gain");
  }
  const double per_section = std::pow(1.0 / raw_gain, 1.0 / static_cast<double>(order));
  for (auto& s : spec.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return spec;
}

Eigen::VectorXd sosfilt(const FilterSpec& spec, const Eigen::VectorXd& x) {
  if (x.size() == 0) throw std::invalid_argument("sosfilt input must be non-empty");
  if (!x.allFinite()) throw std::invalid_argument("sosfilt input must be finite");
  Eigen::VectorXd y = x;
  sosfilt_inplace(spec.sections, y);
  return y;
}

std::complex<double> filter_response(const FilterSpec& spec, double f_hz) {
  const double w = 2.0 * kPi * f_hz / spec.fs;
  const cplx zinv = std::exp(cplx(0.0, -w));
  const cplx zinv2 = zinv * zinv;
  cplx h(1.0, 0.0);
  for (const auto& s : spec.sections) {
    h *= (s.b0 + s.b1 * zinv + s.b2 * zinv2) / (1.0 + s.a1 * zinv + s.a2 * zinv2);
  }
  return h;
}

Eigen::VectorXd filtfilt(const FilterSpec& spec, const Eigen::VectorXd& x) {
  const Eigen::Index padlen = 3 * (2 * static_cast<Eigen::Index>(spec.order));
  if (x.size() <= padlen) {
    throw std::invalid_argument("series too short for padding: need more than " +
                                std::to_string(padlen) + " samples, got " +
                                std::to_string(x.size()));
  }
  if (!x.allFinite()) throw std::invalid_argument("filtfilt input must be finite");

  const Eigen::Index n = x.size();
  Eigen::VectorXd ext(n + 2 * padlen);
  for (Eigen::Index i = 0; i < padlen; ++i) ext(i) = 2.0 * x(0) - x(padlen - i);
  ext.segment(padlen, n) = x;
  for (Eigen::Index i = 0; i < padlen; ++i) ext(n + padlen + i) = 2.0 * x(n - 1) - x(n - 2 - i);

  // Forward-backward and backward-forward passes; their average is exactly
  // equivariant under time reversal, which a single ordering is not.
  Eigen::VectorXd fb = ext;
  sosfilt_inplace(spec.sections, fb);
  fb.reverseInPlace();
  sosfilt_inplace(spec.sections, fb);
  fb.reverseInPlace();

  Eigen::VectorXd bf = ext;
  bf.reverseInPlace();
  sosfilt_inplace(spec.sections, bf);
  bf.reverseInPlace();
  sosfilt_inplace(spec.sections, bf);

  return 0.5 * (fb.segment(padlen, n) + bf.segment(padlen, n));
}

Eigen::MatrixXd filtfilt_columns(const FilterSpec& spec, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    y.col(c) = filtfilt(spec, x.col(c));
  }
  return y;
}

}  // namespace fnirs::signal
