#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "fnirs/rng.hpp"
#include "fnirs/signal.hpp"

using namespace fnirs;
using fnirs::signal::FilterSpec;
using fnirs::signal::MbllParams;

namespace {

Recording recording_from(const Eigen::MatrixXd& samples, double fs, double distance_mm) {
  Recording rec;
  rec.fs = fs;
  const int nch = static_cast<int>(samples.cols() / 2);
  for (int c = 0; c < nch; ++c) {
    ChannelMeta m;
    m.id = c + 1;
    m.source_detector_distance_mm = distance_mm;
    rec.channels.push_back(m);
  }
  rec.samples = samples;
  return rec;
}

MbllParams unit_params(const Eigen::Matrix2d& extinction) {
  MbllParams p = MbllParams::defaults();
  p.extinction = extinction;
  p.dpf_lo = 1.0;
  p.dpf_hi = 1.0;
  p.distance_cm = 1.0;
  return p;
}

}  // namespace

TEST_CASE("snapped index conversions resist representation error") {
  CHECK(signal::snapped_ceil(10.0 * 13.3) == 133);    // product lands at 133.000000000000028
  CHECK(signal::snapped_floor(25.0 * 13.3) == 332);   // 332.4999999...
  CHECK(signal::snapped_ceil(-5.0 * 13.3) == -66);    // -66.4999999...
  CHECK(signal::snapped_ceil(-1.0 * 13.3) == -13);
  CHECK(signal::snapped_floor(-5.0 * 10.0) == -50);
  CHECK(signal::snapped_ceil(-5.0 * 10.0) == -50);
}

TEST_CASE("zero optical density maps to zero concentrations") {
  Eigen::MatrixXd samples = Eigen::MatrixXd::Zero(4, 2);
  Recording rec = recording_from(samples, 10.0, 30.0);
  HemoSeries h = signal::mbll_convert(rec, MbllParams::defaults());
  CHECK(h.streams.cwiseAbs().maxCoeff() == 0.0);
  CHECK(h.stream_names[0] == "ch01_HbO");
  CHECK(h.stream_names[1] == "ch01_HbR");
}

TEST_CASE("identity extinction at unit pathlength passes values through") {
  Eigen::MatrixXd samples(2, 2);
  samples << 0.25, -0.5, 1.0, 2.0;
  Recording rec = recording_from(samples, 10.0, 10.0);  // 1 cm
  HemoSeries h = signal::mbll_convert(rec, unit_params(Eigen::Matrix2d::Identity()));
  CHECK((h.streams - samples).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("two-by-two extinction solve matches the closed form") {
  Eigen::Matrix2d eps;
  eps << 1.0, 2.0, 3.0, 4.0;
  Eigen::MatrixXd samples(1, 2);
  samples << 1.0, 1.0;
  Recording rec = recording_from(samples, 10.0, 10.0);
  HemoSeries h = signal::mbll_convert(rec, unit_params(eps));
  CHECK(h.streams(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(h.streams(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conversion inverts the forward optical model") {
  MbllParams p = MbllParams::defaults();
  rng::Xoshiro256pp gen(21);
  Eigen::MatrixXd hemo(200, 2);
  for (Eigen::Index r = 0; r < hemo.rows(); ++r) {
    hemo(r, 0) = 0.05 * gen.normal();
    hemo(r, 1) = 0.05 * gen.normal();
  }
  Eigen::MatrixXd od = signal::mbll_forward(hemo, p, 3.0);
  Recording rec = recording_from(od, 10.0, 30.0);
  HemoSeries back = signal::mbll_convert(rec, p);
  CHECK((back.streams - hemo).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("singular extinction matrices are rejected") {
  Eigen::Matrix2d eps;
  eps << 1.0, 2.0, 2.0, 4.0;
  MbllParams p = unit_params(eps);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("mbll config round-trips and rejects unknown keys") {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("fnirs_sig_cfg_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "mbll.cfg").string();

  MbllParams p = MbllParams::defaults();
  p.extinction(0, 0) = 0.7;
  p.dpf_hi = 5.5;
  signal::save_mbll_config(p, path);
  MbllParams back = signal::load_mbll_config(path);
  CHECK(back.extinction(0, 0) == 0.7);
  CHECK(back.dpf_hi == 5.5);
  CHECK(back.distance_cm == 3.0);

  {
    std::ofstream out(path);
    out << "epsilon_hbo_lo = 0.6\nbanana = 1\n";
  }
  CHECK_THROWS_WITH_AS(signal::load_mbll_config(path), doctest::Contains("unknown key"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bandpass design hits the textbook magnitude landmarks") {
  const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, 13.3);
  REQUIRE(spec.sections.size() == 3);

  const double h_dc = std::abs(signal::filter_response(spec, 0.0));
  const double h_nyq = std::abs(signal::filter_response(spec, 13.3 / 2.0));
  const double h_center = std::abs(signal::filter_response(spec, std::sqrt(0.01 * 0.09)));
  const double h_lo = std::abs(signal::filter_response(spec, 0.01));
  const double h_hi = std::abs(signal::filter_response(spec, 0.09));
  CHECK(h_dc < 1e-6);
  CHECK(h_nyq < 1e-6);
  CHECK(h_center >= 0.707);
  CHECK(h_center <= 1.0 + 1e-12);
  const double edge = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(h_lo - edge) / edge < 0.02);
  CHECK(std::abs(h_hi - edge) / edge < 0.02);
  // The warped-design band edges land on -3 dB almost exactly.
  CHECK(h_lo == doctest::Approx(edge).epsilon(1e-9));
  CHECK(h_hi == doctest::Approx(edge).epsilon(1e-9));
}

TEST_CASE("designed sections are all stable") {
  for (double fs : {10.0, 13.3, 100.0}) {
    const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, fs);
    for (const auto& s : spec.sections) {
      const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2));
      const std::complex<double> r1 = (-s.a1 + disc) / 2.0;
      const std::complex<double> r2 = (-s.a1 - disc) / 2.0;
      CHECK(std::abs(r1) < 1.0);
      CHECK(std::abs(r2) < 1.0);
    }
  }
}

TEST_CASE("invalid band edges are rejected") {
  CHECK_THROWS_AS(signal::design_butterworth_bandpass(3, 0.09, 0.01, 13.3),
                  std::invalid_argument);
  CHECK_THROWS_AS(signal::design_butterworth_bandpass(3, 0.0, 0.09, 13.3),
                  std::invalid_argument);
  CHECK_THROWS_AS(signal::design_butterworth_bandpass(3, 0.01, 7.0, 13.3),
                  std::invalid_argument);
}

TEST_CASE("zero-phase filter rejects constants") {
  const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, 13.3);
  const double c = 4.2;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(800, c);
  Eigen::VectorXd y = signal::filtfilt(spec, x);
  CHECK(y.size() == x.size());
  CHECK(y.cwiseAbs().maxCoeff() < 1e-3 * std::abs(c));
}

TEST_CASE("zero-phase filtering commutes with time reversal") {
  const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, 13.3);
  rng::Xoshiro256pp gen(3);
  Eigen::VectorXd x(1200);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = gen.normal();
  Eigen::VectorXd y = signal::filtfilt(spec, x);
  Eigen::VectorXd yr = signal::filtfilt(spec, x.reverse());
  CHECK((yr - y.reverse()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("zero-phase filtering is linear") {
  const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, 13.3);
  rng::Xoshiro256pp gen(4);
  Eigen::VectorXd x(600), z(600);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x(i) = gen.normal();
    z(i) = gen.normal();
  }
  const double a = 1.7, b = -0.3;
  Eigen::VectorXd lhs = signal::filtfilt(spec, a * x + b * z);
  Eigen::VectorXd rhs = a * signal::filtfilt(spec, x) + b * signal::filtfilt(spec, z);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("in-band sine passes at close to unit amplitude") {
  const double fs = 13.3;
  const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, fs);
  const long n = static_cast<long>(2000.0 * fs);
  Eigen::VectorXd x(n);
  for (long i = 0; i < n; ++i) {
    x(i) = std::sin(2.0 * M_PI * 0.03 * static_cast<double>(i) / fs);
  }
  Eigen::VectorXd y = signal::filtfilt(spec, x);
  const long q0 = n / 4;
  const double peak = y.segment(q0, n / 2).cwiseAbs().maxCoeff();
  CHECK(peak > 0.9);
  CHECK(peak < 1.1);
}

TEST_CASE("series shorter than the padding requirement are rejected") {
  const FilterSpec spec = signal::design_butterworth_bandpass(3, 0.01, 0.09, 13.3);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(18);
  CHECK_THROWS_WITH_AS(signal::filtfilt(spec, x), doctest::Contains("too short"),
                       std::invalid_argument);
}

TEST_CASE("epoch sample counts follow the index convention") {
  const double fs = 13.3;
  HemoSeries h;
  h.fs = fs;
  h.stream_names = {"ch01_HbO", "ch01_HbR"};
  h.streams = Eigen::MatrixXd::Zero(1500, 2);
  EventList ev;
  ev.events.push_back({40.0, Label::MA});
  EpochSet es = signal::segment_epochs(h, ev, {-5.0, 25.0});
  CHECK(es.n_samples() == 399);

  HemoSeries h10 = h;
  h10.fs = 10.0;
  EpochSet es10 = signal::segment_epochs(h10, ev, {-5.0, 25.0});
  CHECK(es10.n_samples() == 301);
}

TEST_CASE("epochs are exact slices of the series") {
  const double fs = 10.0;
  HemoSeries h;
  h.fs = fs;
  h.stream_names = {"ch01_HbO", "ch01_HbR"};
  h.streams.resize(900, 2);
  for (Eigen::Index i = 0; i < h.streams.rows(); ++i) {
    h.streams(i, 0) = static_cast<double>(i);
    h.streams(i, 1) = -static_cast<double>(i);
  }
  EventList ev;
  ev.events.push_back({30.0, Label::MI});
  EpochSet es = signal::segment_epochs(h, ev, {-5.0, 25.0});
  const long onset = 300;
  const long k_lo = -50;
  for (Eigen::Index k = 0; k < es.n_samples(); ++k) {
    CHECK(es.data[0](0, k) == h.streams(onset + k_lo + k, 0));
    CHECK(es.data[0](1, k) == h.streams(onset + k_lo + k, 1));
  }
}

TEST_CASE("epoch windows outside the recording name the trial") {
  HemoSeries h;
  h.fs = 13.3;
  h.stream_names = {"ch01_HbO", "ch01_HbR"};
  h.streams = Eigen::MatrixXd::Zero(1500, 2);
  EventList ev;
  ev.events.push_back({2.0, Label::MA});
  CHECK_THROWS_WITH_AS(signal::segment_epochs(h, ev, {-5.0, 25.0}),
                       doctest::Contains("trial 0"), std::runtime_error);
}

TEST_CASE("baseline correction zeroes constant epochs") {
  EpochSet es;
  es.fs = 13.3;
  es.window_s = {-5.0, 25.0};
  es.stream_names = {"ch01_HbO"};
  es.labels = {Label::IS};
  es.data.push_back(Eigen::MatrixXd::Constant(1, 399, 3.25));
  EpochSet out = signal::baseline_correct(es);
  CHECK(out.data[0].cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("baseline correction leaves zero-reference epochs unchanged") {
  EpochSet es;
  es.fs = 13.3;
  es.window_s = {-5.0, 25.0};
  es.stream_names = {"ch01_HbO"};
  es.labels = {Label::MA};
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(1, 399);
  for (Eigen::Index k = 150; k < 250; ++k) m(0, k) = 5.0;  // zero over [-1, 0)
  es.data.push_back(m);
  EpochSet out = signal::baseline_correct(es);
  CHECK((out.data[0] - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("baseline subtracts the mean of the thirteen reference samples") {
  EpochSet es;
  es.fs = 13.3;
  es.window_s = {-5.0, 25.0};
  es.stream_names = {"ch01_HbO"};
  es.labels = {Label::MI};
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(1, 399);
  for (long k = -13; k <= -1; ++k) m(0, k + 66) = 0.1 * static_cast<double>(k);
  es.data.push_back(m);
  EpochSet out = signal::baseline_correct(es);
  // Reference mean is -0.7, so samples outside the ramp move up by 0.7.
  CHECK(out.data[0](0, 200) == doctest::Approx(0.7).epsilon(1e-12));
  const double ref_mean = out.data[0].block(0, -13 + 66, 1, 13).mean();
  CHECK(std::abs(ref_mean) < 1e-12);
}

TEST_CASE("baseline correction requires a pre-onset window") {
  EpochSet es;
  es.fs = 10.0;
  es.window_s = {0.0, 25.0};
  es.stream_names = {"ch01_HbO"};
  es.labels = {Label::MA};
  es.data.push_back(Eigen::MatrixXd::Zero(1, 251));
  CHECK_THROWS_WITH_AS(signal::baseline_correct(es), doctest::Contains("reference window"),
                       std::invalid_argument);
}
