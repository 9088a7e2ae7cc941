#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fnirs/features.hpp"
#include "fnirs/rng.hpp"
#include "fnirs/signal.hpp"

using namespace fnirs;
using feat::FeatureMatrix;
using feat::FeatureSet;
using feat::WindowSpec;

namespace {

EpochSet make_epochs(int n_trials, int n_channels, Eigen::Index n_samples, double fs,
                     std::pair<double, double> window = {-5.0, 25.0}) {
  EpochSet es;
  es.fs = fs;
  es.window_s = window;
  es.stream_names = signal::stream_names_for(n_channels);
  rng::Xoshiro256pp gen(17);
  for (int tr = 0; tr < n_trials; ++tr) {
    Eigen::MatrixXd m(es.n_streams(), n_samples);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = gen.normal();
    }
    es.data.push_back(m);
    es.labels.push_back(static_cast<Label>(tr % 3));
  }
  return es;
}

}  // namespace

TEST_CASE("sliding window arithmetic at the native rate") {
  WindowSpec w;
  const auto layout = feat::sliding_windows(399, w, 13.3);
  CHECK(layout.length == 26);
  CHECK(layout.hop == 13);
  CHECK(layout.starts.size() == 29);
  for (std::size_t i = 0; i < layout.starts.size(); ++i) {
    CHECK(layout.starts[i] == static_cast<Eigen::Index>(i) * layout.hop);
  }
  CHECK(layout.starts.back() + layout.length <= 399);
}

TEST_CASE("single and non-overlapping window layouts") {
  WindowSpec w;
  w.length_s = 2.0;
  w.overlap_frac = 0.5;
  const auto one = feat::sliding_windows(20, w, 10.0);
  CHECK(one.length == 20);
  CHECK(one.starts.size() == 1);

  w.overlap_frac = 0.0;
  const auto four = feat::sliding_windows(80, w, 10.0);
  CHECK(four.length == 20);
  CHECK(four.hop == 20);
  CHECK(four.starts.size() == 4);

  CHECK_THROWS_AS(feat::sliding_windows(10, w, 10.0), std::invalid_argument);
}

TEST_CASE("window statistics match hand-computed moments") {
  Eigen::VectorXd constant = Eigen::VectorXd::Constant(8, 2.0);
  auto s = feat::stat_features(constant);
  CHECK(s[0] == 2.0);
  CHECK(s[1] == 2.0);
  CHECK(s[2] == 0.0);
  CHECK(s[3] == 0.0);

  Eigen::VectorXd pair(2);
  pair << -1.0, 1.0;
  s = feat::stat_features(pair);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 1.0);
  CHECK(s[2] == 0.0);
  CHECK(s[3] == doctest::Approx(-2.0).epsilon(1e-12));

  Eigen::VectorXd spike(4);
  spike << 0.0, 0.0, 0.0, 4.0;
  s = feat::stat_features(spike);
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s[1] == 4.0);
  CHECK(s[2] == doctest::Approx(2.0 / std::sqrt(3.0)).epsilon(1e-12));
  CHECK(s[3] == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("statistics are translation covariant except the peak") {
  rng::Xoshiro256pp gen(5);
  Eigen::VectorXd x(26);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = gen.normal();
  const auto base = feat::stat_features(x);
  const double shift = 3.7;
  const auto moved = feat::stat_features(x.array() + shift);
  CHECK(moved[0] == doctest::Approx(base[0] + shift).epsilon(1e-12));
  CHECK(moved[2] == doctest::Approx(base[2]).epsilon(1e-9));
  CHECK(moved[3] == doctest::Approx(base[3]).epsilon(1e-9));
}

TEST_CASE("band power separates in-band from out-of-band sines") {
  const double fs = 13.3;
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(26);
  CHECK(feat::band_power(zero, {1.0, 3.0}, fs) == 0.0);

  Eigen::VectorXd sine(26);
  for (Eigen::Index j = 0; j < sine.size(); ++j) {
    sine(j) = std::sin(2.0 * M_PI * 2.0 * static_cast<double>(j) / fs);
  }
  const double low = feat::band_power(sine, {1.0, 3.0}, fs);
  const double high = feat::band_power(sine, {4.0, 6.0}, fs);
  CHECK(low > 10.0 * high);
}

TEST_CASE("band sums never exceed the total spectrum") {
  rng::Xoshiro256pp gen(6);
  Eigen::VectorXd x(26);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = gen.normal();
  const double fs = 13.3;
  const double b1 = feat::band_power(x, {1.0, 3.0}, fs);
  const double b2 = feat::band_power(x, {4.0, 6.0}, fs);
  const double total = feat::band_power(x, {0.0, fs / 2.0}, fs);
  CHECK(b1 + b2 <= total + 1e-12);
}

TEST_CASE("band power scales quadratically with amplitude") {
  rng::Xoshiro256pp gen(7);
  Eigen::VectorXd x(26);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = gen.normal();
  const double alpha = 2.5;
  const double base = feat::band_power(x, {1.0, 3.0}, 13.3);
  const double scaled = feat::band_power(alpha * x, {1.0, 3.0}, 13.3);
  CHECK(scaled == doctest::Approx(alpha * alpha * base).epsilon(1e-12));
}

TEST_CASE("band edges must respect the Nyquist limit") {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(26);
  CHECK_THROWS_AS(feat::band_power(x, {4.0, 7.0}, 13.3), std::invalid_argument);
}

TEST_CASE("temporal means produce sixty-four named columns") {
  EpochSet es = make_epochs(3, 16, 399, 13.3);
  FeatureMatrix fm = feat::temporal_mean_features(es);
  CHECK(fm.n_features() == 64);
  CHECK(fm.names[0] == "ch01_HbO_w1");
  CHECK(fm.names[1] == "ch01_HbO_w2");
  CHECK(fm.names[2] == "ch01_HbR_w1");
  CHECK(fm.names.back() == "ch16_HbR_w2");
}

TEST_CASE("temporal means of a unit epoch are one") {
  EpochSet es = make_epochs(2, 2, 399, 13.3);
  for (auto& m : es.data) m.setOnes();
  FeatureMatrix fm = feat::temporal_mean_features(es);
  CHECK((fm.values.array() - 1.0).abs().maxCoeff() == 0.0);
}

TEST_CASE("temporal means of a time ramp sit at the window centers") {
  const double fs = 13.3;
  EpochSet es = make_epochs(1, 1, 399, fs);
  const long k_lo = -66;
  for (Eigen::Index j = 0; j < es.data[0].cols(); ++j) {
    const double t = static_cast<double>(k_lo + j) / fs;
    es.data[0](0, j) = t;
    es.data[0](1, j) = t;
  }
  FeatureMatrix fm = feat::temporal_mean_features(es);
  CHECK(std::abs(fm.values(0, 0) - 7.5) < 1.0 / fs);
  CHECK(std::abs(fm.values(0, 1) - 12.5) < 1.0 / fs);
}

TEST_CASE("temporal means require the five to fifteen second span") {
  EpochSet es = make_epochs(1, 1, 100, 13.3, {-1.0, 6.0});
  CHECK_THROWS_AS(feat::temporal_mean_features(es), std::invalid_argument);
}

TEST_CASE("assembled matrices have the documented column counts") {
  EpochSet es = make_epochs(2, 16, 399, 13.3);
  CHECK(feat::assemble_feature_matrix(es, FeatureSet::kStats).n_features() == 3712);
  CHECK(feat::assemble_feature_matrix(es, FeatureSet::kBandPower).n_features() == 1856);
  FeatureMatrix u = feat::assemble_feature_matrix(es, FeatureSet::kUnion);
  CHECK(u.n_features() == 3712 + 1856 + 64);
  std::set<std::string> unique(u.names.begin(), u.names.end());
  CHECK(unique.size() == u.names.size());
}

TEST_CASE("feature names recover stream, window, and kind") {
  EpochSet es = make_epochs(1, 2, 399, 13.3);
  FeatureMatrix fm = feat::assemble_feature_matrix(es, FeatureSet::kStats);
  CHECK(fm.names[0] == "ch01_HbO_win00_mean");
  CHECK(fm.names[1] == "ch01_HbO_win00_peak");
  CHECK(fm.names[2] == "ch01_HbO_win00_skew");
  CHECK(fm.names[3] == "ch01_HbO_win00_kurt");
  CHECK(fm.names[4] == "ch01_HbO_win01_mean");
  FeatureMatrix bp = feat::assemble_feature_matrix(es, FeatureSet::kBandPower);
  CHECK(bp.names[0] == "ch01_HbO_win00_bp1to3");
  CHECK(bp.names[1] == "ch01_HbO_win00_bp4to6");
}

TEST_CASE("feature matrices round-trip through their file form") {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("fnirs_feat_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "features.csv").string();

  EpochSet es = make_epochs(3, 2, 399, 13.3);
  FeatureMatrix fm = feat::assemble_feature_matrix(es, FeatureSet::kTemporalMean);
  feat::save_feature_matrix(fm, path);
  FeatureMatrix back = feat::load_feature_matrix(path);
  CHECK(back.names == fm.names);
  CHECK(back.labels == fm.labels);
  CHECK((back.values - fm.values).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}
