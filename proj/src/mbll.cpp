#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "fnirs/csv.hpp"
#include "fnirs/signal.hpp"

namespace fnirs::signal {

long snapped_ceil(double x) { return static_cast<long>(std::ceil(x - 1e-9)); }
long snapped_floor(double x) { return static_cast<long>(std::floor(x + 1e-9)); }

MbllParams MbllParams::defaults() {
  MbllParams p;
  // Extinction coefficients at 760/850 nm in 1/(mM*cm).
  p.extinction << 0.586, 1.548,   // 760 nm: HbO, HbR
                  1.058, 0.691;   // 850 nm: HbO, HbR
  p.dpf_lo = 6.0;
  p.dpf_hi = 6.0;
  p.distance_cm = 3.0;
  return p;
}

void MbllParams::validate() const {
  if (!extinction.allFinite()) throw std::invalid_argument("extinction matrix must be finite");
  if (std::abs(extinction.determinant()) <= 1e-12) {
    throw std::invalid_argument("extinction matrix is singular (|det| <= 1e-12)");
  }
  if (!(dpf_lo > 0.0) || !(dpf_hi > 0.0)) throw std::invalid_argument("dpf must be positive");
  if (!(distance_cm > 0.0)) throw std::invalid_argument("distance_cm must be positive");
}

MbllParams load_mbll_config(const std::string& path) {
  const std::string content = csv::read_file(path);
  MbllParams p = MbllParams::defaults();
  std::map<std::string, double*> keys{
      {"epsilon_hbo_lo", &p.extinction(0, 0)}, {"epsilon_hbr_lo", &p.extinction(0, 1)},
      {"epsilon_hbo_hi", &p.extinction(1, 0)}, {"epsilon_hbr_hi", &p.extinction(1, 1)},
      {"dpf_lo", &p.dpf_lo},                   {"dpf_hi", &p.dpf_hi},
      {"distance_cm", &p.distance_cm}};
  std::size_t lineno = 0;
  for (const auto line : csv::split_lines(content)) {
    ++lineno;
    std::string_view s = line;
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty() || s.front() == '#') continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string_view key = s.substr(0, eq);
    std::string_view value = s.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.remove_suffix(1);
    while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
    const auto it = keys.find(std::string(key));
    if (it == keys.end()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" +
                               std::string(key) + "'");
    }
    double v = 0.0;
    if (!csv::parse_double(value, v)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad numeric value '" +
                               std::string(value) + "'");
    }
    *it->second = v;
  }
  p.validate();
  return p;
}

void save_mbll_config(const MbllParams& p, const std::string& path) {
  p.validate();
  std::string out;
  out += "epsilon_hbo_lo = " + csv::format_double(p.extinction(0, 0)) + "\n";
  out += "epsilon_hbr_lo = " + csv::format_double(p.extinction(0, 1)) + "\n";
  out += "epsilon_hbo_hi = " + csv::format_double(p.extinction(1, 0)) + "\n";
  out += "epsilon_hbr_hi = " + csv::format_double(p.extinction(1, 1)) + "\n";
  out += "dpf_lo = " + csv::format_double(p.dpf_lo) + "\n";
  out += "dpf_hi = " + csv::format_double(p.dpf_hi) + "\n";
  out += "distance_cm = " + csv::format_double(p.distance_cm) + "\n";
  csv::write_file_atomic(path, out);
}

std::vector<std::string> stream_names_for(int n_channels) {
  std::vector<std::string> names;
  names.reserve(2 * static_cast<std::size_t>(n_channels));
  for (int c = 1; c <= n_channels; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ch%02d_HbO", c);
    names.emplace_back(buf);
    std::snprintf(buf, sizeof(buf), "ch%02d_HbR", c);
    names.emplace_back(buf);
  }
  return names;
}

namespace {

// Effective 2x2 system matrix for one channel: dOD = M * [HbO, HbR].
Eigen::Matrix2d system_matrix(const MbllParams& p, double distance_cm) {
  Eigen::Matrix2d m;
  m.row(0) = p.extinction.row(0) * distance_cm * p.dpf_lo;
  m.row(1) = p.extinction.row(1) * distance_cm * p.dpf_hi;
  return m;
}

}  // namespace

HemoSeries mbll_convert(const Recording& rec, const MbllParams& p) {
  p.validate();
  rec.validate();
  HemoSeries h;
  h.fs = rec.fs;
  h.stream_names = stream_names_for(rec.n_channels());
  h.streams.resize(rec.samples.rows(), rec.samples.cols());
  for (int c = 0; c < rec.n_channels(); ++c) {
    const double d_cm = rec.channels[static_cast<std::size_t>(c)].source_detector_distance_mm / 10.0;
    const Eigen::Matrix2d m = system_matrix(p, d_cm);
    const Eigen::Matrix2d inv = m.inverse();
    // samples columns (wl1, wl2) -> streams columns (HbO, HbR)
    h.streams.middleCols(2 * c, 2) = rec.samples.middleCols(2 * c, 2) * inv.transpose();
  }
  if (!h.streams.allFinite()) throw std::runtime_error("mbll produced non-finite values");
  return h;
}

Eigen::MatrixXd mbll_forward(const Eigen::MatrixXd& hemo_pair, const MbllParams& p,
                             double distance_cm) {
  p.validate();
  if (hemo_pair.cols() != 2) throw std::invalid_argument("hemo_pair must have 2 columns");
  const Eigen::Matrix2d m = system_matrix(p, distance_cm);
  return hemo_pair * m.transpose();
}

}  // namespace fnirs::signal
