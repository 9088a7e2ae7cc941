#include "fnirs/io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string_view>

#include "fnirs/csv.hpp"

namespace fnirs::io {

namespace {

std::string channel_column(int id, int wavelength_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ch%02d_wl%d", id, wavelength_index);
  return buf;
}

// Numeric cell: any parseable finite spelling is accepted, so files written
// by other tools (fixed precision, exponents) load unchanged. Byte-exact
// round-trips are the writer's job: save_* emits shortest-form numbers.
double parse_cell(std::string_view token, std::size_t row, const std::string& column) {
  double v = 0.0;
  const std::string where = "data row " + std::to_string(row) + ", column " + column;
  if (!csv::parse_double(token, v)) {
    throw std::runtime_error(where + ": non-numeric cell '" + std::string(token) + "'");
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error(where + ": non-finite value '" + std::string(token) + "'");
  }
  return v;
}

std::filesystem::path sidecar_path(const std::string& recording_path) {
  std::filesystem::path p(recording_path);
  p.replace_extension(".channels.csv");
  return p;
}

std::vector<ChannelMeta> load_channel_sidecar(const std::string& path, int n_channels) {
  const std::string content = csv::read_file(path);
  const auto lines = csv::split_lines(content);
  if (lines.empty() || lines[0] != "id,wl_lo_nm,wl_hi_nm,distance_mm") {
    throw std::runtime_error("channel sidecar " + path +
                             ": malformed header (want id,wl_lo_nm,wl_hi_nm,distance_mm)");
  }
  if (lines.size() != static_cast<std::size_t>(n_channels) + 1) {
    throw std::runtime_error("channel sidecar " + path + ": expected " +
                             std::to_string(n_channels) + " rows, found " +
                             std::to_string(lines.size() - 1));
  }
  std::vector<ChannelMeta> metas;
  for (int i = 0; i < n_channels; ++i) {
    const auto fields = csv::split_fields(lines[static_cast<std::size_t>(i) + 1]);
    if (fields.size() != 4) {
      throw std::runtime_error("channel sidecar row " + std::to_string(i + 1) +
                               ": expected 4 fields");
    }
    ChannelMeta m;
    double id = 0.0;
    if (!csv::parse_double(fields[0], id) || id != i + 1) {
      throw std::runtime_error("channel sidecar row " + std::to_string(i + 1) +
                               ": ids must be 1-based and consecutive");
    }
    m.id = i + 1;
    std::size_t row = static_cast<std::size_t>(i + 1);
    m.wavelength_lo_nm = parse_cell(fields[1], row, "wl_lo_nm");
    m.wavelength_hi_nm = parse_cell(fields[2], row, "wl_hi_nm");
    m.source_detector_distance_mm = parse_cell(fields[3], row, "distance_mm");
    metas.push_back(m);
  }
  return metas;
}

}  // namespace

Recording load_recording(const std::string& path, std::optional<double> fs_override) {
  const std::string content = csv::read_file(path);
  const auto lines = csv::split_lines(content);
  if (lines.empty()) throw std::runtime_error(path + ": empty file");

  const auto header = csv::split_fields(lines[0]);
  if (header.empty() || header[0] != "t") {
    throw std::runtime_error(path + ": malformed header (first column must be 't')");
  }
  if (header.size() < 3 || (header.size() - 1) % 2 != 0) {
    throw std::runtime_error(path + ": malformed header (need wl1/wl2 column pairs)");
  }
  const int n_channels = static_cast<int>((header.size() - 1) / 2);
  for (int c = 0; c < n_channels; ++c) {
    const std::string want1 = channel_column(c + 1, 1);
    const std::string want2 = channel_column(c + 1, 2);
    if (header[1 + 2 * static_cast<std::size_t>(c)] != want1 ||
        header[2 + 2 * static_cast<std::size_t>(c)] != want2) {
      throw std::runtime_error(path + ": malformed header (expected columns " + want1 + "," +
                               want2 + " for channel " + std::to_string(c + 1) + ")");
    }
  }

  const std::size_t n_rows = lines.size() - 1;
  if (n_rows < 2) throw std::runtime_error(path + ": need at least 2 sample rows to infer fs");

  Eigen::VectorXd t(static_cast<Eigen::Index>(n_rows));
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(n_rows), 2 * n_channels);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto fields = csv::split_fields(lines[r + 1]);
    if (fields.size() != header.size()) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) + " has " +
                               std::to_string(fields.size()) + " fields, header has " +
                               std::to_string(header.size()));
    }
    t(static_cast<Eigen::Index>(r)) = parse_cell(fields[0], r + 1, "t");
    for (std::size_t c = 1; c < fields.size(); ++c) {
      samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
          parse_cell(fields[c], r + 1, std::string(header[c]));
    }
  }

  const double span = t(t.size() - 1) - t(0);
  if (!(span > 0.0)) throw std::runtime_error(path + ": timestamps must increase");
  const double dt = span / static_cast<double>(n_rows - 1);
  for (std::size_t r = 0; r + 1 < n_rows; ++r) {
    const double step = t(static_cast<Eigen::Index>(r) + 1) - t(static_cast<Eigen::Index>(r));
    if (std::abs(step - dt) > 1e-6) {
      throw std::runtime_error(path + ": non-uniform timestamps at data row " +
                               std::to_string(r + 2) + " (step " + csv::format_double(step) +
                               ", expected " + csv::format_double(dt) + ")");
    }
  }
  double fs = 1.0 / dt;
  if (fs_override) {
    if (std::abs(*fs_override - fs) / fs > 1e-3) {
      throw std::runtime_error(path + ": fs override " + csv::format_double(*fs_override) +
                               " disagrees with inferred " + csv::format_double(fs) +
                               " by more than 0.1%");
    }
    fs = *fs_override;
  }

  Recording rec;
  rec.fs = fs;
  const auto sidecar = sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    rec.channels = load_channel_sidecar(sidecar.string(), n_channels);
  } else {
    for (int c = 0; c < n_channels; ++c) {
      ChannelMeta m;
      m.id = c + 1;
      rec.channels.push_back(m);
    }
  }
  rec.samples = std::move(samples);
  rec.validate();
  return rec;
}

void save_recording(const Recording& rec, const std::string& path) {
  rec.validate();
  std::string out = "t";
  for (int c = 0; c < rec.n_channels(); ++c) {
    out += "," + channel_column(c + 1, 1) + "," + channel_column(c + 1, 2);
  }
  out += "\n";
  for (Eigen::Index r = 0; r < rec.samples.rows(); ++r) {
    out += csv::format_double(static_cast<double>(r) / rec.fs);
    for (Eigen::Index c = 0; c < rec.samples.cols(); ++c) {
      out += ",";
      out += csv::format_double(rec.samples(r, c));
    }
    out += "\n";
  }
  csv::write_file_atomic(path, out);

  std::string side = "id,wl_lo_nm,wl_hi_nm,distance_mm\n";
  for (const auto& ch : rec.channels) {
    side += std::to_string(ch.id) + "," + csv::format_double(ch.wavelength_lo_nm) + "," +
            csv::format_double(ch.wavelength_hi_nm) + "," +
            csv::format_double(ch.source_detector_distance_mm) + "\n";
  }
  csv::write_file_atomic(sidecar_path(path).string(), side);
}

EventList load_events(const std::string& path) {
  const std::string content = csv::read_file(path);
  const auto lines = csv::split_lines(content);
  if (lines.empty() || lines[0] != "onset_s,label") {
    throw std::runtime_error(path + ": malformed header (want onset_s,label)");
  }
  EventList ev;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = csv::split_fields(lines[r]);
    if (fields.size() != 2) {
      throw std::runtime_error(path + ": data row " + std::to_string(r) + ": expected 2 fields");
    }
    Event e;
    e.onset_s = parse_cell(fields[0], r, "onset_s");
    e.label = label_from_string(std::string(fields[1]));
    if (!ev.events.empty() && !(e.onset_s > ev.events.back().onset_s)) {
      throw std::runtime_error(path + ": data row " + std::to_string(r) +
                               ": onsets must be strictly increasing");
    }
    ev.events.push_back(e);
  }
  ev.validate();
  return ev;
}

void save_events(const EventList& ev, const std::string& path) {
  ev.validate();
  std::string out = "onset_s,label\n";
  for (const auto& e : ev.events) {
    out += csv::format_double(e.onset_s) + "," + label_to_string(e.label) + "\n";
  }
  csv::write_file_atomic(path, out);
}

namespace {

constexpr std::string_view kEpochsMagic = "# fnirsbci-epochs";
constexpr std::string_view kEpochsVersion = "v1";

std::string epochs_metadata_line(const EpochSet& es) {
  std::string line(kEpochsMagic);
  line += " ";
  line += kEpochsVersion;
  line += " fs=" + csv::format_double(es.fs);
  line += " window=" + csv::format_double(es.window_s.first) + "," +
          csv::format_double(es.window_s.second);
  line += " n_samples=" + std::to_string(es.n_samples());
  line += " streams=";
  for (std::size_t i = 0; i < es.stream_names.size(); ++i) {
    if (i > 0) line += ";";
    line += es.stream_names[i];
  }
  return line;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.emplace_back(s.substr(start));
      break;
    }
    parts.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

}  // namespace

void save_epochs(const EpochSet& es, const std::string& path) {
  es.validate();
  std::string out = epochs_metadata_line(es);
  out += "\ntrial,label,stream";
  for (Eigen::Index s = 0; s < es.n_samples(); ++s) {
    out += ",s" + std::to_string(s);
  }
  out += "\n";
  for (int tr = 0; tr < es.n_trials(); ++tr) {
    for (int st = 0; st < es.n_streams(); ++st) {
      out += std::to_string(tr) + "," + label_to_string(es.labels[static_cast<std::size_t>(tr)]) +
             "," + es.stream_names[static_cast<std::size_t>(st)];
      for (Eigen::Index s = 0; s < es.n_samples(); ++s) {
        out += ",";
        out += csv::format_double(es.data[static_cast<std::size_t>(tr)](st, s));
      }
      out += "\n";
    }
  }
  csv::write_file_atomic(path, out);
}

EpochSet load_epochs(const std::string& path) {
  const std::string content = csv::read_file(path);
  const auto lines = csv::split_lines(content);
  if (lines.empty() || lines[0].substr(0, kEpochsMagic.size()) != kEpochsMagic) {
    throw std::runtime_error(path + ": missing '" + std::string(kEpochsMagic) +
                             "' metadata line");
  }

  EpochSet es;
  Eigen::Index n_samples = -1;
  {
    const auto tokens = split_on(lines[0], ' ');
    if (tokens.size() != 7) throw std::runtime_error(path + ": malformed metadata line");
    if (tokens[2] != kEpochsVersion) {
      throw std::runtime_error(path + ": format version mismatch: found '" + tokens[2] +
                               "', supported '" + std::string(kEpochsVersion) + "'");
    }
    auto value_of = [&](const std::string& token, const std::string& key) {
      const std::string prefix = key + "=";
      if (token.substr(0, prefix.size()) != prefix) {
        throw std::runtime_error(path + ": metadata line missing '" + key + "'");
      }
      return token.substr(prefix.size());
    };
    if (!csv::parse_double(value_of(tokens[3], "fs"), es.fs) || !(es.fs > 0.0)) {
      throw std::runtime_error(path + ": bad fs in metadata line");
    }
    const auto window = split_on(value_of(tokens[4], "window"), ',');
    if (window.size() != 2 || !csv::parse_double(window[0], es.window_s.first) ||
        !csv::parse_double(window[1], es.window_s.second)) {
      throw std::runtime_error(path + ": bad window in metadata line");
    }
    double ns = 0.0;
    if (!csv::parse_double(value_of(tokens[5], "n_samples"), ns) || ns < 0.0 ||
        ns != std::floor(ns)) {
      throw std::runtime_error(path + ": bad n_samples in metadata line");
    }
    n_samples = static_cast<Eigen::Index>(ns);
    const std::string streams = value_of(tokens[6], "streams");
    if (!streams.empty()) es.stream_names = split_on(streams, ';');
  }

  if (lines.size() < 2) throw std::runtime_error(path + ": missing header line");
  std::string want_header = "trial,label,stream";
  for (Eigen::Index s = 0; s < n_samples; ++s) want_header += ",s" + std::to_string(s);
  if (lines[1] != want_header) {
    throw std::runtime_error(path + ": header disagrees with metadata (expected '" +
                             want_header.substr(0, 64) + "...')");
  }

  const std::size_t n_streams = es.stream_names.size();
  const std::size_t n_rows = lines.size() - 2;
  if (n_streams == 0) {
    if (n_rows != 0) throw std::runtime_error(path + ": rows present but no streams declared");
    return es;
  }
  if (n_rows % n_streams != 0) {
    throw std::runtime_error(path + ": row count " + std::to_string(n_rows) +
                             " is not a multiple of stream count " + std::to_string(n_streams));
  }
  const std::size_t n_trials = n_rows / n_streams;
  es.labels.resize(n_trials, Label::MA);
  es.data.assign(n_trials,
                 Eigen::MatrixXd(static_cast<Eigen::Index>(n_streams), n_samples));

  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto fields = csv::split_fields(lines[r + 2]);
    if (fields.size() != 3 + static_cast<std::size_t>(n_samples)) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(3 + static_cast<std::size_t>(n_samples)));
    }
    const std::size_t trial = r / n_streams;
    const std::size_t stream = r % n_streams;
    if (fields[0] != std::to_string(trial)) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) +
                               ": expected trial " + std::to_string(trial) + ", found '" +
                               std::string(fields[0]) + "'");
    }
    const Label label = label_from_string(std::string(fields[1]));
    if (stream == 0) {
      es.labels[trial] = label;
    } else if (label != es.labels[trial]) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) +
                               ": label differs within trial " + std::to_string(trial));
    }
    if (fields[2] != es.stream_names[stream]) {
      throw std::runtime_error(path + ": data row " + std::to_string(r + 1) +
                               ": expected stream '" + es.stream_names[stream] + "', found '" +
                               std::string(fields[2]) + "'");
    }
    for (Eigen::Index s = 0; s < n_samples; ++s) {
      es.data[trial](static_cast<Eigen::Index>(stream), s) =
          parse_cell(fields[3 + static_cast<std::size_t>(s)], r + 1,
                     "s" + std::to_string(s));
    }
  }
  es.validate();
  return es;
}

}  // namespace fnirs::io
