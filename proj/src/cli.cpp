#include "fnirs/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <type_traits>
#include <utility>

#include "fnirs/csv.hpp"
#include "fnirs/eval.hpp"
#include "fnirs/io.hpp"
#include "fnirs/rng.hpp"

namespace fnirs::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

bool Settings::has(const std::string& key) const { return kv.count(key) > 0; }

const std::string& Settings::str(const std::string& key) const {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

double Settings::num(const std::string& key) const {
  const std::string& v = str(key);
  double out = 0.0;
  if (!csv::parse_double(v, out)) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

int Settings::integer(const std::string& key) const {
  const std::string& v = str(key);
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + v +
                                "'");
  }
  return out;
}

bool Settings::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v.empty() || v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::uint64_t Settings::seed() const {
  const std::string& v = str("seed");
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key 'seed': expected an unsigned integer, got '" + v +
                                "'");
  }
  return out;
}

std::string Settings::out_dir() const { return str("out"); }

std::string Settings::path(const std::string& key, const std::string& fallback_name) const {
  const std::string& v = str(key);
  if (!v.empty()) return v;
  return (fs::path(out_dir()) / fallback_name).string();
}

Settings default_settings() {
  Settings s;
  auto put = [&](const char* k, std::string v) { s.kv.emplace(k, std::move(v)); };
  auto putn = [&](const char* k, double v) { s.kv.emplace(k, csv::format_double(v)); };

  put("out", "out");
  put("pipeline", "raw_ica");
  put("seed", "1");
  put("force", "0");

  put("paths.recording", "");
  put("paths.events", "");
  put("paths.epochs", "");
  put("paths.features", "");
  put("paths.model", "");
  put("paths.metrics", "");
  put("paths.mbll", "");

  const SynthConfig sc;
  put("synth.trials_per_class", std::to_string(sc.n_trials_per_class));
  putn("synth.fs", sc.fs);
  put("synth.channels", std::to_string(sc.n_channels));
  putn("synth.intro_s", sc.intro_s);
  putn("synth.task_s", sc.task_s);
  putn("synth.rest_s", sc.rest_s);
  putn("synth.lead_s", sc.lead_s);
  putn("synth.tail_s", sc.tail_s);
  putn("synth.amp_ma_anterior", sc.amp_ma_anterior);
  putn("synth.amp_ma_posterior", sc.amp_ma_posterior);
  putn("synth.amp_mi_anterior", sc.amp_mi_anterior);
  putn("synth.amp_mi_posterior", sc.amp_mi_posterior);
  putn("synth.amp_is_anterior", sc.amp_is_anterior);
  putn("synth.amp_is_posterior", sc.amp_is_posterior);
  putn("synth.peak_ma_s", sc.peak_ma_s);
  putn("synth.peak_mi_s", sc.peak_mi_s);
  putn("synth.hbr_ratio", sc.hbr_ratio);
  putn("synth.trial_gain_jitter", sc.trial_gain_jitter);
  putn("synth.spurious_rate", sc.spurious_rate);
  putn("synth.spurious_amp", sc.spurious_amp);
  putn("synth.noise_drift", sc.noise_drift);
  putn("synth.noise_cardiac", sc.noise_cardiac);
  putn("synth.noise_respiratory", sc.noise_respiratory);
  putn("synth.noise_mayer", sc.noise_mayer);
  putn("synth.noise_inband", sc.noise_inband);
  putn("synth.noise_systemic", sc.noise_systemic);
  putn("synth.noise_white", sc.noise_white);

  put("preprocess.fs", "0");  // 0 = infer from timestamps
  putn("preprocess.low_hz", 0.01);
  putn("preprocess.high_hz", 0.09);
  put("preprocess.order", "3");
  putn("preprocess.epoch_lo_s", -5.0);
  putn("preprocess.epoch_hi_s", 25.0);

  put("features.set", "union");
  putn("features.window_s", 2.0);
  putn("features.overlap", 0.5);

  const nn::TrainConfig tc;
  put("train.model", "");  // empty = pipeline default
  put("train.units", "32");
  putn("train.lr", tc.lr);
  put("train.batch", std::to_string(tc.batch_size));
  put("train.epochs", std::to_string(tc.max_epochs));
  put("train.es_patience", std::to_string(tc.early_stop_patience));
  put("train.plateau_patience", std::to_string(tc.lr_plateau_patience));
  putn("train.plateau_factor", tc.lr_plateau_factor);
  putn("train.min_lr", tc.min_lr);
  putn("train.min_improvement", tc.min_improvement);
  putn("train.noise_sigma", tc.noise_sigma);
  putn("train.dropout", tc.dropout);
  putn("train.recurrent_dropout", tc.recurrent_dropout);
  putn("train.l2", tc.l2);
  put("train.stride", std::to_string(tc.time_stride));
  put("train.grid", "0");
  put("train.grid.lrs", "0.001,0.003,0.01");
  put("train.grid.dropouts", "0.1,0.3");
  put("train.grid.units", "16,32");

  put("ann.hidden", "32");
  put("logreg.l2", "0.05");
  put("logreg.max_iter", "500");
  putn("logreg.tol", 1e-5);
  put("svm.c", "1");
  put("svm.epochs", "20");
  put("slda.gamma", "auto");

  put("ica.components", "20");
  putn("ica.tol", 1e-6);
  put("ica.max_iter", "500");
  put("kpca.kernel", "rbf");
  put("kpca.components", "20");
  put("kpca.gamma", "auto");

  putn("eval.outer", 0.7);
  putn("eval.inner", 0.7);
  return s;
}

void apply_override(Settings& s, const std::string& key, const std::string& value) {
  auto it = s.kv.find(key);
  if (it == s.kv.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second = value;
}

void apply_config_text(Settings& s, const std::string& text, const std::string& origin) {
  std::string section;
  int line_no = 0;
  for (std::string_view raw : csv::split_lines(text)) {
    ++line_no;
    std::string_view line = trim(raw);
    // Comments run from the first `#` or `;` to end of line, so values may not
    // contain either character.
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = trim(line.substr(0, comment));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument(where + ": unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument(where + ": expected `key = value`");
    }
    std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw std::invalid_argument(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    try {
      apply_override(s, key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  }
}

void apply_config_file(Settings& s, const std::string& path) {
  apply_config_text(s, csv::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

SynthConfig synth_config(const Settings& s) {
  SynthConfig c;
  c.seed = s.seed();
  c.n_trials_per_class = s.integer("synth.trials_per_class");
  c.fs = s.num("synth.fs");
  c.n_channels = s.integer("synth.channels");
  c.intro_s = s.num("synth.intro_s");
  c.task_s = s.num("synth.task_s");
  c.rest_s = s.num("synth.rest_s");
  c.lead_s = s.num("synth.lead_s");
  c.tail_s = s.num("synth.tail_s");
  c.amp_ma_anterior = s.num("synth.amp_ma_anterior");
  c.amp_ma_posterior = s.num("synth.amp_ma_posterior");
  c.amp_mi_anterior = s.num("synth.amp_mi_anterior");
  c.amp_mi_posterior = s.num("synth.amp_mi_posterior");
  c.amp_is_anterior = s.num("synth.amp_is_anterior");
  c.amp_is_posterior = s.num("synth.amp_is_posterior");
  c.peak_ma_s = s.num("synth.peak_ma_s");
  c.peak_mi_s = s.num("synth.peak_mi_s");
  c.hbr_ratio = s.num("synth.hbr_ratio");
  c.trial_gain_jitter = s.num("synth.trial_gain_jitter");
  c.spurious_rate = s.num("synth.spurious_rate");
  c.spurious_amp = s.num("synth.spurious_amp");
  c.noise_drift = s.num("synth.noise_drift");
  c.noise_cardiac = s.num("synth.noise_cardiac");
  c.noise_respiratory = s.num("synth.noise_respiratory");
  c.noise_mayer = s.num("synth.noise_mayer");
  c.noise_inband = s.num("synth.noise_inband");
  c.noise_systemic = s.num("synth.noise_systemic");
  c.noise_white = s.num("synth.noise_white");
  return c;
}

signal::MbllParams mbll_params(const Settings& s) {
  const std::string& p = s.str("paths.mbll");
  if (p.empty()) return signal::MbllParams::defaults();
  return signal::load_mbll_config(p);
}

feat::WindowSpec window_spec(const Settings& s) {
  feat::WindowSpec w;
  w.length_s = s.num("features.window_s");
  w.overlap_frac = s.num("features.overlap");
  return w;
}

nn::TrainConfig train_config(const Settings& s) {
  nn::TrainConfig c;
  c.lr = s.num("train.lr");
  c.batch_size = s.integer("train.batch");
  c.max_epochs = s.integer("train.epochs");
  c.early_stop_patience = s.integer("train.es_patience");
  c.lr_plateau_patience = s.integer("train.plateau_patience");
  c.lr_plateau_factor = s.num("train.plateau_factor");
  c.min_lr = s.num("train.min_lr");
  c.min_improvement = s.num("train.min_improvement");
  c.noise_sigma = s.num("train.noise_sigma");
  c.dropout = s.num("train.dropout");
  c.recurrent_dropout = s.num("train.recurrent_dropout");
  c.l2 = s.num("train.l2");
  c.time_stride = s.integer("train.stride");
  c.seed = s.seed();
  return c;
}

// ---------------------------------------------------------------------------
// Container serialization
// ---------------------------------------------------------------------------

namespace {

ojson mat_json(const Eigen::MatrixXd& m) {
  ojson j;
  j["rows"] = static_cast<long>(m.rows());
  j["cols"] = static_cast<long>(m.cols());
  ojson data = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd mat_from(const ojson& j) {
  const long rows = j.at("rows").get<long>();
  const long cols = j.at("cols").get<long>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<long>(data.size()) != rows * cols) {
    throw std::runtime_error("matrix entry has inconsistent shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t i = 0;
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) m(r, c) = data.at(i++).get<double>();
  }
  if (!m.allFinite()) throw std::runtime_error("matrix entry has non-finite values");
  return m;
}

ojson spec_json(const nn::ModelSpec& spec) {
  ojson j;
  j["l2"] = spec.l2;
  j["n_features"] = static_cast<long>(spec.n_features);
  ojson layers = ojson::array();
  for (const auto& l : spec.layers) {
    ojson lj;
    lj["kind"] = nn::layer_kind_to_string(l.kind);
    lj["units"] = l.units;
    lj["activation"] = nn::act_to_string(l.activation);
    lj["rate"] = l.rate;
    lj["sigma"] = l.sigma;
    lj["recurrent_dropout"] = l.recurrent_dropout;
    lj["return_sequences"] = l.return_sequences;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

nn::ModelSpec spec_from(const ojson& j) {
  nn::ModelSpec spec;
  spec.l2 = j.at("l2").get<double>();
  spec.n_features = j.at("n_features").get<long>();
  for (const auto& lj : j.at("layers")) {
    nn::LayerSpec l;
    l.kind = nn::layer_kind_from_string(lj.at("kind").get<std::string>());
    l.units = lj.at("units").get<int>();
    l.activation = nn::act_from_string(lj.at("activation").get<std::string>());
    l.rate = lj.at("rate").get<double>();
    l.sigma = lj.at("sigma").get<double>();
    l.recurrent_dropout = lj.at("recurrent_dropout").get<double>();
    l.return_sequences = lj.at("return_sequences").get<bool>();
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

std::string checksum_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string container_to_json(const ModelContainer& c) {
  ojson j;
  j["magic"] = kContainerMagic;
  j["version"] = c.version;
  j["pipeline"] = c.pipeline;
  j["model_kind"] = c.model_kind;
  ojson cfg;
  for (const auto& [k, v] : c.config) cfg[k] = v;
  j["config"] = std::move(cfg);

  ojson dim;
  if (c.ica) {
    dim["kind"] = "ica";
    dim["components"] = static_cast<long>(c.ica->n_components);
    dim["converged"] = c.ica->converged;
    dim["iterations"] = c.ica->iterations;
    dim["warning"] = c.ica->warning;
    dim["mean"] = mat_json(c.ica->mean);
    dim["w_white"] = mat_json(c.ica->w_white);
    dim["w"] = mat_json(c.ica->w);
  } else if (c.kpca) {
    dim["kind"] = "kpca";
    dim["kernel"] = dimred::kernel_to_string(c.kpca->kernel);
    dim["gamma"] = c.kpca->gamma;
    dim["components"] = static_cast<long>(c.kpca->n_components);
    dim["warning"] = c.kpca->warning;
    dim["x_train"] = mat_json(c.kpca->x_train);
    dim["alpha"] = mat_json(c.kpca->alpha);
    dim["lambda"] = mat_json(c.kpca->lambda);
  } else {
    dim["kind"] = "none";
  }
  j["dimred"] = std::move(dim);

  ojson clf_j;
  if (c.net_spec) {
    clf_j["spec"] = spec_json(*c.net_spec);
    ojson state = ojson::array();
    for (const auto& nm : c.net_state) {
      ojson e = mat_json(nm.value);
      e["name"] = nm.name;
      state.push_back(std::move(e));
    }
    clf_j["state"] = std::move(state);
  } else if (c.linear) {
    clf_j["linear_kind"] = clf::linear_kind_to_string(c.linear->kind);
    clf_j["weights"] = mat_json(c.linear->weights);
    clf_j["bias"] = mat_json(c.linear->bias);
    clf_j["warning"] = c.linear->warning;
  } else if (c.slda) {
    clf_j["means"] = mat_json(c.slda->means);
    clf_j["sigma"] = mat_json(c.slda->sigma);
    clf_j["priors"] = mat_json(c.slda->priors);
    clf_j["gamma"] = c.slda->gamma;
  } else {
    throw std::invalid_argument("container has no classifier payload");
  }
  j["classifier"] = std::move(clf_j);

  const std::string body = j.dump(2);
  j["checksum"] = checksum_hex(rng::fnv1a64(body));
  return j.dump(2) + "\n";
}

ModelContainer container_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("container is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("magic", std::string()) != kContainerMagic) {
    throw std::runtime_error("not a model container (bad magic)");
  }
  const int version = j.at("version").get<int>();
  if (version != kContainerVersion) {
    throw std::runtime_error("unsupported container version " + std::to_string(version) +
                             " (supported: " + std::to_string(kContainerVersion) + ")");
  }
  if (!j.contains("checksum")) throw std::runtime_error("container checksum missing");
  const std::string stored = j.at("checksum").get<std::string>();
  j.erase("checksum");
  const std::string body = j.dump(2);
  if (checksum_hex(rng::fnv1a64(body)) != stored) {
    throw std::runtime_error("container checksum mismatch (file corrupted or edited)");
  }

  ModelContainer c;
  c.version = version;
  c.pipeline = j.at("pipeline").get<std::string>();
  c.model_kind = j.at("model_kind").get<std::string>();
  for (const auto& [k, v] : j.at("config").items()) c.config[k] = v.get<std::string>();

  const ojson& dim = j.at("dimred");
  const std::string dim_kind = dim.at("kind").get<std::string>();
  if (dim_kind == "ica") {
    dimred::IcaModel m;
    m.n_components = dim.at("components").get<long>();
    m.converged = dim.at("converged").get<bool>();
    m.iterations = dim.at("iterations").get<int>();
    m.warning = dim.at("warning").get<std::string>();
    m.mean = mat_from(dim.at("mean"));
    m.w_white = mat_from(dim.at("w_white"));
    m.w = mat_from(dim.at("w"));
    c.ica = std::move(m);
  } else if (dim_kind == "kpca") {
    dimred::KpcaModel m;
    m.kernel = dimred::kernel_from_string(dim.at("kernel").get<std::string>());
    m.gamma = dim.at("gamma").get<double>();
    m.n_components = dim.at("components").get<long>();
    m.warning = dim.at("warning").get<std::string>();
    m.x_train = mat_from(dim.at("x_train"));
    m.alpha = mat_from(dim.at("alpha"));
    m.lambda = mat_from(dim.at("lambda"));
    c.kpca = std::move(m);
  } else if (dim_kind != "none") {
    throw std::runtime_error("unknown dimred kind '" + dim_kind + "'");
  }

  const ojson& cj = j.at("classifier");
  if (c.model_kind == "bilstm" || c.model_kind == "ann") {
    c.net_spec = spec_from(cj.at("spec"));
    for (const auto& e : cj.at("state")) {
      c.net_state.push_back({e.at("name").get<std::string>(), mat_from(e)});
    }
  } else if (c.model_kind == "logreg" || c.model_kind == "svm_ovr") {
    clf::LinearModel m;
    m.kind = clf::linear_kind_from_string(cj.at("linear_kind").get<std::string>());
    m.weights = mat_from(cj.at("weights"));
    m.bias = mat_from(cj.at("bias"));
    m.warning = cj.at("warning").get<std::string>();
    c.linear = std::move(m);
  } else if (c.model_kind == "slda") {
    clf::SldaModel m;
    m.means = mat_from(cj.at("means"));
    m.sigma = mat_from(cj.at("sigma"));
    m.priors = mat_from(cj.at("priors"));
    m.gamma = cj.at("gamma").get<double>();
    c.slda = std::move(m);
  } else {
    throw std::runtime_error("unknown model kind '" + c.model_kind + "'");
  }
  return c;
}

void save_container(const ModelContainer& c, const std::string& path) {
  csv::write_file_atomic(path, container_to_json(c));
}

ModelContainer load_container(const std::string& path) {
  return container_from_json(csv::read_file(path));
}

// ---------------------------------------------------------------------------
// Command helpers
// ---------------------------------------------------------------------------

namespace {

// Runs one named stage, printing its wall time and tagging any failure with
// the stage name.
template <class F>
auto timed(std::ostream& log, const std::string& stage, F&& f) {
  using R = std::invoke_result_t<F>;
  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&] {
    const std::chrono::duration<double, std::milli> dt =
        std::chrono::steady_clock::now() - t0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", dt.count());
    log << "timing: " << stage << " " << buf << " ms\n";
  };
  try {
    if constexpr (std::is_void_v<R>) {
      f();
      finish();
    } else {
      R r = f();
      finish();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void ensure_out_dir(const Settings& s) { fs::create_directories(s.out_dir()); }

EpochSet subset_epochs(const EpochSet& es, const std::vector<int>& idx) {
  EpochSet out;
  out.fs = es.fs;
  out.window_s = es.window_s;
  out.stream_names = es.stream_names;
  out.labels.reserve(idx.size());
  out.data.reserve(idx.size());
  for (int i : idx) {
    out.labels.push_back(es.labels[static_cast<std::size_t>(i)]);
    out.data.push_back(es.data[static_cast<std::size_t>(i)]);
  }
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

std::vector<Label> take_labels(const std::vector<Label>& y, const std::vector<int>& idx) {
  std::vector<Label> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(y[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<double> parse_list(const Settings& s, const std::string& key) {
  const std::string& v = s.str(key);
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const std::size_t comma = std::min(v.find(',', pos), v.size());
    const std::string_view tok = trim(std::string_view(v).substr(pos, comma - pos));
    if (!tok.empty()) {
      double d = 0.0;
      if (!csv::parse_double(tok, d)) {
        throw std::invalid_argument("config key '" + key + "': bad list entry '" +
                                    std::string(tok) + "'");
      }
      out.push_back(d);
    }
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("config key '" + key + "': empty list");
  return out;
}

std::string resolved_model_kind(const Settings& s) {
  const std::string& pipeline = s.str("pipeline");
  std::string kind = s.str("train.model");
  if (pipeline == "raw_ica") {
    if (kind.empty()) kind = "bilstm";
    if (kind != "bilstm") {
      throw std::invalid_argument("pipeline raw_ica supports only the bilstm model, got '" +
                                  kind + "'");
    }
  } else if (pipeline == "features" || pipeline == "features_kpca") {
    if (kind.empty()) kind = "slda";
    if (kind != "logreg" && kind != "svm_ovr" && kind != "slda" && kind != "ann") {
      throw std::invalid_argument("pipeline " + pipeline +
                                  " supports logreg, svm_ovr, slda, or ann, got '" + kind + "'");
    }
  } else {
    throw std::invalid_argument("unknown pipeline '" + pipeline +
                                "' (expected raw_ica, features, or features_kpca)");
  }
  return kind;
}

std::optional<double> optional_gamma(const Settings& s, const std::string& key) {
  const std::string& v = s.str(key);
  if (v == "auto") return std::nullopt;
  double d = 0.0;
  if (!csv::parse_double(v, d)) {
    throw std::invalid_argument("config key '" + key + "': expected a number or 'auto'");
  }
  return d;
}

std::string train_report_csv(const nn::TrainReport& rep) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  for (std::size_t i = 0; i < rep.epochs.size(); ++i) {
    const auto& e = rep.epochs[i];
    out += std::to_string(i) + "," + csv::format_double(e.train_loss) + "," +
           csv::format_double(e.train_acc) + "," + csv::format_double(e.val_loss) + "," +
           csv::format_double(e.val_acc) + "," + csv::format_double(e.lr) + "\n";
  }
  return out;
}

// Pearson correlation of columns; zero-variance columns correlate 0 with
// everything and 1 with themselves.
Eigen::MatrixXd corr_matrix(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n < 2) throw std::invalid_argument("correlation needs at least 2 rows");
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::VectorXd norms = centered.colwise().norm();
  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (norms(i) <= 0.0) continue;
    for (Eigen::Index jj = i + 1; jj < d; ++jj) {
      if (norms(jj) <= 0.0) continue;
      const double r = centered.col(i).dot(centered.col(jj)) / (norms(i) * norms(jj));
      corr(i, jj) = r;
      corr(jj, i) = r;
    }
  }
  return corr;
}

std::string corr_csv(const std::vector<std::string>& names, const Eigen::MatrixXd& corr) {
  std::string out = "name";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (Eigen::Index r = 0; r < corr.rows(); ++r) {
    out += names[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < corr.cols(); ++c) out += "," + csv::format_double(corr(r, c));
    out += "\n";
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_synth(const Settings& s, std::ostream& log) {
  ensure_out_dir(s);
  const std::string rec_path = s.path("paths.recording", "recording.csv");
  const std::string ev_path = s.path("paths.events", "events.csv");
  if (!s.flag("force")) {
    for (const std::string& p : {rec_path, ev_path}) {
      if (fs::exists(p)) {
        throw StageError("synth", p + " exists; pass --force to overwrite");
      }
    }
  }
  const SynthConfig cfg = synth_config(s);
  auto [rec, ev] = timed(log, "synth/generate", [&] { return io::generate_synthetic(cfg); });
  timed(log, "synth/write", [&] {
    io::save_recording(rec, rec_path);
    io::save_events(ev, ev_path);
  });
  log << "synth: " << rec.n_samples() << " samples x " << rec.n_channels() << " channels @ "
      << csv::format_double(rec.fs) << " Hz, " << ev.size() << " events -> " << rec_path
      << "\n";
}

void cmd_preprocess(const Settings& s, std::ostream& log) {
  ensure_out_dir(s);
  const std::string rec_path = s.path("paths.recording", "recording.csv");
  const std::string ev_path = s.path("paths.events", "events.csv");
  const std::string epochs_path = s.path("paths.epochs", "epochs.csv");

  fs::path sidecar(rec_path);
  sidecar.replace_extension(".channels.csv");
  if (!fs::exists(sidecar)) {
    log << "warning: preprocess: channel sidecar " << sidecar.string()
        << " not found; using default channel geometry\n";
  }

  const double fs_override = s.num("preprocess.fs");
  auto [rec, ev] = timed(log, "preprocess/load", [&] {
    Recording r = io::load_recording(
        rec_path, fs_override > 0.0 ? std::optional<double>(fs_override) : std::nullopt);
    EventList e = io::load_events(ev_path);
    return std::pair(std::move(r), std::move(e));
  });

  const signal::MbllParams mp = mbll_params(s);
  HemoSeries hemo =
      timed(log, "preprocess/mbll", [&] { return signal::mbll_convert(rec, mp); });

  timed(log, "preprocess/filter", [&] {
    const signal::FilterSpec spec = signal::design_butterworth_bandpass(
        s.integer("preprocess.order"), s.num("preprocess.low_hz"), s.num("preprocess.high_hz"),
        hemo.fs);
    hemo.streams = signal::filtfilt_columns(spec, hemo.streams);
  });

  EpochSet es = timed(log, "preprocess/segment", [&] {
    return signal::segment_epochs(
        hemo, ev, {s.num("preprocess.epoch_lo_s"), s.num("preprocess.epoch_hi_s")});
  });
  es = timed(log, "preprocess/baseline", [&] { return signal::baseline_correct(es); });
  timed(log, "preprocess/write", [&] { io::save_epochs(es, epochs_path); });

  log << "preprocess: " << es.n_trials() << " epochs x " << es.n_streams() << " streams x "
      << es.n_samples() << " samples -> " << epochs_path << "\n";
}

void cmd_features(const Settings& s, std::ostream& log) {
  ensure_out_dir(s);
  const std::string epochs_path = s.path("paths.epochs", "epochs.csv");
  const std::string features_path = s.path("paths.features", "features.csv");

  EpochSet es = timed(log, "features/load", [&] { return io::load_epochs(epochs_path); });
  const feat::FeatureSet which = feat::feature_set_from_string(s.str("features.set"));
  feat::FeatureMatrix fm = timed(log, "features/assemble", [&] {
    return feat::assemble_feature_matrix(es, which, window_spec(s));
  });
  timed(log, "features/write", [&] { feat::save_feature_matrix(fm, features_path); });

  log << "features: " << fm.n_trials() << " trials x " << fm.n_features() << " features ("
      << feat::feature_set_to_string(which) << ") -> " << features_path << "\n";
}

void cmd_train(const Settings& s, std::ostream& log) {
  ensure_out_dir(s);
  const std::string model_path = s.path("paths.model", "model.json");
  const std::string report_path = (fs::path(s.out_dir()) / "train_report.csv").string();
  const std::string kind = resolved_model_kind(s);
  const std::string& pipeline = s.str("pipeline");
  const std::uint64_t seed = s.seed();
  const double outer = s.num("eval.outer");
  const double inner = s.num("eval.inner");

  ModelContainer box;
  box.pipeline = pipeline;
  box.model_kind = kind;
  box.config = s.kv;

  if (pipeline == "raw_ica") {
    EpochSet es = timed(log, "train/load",
                        [&] { return io::load_epochs(s.path("paths.epochs", "epochs.csv")); });
    const eval::Split split = eval::split_train_val_test(es.labels, outer, inner, seed);

    std::vector<std::size_t> fit_trials(split.train.begin(), split.train.end());
    dimred::IcaModel ica = timed(log, "train/ica", [&] {
      return dimred::ica_fit_epochs(es, fit_trials, s.integer("ica.components"),
                                    s.num("ica.tol"), s.integer("ica.max_iter"),
                                    rng::derive_seed(seed, "ica"));
    });
    if (!ica.warning.empty()) log << "warning: train: " << ica.warning << "\n";
    const EpochSet es_ic = dimred::ica_transform_epochs(ica, es);
    const EpochSet es_tr = subset_epochs(es_ic, split.train);
    const EpochSet es_val = subset_epochs(es_ic, split.val);

    nn::TrainConfig tc = train_config(s);
    tc.seed = rng::derive_seed(seed, "train");
    int units = s.integer("train.units");

    if (s.flag("train.grid")) {
      const std::vector<double> lrs = parse_list(s, "train.grid.lrs");
      const std::vector<double> drops = parse_list(s, "train.grid.dropouts");
      std::vector<int> units_list;
      for (double u : parse_list(s, "train.grid.units")) units_list.push_back(static_cast<int>(u));
      const nn::GridResult grid = timed(log, "train/grid", [&] {
        return nn::grid_search(es_tr, es_val, tc, lrs, drops, units_list);
      });
      std::string table = "lr,dropout,units,val_error,val_loss,epochs\n";
      for (const auto& p : grid.table) {
        table += csv::format_double(p.lr) + "," + csv::format_double(p.dropout) + "," +
                 std::to_string(p.units) + "," + csv::format_double(p.val_error) + "," +
                 csv::format_double(p.val_loss) + "," + std::to_string(p.epochs_ran) + "\n";
      }
      csv::write_file_atomic((fs::path(s.out_dir()) / "grid.csv").string(), table);
      tc.lr = grid.best.lr;
      tc.dropout = grid.best.dropout;
      units = grid.best.units;
      log << "train: grid selected lr=" << csv::format_double(tc.lr)
          << " dropout=" << csv::format_double(tc.dropout) << " units=" << units << "\n";
    }

    const nn::ModelSpec spec = nn::default_model_spec(es_ic.n_streams(), units, tc);
    nn::Model model(spec, rng::derive_seed(tc.seed, "init"));
    const nn::TrainReport rep =
        timed(log, "train/fit", [&] { return nn::train(model, es_tr, es_val, tc); });
    csv::write_file_atomic(report_path, train_report_csv(rep));

    box.ica = std::move(ica);
    box.net_spec = spec;
    box.net_state = model.export_state();
    timed(log, "train/write", [&] { save_container(box, model_path); });

    const auto& best = rep.epochs.at(static_cast<std::size_t>(rep.best_epoch));
    log << "train: bilstm best_epoch=" << rep.best_epoch << " stop=" << rep.stop_reason
        << " val_acc=" << csv::format_double(best.val_acc) << " -> " << model_path << "\n";
    return;
  }

  // Feature-based paths.
  feat::FeatureMatrix fm = timed(log, "train/load", [&] {
    return feat::load_feature_matrix(s.path("paths.features", "features.csv"));
  });
  const eval::Split split = eval::split_train_val_test(fm.labels, outer, inner, seed);
  std::vector<int> fit_rows = split.train;
  fit_rows.insert(fit_rows.end(), split.val.begin(), split.val.end());
  std::sort(fit_rows.begin(), fit_rows.end());

  Eigen::MatrixXd x_fit = take_rows(fm.values, fit_rows);
  const std::vector<Label> y_fit = take_labels(fm.labels, fit_rows);

  if (pipeline == "features_kpca") {
    dimred::KpcaModel kp = timed(log, "train/kpca", [&] {
      return dimred::kpca_fit(x_fit, dimred::kernel_from_string(s.str("kpca.kernel")),
                              s.integer("kpca.components"), optional_gamma(s, "kpca.gamma"));
    });
    if (!kp.warning.empty()) log << "warning: train: " << kp.warning << "\n";
    x_fit = dimred::kpca_transform(kp, x_fit);
    box.kpca = std::move(kp);
  }

  double fit_acc = 0.0;
  std::string warning;
  if (kind == "ann") {
    clf::AnnConfig ac;
    ac.hidden = s.integer("ann.hidden");
    ac.val_fraction = 1.0 - inner;
    ac.train = train_config(s);
    ac.train.seed = rng::derive_seed(seed, "ann");
    const clf::AnnModel am =
        timed(log, "train/fit", [&] { return clf::ann_baseline_fit(x_fit, y_fit, ac); });
    csv::write_file_atomic(report_path, train_report_csv(am.report));
    fit_acc = clf::label_accuracy(clf::ann_predict(am, x_fit), y_fit);
    box.net_spec = am.spec;
    box.net_state = am.state;
  } else {
    clf::LinearModel lm;
    clf::SldaModel sm;
    timed(log, "train/fit", [&] {
      if (kind == "logreg") {
        lm = clf::logreg_fit(x_fit, y_fit, s.num("logreg.l2"), s.integer("logreg.max_iter"),
                             s.num("logreg.tol"), rng::derive_seed(seed, "logreg"));
      } else if (kind == "svm_ovr") {
        lm = clf::svm_ovr_fit(x_fit, y_fit, s.num("svm.c"), s.integer("svm.epochs"),
                              rng::derive_seed(seed, "svm"));
      } else {
        sm = clf::slda_fit(x_fit, y_fit, optional_gamma(s, "slda.gamma"));
      }
    });
    if (kind == "slda") {
      fit_acc = clf::label_accuracy(clf::slda_predict(sm, x_fit), y_fit);
      box.slda = std::move(sm);
    } else {
      warning = lm.warning;
      fit_acc = clf::label_accuracy(clf::linear_predict(lm, x_fit), y_fit);
      box.linear = std::move(lm);
    }
    std::string report = "metric,value\n";
    report += "train_accuracy," + csv::format_double(fit_acc) + "\n";
    csv::write_file_atomic(report_path, report);
  }
  if (!warning.empty()) log << "warning: train: " << warning << "\n";

  timed(log, "train/write", [&] { save_container(box, model_path); });
  log << "train: " << kind << " train_acc=" << csv::format_double(fit_acc) << " -> "
      << model_path << "\n";
}

void cmd_evaluate(const Settings& s, std::ostream& log) {
  ensure_out_dir(s);
  const std::string model_path = s.path("paths.model", "model.json");
  const ModelContainer box =
      timed(log, "evaluate/load", [&] { return load_container(model_path); });

  // The container's snapshot governs every pipeline setting; only the data
  // and output paths come from the current invocation.
  Settings snap;
  snap.kv = box.config;
  const std::uint64_t seed = snap.seed();
  const double outer = snap.num("eval.outer");
  const double inner = snap.num("eval.inner");

  Eigen::MatrixXd scores;
  std::vector<Label> y_test;
  std::array<int, 3> sizes{0, 0, 0};

  if (box.pipeline == "raw_ica") {
    if (!box.ica || !box.net_spec) {
      throw StageError("evaluate", "container lacks the raw_ica payload");
    }
    EpochSet es = timed(log, "evaluate/data",
                        [&] { return io::load_epochs(s.path("paths.epochs", "epochs.csv")); });
    const eval::Split split = eval::split_train_val_test(es.labels, outer, inner, seed);
    sizes = {static_cast<int>(split.train.size()), static_cast<int>(split.val.size()),
             static_cast<int>(split.test.size())};
    const EpochSet es_te = subset_epochs(dimred::ica_transform_epochs(*box.ica, es), split.test);
    y_test = es_te.labels;
    scores = timed(log, "evaluate/predict", [&] {
      nn::Model model(*box.net_spec, 0);
      model.import_state(box.net_state);
      return nn::predict(model, es_te, snap.integer("train.stride"));
    });
  } else {
    feat::FeatureMatrix fm = timed(log, "evaluate/data", [&] {
      return feat::load_feature_matrix(s.path("paths.features", "features.csv"));
    });
    const eval::Split split = eval::split_train_val_test(fm.labels, outer, inner, seed);
    sizes = {static_cast<int>(split.train.size()), static_cast<int>(split.val.size()),
             static_cast<int>(split.test.size())};
    Eigen::MatrixXd x_te = take_rows(fm.values, split.test);
    y_test = take_labels(fm.labels, split.test);
    if (box.pipeline == "features_kpca") {
      if (!box.kpca) throw StageError("evaluate", "container lacks the kpca payload");
      x_te = dimred::kpca_transform(*box.kpca, x_te);
    }
    scores = timed(log, "evaluate/predict", [&]() -> Eigen::MatrixXd {
      if (box.model_kind == "ann") {
        const clf::AnnModel am{*box.net_spec, box.net_state, {}};
        return clf::ann_scores(am, x_te);
      }
      if (box.model_kind == "slda") return clf::slda_scores(*box.slda, x_te);
      if (box.model_kind == "logreg") return clf::logreg_probs(*box.linear, x_te);
      return clf::linear_scores(*box.linear, x_te);
    });
  }

  eval::EvalReport rep = eval::eval_report(scores, y_test);
  rep.seed = seed;
  rep.split_sizes = sizes;

  const std::string metrics_path = s.path("paths.metrics", "metrics.json");
  timed(log, "evaluate/write", [&] {
    csv::write_file_atomic(metrics_path, eval::metrics_json(rep));
    for (int c = 0; c < kNumClasses; ++c) {
      const std::string name = "roc_" + label_to_string(static_cast<Label>(c)) + ".csv";
      csv::write_file_atomic((fs::path(s.out_dir()) / name).string(),
                             eval::roc_csv(rep.roc[static_cast<std::size_t>(c)]));
    }
  });
  log << "evaluate: n_test=" << rep.n_test << " -> " << metrics_path << "\n";
  log << "accuracy=" << csv::format_double(rep.accuracy) << "\n";
}

void cmd_visualize(const Settings& s, std::ostream& log) {
  ensure_out_dir(s);
  EpochSet es = timed(log, "visualize/load",
                      [&] { return io::load_epochs(s.path("paths.epochs", "epochs.csv")); });

  const feat::FeatureMatrix tm =
      timed(log, "visualize/features", [&] { return feat::temporal_mean_features(es); });
  const std::string corr_features_path = (fs::path(s.out_dir()) / "corr_features.csv").string();
  timed(log, "visualize/corr", [&] {
    csv::write_file_atomic(corr_features_path, corr_csv(tm.names, corr_matrix(tm.values)));
  });

  const std::string corr_kpca_path = (fs::path(s.out_dir()) / "corr_kpca.csv").string();
  timed(log, "visualize/kpca", [&] {
    // Centered-kernel eigendecomposition yields at most rows-1 usable
    // components; clamp so small sessions still visualize.
    long components = s.integer("kpca.components");
    const long max_comp = std::max<long>(1, tm.values.rows() - 1);
    if (components > max_comp) {
      log << "visualize: kpca.components clamped " << components << " -> " << max_comp
          << " (only " << tm.values.rows() << " trials available)\n";
      components = max_comp;
    }
    const dimred::KpcaModel kp =
        dimred::kpca_fit(tm.values, dimred::kernel_from_string(s.str("kpca.kernel")), components,
                         optional_gamma(s, "kpca.gamma"));
    const Eigen::MatrixXd z = dimred::kpca_transform(kp, tm.values);
    std::vector<std::string> names;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "kpc%02ld", static_cast<long>(c + 1));
      names.emplace_back(buf);
    }
    csv::write_file_atomic(corr_kpca_path, corr_csv(names, corr_matrix(z)));
  });

  const std::string timecourse_path = (fs::path(s.out_dir()) / "timecourse.csv").string();
  timed(log, "visualize/timecourse", [&] {
    std::vector<int> hbo_streams, hbr_streams;
    for (int i = 0; i < es.n_streams(); ++i) {
      const std::string& n = es.stream_names[static_cast<std::size_t>(i)];
      if (n.size() >= 4 && n.compare(n.size() - 4, 4, "_HbO") == 0) hbo_streams.push_back(i);
      if (n.size() >= 4 && n.compare(n.size() - 4, 4, "_HbR") == 0) hbr_streams.push_back(i);
    }
    if (hbo_streams.empty() || hbr_streams.empty()) {
      throw std::invalid_argument("epochs carry no _HbO/_HbR stream pairs to average");
    }
    const Eigen::Index n = es.n_samples();
    const long k_lo = signal::snapped_ceil(es.window_s.first * es.fs);

    std::string out = "time_s";
    for (int c = 0; c < kNumClasses; ++c) {
      const std::string t = label_to_string(static_cast<Label>(c));
      out += "," + t + "_HbO," + t + "_HbR";
    }
    out += "\n";

    Eigen::MatrixXd cols(n, 2 * kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
      Eigen::RowVectorXd hbo = Eigen::RowVectorXd::Zero(n);
      Eigen::RowVectorXd hbr = Eigen::RowVectorXd::Zero(n);
      int trials = 0;
      for (int t = 0; t < es.n_trials(); ++t) {
        if (es.labels[static_cast<std::size_t>(t)] != static_cast<Label>(c)) continue;
        ++trials;
        const Eigen::MatrixXd& d = es.data[static_cast<std::size_t>(t)];
        for (int i : hbo_streams) hbo += d.row(i);
        for (int i : hbr_streams) hbr += d.row(i);
      }
      if (trials == 0) {
        throw std::invalid_argument("no trials labelled " +
                                    label_to_string(static_cast<Label>(c)));
      }
      cols.col(2 * c) = hbo.transpose() / (trials * static_cast<double>(hbo_streams.size()));
      cols.col(2 * c + 1) = hbr.transpose() / (trials * static_cast<double>(hbr_streams.size()));
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      out += csv::format_double(static_cast<double>(k_lo + r) / es.fs);
      for (Eigen::Index c = 0; c < cols.cols(); ++c) out += "," + csv::format_double(cols(r, c));
      out += "\n";
    }
    csv::write_file_atomic(timecourse_path, out);
  });

  log << "visualize: wrote " << corr_features_path << " " << corr_kpca_path << " "
      << timecourse_path << "\n";
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"fNIRS ternary-task classification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string seed_value;
  std::string out_dir;
  bool force = false;
  std::vector<std::string> overrides;

  app.add_option("--config", config_path, "Config file (INI-style key = value)")
      ->envname(kConfigEnvVar);
  auto* seed_opt = app.add_option("--seed", seed_value, "Global PRNG seed");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--force", force, "Overwrite existing source artifacts");
  app.add_option("--set", overrides, "Override a config key (key=value, repeatable)");

  const std::pair<const char*, const char*> cmds[] = {
      {"synth", "Generate a deterministic synthetic recording and events"},
      {"preprocess", "Hemoglobin conversion, band-pass, epoching, baseline"},
      {"features", "Windowed statistical/band-power/temporal-mean features"},
      {"train", "Fit the configured pipeline and persist the model container"},
      {"evaluate", "Score the held-out test split of a trained container"},
      {"visualize", "Export correlation matrices and per-task time courses"},
  };
  for (const auto& [name, desc] : cmds) app.add_subcommand(name, desc)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: cli: " << e.what() << "\n";
    return 2;
  }

  std::string stage = "config";
  try {
    Settings s = default_settings();
    if (!config_path.empty()) apply_config_file(s, config_path);
    if (seed_opt->count() > 0) apply_override(s, "seed", seed_value);
    if (out_opt->count() > 0) apply_override(s, "out", out_dir);
    if (force) apply_override(s, "force", "1");
    for (const std::string& kv : overrides) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      }
      apply_override(s, std::string(trim(std::string_view(kv).substr(0, eq))),
                     std::string(trim(std::string_view(kv).substr(eq + 1))));
    }

    for (const auto& [name, desc] : cmds) {
      (void)desc;
      if (!app.got_subcommand(name)) continue;
      stage = name;
      if (std::string(name) == "synth") cmd_synth(s, out);
      else if (std::string(name) == "preprocess") cmd_preprocess(s, out);
      else if (std::string(name) == "features") cmd_features(s, out);
      else if (std::string(name) == "train") cmd_train(s, out);
      else if (std::string(name) == "evaluate") cmd_evaluate(s, out);
      else cmd_visualize(s, out);
      break;
    }
    return 0;
  } catch (const StageError& e) {
    err << "error: " << e.stage << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << stage << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fnirs::cli
