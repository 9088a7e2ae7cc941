#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnirs/classifiers.hpp"
#include "fnirs/dimred.hpp"
#include "fnirs/features.hpp"
#include "fnirs/nn.hpp"
#include "fnirs/signal.hpp"
#include "fnirs/types.hpp"

namespace fnirs::cli {

inline constexpr const char* kContainerMagic = "FNIRSBCI";
inline constexpr int kContainerVersion = 1;
inline constexpr const char* kConfigEnvVar = "FNIRSBCI_CONFIG";

// Flat key=value configuration. Layers are applied in order — built-in
// defaults, then the config file, then command-line flags — so later layers
// win. Every key must exist in the defaults; unknown keys are errors.
struct Settings {
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const;
  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;
  std::string out_dir() const;
  // Value of `key` when non-empty, else `<out>/<fallback_name>`.
  std::string path(const std::string& key, const std::string& fallback_name) const;
};

Settings default_settings();

// INI-style text: `key = value` lines, `#`/`;` comments, `[section]` headers
// prefix the keys that follow with `section.`.
void apply_config_text(Settings& s, const std::string& text, const std::string& origin);
void apply_config_file(Settings& s, const std::string& path);
void apply_override(Settings& s, const std::string& key, const std::string& value);

// Typed views over the settings.
SynthConfig synth_config(const Settings& s);
signal::MbllParams mbll_params(const Settings& s);
feat::WindowSpec window_spec(const Settings& s);
nn::TrainConfig train_config(const Settings& s);

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

// Versioned single-file persistence of a fitted pipeline: the resolved
// configuration snapshot, the dimension-reduction stage, and the classifier.
struct ModelContainer {
  int version = kContainerVersion;
  std::map<std::string, std::string> config;
  std::string pipeline;    // raw_ica | features | features_kpca
  std::string model_kind;  // bilstm | ann | logreg | svm_ovr | slda

  std::optional<dimred::IcaModel> ica;
  std::optional<dimred::KpcaModel> kpca;

  std::optional<nn::ModelSpec> net_spec;  // bilstm / ann
  std::vector<nn::NamedMatrix> net_state;
  std::optional<clf::LinearModel> linear;  // logreg / svm_ovr
  std::optional<clf::SldaModel> slda;
};

// JSON with a FNV-1a checksum over the body; loading validates the magic,
// the version, and the checksum.
std::string container_to_json(const ModelContainer& c);
ModelContainer container_from_json(const std::string& text);
void save_container(const ModelContainer& c, const std::string& path);
ModelContainer load_container(const std::string& path);

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

// Thrown by commands; carries the stage for the `error: <stage>: <message>`
// line the driver prints.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string st, const std::string& msg)
      : std::runtime_error(msg), stage(std::move(st)) {}
};

void cmd_synth(const Settings& s, std::ostream& log);
void cmd_preprocess(const Settings& s, std::ostream& log);
void cmd_features(const Settings& s, std::ostream& log);
void cmd_train(const Settings& s, std::ostream& log);
void cmd_evaluate(const Settings& s, std::ostream& log);
void cmd_visualize(const Settings& s, std::ostream& log);

// argv entry point: parses `synth|preprocess|features|train|evaluate|visualize`
// plus the global flags --config/--seed/--out/--force/--set, loads the config
// file ($FNIRSBCI_CONFIG supplies the default path), dispatches, and maps any
// failure to a single `error: <stage>: <message>` line on err. Returns the
// process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fnirs::cli
