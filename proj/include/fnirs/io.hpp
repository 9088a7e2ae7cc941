#pragma once

#include <optional>
#include <string>
#include <utility>

#include "fnirs/types.hpp"

namespace fnirs::io {

// Recording CSV: header `t,ch01_wl1,ch01_wl2,...`, t in seconds, values
// delta-OD. fs is inferred from the timestamps; an explicit override that
// disagrees by more than 0.1% is an error. A sidecar `<stem>.channels.csv`
// next to the file supplies wavelengths/distance when present.
Recording load_recording(const std::string& path, std::optional<double> fs_override = {});
void save_recording(const Recording& rec, const std::string& path);

// Events CSV: header `onset_s,label`, labels MA/MI/IS, onsets strictly
// increasing.
EventList load_events(const std::string& path);
void save_events(const EventList& ev, const std::string& path);

// Epochs CSV: a `# fnirsbci-epochs v1 ...` metadata line, then header
// `trial,label,stream,s0,...`, one row per (trial, stream).
EpochSet load_epochs(const std::string& path);
void save_epochs(const EpochSet& es, const std::string& path);

// Deterministic synthetic dataset (delta-OD recording plus events), a pure
// function of the config.
std::pair<Recording, EventList> generate_synthetic(const SynthConfig& cfg);

}  // namespace fnirs::io
