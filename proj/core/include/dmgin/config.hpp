#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmgin/trainer.hpp"

namespace dmgin {

// Flat key/value view of a config file. `[section]` headers prefix the keys
// that follow ("[gen]" + "n_users = 50" -> "gen.n_users"); dotted keys work
// directly. `#` and `;` start comments. Later assignments win, so overrides
// can be layered on top of file values.
class ConfigMap {
 public:
  static ConfigMap parse_file(const std::string& path);
  static ConfigMap parse_text(const std::string& text, const std::string& origin);

  // "key=value" from a CLI flag; malformed input raises ConfigError.
  void set_override(const std::string& keyval);
  void set(const std::string& key, const std::string& value);

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Everything a run needs, one key per leaf field. Defaults are the desk-scale
// configuration; a config file only overrides what it names.
struct RunConfig {
  PipelineConfig pipeline;
  std::vector<int> sweep_depths = {1, 2, 3};
  int serve_candidates = 1024;
  int serve_repeats = 3;  // timing repetitions per serving path
};

// Applies a ConfigMap onto defaults. Unknown keys and unparseable values
// raise ConfigError naming the offender.
RunConfig run_config_from(const ConfigMap& map);

// Canonical echo of every key with its final value, sorted, one per line.
// Written as config.resolved; reparsing it reproduces the run exactly.
std::string render_resolved(const RunConfig& cfg);

}  // namespace dmgin
