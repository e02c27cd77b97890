#include "dmgin/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dmgin/error.hpp"

namespace dmgin {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool valid_key(const std::string& k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  for (char c : k) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.') return false;
  }
  return k.find("..") == std::string::npos;
}

std::string strip_comment(const std::string& line) {
  size_t pos = line.find_first_of("#;");
  return pos == std::string::npos ? line : line.substr(0, pos);
}

// ---- typed key registry ------------------------------------------------------

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

long long parse_ll(const std::string& key, const std::string& v) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
  if (used != v.size()) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
  if (used != v.size()) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename Ref>
KeySpec int_key(const std::string& name, Ref ref) {
  return KeySpec{
      name,
      [name, ref](RunConfig& c, const std::string& v) { *ref(c) = T(parse_ll(name, v)); },
      [ref](const RunConfig& c) { return std::to_string(*ref(const_cast<RunConfig&>(c))); }};
}

template <typename Ref>
KeySpec dbl_key(const std::string& name, Ref ref) {
  return KeySpec{
      name,
      [name, ref](RunConfig& c, const std::string& v) { *ref(c) = parse_double(name, v); },
      [ref](const RunConfig& c) { return fmt_double(*ref(const_cast<RunConfig&>(c))); }};
}

template <typename Ref>
KeySpec bool_key(const std::string& name, Ref ref) {
  return KeySpec{
      name,
      [name, ref](RunConfig& c, const std::string& v) { *ref(c) = parse_bool(name, v); },
      [ref](const RunConfig& c) {
        return *ref(const_cast<RunConfig&>(c)) ? "true" : "false";
      }};
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  // "1,2,3" or a "1..4" range.
  std::vector<int> out;
  size_t dots = v.find("..");
  if (dots != std::string::npos) {
    long long lo = parse_ll(key, trim(v.substr(0, dots)));
    long long hi = parse_ll(key, trim(v.substr(dots + 2)));
    if (lo > hi) throw ConfigError("config: key '" + key + "' has an empty range '" + v + "'");
    for (long long x = lo; x <= hi; ++x) out.push_back(int(x));
    return out;
  }
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) {
      throw ConfigError("config: key '" + key + "' has an empty list element in '" + v + "'");
    }
    out.push_back(int(parse_ll(key, part)));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list, got '" + v + "'");
  return out;
}

std::vector<KeySpec> build_registry() {
  std::vector<KeySpec> r;
  auto gen = [](RunConfig& c) { return &c.pipeline.gen; };
  r.push_back(int_key<uint64_t>("seed", [](RunConfig& c) { return &c.pipeline.seed; }));

  r.push_back(int_key<int>("gen.n_users", [gen](RunConfig& c) { return &gen(c)->n_users; }));
  r.push_back(
      int_key<int>("gen.n_entities", [gen](RunConfig& c) { return &gen(c)->n_entities; }));
  r.push_back(
      int_key<int>("gen.n_archetypes", [gen](RunConfig& c) { return &gen(c)->n_archetypes; }));
  r.push_back(
      int_key<int>("gen.events_min", [gen](RunConfig& c) { return &gen(c)->events_min; }));
  r.push_back(
      int_key<int>("gen.events_max", [gen](RunConfig& c) { return &gen(c)->events_max; }));
  r.push_back(
      dbl_key("gen.zipf_exponent", [gen](RunConfig& c) { return &gen(c)->zipf_exponent; }));
  r.push_back(dbl_key("gen.focus", [gen](RunConfig& c) { return &gen(c)->focus; }));
  r.push_back(dbl_key("gen.p_hi", [gen](RunConfig& c) { return &gen(c)->p_hi; }));
  r.push_back(dbl_key("gen.p_lo", [gen](RunConfig& c) { return &gen(c)->p_lo; }));
  r.push_back(dbl_key("gen.match_rate", [gen](RunConfig& c) { return &gen(c)->match_rate; }));
  r.push_back(int_key<int>("gen.train_impressions",
                           [gen](RunConfig& c) { return &gen(c)->train_impressions; }));
  r.push_back(int_key<int>("gen.test_impressions",
                           [gen](RunConfig& c) { return &gen(c)->test_impressions; }));
  r.push_back(
      int_key<int>("gen.n_locations", [gen](RunConfig& c) { return &gen(c)->n_locations; }));
  r.push_back(int_key<int>("gen.d_lat", [gen](RunConfig& c) { return &gen(c)->d_lat; }));
  r.push_back(int_key<int>("gen.d_txt", [gen](RunConfig& c) { return &gen(c)->d_txt; }));
  r.push_back(int_key<int>("gen.d_img", [gen](RunConfig& c) { return &gen(c)->d_img; }));
  r.push_back(dbl_key("gen.archetype_scale",
                      [gen](RunConfig& c) { return &gen(c)->archetype_scale; }));
  r.push_back(
      dbl_key("gen.latent_noise", [gen](RunConfig& c) { return &gen(c)->latent_noise; }));
  r.push_back(
      dbl_key("gen.modality_noise", [gen](RunConfig& c) { return &gen(c)->modality_noise; }));
  r.push_back(int_key<int64_t>("gen.now", [gen](RunConfig& c) { return &gen(c)->now; }));
  r.push_back(int_key<int64_t>("gen.span", [gen](RunConfig& c) { return &gen(c)->span; }));
  r.push_back(
      bool_key("gen.long_horizon", [gen](RunConfig& c) { return &gen(c)->long_horizon; }));
  r.push_back(dbl_key("gen.marker_rate", [gen](RunConfig& c) { return &gen(c)->marker_rate; }));

  auto pre = [](RunConfig& c) { return &c.pipeline.pretrain; };
  r.push_back(int_key<int>("pretrain.d_emb", [pre](RunConfig& c) { return &pre(c)->d_emb; }));
  r.push_back(int_key<int>("pretrain.hidden", [pre](RunConfig& c) { return &pre(c)->hidden; }));
  r.push_back(dbl_key("pretrain.lr", [pre](RunConfig& c) { return &pre(c)->lr; }));
  r.push_back(int_key<int>("pretrain.epochs", [pre](RunConfig& c) { return &pre(c)->epochs; }));
  r.push_back(
      int_key<int>("pretrain.batch_size", [pre](RunConfig& c) { return &pre(c)->batch_size; }));
  r.push_back(dbl_key("pretrain.temp_init", [pre](RunConfig& c) { return &pre(c)->temp_init; }));

  r.push_back(int_key<int>("cluster.k", [](RunConfig& c) { return &c.pipeline.n_clusters; }));

  auto mdl = [](RunConfig& c) { return &c.pipeline.model; };
  r.push_back(int_key<int>("model.d_item", [mdl](RunConfig& c) { return &mdl(c)->d_item; }));
  r.push_back(int_key<int>("model.d_time", [mdl](RunConfig& c) { return &mdl(c)->d_time; }));
  r.push_back(int_key<int>("model.d_loc", [mdl](RunConfig& c) { return &mdl(c)->d_loc; }));
  r.push_back(int_key<int>("model.d_beh", [mdl](RunConfig& c) { return &mdl(c)->d_beh; }));
  r.push_back(int_key<int>("model.n_time_buckets",
                           [mdl](RunConfig& c) { return &mdl(c)->n_time_buckets; }));
  r.push_back(int_key<int>("model.d_stat", [mdl](RunConfig& c) { return &mdl(c)->d_stat; }));
  r.push_back(int_key<int>("model.heads", [mdl](RunConfig& c) { return &mdl(c)->heads; }));
  r.push_back(int_key<int>("model.d_h", [mdl](RunConfig& c) { return &mdl(c)->d_h; }));
  r.push_back(int_key<int>("model.n_blocks", [mdl](RunConfig& c) { return &mdl(c)->n_blocks; }));
  r.push_back(int_key<int>("model.n_gap_buckets",
                           [mdl](RunConfig& c) { return &mdl(c)->n_gap_buckets; }));
  r.push_back(int_key<int>("model.top_k", [mdl](RunConfig& c) { return &mdl(c)->top_k; }));
  r.push_back(int_key<int>("model.cap_b", [mdl](RunConfig& c) { return &mdl(c)->cap_b; }));
  r.push_back(int_key<int>("model.n_s", [mdl](RunConfig& c) { return &mdl(c)->n_s; }));
  r.push_back(
      int_key<int>("model.n_baseline", [mdl](RunConfig& c) { return &mdl(c)->n_baseline; }));
  r.push_back(
      int_key<int>("model.n_profiles", [mdl](RunConfig& c) { return &mdl(c)->n_profiles; }));
  r.push_back(
      int_key<int>("model.d_profile", [mdl](RunConfig& c) { return &mdl(c)->d_profile; }));
  r.push_back(int_key<int>("model.n_hour_buckets",
                           [mdl](RunConfig& c) { return &mdl(c)->n_hour_buckets; }));
  r.push_back(int_key<int>("model.d_hour", [mdl](RunConfig& c) { return &mdl(c)->d_hour; }));
  r.push_back(int_key<int>("model.fusion_hidden",
                           [mdl](RunConfig& c) { return &mdl(c)->fusion_hidden; }));
  r.push_back(dbl_key("model.eps", [mdl](RunConfig& c) { return &mdl(c)->eps; }));
  r.push_back(bool_key("model.disable_stats",
                       [mdl](RunConfig& c) { return &mdl(c)->disable_stats; }));
  r.push_back(bool_key("model.disable_behavior_evolution",
                       [mdl](RunConfig& c) { return &mdl(c)->disable_behavior_evolution; }));

  auto tr = [](RunConfig& c) { return &c.pipeline.train; };
  r.push_back(int_key<int>("train.epochs", [tr](RunConfig& c) { return &tr(c)->epochs; }));
  r.push_back(
      int_key<int>("train.batch_size", [tr](RunConfig& c) { return &tr(c)->batch_size; }));
  r.push_back(dbl_key("train.lr", [tr](RunConfig& c) { return &tr(c)->lr; }));
  r.push_back(dbl_key("train.clip_norm", [tr](RunConfig& c) { return &tr(c)->clip_norm; }));

  r.push_back(KeySpec{
      "sweep.depths",
      [](RunConfig& c, const std::string& v) {
        c.sweep_depths = parse_int_list("sweep.depths", v);
      },
      [](const RunConfig& c) {
        std::string out;
        for (size_t i = 0; i < c.sweep_depths.size(); ++i) {
          if (i) out += ",";
          out += std::to_string(c.sweep_depths[i]);
        }
        return out;
      }});
  r.push_back(
      int_key<int>("serve.candidates", [](RunConfig& c) { return &c.serve_candidates; }));
  r.push_back(int_key<int>("serve.repeats", [](RunConfig& c) { return &c.serve_repeats; }));
  return r;
}

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> r = build_registry();
  return r;
}

}  // namespace

ConfigMap ConfigMap::parse_text(const std::string& text, const std::string& origin) {
  ConfigMap map;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    std::string where = origin + ":" + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("config: unterminated section at " + where);
      section = trim(t.substr(1, t.size() - 2));
      if (!section.empty() && !valid_key(section)) {
        throw ConfigError("config: bad section name '" + section + "' at " + where);
      }
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at " + where);
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    if (!valid_key(key)) throw ConfigError("config: bad key '" + key + "' at " + where);
    if (value.empty()) throw ConfigError("config: empty value for '" + key + "' at " + where);
    map.entries_[key] = value;
  }
  return map;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_text(text, path);
}

void ConfigMap::set_override(const std::string& keyval) {
  size_t eq = keyval.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override '" + keyval + "' is not key=value");
  }
  set(trim(keyval.substr(0, eq)), trim(keyval.substr(eq + 1)));
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw ConfigError("config: bad key '" + key + "'");
  if (value.empty()) throw ConfigError("config: empty value for '" + key + "'");
  entries_[key] = value;
}

RunConfig run_config_from(const ConfigMap& map) {
  RunConfig cfg;
  for (const auto& [key, value] : map.entries()) {
    const KeySpec* spec = nullptr;
    for (const KeySpec& k : registry()) {
      if (k.name == key) {
        spec = &k;
        break;
      }
    }
    if (spec == nullptr) throw ConfigError("config: unknown key '" + key + "'");
    spec->set(cfg, value);
  }
  return cfg;
}

std::string render_resolved(const RunConfig& cfg) {
  // Registry order is already grouped by section; emit sorted for a canonical
  // byte sequence regardless of future registry edits.
  std::vector<std::pair<std::string, std::string>> rows;
  rows.reserve(registry().size());
  for (const KeySpec& k : registry()) rows.emplace_back(k.name, k.get(cfg));
  std::sort(rows.begin(), rows.end());
  std::string out;
  for (const auto& [name, value] : rows) {
    out += name;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

}  // namespace dmgin
