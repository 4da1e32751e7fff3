#include "trojanforge/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string_view>

#include "trojanforge/error.hpp"

#ifndef TROJANFORGE_DATA_DIR
#define TROJANFORGE_DATA_DIR "data"
#endif

namespace trojanforge {

namespace {

namespace fs = std::filesystem;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Value parsing context: the raw text plus what an error message needs.
struct Field {
  std::string_view key;
  std::string_view value;
  std::size_t line;
  const fs::path* base_dir;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("line " + std::to_string(line) + ": " + what);
  }

  double real() const {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || end != value.data() + value.size() || !std::isfinite(v)) {
      fail(std::string(key) + " expects a number, got '" + std::string(value) + "'");
    }
    return v;
  }

  std::uint64_t integer() const {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || end != value.data() + value.size()) {
      fail(std::string(key) + " expects a non-negative integer, got '" + std::string(value) + "'");
    }
    return v;
  }

  std::size_t count(std::size_t min) const {
    const std::uint64_t v = integer();
    if (v < min) fail(std::string(key) + " must be at least " + std::to_string(min));
    return static_cast<std::size_t>(v);
  }

  double open_unit() const {
    const double v = real();
    if (!(v > 0.0 && v < 1.0)) fail(std::string(key) + " out of range (0,1)");
    return v;
  }

  double positive() const {
    const double v = real();
    if (!(v > 0.0)) fail(std::string(key) + " must be positive");
    return v;
  }

  double non_negative() const {
    const double v = real();
    if (!(v >= 0.0)) fail(std::string(key) + " must be non-negative");
    return v;
  }

  bool boolean() const {
    if (value == "true") return true;
    if (value == "false") return false;
    fail(std::string(key) + " expects true or false, got '" + std::string(value) + "'");
  }

  fs::path path() const {
    if (value.empty()) fail(std::string(key) + " expects a path");
    fs::path p(value);
    return p.is_absolute() ? p : (*base_dir / p).lexically_normal();
  }
};

struct KeyDef {
  const char* name;
  std::function<void(ExperimentConfig&, const Field&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string join_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i > 0) s += ',';
    s += std::to_string(dims[i]);
  }
  return s;
}

std::vector<std::size_t> parse_dims(const Field& f) {
  std::vector<std::size_t> dims;
  if (f.value == "none") return dims;
  std::string_view rest = f.value;
  while (true) {
    const auto comma = rest.find(',');
    const std::string_view part = trim(rest.substr(0, comma));
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc{} || end != part.data() + part.size() || v == 0) {
      f.fail(std::string(f.key) + " expects positive integers separated by commas, or none");
    }
    dims.push_back(static_cast<std::size_t>(v));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return dims;
}

#define TF_REAL(field, check)                                                               \
  KeyDef {                                                                                  \
    #field, [](ExperimentConfig& c, const Field& f) { c.field = f.check(); },               \
        [](const ExperimentConfig& c) { return format_double(c.field); }                    \
  }
#define TF_COUNT(field, min)                                                                \
  KeyDef {                                                                                  \
    #field, [](ExperimentConfig& c, const Field& f) { c.field = f.count(min); },            \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                   \
  }
#define TF_AUTO(field, check)                                                               \
  KeyDef {                                                                                  \
    #field,                                                                                 \
        [](ExperimentConfig& c, const Field& f) {                                           \
          if (f.value == "auto") c.field.reset();                                           \
          else c.field = f.check();                                                         \
        },                                                                                  \
        [](const ExperimentConfig& c) { return c.field ? format_double(*c.field) : std::string("auto"); } \
  }
#define TF_PATH(field)                                                                      \
  KeyDef {                                                                                  \
    #field, [](ExperimentConfig& c, const Field& f) { c.field = f.path(); },                \
        [](const ExperimentConfig& c) { return c.field.string(); }                          \
  }

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"data_source",
       [](ExperimentConfig& c, const Field& f) {
         if (f.value == "idx") {
           c.data_source = DataSource::idx;
         } else if (f.value == "synthetic") {
           c.data_source = DataSource::synthetic;
         } else {
           f.fail("data_source must be idx or synthetic");
         }
       },
       [](const ExperimentConfig& c) { return std::string(c.data_source == DataSource::idx ? "idx" : "synthetic"); }},
      TF_PATH(train_images),
      TF_PATH(train_labels),
      TF_PATH(test_images),
      TF_PATH(test_labels),
      TF_COUNT(synthetic_classes, 2),
      TF_COUNT(synthetic_train_per_class, 1),
      TF_COUNT(synthetic_test_per_class, 1),
      TF_COUNT(synthetic_dim, 4),
      TF_REAL(synthetic_sep, positive),
      {"hidden", [](ExperimentConfig& c, const Field& f) { c.hidden = parse_dims(f); },
       [](const ExperimentConfig& c) { return c.hidden.empty() ? std::string("none") : join_dims(c.hidden); }},
      TF_REAL(lr, positive),
      TF_COUNT(epochs, 1),
      TF_COUNT(batch_size, 1),
      TF_COUNT(trigger_size, 1),
      TF_COUNT(trigger_row, 0),
      TF_COUNT(trigger_col, 0),
      {"trigger_value",
       [](ExperimentConfig& c, const Field& f) {
         const double v = f.real();
         if (!(v >= 0.0 && v <= 1.0)) f.fail("trigger_value out of range [0,1]");
         c.trigger_value = v;
       },
       [](const ExperimentConfig& c) { return format_double(c.trigger_value); }},
      TF_COUNT(target_class, 0),
      TF_REAL(alpha, open_unit),
      TF_REAL(gamma, open_unit),
      TF_COUNT(rounds, 1),
      TF_REAL(grid_step, open_unit),
      TF_COUNT(sweep_epochs, 1),
      TF_COUNT(itr, 1),
      TF_REAL(gamma1, positive),
      TF_REAL(gamma2, positive),
      TF_REAL(gamma3, positive),
      TF_COUNT(probe_count, 1),
      TF_COUNT(game_batch_size, 1),
      TF_AUTO(mu, real),
      TF_AUTO(sigma, positive),
      TF_COUNT(bins, 2),
      {"trojan_only_l3", [](ExperimentConfig& c, const Field& f) { c.trojan_only_l3 = f.boolean(); },
       [](const ExperimentConfig& c) { return std::string(c.trojan_only_l3 ? "true" : "false"); }},
      TF_COUNT(trace_every, 1),
      TF_COUNT(eval_batches, 1),
      TF_COUNT(eval_probes, 1),
      TF_COUNT(detector_itr, 1),
      TF_REAL(detector_lr, positive),
      TF_COUNT(verify_draws, 1),
      {"seed", [](ExperimentConfig& c, const Field& f) { c.seed = f.integer(); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      TF_PATH(out_dir),
  };
  return table;
}

#undef TF_REAL
#undef TF_COUNT
#undef TF_PATH
#undef TF_AUTO

// Checks that involve more than one key.
void check_consistency(const ExperimentConfig& c) {
  if (c.data_source == DataSource::synthetic) {
    if (c.synthetic_classes > c.synthetic_dim) {
      throw ConfigError("synthetic_classes must not exceed synthetic_dim");
    }
    if (c.target_class >= c.synthetic_classes) {
      throw ConfigError("target_class out of range for synthetic_classes");
    }
  }
  const double steps = 1.0 / c.grid_step;
  if (std::abs(steps - std::round(steps)) > 1e-9 || std::round(steps) < 4) {
    throw ConfigError("grid_step must divide 1 into at least 4 steps");
  }
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  const fs::path dir = fs::path(TROJANFORGE_DATA_DIR) / "mnist-desk";
  c.train_images = dir / "train-images-idx3-ubyte";
  c.train_labels = dir / "train-labels-idx1-ubyte";
  c.test_images = dir / "t10k-images-idx3-ubyte";
  c.test_labels = dir / "t10k-labels-idx1-ubyte";
  return c;
}

ExperimentConfig parse_config_text(const std::string& text, const fs::path& base_dir) {
  ExperimentConfig cfg = default_config();
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const KeyDef* def = nullptr;
    for (const KeyDef& d : key_table()) {
      if (key == d.name) def = &d;
    }
    if (def == nullptr) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    for (const auto& s : seen) {
      if (s == key) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + s + "'");
    }
    seen.emplace_back(key);
    if (value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + std::string(key) + " has no value");
    }
    def->set(cfg, Field{key, value, line_no, &base_dir});
  }
  check_consistency(cfg);
  return cfg;
}

ExperimentConfig parse_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  const fs::path base = path.has_parent_path() ? fs::absolute(path).parent_path() : fs::current_path();
  return parse_config_text(text.str(), base);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const KeyDef& d : key_table()) {
    if (std::string_view(d.name) == "out_dir") continue;  // where results go does not change them
    out += d.name;
    out += " = ";
    out += d.get(cfg);
    out += '\n';
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const KeyDef& d : key_table()) keys.emplace_back(d.name);
  return keys;
}

}  // namespace trojanforge
