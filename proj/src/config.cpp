#include "magic/config.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace magic {

namespace {

std::string type_name(const ConfigValue& v) {
  if (v.is_int()) return "integer";
  if (v.is_number()) return "float";
  if (v.is_bool()) return "boolean";
  if (v.is_string()) return "string";
  return "array";
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

class ValueParser {
 public:
  explicit ValueParser(const std::string& s) : s_(s) {}

  ConfigValue parse_all() {
    ConfigValue v = parse();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected text after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(what + " at column " + std::to_string(pos_ + 1));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  ConfigValue parse() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return {basic_string()};
    if (c == '\'') return {literal_string()};
    if (c == '[') return {array()};
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return {true};
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return {false};
    }
    return number();
  }

  std::string basic_string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unknown escape \\") + e);
        }
      }
      out += c;
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  std::string literal_string() {
    const auto end = s_.find('\'', pos_ + 1);
    if (end == std::string::npos) fail("unterminated string");
    std::string out = s_.substr(pos_ + 1, end - pos_ - 1);
    pos_ = end + 1;
    return out;
  }

  ConfigValue::Array array() {
    ++pos_;
    ConfigValue::Array out;
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return out;
    }
    while (true) {
      out.push_back(parse());
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return out;
        }
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return out;
      }
      fail("expected ',' or ']' in array");
    }
  }

  ConfigValue number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '+' ||
                                s_[pos_] == '-' || s_[pos_] == '.' || s_[pos_] == '_'))
      ++pos_;
    std::string tok = s_.substr(start, pos_ - start);
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    if (tok.empty()) fail("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "+inf" ||
                          tok == "-inf";
    try {
      std::size_t used = 0;
      if (!is_float) {
        const long long v = std::stoll(tok, &used);
        if (used == tok.size()) return {v};
      } else {
        const double v = std::stod(tok, &used);
        if (used == tok.size() && !std::isnan(v)) return {v};
      }
    } catch (const std::exception&) {
    }
    pos_ = start;
    fail("invalid value '" + tok + "'");
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  char quote_char = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote_char) {
      if (c == '\\' && quote_char == '"') {
        ++i;
      } else if (c == quote_char) {
        quote_char = 0;
      }
    } else if (c == '"' || c == '\'') {
      quote_char = c;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  return std::all_of(k.begin(), k.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

int bracket_balance(const std::string& s) {
  int depth = 0;
  char quote_char = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quote_char) {
      if (c == '\\' && quote_char == '"')
        ++i;
      else if (c == quote_char)
        quote_char = 0;
    } else if (c == '"' || c == '\'') {
      quote_char = c;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      --depth;
    }
  }
  return depth;
}

const std::vector<std::string> kKeys = {
    "preset",
    "seed",
    "threads",
    "geometry.source_to_center",
    "geometry.detector_to_center",
    "geometry.n_detectors",
    "geometry.detector_pitch",
    "geometry.n_views",
    "geometry.angular_span_deg",
    "geometry.image_rows",
    "geometry.image_cols",
    "geometry.pixel_size",
    "network.blocks",
    "network.coarse_blocks",
    "network.channels",
    "network.patch_rows",
    "network.patch_cols",
    "network.step_rows",
    "network.step_cols",
    "network.neighbors",
    "network.graph_width",
    "network.zero_graph_output",
    "network.use_graph",
    "network.activation",
    "training.epochs",
    "training.max_steps",
    "training.batch_size",
    "training.learning_rate",
    "training.beta1",
    "training.beta2",
    "training.epsilon",
    "training.grad_clip",
    "training.loss",
    "training.proj_weight",
    "fbp.filter",
    "noise.dose",
    "noise.incident_photons",
    "noise.electronic_variance",
    "noise.tiers",
    "data.phantom",
    "data.n_train",
    "data.n_test",
    "data.labeled_fraction",
    "data.mu_scale",
    "data.image_dir",
    "metrics.psnr_peak",
    "metrics.rois",
    "display.window",
    "display.diff_window",
    "display.hu_slope",
    "display.hu_intercept",
    "sweep.parameter",
    "sweep.values",
};

// Shorthands that set two keys at once.
const std::map<std::string, std::pair<std::string, std::string>> kPairs = {
    {"network.patch", {"network.patch_rows", "network.patch_cols"}},
    {"network.step", {"network.step_rows", "network.step_cols"}},
    {"geometry.image_size", {"geometry.image_rows", "geometry.image_cols"}},
};

const std::vector<std::string> kSweepParameters = {"patch",     "blocks",      "coarse_blocks",   "graph_width",
                                                   "channels",  "neighbors",   "labeled_fraction"};

}  // namespace

double ConfigValue::as_number() const {
  if (const auto* i = std::get_if<long long>(&data)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&data)) return *d;
  throw ConfigError("expected a number, got " + type_name(*this));
}

long long ConfigValue::as_int() const {
  if (const auto* i = std::get_if<long long>(&data)) return *i;
  throw ConfigError("expected an integer, got " + type_name(*this));
}

bool ConfigValue::as_bool() const {
  if (const auto* b = std::get_if<bool>(&data)) return *b;
  throw ConfigError("expected a boolean, got " + type_name(*this));
}

const std::string& ConfigValue::as_string() const {
  if (const auto* s = std::get_if<std::string>(&data)) return *s;
  throw ConfigError("expected a string, got " + type_name(*this));
}

const ConfigValue::Array& ConfigValue::as_array() const {
  if (const auto* a = std::get_if<Array>(&data)) return *a;
  throw ConfigError("expected an array, got " + type_name(*this));
}

std::string ConfigValue::to_toml() const {
  if (const auto* i = std::get_if<long long>(&data)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&data)) return format_double(*d);
  if (const auto* b = std::get_if<bool>(&data)) return *b ? "true" : "false";
  if (const auto* s = std::get_if<std::string>(&data)) return quote(*s);
  std::string out = "[";
  const auto& a = std::get<Array>(data);
  for (std::size_t i = 0; i < a.size(); ++i) out += (i ? ", " : "") + a[i].to_toml();
  return out + "]";
}

void ConfigTable::set(const std::string& key, ConfigValue v) {
  if (!has(key)) order.push_back(key);
  values[key] = std::move(v);
}

const ConfigValue& ConfigTable::at(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

ConfigValue parse_toml_value(const std::string& text) { return ValueParser(text).parse_all(); }

ConfigTable parse_toml(const std::string& text, const std::string& source) {
  ConfigTable out;
  std::istringstream is(text);
  std::string raw;
  std::string table;
  int lineno = 0;
  bool any = false;
  while (std::getline(is, raw)) {
    ++lineno;
    const int start_line = lineno;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    any = true;
    const auto where = [&] { return source + ":" + std::to_string(start_line) + ": "; };
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where() + "malformed table header");
      table = trim(line.substr(1, line.size() - 2));
      if (!valid_key(table)) throw ConfigError(where() + "invalid table name '" + table + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_key(key) || key.find('.') != std::string::npos)
      throw ConfigError(where() + "invalid key '" + key + "'");
    std::string value = trim(line.substr(eq + 1));
    // Arrays may continue over several lines.
    while (bracket_balance(value) > 0 && std::getline(is, raw)) {
      ++lineno;
      value += " " + trim(strip_comment(raw));
    }
    const std::string full = table.empty() ? key : table + "." + key;
    if (out.has(full)) throw ConfigError(where() + "duplicate key '" + full + "'");
    try {
      out.set(full, parse_toml_value(value));
    } catch (const ConfigError& e) {
      throw ConfigError(where() + "key '" + full + "': " + e.what());
    }
  }
  if (!any) throw ConfigError(source + ": parse error: configuration is empty");
  return out;
}

const std::vector<std::string>& known_config_keys() { return kKeys; }

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") {
    c.preset = "desk";
    return c;
  }
  if (name == "clinical") {
    c.preset = "clinical";
    c.geometry = ScanGeometry::clinical();
    c.network = NetworkConfig::clinical();
    c.n_train = 400;
    c.n_test = 100;
    c.labeled_fraction = 0.1;
    c.window = {-160.0, 240.0};
    c.diff_window = {0.0, 100.0};
    c.hu = HuCalibration{1000.0 / 0.02, -1000.0};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or clinical)");
}

std::vector<std::string> ExperimentConfig::violations() const {
  std::vector<std::string> out = geometry.violations();
  for (auto& v : out) v = "geometry: " + v;
  if (geometry.violations().empty()) {
    for (const auto& v : network.violations(geometry)) out.push_back(v);
    if (geometry.n_detectors < 2) out.push_back("geometry.n_detectors must be >= 2 for FBP");
  }
  for (const auto& v : training.violations()) out.push_back(v);
  if (threads < 1) out.push_back("threads must be >= 1");
  if (!(dose_model.incident_photons > 0.0) || !std::isfinite(dose_model.incident_photons))
    out.push_back("noise.incident_photons must be > 0");
  if (!(dose_model.electronic_variance >= 0.0) || !std::isfinite(dose_model.electronic_variance))
    out.push_back("noise.electronic_variance must be >= 0");
  for (const auto& t : dose_tiers) {
    try {
      DoseModel::preset(t);
    } catch (const ConfigError&) {
      out.push_back("noise.tiers: unknown dose tier '" + t + "' (expected 100%, 10%, 5% or 2.5%)");
    }
  }
  if (dose_tiers.empty()) out.push_back("noise.tiers must not be empty");
  if (n_train < 1) out.push_back("data.n_train must be >= 1");
  if (n_test < 1) out.push_back("data.n_test must be >= 1");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0)) out.push_back("data.labeled_fraction must lie in [0, 1]");
  if (!(mu_scale > 0.0)) out.push_back("data.mu_scale must be > 0");
  if (image_dir.empty() && (geometry.image_rows < 16 || geometry.image_cols < 16))
    out.push_back("phantoms need an image of at least 16 x 16");
  if (!(window.hi > window.lo)) out.push_back("display.window must satisfy lo < hi");
  if (!(diff_window.hi > diff_window.lo)) out.push_back("display.diff_window must satisfy lo < hi");
  if (hu && !(hu->slope != 0.0)) out.push_back("display.hu_slope must be nonzero");
  if (psnr_peak < 0.0) out.push_back("metrics.psnr_peak must be >= 0 (0 selects the reference range)");
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto& r = rois[i];
    if (r.height < 1 || r.width < 1 || r.row < 0 || r.col < 0 || r.row + r.height > geometry.image_rows ||
        r.col + r.width > geometry.image_cols)
      out.push_back("metrics.rois[" + std::to_string(i) + "] lies outside the image");
  }
  if (std::find(kSweepParameters.begin(), kSweepParameters.end(), sweep_parameter) == kSweepParameters.end())
    out.push_back("sweep.parameter '" + sweep_parameter +
                  "' is not one of patch, blocks, coarse_blocks, graph_width, channels, neighbors, labeled_fraction");
  if (sweep_values.empty()) out.push_back("sweep.values must not be empty");
  return out;
}

void ExperimentConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = std::to_string(v.size()) + " configuration error(s): " + v.front();
  for (std::size_t i = 1; i < v.size(); ++i) msg += "; " + v[i];
  throw ConfigError(msg);
}

namespace {

ConfigValue num(double v) { return {v}; }
ConfigValue integer(long long v) { return {v}; }
ConfigValue str(const std::string& v) { return {v}; }
ConfigValue pair(double a, double b) { return {ConfigValue::Array{num(a), num(b)}}; }

std::map<std::string, ConfigValue> current_values(const ExperimentConfig& c) {
  std::map<std::string, ConfigValue> m;
  const auto& g = c.geometry;
  m["preset"] = str(c.preset);
  m["seed"] = integer(static_cast<long long>(c.seed));
  m["threads"] = integer(c.threads);
  m["geometry.source_to_center"] = num(g.source_to_center);
  m["geometry.detector_to_center"] = num(g.detector_to_center);
  m["geometry.n_detectors"] = integer(g.n_detectors);
  m["geometry.detector_pitch"] = num(g.detector_pitch);
  m["geometry.n_views"] = integer(g.n_views);
  m["geometry.angular_span_deg"] = num(g.angular_span * 180.0 / std::numbers::pi);
  m["geometry.image_rows"] = integer(g.image_rows);
  m["geometry.image_cols"] = integer(g.image_cols);
  m["geometry.pixel_size"] = num(g.pixel_size);
  const auto& n = c.network;
  m["network.blocks"] = integer(n.blocks);
  m["network.coarse_blocks"] = integer(n.coarse_blocks);
  m["network.channels"] = integer(n.channels);
  m["network.patch_rows"] = integer(n.patch_rows);
  m["network.patch_cols"] = integer(n.patch_cols);
  m["network.step_rows"] = integer(n.step_rows);
  m["network.step_cols"] = integer(n.step_cols);
  m["network.neighbors"] = integer(n.neighbors);
  m["network.graph_width"] = integer(n.graph_width);
  m["network.zero_graph_output"] = ConfigValue{n.zero_graph_output};
  m["network.use_graph"] = ConfigValue{n.use_graph};
  m["network.activation"] = str(to_string(n.activation));
  const auto& t = c.training;
  m["training.epochs"] = integer(t.epochs);
  m["training.max_steps"] = integer(t.max_steps);
  m["training.batch_size"] = integer(t.batch_size);
  m["training.learning_rate"] = num(t.learning_rate);
  m["training.beta1"] = num(t.beta1);
  m["training.beta2"] = num(t.beta2);
  m["training.epsilon"] = num(t.epsilon);
  m["training.grad_clip"] = num(t.grad_clip);
  m["training.loss"] = str(to_string(t.loss));
  m["training.proj_weight"] = num(t.proj_weight);
  m["fbp.filter"] = str(to_string(c.fbp_filter));
  m["noise.dose"] = str(c.dose);
  m["noise.incident_photons"] = num(c.dose_model.incident_photons);
  m["noise.electronic_variance"] = num(c.dose_model.electronic_variance);
  ConfigValue::Array tiers;
  for (const auto& s : c.dose_tiers) tiers.push_back(str(s));
  m["noise.tiers"] = {tiers};
  m["data.phantom"] = str(to_string(c.phantom));
  m["data.n_train"] = integer(c.n_train);
  m["data.n_test"] = integer(c.n_test);
  m["data.labeled_fraction"] = num(c.labeled_fraction);
  m["data.mu_scale"] = num(c.mu_scale);
  m["data.image_dir"] = str(c.image_dir);
  m["metrics.psnr_peak"] = num(c.psnr_peak);
  ConfigValue::Array rois;
  for (const auto& r : c.rois)
    rois.push_back({ConfigValue::Array{integer(r.row), integer(r.col), integer(r.height), integer(r.width)}});
  m["metrics.rois"] = {rois};
  m["display.window"] = pair(c.window.lo, c.window.hi);
  m["display.diff_window"] = pair(c.diff_window.lo, c.diff_window.hi);
  m["display.hu_slope"] = num(c.hu ? c.hu->slope : 0.0);
  m["display.hu_intercept"] = num(c.hu ? c.hu->intercept : 0.0);
  m["sweep.parameter"] = str(c.sweep_parameter);
  ConfigValue::Array vals;
  for (double v : c.sweep_values) vals.push_back(num(v));
  m["sweep.values"] = {vals};
  return m;
}

int to_int(const ConfigValue& v) {
  const long long i = v.as_int();
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max())
    throw ConfigError("integer out of range");
  return static_cast<int>(i);
}

DisplayWindow to_window(const ConfigValue& v) {
  const auto& a = v.as_array();
  if (a.size() != 2) throw ConfigError("expected [lo, hi]");
  return {a[0].as_number(), a[1].as_number()};
}

void apply(ExperimentConfig& c, const std::string& key, const ConfigValue& v) {
  auto& g = c.geometry;
  auto& n = c.network;
  auto& t = c.training;
  if (key == "preset") {
    c.preset = v.as_string();
  } else if (key == "seed") {
    const long long s = v.as_int();
    if (s < 0) throw ConfigError("must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  } else if (key == "threads") {
    c.threads = to_int(v);
  } else if (key == "geometry.source_to_center") {
    g.source_to_center = v.as_number();
  } else if (key == "geometry.detector_to_center") {
    g.detector_to_center = v.as_number();
  } else if (key == "geometry.n_detectors") {
    g.n_detectors = to_int(v);
  } else if (key == "geometry.detector_pitch") {
    g.detector_pitch = v.as_number();
  } else if (key == "geometry.n_views") {
    g.n_views = to_int(v);
  } else if (key == "geometry.angular_span_deg") {
    g.angular_span = v.as_number() * std::numbers::pi / 180.0;
  } else if (key == "geometry.image_rows") {
    g.image_rows = to_int(v);
  } else if (key == "geometry.image_cols") {
    g.image_cols = to_int(v);
  } else if (key == "geometry.pixel_size") {
    g.pixel_size = v.as_number();
  } else if (key == "network.blocks") {
    n.blocks = to_int(v);
  } else if (key == "network.coarse_blocks") {
    n.coarse_blocks = to_int(v);
  } else if (key == "network.channels") {
    n.channels = to_int(v);
  } else if (key == "network.patch_rows") {
    n.patch_rows = to_int(v);
  } else if (key == "network.patch_cols") {
    n.patch_cols = to_int(v);
  } else if (key == "network.step_rows") {
    n.step_rows = to_int(v);
  } else if (key == "network.step_cols") {
    n.step_cols = to_int(v);
  } else if (key == "network.neighbors") {
    n.neighbors = to_int(v);
  } else if (key == "network.graph_width") {
    n.graph_width = to_int(v);
  } else if (key == "network.use_graph") {
    n.use_graph = v.as_bool();
  } else if (key == "network.zero_graph_output") {
    n.zero_graph_output = v.as_bool();
  } else if (key == "network.activation") {
    n.activation = parse_activation(v.as_string());
  } else if (key == "training.epochs") {
    t.epochs = to_int(v);
  } else if (key == "training.max_steps") {
    t.max_steps = to_int(v);
  } else if (key == "training.batch_size") {
    t.batch_size = to_int(v);
  } else if (key == "training.learning_rate") {
    t.learning_rate = v.as_number();
  } else if (key == "training.beta1") {
    t.beta1 = v.as_number();
  } else if (key == "training.beta2") {
    t.beta2 = v.as_number();
  } else if (key == "training.epsilon") {
    t.epsilon = v.as_number();
  } else if (key == "training.grad_clip") {
    t.grad_clip = v.as_number();
  } else if (key == "training.loss") {
    t.loss = parse_loss_mode(v.as_string());
  } else if (key == "training.proj_weight") {
    t.proj_weight = v.as_number();
  } else if (key == "fbp.filter") {
    c.fbp_filter = parse_fbp_filter(v.as_string());
  } else if (key == "noise.dose") {
    c.dose = v.as_string();
    const auto p = DoseModel::preset(c.dose);
    c.dose_model.incident_photons = p.incident_photons;
    c.dose_model.electronic_variance = p.electronic_variance;
  } else if (key == "noise.incident_photons") {
    c.dose_model.incident_photons = v.as_number();
  } else if (key == "noise.electronic_variance") {
    c.dose_model.electronic_variance = v.as_number();
  } else if (key == "noise.tiers") {
    c.dose_tiers.clear();
    for (const auto& e : v.as_array()) c.dose_tiers.push_back(e.as_string());
  } else if (key == "data.phantom") {
    c.phantom = parse_phantom_kind(v.as_string());
  } else if (key == "data.n_train") {
    c.n_train = to_int(v);
  } else if (key == "data.n_test") {
    c.n_test = to_int(v);
  } else if (key == "data.labeled_fraction") {
    c.labeled_fraction = v.as_number();
  } else if (key == "data.mu_scale") {
    c.mu_scale = v.as_number();
  } else if (key == "data.image_dir") {
    c.image_dir = v.as_string();
  } else if (key == "metrics.psnr_peak") {
    c.psnr_peak = v.as_number();
  } else if (key == "metrics.rois") {
    c.rois.clear();
    for (const auto& e : v.as_array()) {
      const auto& a = e.as_array();
      if (a.size() != 4) throw ConfigError("each ROI is [row, col, height, width]");
      c.rois.push_back({to_int(a[0]), to_int(a[1]), to_int(a[2]), to_int(a[3])});
    }
  } else if (key == "display.window") {
    c.window = to_window(v);
  } else if (key == "display.diff_window") {
    c.diff_window = to_window(v);
  } else if (key == "display.hu_slope") {
    const double s = v.as_number();
    if (s == 0.0) {
      c.hu.reset();
    } else {
      if (!c.hu) c.hu = HuCalibration{};
      c.hu->slope = s;
    }
  } else if (key == "display.hu_intercept") {
    const double b = v.as_number();
    if (c.hu)
      c.hu->intercept = b;
    else if (b != 0.0)
      throw ConfigError("needs a nonzero display.hu_slope");
  } else if (key == "sweep.parameter") {
    c.sweep_parameter = v.as_string();
  } else if (key == "sweep.values") {
    c.sweep_values.clear();
    for (const auto& e : v.as_array()) c.sweep_values.push_back(e.as_number());
  } else {
    throw ConfigError("unknown key");
  }
}

// Order in which keys are applied: the noise tier before explicit photon
// counts, slope before intercept.
int apply_rank(const std::string& key) {
  if (key == "noise.dose") return 0;
  if (key == "display.hu_slope") return 0;
  return 1;
}

}  // namespace

std::string ExperimentConfig::to_toml() const {
  const auto m = current_values(*this);
  std::ostringstream os;
  std::string table;
  for (const auto& key : kKeys) {
    const auto dot = key.find('.');
    const std::string t = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string k = dot == std::string::npos ? key : key.substr(dot + 1);
    if (t != table) {
      os << "\n[" << t << "]\n";
      table = t;
    }
    os << k << " = " << m.at(key).to_toml() << "\n";
  }
  return os.str();
}

LoadedConfig config_from_table(const ConfigTable& table, const std::vector<std::string>& overrides) {
  std::vector<std::string> errors;
  ConfigTable merged = table;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      errors.push_back("override '" + o + "' must look like table.key=value");
      continue;
    }
    const std::string key = trim(o.substr(0, eq));
    const std::string text = trim(o.substr(eq + 1));
    ConfigValue v;
    try {
      v = parse_toml_value(text);
    } catch (const ConfigError&) {
      v = ConfigValue{text};  // bare words such as shepp-logan
    }
    merged.set(key, v);
  }

  // Expand shorthands.
  ConfigTable expanded;
  for (const auto& key : merged.order) {
    const auto& v = merged.values.at(key);
    const auto p = kPairs.find(key);
    if (p != kPairs.end()) {
      expanded.set(p->second.first, v);
      expanded.set(p->second.second, v);
    } else {
      expanded.set(key, v);
    }
  }

  std::string preset = "desk";
  if (expanded.has("preset")) {
    try {
      preset = expanded.at("preset").as_string();
    } catch (const ConfigError& e) {
      errors.push_back(std::string("preset: ") + e.what());
    }
  }
  LoadedConfig out;
  try {
    out.config = preset_config(preset);
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }

  std::vector<std::string> keys = expanded.order;
  std::stable_sort(keys.begin(), keys.end(),
                   [](const std::string& a, const std::string& b) { return apply_rank(a) < apply_rank(b); });
  const std::set<std::string> known(kKeys.begin(), kKeys.end());
  for (const auto& key : keys) {
    if (!known.count(key)) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      apply(out.config, key, expanded.at(key));
    } catch (const Error& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  // Derived seeds follow the run seed unless set explicitly elsewhere.
  out.config.training.seed = out.config.seed;
  out.config.dose_model.seed = out.config.seed;

  for (const auto& key : kKeys)
    if (!expanded.has(key)) out.defaults_applied.push_back(key);

  for (const auto& v : out.config.violations()) errors.push_back(v);
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " configuration error(s): " + errors.front();
    for (std::size_t i = 1; i < errors.size(); ++i) msg += "; " + errors[i];
    throw ConfigError(msg);
  }
  return out;
}

LoadedConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return config_from_table(parse_toml(ss.str(), path), overrides);
}

}  // namespace magic
