#pragma once

#include "magic/data.hpp"
#include "magic/fbp.hpp"
#include "magic/metrics.hpp"
#include "magic/noise.hpp"
#include "magic/training.hpp"
#include "magic/unrolled.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace magic {

// Values of the TOML subset understood by the config reader: integers,
// floats, booleans, basic strings and (nested) arrays of those.
struct ConfigValue {
  using Array = std::vector<ConfigValue>;
  std::variant<long long, double, bool, std::string, Array> data;

  bool is_int() const { return std::holds_alternative<long long>(data); }
  bool is_number() const { return is_int() || std::holds_alternative<double>(data); }
  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const { return std::holds_alternative<Array>(data); }

  double as_number() const;
  long long as_int() const;
  bool as_bool() const;
  const std::string& as_string() const;
  const Array& as_array() const;

  std::string to_toml() const;
};

// Flattened "table.key" -> value, in file order of first appearance.
struct ConfigTable {
  std::map<std::string, ConfigValue> values;
  std::vector<std::string> order;

  void set(const std::string& key, ConfigValue v);
  bool has(const std::string& key) const { return values.count(key) != 0; }
  const ConfigValue& at(const std::string& key) const;
};

// Parses [table] headers, key = value lines and # comments. Throws
// ConfigError naming the line on malformed input or an empty document.
ConfigTable parse_toml(const std::string& text, const std::string& source = "<config>");
ConfigValue parse_toml_value(const std::string& text);

// Everything one CLI run needs.
struct ExperimentConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  int threads = 1;

  ScanGeometry geometry = ScanGeometry::desk(64, 180);
  NetworkConfig network;
  TrainConfig training;
  FbpFilter fbp_filter = FbpFilter::Ramp;

  // Noise: the named tier sets I0; explicit values override it.
  std::string dose = "10%";
  DoseModel dose_model = DoseModel::preset("10%");
  std::vector<std::string> dose_tiers = {"10%", "5%", "2.5%"};

  // Data.
  PhantomKind phantom = PhantomKind::RandomEllipses;
  int n_train = 20;
  int n_test = 5;
  double labeled_fraction = 1.0;
  double mu_scale = 0.02;   // attenuation (1/mm) of a phantom value of 1
  std::string image_dir;    // when set, images come from here instead of phantoms

  // Metrics.
  double psnr_peak = 0.0;   // <= 0: dynamic range of the reference
  std::vector<Roi> rois;

  // Display.
  DisplayWindow window{0.0, 0.03};
  DisplayWindow diff_window{0.0, 0.005};
  std::optional<HuCalibration> hu;

  // Sweep.
  std::string sweep_parameter = "patch";
  std::vector<double> sweep_values = {4, 5, 6, 7, 8, 9, 10};

  // Every violated constraint, not just the first.
  std::vector<std::string> violations() const;
  void validate() const;

  // Full config in the same format it is read from.
  std::string to_toml() const;
};

// Keys the reader understands, with the tables they live in.
const std::vector<std::string>& known_config_keys();

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<std::string> defaults_applied;  // keys that were not given
};

// Starts from the preset named by the top-level `preset` key ("desk" or
// "clinical"), applies the table, then the overrides ("table.key=value").
// Unknown keys, type errors and constraint violations are all collected into
// one ConfigError.
LoadedConfig config_from_table(const ConfigTable& table, const std::vector<std::string>& overrides = {});
LoadedConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

ExperimentConfig preset_config(const std::string& name);

}  // namespace magic
