#include "pathseek/config.hpp"

#include <charconv>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace pathseek {

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("preset: expected desk or paper, got '" + preset + "'");
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  pyramid.validate();
  model.validate();
  reasoner.validate();
  train.validate();
  baseline.validate();
  if (model.input_dim != pyramid.feature_dim)
    throw ConfigError("model.input_dim: must equal pyramid.feature_dim (" + std::to_string(pyramid.feature_dim) + ")");
  if (model.num_classes != pyramid.num_classes)
    throw ConfigError("model.num_classes: must equal pyramid.num_classes (" + std::to_string(pyramid.num_classes) +
                      ")");
  if (reasoner.num_scales != pyramid.num_scales)
    throw ConfigError("reasoner.num_scales: must equal pyramid.num_scales (" + std::to_string(pyramid.num_scales) +
                      ")");
  if (data.count < 1) throw ConfigError("data.count: must be >= 1");
  if (!(data.train_fraction >= 0.0 && data.val_fraction >= 0.0 && data.train_fraction + data.val_fraction <= 1.0))
    throw ConfigError("data.train_fraction: fractions must be >= 0 and sum to at most 1");
  if (bench.k_grid.empty()) throw ConfigError("bench.k_grid: must not be empty");
  for (int k : bench.k_grid)
    if (k < 1) throw ConfigError("bench.k_grid: entries must be >= 1");
  if (bench.delta_grid.empty()) throw ConfigError("bench.delta_grid: must not be empty");
  for (double d : bench.delta_grid)
    if (!(d >= 0.0) || !std::isfinite(d)) throw ConfigError("bench.delta_grid: entries must be finite and >= 0");
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  pyramid.seed = derive_seed(s, 1);
  model.seed = derive_seed(s, 2);
  reasoner.seed = derive_seed(s, 3);
  train.seed = derive_seed(s, 4);
  baseline.seed = derive_seed(s, 5);
}

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.train.epochs = 12;
  c.train.learning_rate = 1e-3;
  c.train.warmup_steps = 100;
  c.train.schedule = Schedule::cosine;
  c.train.weight_decay = 0.0;
  c.train.grad_clip = -1.0;
  c.baseline.epochs = 10;
  c.apply_seed(1);
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.pyramid.num_scales = 4;
  c.pyramid.feature_dim = 1024;
  c.model.latent_dim = 4096;
  c.model.input_dim = 1024;
  c.model.history_len = 30;
  c.model.memory_hidden = 64;
  c.model.synapse_depth = 12;
  c.model.sync_out = 150;
  c.model.sync_action = 150;
  c.model.heads = 16;
  c.model.head_dim = 64;
  c.model.fusion_hidden = 256;
  c.model.dropout = 0.05;
  c.reasoner.ticks_per_scale = 20;
  c.reasoner.num_scales = 4;
  c.reasoner.top_k = 10;
  c.reasoner.confidence_threshold = 0.9;
  c.train = TrainConfig{};
  c.train.epochs = 50;
  c.train.learning_rate = 5e-5;
  c.train.warmup_steps = 5000;
  c.train.schedule = Schedule::cosine;
  c.train.weight_decay = 0.0;
  c.train.batch_size = 1;
  c.train.grad_clip = -1.0;
  c.baseline.epochs = 50;
  c.apply_seed(1);
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("preset: expected desk or paper, got '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse value '" + text + "'");
  }
  if (used != text.size()) throw ConfigError(where + ": cannot parse value '" + text + "'");
  return v;
}

ConfigValue parse_value(const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError(where + ": missing value");
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError(where + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v.front() == '[') {
    if (v.back() != ']') throw ConfigError(where + ": unterminated array");
    std::vector<double> out;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(parse_number(item, where));
    }
    return out;
  }
  if (v.find_first_not_of("0123456789") == std::string::npos) {
    std::uint64_t n = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(where + ": integer out of range");
    return n;
  }
  return parse_number(v, where);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const ConfigValue&)> set;
  std::function<std::string(const RunConfig&)> show;
};

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  std::string s = os.str();
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

double as_double(const ConfigValue& v, const std::string& key) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* n = std::get_if<std::uint64_t>(&v)) return static_cast<double>(*n);
  throw ConfigError(key + ": expected a number");
}

long long as_integer(const ConfigValue& v, const std::string& key) {
  if (const auto* n = std::get_if<std::uint64_t>(&v)) {
    if (*n > static_cast<std::uint64_t>(std::numeric_limits<long long>::max())) throw ConfigError(key + ": out of range");
    return static_cast<long long>(*n);
  }
  const double d = as_double(v, key);
  if (std::floor(d) != d || std::abs(d) > 9.0e15) throw ConfigError(key + ": expected an integer");
  return static_cast<long long>(d);
}

template <typename Get>
Field int_field(const std::string& key, Get get) {
  return {key,
          [key, get](RunConfig& c, const ConfigValue& v) {
            const long long n = as_integer(v, key);
            if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max())
              throw ConfigError(key + ": out of range");
            get(c) = static_cast<int>(n);
          },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field seed_field(const std::string& key, Get get) {
  return {key,
          [key, get](RunConfig& c, const ConfigValue& v) {
            if (const auto* n = std::get_if<std::uint64_t>(&v)) {
              get(c) = *n;
              return;
            }
            const long long n = as_integer(v, key);
            if (n < 0) throw ConfigError(key + ": must be >= 0");
            get(c) = static_cast<std::uint64_t>(n);
          },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field double_field(const std::string& key, Get get) {
  return {key, [key, get](RunConfig& c, const ConfigValue& v) { get(c) = as_double(v, key); },
          [get](const RunConfig& c) { return format_double(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field bool_field(const std::string& key, Get get) {
  return {key,
          [key, get](RunConfig& c, const ConfigValue& v) {
            const auto* b = std::get_if<bool>(&v);
            if (!b) throw ConfigError(key + ": expected true or false");
            get(c) = *b;
          },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"preset",
                 [](RunConfig& c, const ConfigValue& v) {
                   const auto* s = std::get_if<std::string>(&v);
                   if (!s) throw ConfigError("preset: expected a string");
                   c.preset = *s;
                 },
                 [](const RunConfig& c) { return "\"" + c.preset + "\""; }});
    f.push_back(seed_field("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(int_field("workers", [](RunConfig& c) -> int& { return c.workers; }));

    f.push_back(int_field("pyramid.num_scales", [](RunConfig& c) -> int& { return c.pyramid.num_scales; }));
    f.push_back(int_field("pyramid.coarse_grid", [](RunConfig& c) -> int& { return c.pyramid.coarse_grid; }));
    f.push_back(int_field("pyramid.branching", [](RunConfig& c) -> int& { return c.pyramid.branching; }));
    f.push_back(int_field("pyramid.feature_dim", [](RunConfig& c) -> int& { return c.pyramid.feature_dim; }));
    f.push_back(int_field("pyramid.num_classes", [](RunConfig& c) -> int& { return c.pyramid.num_classes; }));
    f.push_back(double_field("pyramid.coarse_snr", [](RunConfig& c) -> double& { return c.pyramid.coarse_snr; }));
    f.push_back(
        double_field("pyramid.lesion_fraction", [](RunConfig& c) -> double& { return c.pyramid.lesion_fraction; }));
    f.push_back(double_field("pyramid.noise_sigma", [](RunConfig& c) -> double& { return c.pyramid.noise_sigma; }));
    f.push_back(
        double_field("pyramid.feature_norm_cap", [](RunConfig& c) -> double& { return c.pyramid.feature_norm_cap; }));
    f.push_back(seed_field("pyramid.seed", [](RunConfig& c) -> std::uint64_t& { return c.pyramid.seed; }));

    f.push_back(int_field("model.latent_dim", [](RunConfig& c) -> int& { return c.model.latent_dim; }));
    f.push_back(int_field("model.input_dim", [](RunConfig& c) -> int& { return c.model.input_dim; }));
    f.push_back(int_field("model.history_len", [](RunConfig& c) -> int& { return c.model.history_len; }));
    f.push_back(int_field("model.memory_hidden", [](RunConfig& c) -> int& { return c.model.memory_hidden; }));
    f.push_back(int_field("model.synapse_depth", [](RunConfig& c) -> int& { return c.model.synapse_depth; }));
    f.push_back(int_field("model.sync_out", [](RunConfig& c) -> int& { return c.model.sync_out; }));
    f.push_back(int_field("model.sync_action", [](RunConfig& c) -> int& { return c.model.sync_action; }));
    f.push_back(int_field("model.heads", [](RunConfig& c) -> int& { return c.model.heads; }));
    f.push_back(int_field("model.head_dim", [](RunConfig& c) -> int& { return c.model.head_dim; }));
    f.push_back(int_field("model.num_classes", [](RunConfig& c) -> int& { return c.model.num_classes; }));
    f.push_back(int_field("model.fusion_hidden", [](RunConfig& c) -> int& { return c.model.fusion_hidden; }));
    f.push_back(int_field("model.fusion_depth", [](RunConfig& c) -> int& { return c.model.fusion_depth; }));
    f.push_back(double_field("model.dropout", [](RunConfig& c) -> double& { return c.model.dropout; }));
    f.push_back(bool_field("model.literal_latent_scaling",
                           [](RunConfig& c) -> bool& { return c.model.literal_latent_scaling; }));
    f.push_back(seed_field("model.seed", [](RunConfig& c) -> std::uint64_t& { return c.model.seed; }));

    f.push_back(
        int_field("reasoner.ticks_per_scale", [](RunConfig& c) -> int& { return c.reasoner.ticks_per_scale; }));
    f.push_back(int_field("reasoner.num_scales", [](RunConfig& c) -> int& { return c.reasoner.num_scales; }));
    f.push_back(int_field("reasoner.top_k", [](RunConfig& c) -> int& { return c.reasoner.top_k; }));
    f.push_back(double_field("reasoner.confidence_threshold",
                             [](RunConfig& c) -> double& { return c.reasoner.confidence_threshold; }));
    f.push_back(
        bool_field("reasoner.stopping_enabled", [](RunConfig& c) -> bool& { return c.reasoner.stopping_enabled; }));
    f.push_back(seed_field("reasoner.seed", [](RunConfig& c) -> std::uint64_t& { return c.reasoner.seed; }));

    f.push_back(double_field("cost.tile", [](RunConfig& c) -> double& { return c.reasoner.cost.tile; }));
    f.push_back(double_field("cost.encode", [](RunConfig& c) -> double& { return c.reasoner.cost.encode; }));
    f.push_back(double_field("cost.tick", [](RunConfig& c) -> double& { return c.reasoner.cost.tick; }));

    f.push_back(int_field("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    f.push_back(double_field("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    f.push_back(int_field("train.warmup_steps", [](RunConfig& c) -> int& { return c.train.warmup_steps; }));
    f.push_back({"train.schedule",
                 [](RunConfig& c, const ConfigValue& v) {
                   const auto* s = std::get_if<std::string>(&v);
                   if (!s) throw ConfigError("train.schedule: expected a string");
                   c.train.schedule = parse_schedule(*s);
                 },
                 [](const RunConfig& c) { return std::string("\"") + to_string(c.train.schedule) + "\""; }});
    f.push_back(double_field("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    f.push_back(int_field("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }));
    f.push_back(double_field("train.grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; }));
    f.push_back(
        int_field("train.multistep_interval", [](RunConfig& c) -> int& { return c.train.multistep_interval; }));
    f.push_back(
        double_field("train.multistep_gamma", [](RunConfig& c) -> double& { return c.train.multistep_gamma; }));
    f.push_back(seed_field("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));

    f.push_back(int_field("baseline.hidden", [](RunConfig& c) -> int& { return c.baseline.hidden; }));
    f.push_back(int_field("baseline.attention_dim", [](RunConfig& c) -> int& { return c.baseline.attention_dim; }));
    f.push_back(int_field("baseline.epochs", [](RunConfig& c) -> int& { return c.baseline.epochs; }));
    f.push_back(
        double_field("baseline.learning_rate", [](RunConfig& c) -> double& { return c.baseline.learning_rate; }));
    f.push_back(int_field("baseline.warmup_steps", [](RunConfig& c) -> int& { return c.baseline.warmup_steps; }));
    f.push_back(
        double_field("baseline.weight_decay", [](RunConfig& c) -> double& { return c.baseline.weight_decay; }));
    f.push_back(seed_field("baseline.seed", [](RunConfig& c) -> std::uint64_t& { return c.baseline.seed; }));

    f.push_back({"data.count",
                 [](RunConfig& c, const ConfigValue& v) {
                   const long long n = as_integer(v, "data.count");
                   if (n < 1) throw ConfigError("data.count: must be >= 1");
                   c.data.count = static_cast<std::size_t>(n);
                 },
                 [](const RunConfig& c) { return std::to_string(c.data.count); }});
    f.push_back(double_field("data.train_fraction", [](RunConfig& c) -> double& { return c.data.train_fraction; }));
    f.push_back(double_field("data.val_fraction", [](RunConfig& c) -> double& { return c.data.val_fraction; }));

    f.push_back({"bench.k_grid",
                 [](RunConfig& c, const ConfigValue& v) {
                   const auto* a = std::get_if<std::vector<double>>(&v);
                   if (!a) throw ConfigError("bench.k_grid: expected an array");
                   c.bench.k_grid.clear();
                   for (double d : *a) c.bench.k_grid.push_back(static_cast<int>(as_integer(d, "bench.k_grid")));
                 },
                 [](const RunConfig& c) {
                   std::string s = "[";
                   for (std::size_t i = 0; i < c.bench.k_grid.size(); ++i)
                     s += (i ? ", " : "") + std::to_string(c.bench.k_grid[i]);
                   return s + "]";
                 }});
    f.push_back({"bench.delta_grid",
                 [](RunConfig& c, const ConfigValue& v) {
                   const auto* a = std::get_if<std::vector<double>>(&v);
                   if (!a) throw ConfigError("bench.delta_grid: expected an array");
                   c.bench.delta_grid = *a;
                 },
                 [](const RunConfig& c) {
                   std::string s = "[";
                   for (std::size_t i = 0; i < c.bench.delta_grid.size(); ++i)
                     s += (i ? ", " : "") + format_double(c.bench.delta_grid[i]);
                   return s + "]";
                 }});
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

ConfigTable parse_config(const std::string& text) {
  ConfigTable table;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = "line " + std::to_string(number);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) throw ConfigError(full + ": duplicate key (" + where + ")");
    table[full] = parse_value(line.substr(eq + 1), full);
  }
  return table;
}

ConfigTable load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_config(RunConfig& config, const ConfigTable& table) {
  for (const auto& [key, value] : table)
    if (!find_field(key)) throw ConfigError(key + ": unknown key");
  if (auto it = table.find("seed"); it != table.end()) {
    RunConfig probe;
    find_field("seed")->set(probe, it->second);
    config.apply_seed(probe.seed);
  }
  for (const auto& [key, value] : table) {
    if (key == "seed") continue;
    find_field(key)->set(config, value);
  }
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string section = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string key = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (section != current) {
      out += "\n[" + section + "]\n";
      current = section;
    }
    out += key + " = " + f.show(config) + "\n";
  }
  return out;
}

}  // namespace pathseek
