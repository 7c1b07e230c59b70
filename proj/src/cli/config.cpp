#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "abmil/cli.hpp"
#include "abmil/errors.hpp"

namespace abmil::cli {

void Config::set_seed(std::uint64_t s) {
  seed = s;
  data.bags.seed = s;
  train.seed = s;
}

void Config::validate() const {
  data.bags.validate();
  model.validate();
  train.validate();
  if (!(infer_sample_percent > 0.0) || infer_sample_percent > 100.0) {
    throw ConfigError("infer_sample_percent must lie in (0, 100]");
  }
  if (data.n_classes < 2) throw ConfigError("n_classes must be at least 2");
  eval::MatrixSpec spec;
  spec.strategies = matrix.strategies;
  spec.alphas = matrix.alphas;
  spec.infer_samples = matrix.infer_samples;
  spec.repeats = matrix.repeats;
  spec.train = train;
  spec.model = model;
  spec.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("invalid value '" + v + "' for key '" + key + "': expected a non-negative integer");
  }
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("invalid value '" + v + "' for key '" + key + "': expected an integer");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("invalid value '" + v + "' for key '" + key + "': expected a number");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid value '" + v + "' for key '" + key + "': accepted values: true, false");
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + num(v[i]);
  return out;
}

struct Key {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

using Section = std::vector<std::pair<std::string, Key>>;

template <typename T>
Key size_key(const std::string& name, T Config::*group, std::size_t T::*field) {
  return {[=](Config& c, const std::string& v) { (c.*group).*field = static_cast<std::size_t>(to_u64(name, v)); },
          [=](const Config& c) { return std::to_string((c.*group).*field); }};
}

template <typename T>
Key double_key(const std::string& name, T Config::*group, double T::*field) {
  return {[=](Config& c, const std::string& v) { (c.*group).*field = to_double(name, v); },
          [=](const Config& c) { return num((c.*group).*field); }};
}

template <typename T>
Key bool_key(const std::string& name, T Config::*group, bool T::*field) {
  return {[=](Config& c, const std::string& v) { (c.*group).*field = to_bool(name, v); },
          [=](const Config& c) { return std::string((c.*group).*field ? "true" : "false"); }};
}

const std::vector<std::pair<std::string, Section>>& schema() {
  static const std::vector<std::pair<std::string, Section>> sections = [] {
    std::vector<std::pair<std::string, Section>> s;
    s.push_back({"", {{"seed", {[](Config& c, const std::string& v) { c.set_seed(to_u64("seed", v)); },
                                [](const Config& c) { return std::to_string(c.seed); }}}}});

    Section data;
    data.push_back({"source",
                    {[](Config& c, const std::string& v) {
                       if (v == "synthetic") c.data.source = DataSource::Synthetic;
                       else if (v == "idx") c.data.source = DataSource::Idx;
                       else throw ConfigError("invalid value '" + v + "' for key 'source': accepted values: synthetic, idx");
                     },
                     [](const Config& c) {
                       return std::string(c.data.source == DataSource::Synthetic ? "synthetic" : "idx");
                     }}});
    data.push_back({"input_dim", {[](Config& c, const std::string& v) {
                                    c.model.input_dim = static_cast<std::size_t>(to_u64("input_dim", v));
                                  },
                                  [](const Config& c) { return std::to_string(c.model.input_dim); }}});
    data.push_back({"n_classes", size_key("n_classes", &Config::data, &DataConfig::n_classes)});
    data.push_back({"idx_images", {[](Config& c, const std::string& v) { c.data.idx_images = v; },
                                   [](const Config& c) { return c.data.idx_images.string(); }}});
    data.push_back({"idx_labels", {[](Config& c, const std::string& v) { c.data.idx_labels = v; },
                                   [](const Config& c) { return c.data.idx_labels.string(); }}});
    data.push_back({"idx_limit", size_key("idx_limit", &Config::data, &DataConfig::idx_limit)});
    auto bag_size = [](const std::string& name, std::size_t data::BagSpec::*f) {
      return std::make_pair(name, Key{[=](Config& c, const std::string& v) {
                                        c.data.bags.*f = static_cast<std::size_t>(to_u64(name, v));
                                      },
                                      [=](const Config& c) { return std::to_string(c.data.bags.*f); }});
    };
    data.push_back(bag_size("n_train_bags", &data::BagSpec::n_train_bags));
    data.push_back(bag_size("n_val_bags", &data::BagSpec::n_val_bags));
    data.push_back(bag_size("n_test_bags", &data::BagSpec::n_test_bags));
    data.push_back(bag_size("instances_per_bag", &data::BagSpec::instances_per_bag));
    data.push_back({"key_fraction", {[](Config& c, const std::string& v) {
                                       c.data.bags.key_fraction = to_double("key_fraction", v);
                                     },
                                     [](const Config& c) { return num(c.data.bags.key_fraction); }}});
    data.push_back({"key_class", {[](Config& c, const std::string& v) { c.data.bags.key_class = to_int("key_class", v); },
                                  [](const Config& c) { return std::to_string(c.data.bags.key_class); }}});
    data.push_back({"positive_bag_fraction", {[](Config& c, const std::string& v) {
                                                c.data.bags.positive_bag_fraction = to_double("positive_bag_fraction", v);
                                              },
                                              [](const Config& c) { return num(c.data.bags.positive_bag_fraction); }}});
    s.push_back({"data", std::move(data)});

    Section model;
    model.push_back({"widths", {[](Config& c, const std::string& v) {
                                  c.model.widths.clear();
                                  for (const auto& w : split_list(v)) c.model.widths.push_back(to_u64("widths", w));
                                },
                                [](const Config& c) {
                                  std::string out;
                                  for (std::size_t i = 0; i < c.model.widths.size(); ++i)
                                    out += (i ? ", " : "") + std::to_string(c.model.widths[i]);
                                  return out;
                                }}});
    model.push_back({"attention_dim", size_key("attention_dim", &Config::model, &model::ModelConfig::attention_dim)});
    model.push_back(
        {"final_activation", bool_key("final_activation", &Config::model, &model::ModelConfig::final_activation)});
    model.push_back({"batch_norm", bool_key("batch_norm", &Config::train, &train::TrainConfig::bn_enabled)});
    model.push_back({"bn_eps", double_key("bn_eps", &Config::model, &model::ModelConfig::bn_eps)});
    model.push_back({"bn_momentum", double_key("bn_momentum", &Config::model, &model::ModelConfig::bn_momentum)});
    s.push_back({"model", std::move(model)});

    Section train;
    train.push_back({"strategy", {[](Config& c, const std::string& v) { c.train.strategy = train::parse_strategy(v); },
                                  [](const Config& c) { return std::string(train::strategy_name(c.train.strategy)); }}});
    train.push_back({"learning_rate", double_key("learning_rate", &Config::train, &train::TrainConfig::learning_rate)});
    train.push_back({"weight_decay", double_key("weight_decay", &Config::train, &train::TrainConfig::weight_decay)});
    train.push_back({"epochs", size_key("epochs", &Config::train, &train::TrainConfig::epochs)});
    train.push_back({"alpha", double_key("alpha", &Config::train, &train::TrainConfig::alpha_percent)});
    train.push_back({"sample_percent", double_key("sample_percent", &Config::train, &train::TrainConfig::sample_percent)});
    train.push_back(
        {"selection_window", size_key("selection_window", &Config::train, &train::TrainConfig::selection_window)});
    s.push_back({"train", std::move(train)});

    Section matrix;
    matrix.push_back({"strategies", {[](Config& c, const std::string& v) {
                                       c.matrix.strategies.clear();
                                       for (const auto& x : split_list(v))
                                         c.matrix.strategies.push_back(train::parse_strategy(x));
                                     },
                                     [](const Config& c) {
                                       std::string out;
                                       for (std::size_t i = 0; i < c.matrix.strategies.size(); ++i)
                                         out += std::string(i ? ", " : "") + train::strategy_name(c.matrix.strategies[i]);
                                       return out;
                                     }}});
    matrix.push_back({"alphas", {[](Config& c, const std::string& v) {
                                   c.matrix.alphas.clear();
                                   for (const auto& x : split_list(v)) c.matrix.alphas.push_back(to_double("alphas", x));
                                 },
                                 [](const Config& c) { return join_doubles(c.matrix.alphas); }}});
    matrix.push_back({"infer_samples", {[](Config& c, const std::string& v) {
                                          c.matrix.infer_samples.clear();
                                          for (const auto& x : split_list(v))
                                            c.matrix.infer_samples.push_back(to_double("infer_samples", x));
                                        },
                                        [](const Config& c) { return join_doubles(c.matrix.infer_samples); }}});
    matrix.push_back({"repeats", size_key("repeats", &Config::matrix, &MatrixConfig::repeats)});
    s.push_back({"matrix", std::move(matrix)});

    Section eval;
    eval.push_back({"infer_sample_percent", {[](Config& c, const std::string& v) {
                                               c.infer_sample_percent = to_double("infer_sample_percent", v);
                                             },
                                             [](const Config& c) { return num(c.infer_sample_percent); }}});
    s.push_back({"eval", std::move(eval)});
    return s;
  }();
  return sections;
}

}  // namespace

Config parse_config(std::string_view text) {
  Config config;
  const auto& sections = schema();
  const Section* current = &sections.front().second;
  std::string current_name;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      current_name = trim(std::string_view(line).substr(1, line.size() - 2));
      current = nullptr;
      std::string valid;
      for (const auto& [name, sec] : sections) {
        if (name.empty()) continue;
        valid += (valid.empty() ? "" : ", ") + name;
        if (name == current_name) current = &sec;
      }
      if (!current) throw ConfigError(where + "unknown section [" + current_name + "]; valid sections: " + valid);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const Key* handler = nullptr;
    std::string valid;
    for (const auto& [name, k] : *current) {
      valid += (valid.empty() ? "" : ", ") + name;
      if (name == key) handler = &k;
    }
    const std::string scope = current_name.empty() ? "top level" : "[" + current_name + "]";
    if (!handler) throw ConfigError(where + "unknown key '" + key + "' in " + scope + "; valid keys: " + valid);
    if (seen[current_name + "." + key]++) throw ConfigError(where + "duplicate key '" + key + "' in " + scope);
    try {
      handler->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  config.validate();
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string echo_config(const Config& config) {
  std::ostringstream os;
  for (const auto& [name, sec] : schema()) {
    if (!name.empty()) os << "\n[" << name << "]\n";
    for (const auto& [key, k] : sec) os << key << " = " << k.get(config) << '\n';
  }
  return os.str();
}

}  // namespace abmil::cli
