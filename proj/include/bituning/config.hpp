/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Run configuration: an INI document with a few top-level keys and the
// sections [dataset], [model], [keys], [losses], [optimizer], [logging].
// Every key is optional; unknown keys are rejected. Comments start with ';'.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bituning/data.hpp"
#include "bituning/trainer.hpp"

namespace bituning {

enum class DatasetSource { kBlobs, kRings, kFile };

struct DatasetSpec {
  DatasetSource source = DatasetSource::kBlobs;
  std::size_t classes = 3;
  std::size_t per_class = 60;
  std::size_t dim = 2;
  double separation = 4.0;
  double noise = 0.5;
  std::string path;
  char delimiter = ',';
  std::size_t label_column = 0;
  bool header = false;
  double train_fraction = 0.5;
  double sampling_rate = 1.0;
  std::int64_t seed = -1;  // -1: follow the run seed
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  TrainConfig train;  // dims.input / dims.classes are filled from the dataset
  std::string schedule = "auto";
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  const auto v = trim(raw);
  if constexpr (std::is_same_v<T, bool>) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + raw + "'");
  } else {
    T out{};
    if (!parse_number(v, out)) {
      const char* what = std::is_floating_point_v<T> ? "a number"
                         : std::is_signed_v<T>       ? "an integer"
                                                     : "a non-negative integer";
      throw ConfigError(key + ": expected " + what + ", got '" + raw + "'");
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(out)) throw ConfigError(key + ": value must be finite");
    }
    return out;
  }
}

template <class E>
E parse_enum(const std::string& key, const std::string& raw, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (trim(raw) == n) return e;
  std::string allowed;
  for (const auto& [n, e] : names) allowed += std::string(allowed.empty() ? "" : "|") + n;
  throw ConfigError(key + ": expected " + allowed + ", got '" + raw + "'");
}

template <class E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (e == value) return n;
  return "?";
}

inline std::string fmt(double v) { return format_double(v); }

inline const std::initializer_list<std::pair<const char*, DatasetSource>> kSources = {
    {"blobs", DatasetSource::kBlobs}, {"rings", DatasetSource::kRings}, {"file", DatasetSource::kFile}};
inline const std::initializer_list<std::pair<const char*, KeyGeneratorKind>> kGenerators = {
    {"moco", KeyGeneratorKind::kMoco}, {"membank", KeyGeneratorKind::kMemoryBank}};
inline const std::initializer_list<std::pair<const char*, BankSampling>> kBankSampling = {
    {"per_class", BankSampling::kPerClass}, {"uniform", BankSampling::kUniform}};
inline const std::initializer_list<std::pair<const char*, WarmupMode>> kWarmup = {
    {"pass", WarmupMode::kPass}, {"delay", WarmupMode::kDelay}};
inline const std::initializer_list<std::pair<const char*, CceVariant>> kCceVariants = {
    {"literal", CceVariant::kLiteral}, {"per_key", CceVariant::kPerKey}};
inline const std::initializer_list<std::pair<const char*, Prototypes>> kPrototypes = {
    {"raw", Prototypes::kRaw}, {"unit", Prototypes::kUnit}};
inline const std::initializer_list<std::pair<const char*, Reduction>> kReductions = {
    {"sum", Reduction::kSum}, {"mean", Reduction::kMean}};

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& raw) {
  std::vector<std::size_t> out;
  if (trim(raw).empty()) return out;
  for (auto cell : split(raw, ',')) out.push_back(parse_value<std::size_t>(key, std::string(cell)));
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

/// One configurable key: how to read it into a RunConfig and how to print it back.
struct ConfigField {
  std::string key;  // "section.name" or "name" for top-level keys
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigField>& config_schema() {
  using namespace detail;
  static const std::vector<ConfigField> schema = [] {
    std::vector<ConfigField> f;
    auto num = [&f](std::string key, auto member) {
      f.push_back({key,
                   [key, member](RunConfig& c, const std::string& v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     member(c) = parse_value<T>(key, v);
                   },
                   [member](const RunConfig& c) {
                     auto& v = member(const_cast<RunConfig&>(c));
                     using T = std::remove_cvref_t<decltype(v)>;
                     if constexpr (std::is_same_v<T, double>) return fmt(v);
                     else if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
                     else return std::to_string(v);
                   }});
    };
    auto choice = [&f](std::string key, auto member, auto names) {
      f.push_back({key, [key, member, names](RunConfig& c, const std::string& v) { member(c) = parse_enum(key, v, names); },
                   [member, names](const RunConfig& c) { return enum_name(member(const_cast<RunConfig&>(c)), names); }});
    };
    num("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });

    choice("dataset.generator", [](RunConfig& c) -> DatasetSource& { return c.dataset.source; }, kSources);
    num("dataset.classes", [](RunConfig& c) -> std::size_t& { return c.dataset.classes; });
    num("dataset.per_class", [](RunConfig& c) -> std::size_t& { return c.dataset.per_class; });
    num("dataset.dim", [](RunConfig& c) -> std::size_t& { return c.dataset.dim; });
    num("dataset.separation", [](RunConfig& c) -> double& { return c.dataset.separation; });
    num("dataset.noise", [](RunConfig& c) -> double& { return c.dataset.noise; });
    f.push_back({"dataset.path", [](RunConfig& c, const std::string& v) { c.dataset.path = std::string(trim(v)); },
                 [](const RunConfig& c) { return c.dataset.path; }});
    f.push_back({"dataset.delimiter",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "tab" || v == "\\t") c.dataset.delimiter = '\t';
                   else if (v == "semicolon") c.dataset.delimiter = ';';
                   else if (v.size() == 1) c.dataset.delimiter = v[0];
                   else throw ConfigError("dataset.delimiter: expected one character or 'tab', got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   if (c.dataset.delimiter == '\t') return std::string("tab");
                   if (c.dataset.delimiter == ';') return std::string("semicolon");
                   return std::string(1, c.dataset.delimiter);
                 }});
    num("dataset.label_column", [](RunConfig& c) -> std::size_t& { return c.dataset.label_column; });
    num("dataset.header", [](RunConfig& c) -> bool& { return c.dataset.header; });
    num("dataset.train_fraction", [](RunConfig& c) -> double& { return c.dataset.train_fraction; });
    num("dataset.sampling_rate", [](RunConfig& c) -> double& { return c.dataset.sampling_rate; });
    num("dataset.seed", [](RunConfig& c) -> std::int64_t& { return c.dataset.seed; });

    f.push_back({"model.hidden", [](RunConfig& c, const std::string& v) { c.train.dims.hidden = parse_size_list("model.hidden", v); },
                 [](const RunConfig& c) { return join(c.train.dims.hidden); }});
    num("model.feature", [](RunConfig& c) -> std::size_t& { return c.train.dims.feature; });
    num("model.projection", [](RunConfig& c) -> std::size_t& { return c.train.dims.projection; });
    num("model.classifier_bias", [](RunConfig& c) -> bool& { return c.train.dims.classifier_bias; });
    num("model.momentum", [](RunConfig& c) -> double& { return c.train.momentum; });

    choice("keys.generator", [](RunConfig& c) -> KeyGeneratorKind& { return c.train.key_generator; }, kGenerators);
    num("keys.queue_size", [](RunConfig& c) -> std::size_t& { return c.train.queue_size; });
    num("keys.keys_per_class", [](RunConfig& c) -> std::size_t& { return c.train.keys_per_class; });
    num("keys.bank_momentum", [](RunConfig& c) -> double& { return c.train.bank_momentum; });
    choice("keys.bank_sampling", [](RunConfig& c) -> BankSampling& { return c.train.bank_sampling; }, kBankSampling);
    choice("keys.warmup", [](RunConfig& c) -> WarmupMode& { return c.train.warmup; }, kWarmup);

    num("losses.ce", [](RunConfig& c) -> double& { return c.train.weights.ce; });
    num("losses.cce", [](RunConfig& c) -> double& { return c.train.weights.cce; });
    num("losses.ccl", [](RunConfig& c) -> double& { return c.train.weights.ccl; });
    num("losses.tau", [](RunConfig& c) -> double& { return c.train.tau; });
    choice("losses.cce_variant", [](RunConfig& c) -> CceVariant& { return c.train.cce_variant; }, kCceVariants);
    choice("losses.prototypes", [](RunConfig& c) -> Prototypes& { return c.train.prototypes; }, kPrototypes);
    choice("losses.reduction", [](RunConfig& c) -> Reduction& { return c.train.reduction; }, kReductions);

    num("optimizer.base_lr", [](RunConfig& c) -> double& { return c.train.optimizer.base_lr; });
    num("optimizer.head_lr_multiplier", [](RunConfig& c) -> double& { return c.train.optimizer.head_lr_multiplier; });
    num("optimizer.momentum", [](RunConfig& c) -> double& { return c.train.optimizer.momentum; });
    num("optimizer.weight_decay", [](RunConfig& c) -> double& { return c.train.optimizer.weight_decay; });
    num("optimizer.iterations", [](RunConfig& c) -> std::size_t& { return c.train.iterations; });
    num("optimizer.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    f.push_back({"optimizer.schedule", [](RunConfig& c, const std::string& v) { c.schedule = std::string(trim(v)); },
                 [](const RunConfig& c) { return c.schedule; }});

    num("logging.log_every", [](RunConfig& c) -> std::size_t& { return c.train.log_every; });
    num("logging.eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; });
    num("logging.wall_time", [](RunConfig& c) -> bool& { return c.train.record_wall_time; });
    return f;
  }();
  return schema;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_schema())
    if (f.key == key) return f;
  throw ConfigError("unknown key '" + key + "'");
}

/// "auto" (x0.1 at 2/3 and 5/6 of the run), "none", or "iter:factor,iter:factor".
inline std::vector<std::pair<std::size_t, double>> parse_schedule(const std::string& spec, std::size_t iterations) {
  if (spec == "auto") return default_schedule(iterations);
  if (spec == "none" || spec.empty()) return {};
  std::vector<std::pair<std::size_t, double>> out;
  for (auto item : detail::split(spec, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ConfigError("optimizer.schedule: expected iter:factor, got '" + std::string(item) + "'");
    out.emplace_back(detail::parse_value<std::size_t>("optimizer.schedule", std::string(item.substr(0, colon))),
                     detail::parse_value<double>("optimizer.schedule", std::string(item.substr(colon + 1))));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Range checks that do not depend on the dataset.
inline void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  const auto& d = c.dataset;
  const auto& t = c.train;
  require(d.classes >= 2, "dataset.classes must be >= 2");
  require(d.per_class >= 1, "dataset.per_class must be >= 1");
  require(d.source != DatasetSource::kFile || !d.path.empty(), "dataset.path is required for generator = file");
  require(d.train_fraction > 0.0 && d.train_fraction <= 1.0, "dataset.train_fraction must lie in (0, 1]");
  require(d.sampling_rate > 0.0 && d.sampling_rate <= 1.0, "dataset.sampling_rate must lie in (0, 1]");
  require(d.noise >= 0.0, "dataset.noise must be >= 0");
  require(t.dims.feature >= 1, "model.feature must be >= 1");
  require(t.dims.projection >= 1, "model.projection must be >= 1");
  require(t.momentum >= 0.0 && t.momentum <= 1.0, "model.momentum must lie in [0, 1]");
  require(t.bank_momentum >= 0.0 && t.bank_momentum <= 1.0, "keys.bank_momentum must lie in [0, 1]");
  require(t.queue_size >= 1, "keys.queue_size must be >= 1");
  require(t.keys_per_class >= 1, "keys.keys_per_class must be >= 1");
  require(t.tau > 0.0, "losses.tau must be > 0");
  require(t.weights.ce >= 0.0 && t.weights.cce >= 0.0 && t.weights.ccl >= 0.0, "loss weights must be >= 0");
  require(t.weights.any(), "at least one of losses.ce, losses.cce, losses.ccl must be nonzero");
  require(t.optimizer.base_lr >= 0.0, "optimizer.base_lr must be >= 0");
  require(t.optimizer.momentum >= 0.0 && t.optimizer.momentum < 1.0, "optimizer.momentum must lie in [0, 1)");
  require(t.batch_size >= 1, "optimizer.batch_size must be >= 1");
  parse_schedule(c.schedule, t.iterations);
}

/// Applies one "section.key=value" assignment.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key(detail::trim(assignment.substr(0, eq)));
  config_field(key).set(c, assignment.substr(eq + 1));
}

inline RunConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig c;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      config_field(name).set(c, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) config_field(name + "." + key).set(c, leaf.data());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path);
  return parse_config(is);
}

/// Canonical text of every key, top-level keys first, then sections in schema order.
inline std::string serialize(const RunConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_schema()) {
    const auto dot = f.key.find('.');
    if (dot == std::string::npos) {
      os << f.key << " = " << f.get(c) << '\n';
      continue;
    }
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      os << '\n' << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(c) << '\n';
  }
  return os.str();
}

/// FNV-1a of the canonical serialization.
inline std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : serialize(c)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace bituning
