#include "spanner/config.hpp"

#include "spanner/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace spanner {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
  return out;
}

template <typename Int>
Int parse_int(std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("not an integer: '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("not a boolean: '" + std::string(v) + "'");
}

struct Key {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
  bool quoted = false;
};

#define SPANNER_DOUBLE(name, field)                                          \
  {                                                                          \
    name, Key {                                                              \
      [](RunConfig& c, std::string_view v) { c.field = parse_double(v); },   \
          [](const RunConfig& c) { return format_double(c.field); }          \
    }                                                                        \
  }
#define SPANNER_INT(name, field, type)                                       \
  {                                                                          \
    name, Key {                                                              \
      [](RunConfig& c, std::string_view v) { c.field = parse_int<type>(v); }, \
          [](const RunConfig& c) { return std::to_string(c.field); }         \
    }                                                                        \
  }

const std::map<std::string, Key, std::less<>>& keys() {
  static const std::map<std::string, Key, std::less<>> table = {
      SPANNER_DOUBLE("learning_rate", train.learning_rate),
      SPANNER_INT("batch_size", train.batch_size, int),
      SPANNER_INT("epochs", train.epochs, int),
      SPANNER_DOUBLE("warmup_fraction", train.warmup_fraction),
      SPANNER_DOUBLE("max_grad_norm", train.max_grad_norm),
      SPANNER_DOUBLE("weight_decay", train.weight_decay),
      SPANNER_DOUBLE("beta1", train.beta1),
      SPANNER_DOUBLE("beta2", train.beta2),
      SPANNER_DOUBLE("adam_epsilon", train.adam_epsilon),
      SPANNER_DOUBLE("encoder_lr_scale", train.encoder_lr_scale),
      SPANNER_INT("seed", train.seed, std::uint64_t),
      SPANNER_DOUBLE("time_budget_seconds", train.time_budget_seconds),
      {"negative_sampling",
       Key{[](RunConfig& c, std::string_view v) {
             if (v == "sampled") c.train.negative_sampling = NegativeSampling::kSampled;
             else if (v == "all") c.train.negative_sampling = NegativeSampling::kAll;
             else throw ConfigError("negative_sampling must be sampled or all");
           },
           [](const RunConfig& c) { return to_string(c.train.negative_sampling); }, true}},
      {"entity_spans",
       Key{[](RunConfig& c, std::string_view v) {
             if (v == "gold_and_negatives") c.train.entity_spans = EntitySpans::kGoldAndNegatives;
             else if (v == "gold") c.train.entity_spans = EntitySpans::kGoldOnly;
             else throw ConfigError("entity_spans must be gold_and_negatives or gold");
           },
           [](const RunConfig& c) { return to_string(c.train.entity_spans); }, true}},
      SPANNER_INT("hidden", model.encoder.hidden, int),
      SPANNER_INT("layers", model.encoder.layers, int),
      SPANNER_INT("heads", model.encoder.heads, int),
      SPANNER_INT("ffn_hidden", model.encoder.ffn_hidden, int),
      SPANNER_INT("max_positions", model.encoder.max_positions, int),
      SPANNER_DOUBLE("dropout", model.encoder.dropout),
      SPANNER_DOUBLE("init_std", model.encoder.init_std),
      {"train_embeddings",
       Key{[](RunConfig& c, std::string_view v) {
             c.model.encoder.train_embeddings = parse_bool(v);
           },
           [](const RunConfig& c) {
             return std::string(c.model.encoder.train_embeddings ? "true" : "false");
           }}},
      SPANNER_INT("attention_hidden", model.inference.attention_hidden, int),
      SPANNER_INT("attention_heads", model.inference.heads, int),
      SPANNER_DOUBLE("attention_dropout", model.inference.attention_dropout),
      SPANNER_DOUBLE("inference_init_std", model.inference.init_std),
      {"aggregation",
       Key{[](RunConfig& c, std::string_view v) {
             if (v == "attention") c.model.inference.aggregation = ClassAggregation::kAttention;
             else if (v == "mean") c.model.inference.aggregation = ClassAggregation::kMeanPool;
             else throw ConfigError("aggregation must be attention or mean");
           },
           [](const RunConfig& c) { return to_string(c.model.inference.aggregation); }, true}},
      SPANNER_INT("max_span_length", model.max_span_length, int),
      SPANNER_DOUBLE("detection_init_std", model.detection_init_std),
      SPANNER_INT("max_length", model.input_tokenizer.max_length, int),
      SPANNER_INT("description_max_length", model.description_tokenizer.max_length, int),
      {"lowercase",
       Key{[](RunConfig& c, std::string_view v) {
             c.model.input_tokenizer.lowercase = parse_bool(v);
             c.model.description_tokenizer.lowercase = c.model.input_tokenizer.lowercase;
           },
           [](const RunConfig& c) {
             return std::string(c.model.input_tokenizer.lowercase ? "true" : "false");
           }}},
  };
  return table;
}

#undef SPANNER_DOUBLE
#undef SPANNER_INT

}  // namespace

std::string to_string(NegativeSampling mode) {
  return mode == NegativeSampling::kSampled ? "sampled" : "all";
}

std::string to_string(EntitySpans mode) {
  return mode == EntitySpans::kGoldAndNegatives ? "gold_and_negatives" : "gold";
}

std::string to_string(ClassAggregation mode) {
  return mode == ClassAggregation::kAttention ? "attention" : "mean";
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    // '#' starts a comment unless it sits inside a quoted value.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    const auto it = keys().find(key);
    if (it == keys().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(key) + "'");
    }
    try {
      it->second.set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + std::string(key) + ": " +
                        e.what());
    }
  }
  base.train.validate();
  base.model.inference.hidden = base.model.encoder.hidden;
  ModelConfig probe = base.model;
  probe.encoder.vocab_size = std::max(probe.encoder.vocab_size, Vocabulary::kReservedCount + 1);
  probe.validate();
  return base;
}

RunConfig read_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), std::move(base));
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [name, key] : keys()) {
    const std::string v = key.get(config);
    out += name + " = " + (key.quoted ? "\"" + v + "\"" : v) + "\n";
  }
  return out;
}

}  // namespace spanner
