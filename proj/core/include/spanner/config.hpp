#pragma once

// Key/value run configuration:
//
//   # comment
//   [train]
//   learning_rate = 1e-3
//   negative_sampling = "sampled"
//   [model]
//   hidden = 64
//
// Section headers are optional and only group keys; every key name is
// unique across sections. Unknown keys are errors.

#include "spanner/model.hpp"
#include "spanner/training.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace spanner {

struct RunConfig {
  TrainConfig train;
  ModelConfig model;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Applies the assignments in `text` on top of `base`. ConfigError with the
// line number on syntax errors, unknown keys or bad values.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig read_run_config(const std::filesystem::path& path, RunConfig base = {});

// Every key with its current value; parse_run_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& config);

std::string to_string(NegativeSampling mode);
std::string to_string(EntitySpans mode);
std::string to_string(ClassAggregation mode);

}  // namespace spanner
