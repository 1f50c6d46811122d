#pragma once

#include <string>

#include "csta/harness.hpp"

namespace csta {

// Experiment description file: a single JSON object with optional sections
// model / corpus / train plus top-level seed, out_dir, corpus_dir, tasks and
// split. Missing keys keep their defaults; unknown keys are rejected with the
// offending name and its line in the text. A top-level seed propagates into
// corpus.seed and train.seed unless those are given explicitly.
ExperimentConfig default_experiment_config();
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// full snapshot of a config, defaults included; parses back to an equal config
std::string experiment_config_json(const ExperimentConfig& config);

}  // namespace csta
