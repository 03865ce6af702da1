#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cehr/harness.hpp"
#include "cehr/synth.hpp"

namespace cehr {

/// Everything a CLI run needs. Precedence: command-line flag > config file >
/// budget preset > library default.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "out";
    std::string budget = "small";
    std::size_t jobs = 1;
    std::string data;        // directory holding persons/visits/events CSVs
    std::string checkpoint;  // pretrained weights (path to .cehrw)
    std::string variant = "CEHR";
    std::vector<std::string> tasks = {"gap_signal"};
    double fraction = 1.0;
    std::vector<double> fractions = kFewShotFractions;

    // [harness]
    std::string cohorts_dir;
    bool nested_few_shot = true;
    bool baselines = true;
    double logistic_l2 = 1.0;
    std::string embeddings;  // optional Bi-LSTM embedding CSV
    /// Replaces every task's observation window when set.
    std::optional<int> observation_days;

    SynthConfig synth;
    ModelConfig model;  // vocabulary fields, embedding mode and VTP come from the data and variant
    PretrainOptions pretrain;
    FinetuneOptions finetune;

    Budget as_budget() const;
};

/// Values given on the command line.
struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, budget, data, checkpoint, variant, task;
    std::optional<std::size_t> jobs;
    std::optional<double> fraction;
    std::optional<std::vector<std::string>> tasks;
};

/// Directory of the shipped cohort definitions.
std::string default_cohorts_dir();

/// Reads `path` (may be empty), applies the overrides and validates.
/// Throws ConfigError listing every problem found.
RunConfig resolve_run_config(const std::string& path, const RunOverrides& overrides);
RunConfig parse_run_config(const std::string& toml_text, const std::string& source, const RunOverrides& overrides);

/// Complete TOML rendering; parsing it back gives the same RunConfig.
std::string to_toml(const RunConfig& config);

/// Every violated constraint, empty when valid.
std::vector<std::string> validate(const RunConfig& config);

/// Builds the configured cohorts (cohorts_dir/<task>.toml) over a store.
std::vector<Task> load_tasks(const EventStore& store, const RunConfig& config,
                             const std::vector<std::string>& names);

}  // namespace cehr
