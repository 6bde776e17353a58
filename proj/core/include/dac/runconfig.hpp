#pragma once

// Experiment-level configuration: parses the flat key-value file into the
// per-module configs, applies command-line overrides, and derives the
// content-hashed run identifier that names the run directory and stamps
// every output file.

#include <map>
#include <string>

#include "dac/adaptation.hpp"
#include "dac/config.hpp"
#include "dac/io.hpp"
#include "dac/evaluation.hpp"
#include "dac/rewards.hpp"
#include "dac/risk.hpp"
#include "dac/synthetic.hpp"
#include "dac/trainer.hpp"

namespace dac {

struct EvalSettings {
    std::string policy = "dac";  // dac | clone | behavior | adapted
    double smoothing_epsilon = 0.01;
    double calibration_bin_width = 0.02;
    int calibration_min_count = 20;
    ActionRiskTrainOptions risk;
};

struct AdaptSettings {
    std::string target_data_dir;      // directory with trajectories.jsonl
    double finetune_fraction = 0.5;   // share of the target cohort used to tune f^T
    int action_dim = 16;
    DynamicsTrainOptions dynamics;
    std::uint64_t seed = 1;
};

struct RunConfig {
    ConfigMap raw;
    std::string run_id;
    std::string workspace;

    SyntheticConfig synthetic;
    int value_bins = 20;
    int state_dim = 64;
    std::uint64_t split_seed = 1;
    int split_rotation = 0;

    TrainConfig train;
    RiskTrainOptions risk;
    CloneTrainOptions clone;
    NumeratorTrainOptions numerator;
    EvalSettings eval;
    AdaptSettings adapt;

    // Loads the file, applies overrides (already in key=value form), reads
    // DAC_WORKSPACE when paths.workspace is absent, validates, and hashes.
    static RunConfig load(const std::string& config_path,
                          const std::map<std::string, std::string>& overrides);
    static RunConfig from_map(ConfigMap map);

    // The run identifier hashes only the sections that determine the data
    // and trained artifacts (synthetic, data, split, embedding, train, risk,
    // clone, numerator). eval.* and adapt.* select post-hoc analyses of the
    // same run; paths.* is location, not identity.
    static std::string artifact_canonical(const ConfigMap& map);

    std::string run_dir() const;
    std::string data_dir() const;
    std::string checkpoint_dir() const;
    std::string report_dir() const;
    std::string log_dir() const;

    FileHeader header() const;
};

}  // namespace dac
