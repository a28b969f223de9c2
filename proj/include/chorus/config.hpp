#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chorus/experiments.hpp"

namespace chorus::config {

// Single declarative configuration for every command. Unknown keys are
// rejected with the offending key path.
struct RunConfig {
    uint64_t seed = 1;

    ModelDims dims;
    shiftlab::SyntheticSpec data;  // includes contexts; data.seed mirrors seed
    std::vector<std::string> sources{"left pocket", "right pocket"};
    std::vector<std::string> targets{"upper arm", "wrist", "belt"};
    std::string dataset_path;    // input dataset (generate writes it)
    std::string checkpoint_path; // input checkpoint

    std::string regime = "auto";  // weak | medium | strong | auto
    pretraining::PretrainConfig pretrain;
    shiftlab::RegimeThresholds thresholds;

    double budget = 0.01;
    gating::CustomizeConfig customize;

    shiftlab::FeatureKind mmd_features = shiftlab::FeatureKind::Summary;
    shiftlab::MmdKind mmd_estimator = shiftlab::MmdKind::Biased;
    std::optional<double> shift_perf_low;   // skip the in-repo baseline when given
    std::optional<double> shift_perf_high;

    int64_t cache_capacity = 16;
    bool stream_uncached_pass = true;
    std::vector<std::string> stream_contexts{"left pocket", "wrist", "belt"};
    std::vector<int64_t> stream_switches{1000, 2000};
    int64_t stream_length = 3000;
    std::string trace_path;  // load instead of synthesizing when set

    std::vector<std::string> methods{"chorus",     "sensor_only", "fix_add", "fix_concat",
                                     "align_only", "dyn_only",    "c1",      "c1c2"};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};

    experiments::ExperimentPlan to_plan() const;
};

RunConfig default_config();

// Parses and validates a JSON config file; every error names the bad key.
RunConfig load_config(const std::string& path);

// JSON text of the default configuration (documents every key).
std::string default_config_json();

}  // namespace chorus::config
