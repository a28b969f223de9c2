#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chorus/gating.hpp"
#include "chorus/pretraining.hpp"
#include "chorus/shiftlab.hpp"

namespace chorus::experiments {

struct Metrics {
    double accuracy = 0.0;
    double f1 = 0.0;         // macro
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
};

// Macro averages over all K classes; undefined per-class ratios count as 0.
Metrics compute_metrics(const std::vector<int64_t>& y_true, const std::vector<int64_t>& y_pred,
                        int64_t K);

struct ExperimentPlan {
    shiftlab::SyntheticSpec spec;  // seed field is replaced by each run seed
    std::vector<std::string> sources{"left pocket", "right pocket"};
    std::vector<std::string> targets{"upper arm", "wrist", "belt"};
    double budget = 0.01;  // fraction of the source pool, drawn from the labeled candidates
    std::vector<std::string> methods{"chorus",     "sensor_only", "fix_add", "fix_concat",
                                     "align_only", "dyn_only",    "c1",      "c1c2"};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::string regime_override;  // empty = auto via C_m
    ModelDims dims;
    pretraining::PretrainConfig pretrain;
    gating::CustomizeConfig customize;
    shiftlab::RegimeThresholds thresholds;
    shiftlab::FeatureKind mmd_features = shiftlab::FeatureKind::Summary;
};

ExperimentPlan default_plan();

struct ResultRow {
    std::string method;
    std::string tier;
    uint64_t seed = 0;
    Metrics metrics;
    bool has_alpha = false;
    double mean_alpha_context = 0.0;
    double min_alpha_context = 0.0;
    double max_alpha_context = 0.0;
};

struct TierDiag {
    uint64_t seed = 0;
    std::string tier;
    bool easy_present = false;
    bool hard_fixed_present = false;
    double easy_alpha = 0.0;        // mean chorus alpha_context over easy samples
    double hard_fixed_alpha = 0.0;  // ... over sensor-only-wrong, chorus-right samples
    int64_t easy_count = 0;
    int64_t hard_fixed_count = 0;
};

struct SeedInfo {
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double c_m = 0.0;
    std::string regime;
    double perf_low = 0.0;
    double perf_high = 0.0;
    double sensor_phase_seconds = 0.0;  // generate + MMD tiers + sensor-only train/eval
    shiftlab::ShiftReport shift;
};

struct Aggregate {
    std::string method;
    std::string tier;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    double mean_f1 = 0.0;
    double std_f1 = 0.0;
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double mean_alpha_context = 0.0;
    bool has_alpha = false;
    int64_t n_seeds = 0;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    std::vector<SeedInfo> seeds;
    std::vector<TierDiag> diagnostics;
    std::vector<Aggregate> aggregates;
    double total_seconds = 0.0;

    const Aggregate* find(const std::string& method, const std::string& tier) const;
    std::vector<const ResultRow*> rows_for(const std::string& method, const std::string& tier) const;
};

// Source-only protocol: per seed, generate data, tier targets by MMD, train the
// sensor-only baseline, pick the regime via C_m (unless overridden), pretrain,
// customize every method on the identical labeled subset, evaluate on each
// held-out tier. Seeds run independently; a failed seed records its reason.
ResultTable run_plan(const ExperimentPlan& plan);

// ---------------------------------------------------------------------------
// Context-embedding probe
// ---------------------------------------------------------------------------

struct ProbeResult {
    bool probe_defined = false;
    double probe_accuracy = 0.0;
    bool silhouette_degenerate = false;
    double silhouette = 0.0;
    int64_t n_contexts = 0;
    std::vector<double> centroid_distances;  // row-major n_contexts x n_contexts
};

ProbeResult probe_context_embeddings(const ParamStore& encoders, const ModelDims& dims,
                                     const shiftlab::Dataset& dataset, uint64_t seed);

// ---------------------------------------------------------------------------
// Gate diagnostics
// ---------------------------------------------------------------------------

struct DiagInput {
    std::vector<bool> sensor_correct;
    std::vector<bool> chorus_correct;
    std::vector<float> chorus_alpha_context;
};

TierDiag gate_diagnostics(const DiagInput& input);

// ---------------------------------------------------------------------------
// Shared building blocks (also used by the CLI commands)
// ---------------------------------------------------------------------------

struct SensorOnlyModel {
    ParamStore params;
    ModelDims dims;
};

struct SensorOnlyTrainConfig {
    AdamWConfig optim{1e-4, 0.9, 0.999, 1e-8, 0.01};
    int64_t batch_size = 32;
    int64_t max_epochs = 100;
    int64_t patience = 10;
    double val_fraction = 0.1;
};

SensorOnlyModel train_sensor_only(const shiftlab::Dataset& dataset,
                                  const shiftlab::DatasetView& labeled, const ModelDims& dims,
                                  const SensorOnlyTrainConfig& config, uint64_t seed);

struct EvalRecords {
    std::vector<int64_t> y_true;
    std::vector<int64_t> y_pred;
    std::vector<float> alpha_context;  // empty unless the head is gated
};

EvalRecords evaluate_sensor_only(const shiftlab::Dataset& dataset,
                                 const shiftlab::DatasetView& view, const SensorOnlyModel& model);

EvalRecords evaluate_inference_model(const shiftlab::Dataset& dataset,
                                     const shiftlab::DatasetView& view,
                                     const gating::InferenceModel& model);

// Seeded stratified subsample of labeled source candidates; preserves class
// presence whenever count >= K.
std::vector<int64_t> stratified_subset(const shiftlab::Dataset& dataset,
                                       const std::vector<int64_t>& candidates, int64_t count,
                                       uint64_t seed);

// Seeded split of the source pool: unlabeled_fraction goes to stage 1, the
// labeled budget (fraction of the whole pool, capped by what remains) is a
// stratified draw from the rest.
struct SourceSplit {
    std::vector<int64_t> unlabeled;
    std::vector<int64_t> labeled;
    int64_t budget_count = 0;
};

SourceSplit split_source_pool(const shiftlab::Dataset& dataset,
                              const std::vector<std::string>& sources, double unlabeled_fraction,
                              double budget, uint64_t seed);

}  // namespace chorus::experiments
