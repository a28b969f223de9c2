#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chorus/encoders.hpp"
#include "chorus/regime.hpp"
#include "chorus/tensor.hpp"

namespace chorus::shiftlab {

// ---------------------------------------------------------------------------
// Synthetic shift-controllable dataset
// ---------------------------------------------------------------------------

struct ContextSpec {
    std::string name;
    double shift = 0.0;  // s in [0,1]; 0 is the identity transform
    double gain = 1.0;
    double noise = 0.1;  // Gaussian sigma
};

struct SyntheticSpec {
    int64_t classes = 6;
    int64_t channels = 3;
    int64_t length = 128;
    std::vector<ContextSpec> contexts;
    int64_t samples_per_cell = 400;  // per (class, context)
    double mix_strength = 1.8;       // skew norm of the full (s = 1) channel rotation
    uint64_t seed = 1;
};

// Two source placements close together, three targets with growing shift.
SyntheticSpec default_spec(uint64_t seed = 1);

struct Sample {
    Tensor values;  // (C, T)
    int32_t context = -1;
    int32_t label = -1;
};

class Dataset {
public:
    SyntheticSpec spec;
    std::vector<ContextSpec> context_specs;
    std::vector<ContextRecord> contexts;  // parallel to context_specs
    std::vector<Sample> samples;
    std::vector<std::vector<int64_t>> by_context;

    int context_index(const std::string& name) const;
    const ContextRecord& context_record(int idx) const { return contexts[static_cast<size_t>(idx)]; }
    int64_t size() const { return static_cast<int64_t>(samples.size()); }

    // Source-only audit: reads through a training view are counted per context.
    mutable std::vector<int64_t> train_reads;

    const Sample& read(int64_t idx, bool training) const {
        const Sample& s = samples[static_cast<size_t>(idx)];
        if (training) ++train_reads[static_cast<size_t>(s.context)];
        return s;
    }
};

// Index view over a subset of contexts. Training views feed the audit counters.
struct DatasetView {
    const Dataset* ds = nullptr;
    std::vector<int64_t> indices;
    bool training = false;

    size_t size() const { return indices.size(); }
    const Sample& sample(size_t i) const { return ds->read(indices[i], training); }
    int64_t index(size_t i) const { return indices[i]; }
};

DatasetView make_view(const Dataset& ds, const std::vector<std::string>& context_names,
                      bool training);

Dataset generate_dataset(const SyntheticSpec& spec);

// Pre-transform class signal including per-sample jitter (the s=0/gain=1/noise=0
// transform is exactly the identity on this).
Tensor clean_segment(const SyntheticSpec& spec, int64_t class_idx, int64_t sample_uid);

// ---------------------------------------------------------------------------
// MMD estimation
// ---------------------------------------------------------------------------

// Median of pairwise Euclidean distances; exact up to 2000 points, seeded
// subsample beyond. Floors at 1e-6 when all points coincide.
double median_heuristic(const std::vector<double>& points, int64_t n, int64_t d);

enum class MmdKind { Biased, Unbiased };

struct MmdResult {
    double mmd2 = 0.0;   // unbiased estimate may be negative, reported as-is
    double value = 0.0;  // sqrt(max(mmd2, 0))
};

MmdResult mmd(const std::vector<double>& X, int64_t m, const std::vector<double>& Y, int64_t n,
              int64_t d, double sigma, MmdKind kind);

enum class FeatureKind { Summary, Raw };

// Per-channel mean, std, and energy in 4 equal DFT magnitude bands -> length C*6.
std::vector<double> summary_features(const Tensor& segment);

// Feature matrix (row per sample) for a set of dataset indices.
std::vector<double> feature_matrix(const Dataset& ds, const std::vector<int64_t>& indices,
                                   FeatureKind kind, int64_t* out_dim);

// ---------------------------------------------------------------------------
// Tiering and regime selection
// ---------------------------------------------------------------------------

struct TierRow {
    std::string context;
    double mmd = 0.0;
    std::string tier;  // Low | Mid | High
};

struct ShiftReport {
    std::vector<TierRow> rows;  // ascending MMD
    double sigma = 0.0;
    std::string estimator;  // biased | unbiased
    std::string features;   // summary | raw
    bool tie_break_used = false;

    // Filled when a sensor-only evaluation is available.
    double perf_low = -1.0;
    double perf_high = -1.0;
    double c_m = 0.0;
    bool has_cm = false;
    std::string regime;

    const TierRow* find_tier(const std::string& tier) const {
        for (const auto& r : rows)
            if (r.tier == tier) return &r;
        return nullptr;
    }
};

ShiftReport build_tiers(const Dataset& ds, const std::vector<std::string>& source_contexts,
                        const std::vector<std::string>& target_contexts,
                        FeatureKind kind = FeatureKind::Summary,
                        MmdKind estimator = MmdKind::Biased);

// C_m = 1 - perf_high / perf_low; perf_low must be positive.
double compute_cm(double perf_low, double perf_high);

struct RegimeThresholds {
    double weak_below = 0.25;
    double medium_below = 0.45;
};

RegimeConfig select_regime(double c_m, const RegimeThresholds& thresholds = {});

}  // namespace chorus::shiftlab
