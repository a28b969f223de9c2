#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chorus/encoders.hpp"
#include "chorus/optim.hpp"
#include "chorus/shiftlab.hpp"

namespace chorus::gating {

// Per-feature standardization stats, captured on the labeled training split.
struct GateStats {
    std::vector<float> mean;
    std::vector<float> std;  // floored at 1e-6
};

enum class GateMask { Full, AlignOnly, DynOnly };

std::string gate_mask_name(GateMask mask);
GateMask gate_mask_from_name(const std::string& name);

// Raw controller features: [cos(z_x, z_c), ||z_x||, per-channel means,
// per-channel stds, segment L2 norm]. Zero-norm embeddings give cosine 0.
std::vector<float> gate_features_raw(const std::vector<float>& z_x, const std::vector<float>& z_c,
                                     const Tensor& segment);

GateStats fit_gate_stats(const std::vector<std::vector<float>>& rows);

// Standardizes, then zeroes the masked group (align = first two features,
// dyn = the rest).
std::vector<float> standardize_gate_features(const std::vector<float>& raw, const GateStats& stats,
                                             GateMask mask);

// softmax over the two controller logits.
std::array<float, 2> gate_weights(const std::vector<float>& features, const ParamStore& head,
                                  const ModelDims& dims);

struct GateDecision {
    std::array<float, 2> alpha{0.5f, 0.5f};
    std::vector<float> h_sensor;
    std::vector<float> h_context;
    std::vector<float> h_final;
    std::vector<float> logits;
    int64_t y_hat = -1;
};

// Inference head bundle: frozen encoders plus a trained (or freshly
// initialized) head. z_c at inference is the posterior mean.
struct InferenceModel {
    ParamStore encoders;
    ParamStore head;
    GateStats stats;
    ModelDims dims;
    HeadMode mode = HeadMode::Gated;
    GateMask mask = GateMask::Full;

    bool has_stats() const { return !stats.mean.empty(); }
};

// Identity stats (mean 0, std 1) for evaluating an untrained head.
GateStats identity_gate_stats(const ModelDims& dims);

// Projection -> ReLU -> gated fusion -> classifier; argmax breaks ties toward
// the lowest class index. Inference only (no dropout).
GateDecision fuse_and_classify(const std::vector<float>& z_x, const std::vector<float>& z_c,
                               const Tensor& segment, const InferenceModel& model);

struct CustomizeConfig {
    AdamWConfig optim{1e-4, 0.9, 0.999, 1e-8, 0.01};
    int64_t batch_size = 32;
    int64_t max_epochs = 100;
    int64_t patience = 10;
    double dropout = 0.3;
    double lambda_balance = 0.01;
    double val_fraction = 0.1;
    GateMask mask = GateMask::Full;
    HeadMode mode = HeadMode::Gated;
};

struct CustomizeEpoch {
    double l_custom = 0.0;
    double l_ce = 0.0;
    double l_balance = 0.0;
    double val_l_custom = 0.0;
    double mean_alpha_sensor = 0.5;
    double mean_alpha_context = 0.5;
};

struct CustomizeReport {
    std::vector<CustomizeEpoch> epochs;
    int64_t best_epoch = -1;
    std::string stop_reason;
    std::string gate_mask;
    std::string head_mode;
    uint64_t encoder_hash_before = 0;
    uint64_t encoder_hash_after = 0;
    int64_t labeled_count = 0;
    double wall_ms = 0.0;
};

struct CustomizeResult {
    ParamStore head;
    GateStats stats;
    CustomizeReport report;
};

// Trains only the head over frozen encoders on the labeled view. Gate-feature
// stats come from the training split of that view.
CustomizeResult run_customize(const shiftlab::Dataset& dataset,
                              const shiftlab::DatasetView& labeled, const ParamStore& encoders,
                              const ModelDims& dims, const CustomizeConfig& config, uint64_t seed);

}  // namespace chorus::gating
