#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chorus/encoders.hpp"
#include "chorus/losses.hpp"
#include "chorus/optim.hpp"
#include "chorus/regime.hpp"
#include "chorus/shiftlab.hpp"

namespace chorus::pretraining {

inline constexpr double kSupConTau = 0.1;

struct PretrainConfig {
    AdamWConfig optim{1e-4, 0.9, 0.999, 1e-8, 0.01};
    int64_t batch_size = 32;
    int64_t max_epochs = 100;
    int64_t patience = 10;
    double val_fraction = 0.1;       // seeded 90/10 split of the unlabeled pool
    double unlabeled_fraction = 0.8; // share of the source pool used for stage 1
    double supcon_tau = kSupConTau;
};

struct EpochLosses {
    double l_xc = 0.0;
    double l_cx = 0.0;
    double l_kl = 0.0;
    double l_con = 0.0;
    double l_pre = 0.0;
};

struct PretrainReport {
    std::vector<EpochLosses> train;  // per recorded epoch
    std::vector<EpochLosses> val;
    EpochLosses init_val;            // untrained model on the validation split
    int64_t best_epoch = -1;         // -1 when no epoch ran
    std::string stop_reason;         // early_stop | max_epochs | zero_epoch_budget
    std::string regime;
    int64_t supcon_degenerate_batches = 0;
    bool single_context_warning = false;
    double wall_ms = 0.0;
};

struct PretrainLossValue {
    float l_xc = 0.0f;
    float l_cx = 0.0f;
    float l_recon = 0.0f;
    float l_kl = 0.0f;
    float l_con = 0.0f;
    float l_pre = 0.0f;
    bool con_degenerate = false;
};

// Full stage-1 objective on one mini-batch. training=true draws
// reparameterization noise from rng; otherwise z_c = mu_c.
PretrainLossValue pretrain_loss(const std::vector<const SensorSegment*>& segments,
                                const std::vector<const ContextRecord*>& records,
                                const ParamStore& params, const ModelDims& dims,
                                const RegimeConfig& regime, bool training, rng::RngState* rng);

struct PretrainResult {
    ParamStore checkpoint;
    PretrainReport report;
};

// AdamW over the unlabeled pool with early stopping on validation L_pre.
// Deterministic per (pool, regime, config, seed).
PretrainResult run_pretrain(const shiftlab::Dataset& dataset, const shiftlab::DatasetView& pool,
                            const RegimeConfig& regime, const PretrainConfig& config,
                            const ModelDims& dims, uint64_t seed);

}  // namespace chorus::pretraining
