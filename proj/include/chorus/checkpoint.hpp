#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chorus/encoders.hpp"
#include "chorus/gating.hpp"
#include "chorus/optim.hpp"

namespace chorus::checkpoint {

inline constexpr uint32_t kVersion = 1;

struct Meta {
    ModelDims dims;
    std::string regime;     // pre-training regime the encoders were trained with
    uint64_t seed = 0;
    std::string head_mode;  // empty | gated | concat | add | backbone
    std::string gate_mask;  // empty | full | align | dyn
    bool has_gate_stats = false;
    std::vector<float> gate_mean;
    std::vector<float> gate_std;
};

// Layout: "CHOR" magic, u32 version, u64 header length, JSON header, raw
// little-endian f32 blob. Header offsets are in floats and non-overlapping;
// load -> save round-trips byte-identically.
void save(const std::string& path, const ParamStore& params, const Meta& meta);

struct Loaded {
    ParamStore params;
    Meta meta;
};

Loaded load(const std::string& path);

}  // namespace chorus::checkpoint
