#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace chorus::text {

inline constexpr int kDefaultTextDim = 64;

struct TextFeatures {
    std::vector<float> values;
    bool normalized = false;  // false only for the all-zero (empty text) case
};

// Lowercases, collapses whitespace runs, pads with one boundary space on each
// side, hashes character trigrams (FNV-1a 64) into signed buckets, then
// L2-normalizes. Pure function of the description text.
TextFeatures featurize_text(const std::string& description, int dim = kDefaultTextDim);

// Exposed for tests: the hash and the normalization step.
uint64_t fnv1a64(const void* data, size_t len);
std::string normalize_description(const std::string& description);

}  // namespace chorus::text
