#include "chorus/text.hpp"

#include <cctype>
#include <cmath>

namespace chorus::text {

uint64_t fnv1a64(const void* data, size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    uint64_t h = 0xCBF29CE484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= b[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string normalize_description(const std::string& description) {
    std::string out;
    out.reserve(description.size());
    bool pending_space = false;
    for (char c : description) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

TextFeatures featurize_text(const std::string& description, int dim) {
    TextFeatures out;
    out.values.assign(static_cast<size_t>(dim), 0.0f);

    const std::string norm = normalize_description(description);
    if (norm.empty()) return out;  // zero vector, flagged non-normalized

    const std::string padded = " " + norm + " ";
    for (size_t i = 0; i + 3 <= padded.size(); ++i) {
        const uint64_t h = fnv1a64(padded.data() + i, 3);
        const size_t bucket = static_cast<size_t>(h % static_cast<uint64_t>(dim));
        const float sign = (h >> 63) ? -1.0f : 1.0f;
        out.values[bucket] += sign;
    }

    double sq = 0.0;
    for (float v : out.values) sq += static_cast<double>(v) * static_cast<double>(v);
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (float& v : out.values) v = static_cast<float>(v * inv);
        out.normalized = true;
    }
    return out;
}

}  // namespace chorus::text
