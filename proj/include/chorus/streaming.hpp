#pragma once

#include <cstdint>
#include <functional>
#include <list>
#include <string>
#include <unordered_map>
#include <vector>

#include "chorus/gating.hpp"
#include "chorus/shiftlab.hpp"

namespace chorus::streaming {

struct StreamEvent {
    int64_t index = 0;  // strictly increasing within a trace
    Tensor segment;     // (C, T)
    std::string context_id;
    std::string description;
    int64_t label = -1;
};

// Processed context entry: posterior mean plus the projected branch output, so
// a hit skips the whole context-processing stack.
struct CacheEntry {
    std::vector<float> z_context;
    std::vector<float> h_context;
};

// Keyed LRU map over context ids. Capacity 1 reproduces the single
// previous-context slot protocol.
class ContextCache {
public:
    explicit ContextCache(int64_t capacity);

    using Encoder = std::function<CacheEntry(const std::string& description)>;

    // Hit: recency update, no encoder call. Miss: encode, insert, evict LRU.
    const CacheEntry& get_or_encode(const std::string& context_id, const std::string& description,
                                    const Encoder& encoder, bool* hit);

    int64_t capacity() const { return capacity_; }
    int64_t size() const { return static_cast<int64_t>(entries_.size()); }
    int64_t hits() const { return hits_; }
    int64_t misses() const { return misses_; }
    int64_t lookups() const { return hits_ + misses_; }
    int64_t evictions() const { return evictions_; }

    // Most-recent-first key order, for oracle comparison in tests.
    std::vector<std::string> keys_mru() const;

private:
    int64_t capacity_;
    int64_t hits_ = 0;
    int64_t misses_ = 0;
    int64_t evictions_ = 0;
    std::list<std::pair<std::string, CacheEntry>> entries_;  // front = most recent
    std::unordered_map<std::string, std::list<std::pair<std::string, CacheEntry>>::iterator> index_;
};

struct TraceSegmentSpec {
    std::string context;
    int64_t count = 0;
};

// Draws samples (with replacement) from the named contexts in order; switch
// points are where the context id changes.
std::vector<StreamEvent> make_trace(const shiftlab::Dataset& dataset,
                                    const std::vector<TraceSegmentSpec>& segments, uint64_t seed);

// Convenience: one trace of `length` events over `contexts`, switching at the
// given strictly-increasing indices.
std::vector<StreamEvent> make_switch_trace(const shiftlab::Dataset& dataset,
                                           const std::vector<std::string>& contexts,
                                           const std::vector<int64_t>& switch_points,
                                           int64_t length, uint64_t seed);

struct SampleRecord {
    int64_t index = 0;
    std::string context_id;
    bool hit = false;
    bool has_label = false;
    bool correct = false;
    float alpha_context = 0.0f;
    int64_t y_pred = -1;
    int64_t latency_ns = 0;
};

struct StreamReport {
    std::vector<SampleRecord> samples;
    int64_t labeled_count = 0;
    double accuracy = 0.0;  // over labeled samples
    int64_t hits = 0;
    int64_t misses = 0;
    int64_t evictions = 0;
    int64_t encoder_invocations = 0;
    double hit_rate = 0.0;
    double mean_latency_ns = 0.0;
    double p95_latency_ns = 0.0;

    bool has_uncached = false;
    double uncached_mean_latency_ns = 0.0;
    double uncached_p95_latency_ns = 0.0;
    int64_t uncached_encoder_invocations = 0;
};

struct StreamConfig {
    int64_t cache_capacity = 16;
    bool with_uncached_pass = false;  // re-runs the trace without the cache
};

// Single-pass streaming inference; the cache affects cost only, never output.
StreamReport run_stream(const std::vector<StreamEvent>& trace, const gating::InferenceModel& model,
                        const StreamConfig& config);

}  // namespace chorus::streaming
