#include "chorus/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "chorus/text.hpp"

namespace chorus::streaming {

ContextCache::ContextCache(int64_t capacity) : capacity_(capacity) {
    if (capacity <= 0) throw ConfigError("context cache capacity must be positive");
}

const CacheEntry& ContextCache::get_or_encode(const std::string& context_id,
                                              const std::string& description,
                                              const Encoder& encoder, bool* hit) {
    auto it = index_.find(context_id);
    if (it != index_.end()) {
        ++hits_;
        if (hit) *hit = true;
        entries_.splice(entries_.begin(), entries_, it->second);
        return entries_.front().second;
    }
    ++misses_;
    if (hit) *hit = false;
    if (description.empty()) {
        throw ContractViolation("cache miss for context '" + context_id +
                                "' without a description");
    }
    entries_.emplace_front(context_id, encoder(description));
    index_[context_id] = entries_.begin();
    if (static_cast<int64_t>(entries_.size()) > capacity_) {
        index_.erase(entries_.back().first);
        entries_.pop_back();
        ++evictions_;
    }
    return entries_.front().second;
}

std::vector<std::string> ContextCache::keys_mru() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
}

std::vector<StreamEvent> make_trace(const shiftlab::Dataset& dataset,
                                    const std::vector<TraceSegmentSpec>& segments, uint64_t seed) {
    std::vector<StreamEvent> trace;
    rng::RngState rs(seed, rng::kTrace);
    int64_t index = 0;
    for (const auto& seg : segments) {
        const int ctx = dataset.context_index(seg.context);  // throws on unknown name
        const auto& pool = dataset.by_context[static_cast<size_t>(ctx)];
        if (pool.empty()) throw ConfigError("make_trace: context '" + seg.context + "' has no samples");
        for (int64_t i = 0; i < seg.count; ++i) {
            const int64_t pick = pool[static_cast<size_t>(rs.next_u64() % pool.size())];
            const auto& s = dataset.read(pick, false);
            StreamEvent ev;
            ev.index = index++;
            ev.segment = s.values;
            ev.context_id = dataset.contexts[static_cast<size_t>(ctx)].context_id;
            ev.description = dataset.contexts[static_cast<size_t>(ctx)].description;
            ev.label = s.label;
            trace.push_back(std::move(ev));
        }
    }
    return trace;
}

std::vector<StreamEvent> make_switch_trace(const shiftlab::Dataset& dataset,
                                           const std::vector<std::string>& contexts,
                                           const std::vector<int64_t>& switch_points,
                                           int64_t length, uint64_t seed) {
    if (contexts.empty()) throw ConfigError("make_switch_trace: no contexts given");
    if (switch_points.size() + 1 != contexts.size()) {
        throw ConfigError("make_switch_trace: need exactly one more context than switch points");
    }
    int64_t prev = 0;
    for (int64_t p : switch_points) {
        if (p <= prev || p >= length) {
            throw ConfigError("make_switch_trace: switch points must be strictly increasing within the trace");
        }
        prev = p;
    }
    std::vector<TraceSegmentSpec> segments;
    int64_t start = 0;
    for (size_t i = 0; i < contexts.size(); ++i) {
        const int64_t end = i < switch_points.size() ? switch_points[i] : length;
        segments.push_back({contexts[i], end - start});
        start = end;
    }
    return make_trace(dataset, segments, seed);
}

namespace {

CacheEntry encode_context_entry(const std::string& description, const gating::InferenceModel& model) {
    CacheEntry entry;
    const ContextRecord rec = make_context_record("", description, model.dims.text_dim);
    entry.z_context = encode_context(rec, model.encoders, model.dims, false, nullptr).z;
    // Projected context branch, cached post-ReLU.
    const Tensor& w = model.head.value("head.proj_c.w");
    const Tensor& b = model.head.value("head.proj_c.b");
    const int64_t in = w.dim(0), out = w.dim(1);
    entry.h_context.resize(static_cast<size_t>(out));
    for (int64_t j = 0; j < out; ++j) {
        double acc = static_cast<double>(b[j]);
        for (int64_t i = 0; i < in; ++i) {
            acc += static_cast<double>(entry.z_context[static_cast<size_t>(i)]) *
                   static_cast<double>(w[i * out + j]);
        }
        entry.h_context[static_cast<size_t>(j)] = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
    }
    return entry;
}

gating::GateDecision infer_with_entry(const Tensor& segment, const std::vector<float>& z_x,
                                      const CacheEntry& entry, const gating::InferenceModel& model) {
    gating::GateDecision dec;
    dec.h_sensor.resize(static_cast<size_t>(model.dims.head_hidden));
    {
        const Tensor& w = model.head.value("head.proj_s.w");
        const Tensor& b = model.head.value("head.proj_s.b");
        const int64_t in = w.dim(0), out = w.dim(1);
        for (int64_t j = 0; j < out; ++j) {
            double acc = static_cast<double>(b[j]);
            for (int64_t i = 0; i < in; ++i) {
                acc += static_cast<double>(z_x[static_cast<size_t>(i)]) * static_cast<double>(w[i * out + j]);
            }
            dec.h_sensor[static_cast<size_t>(j)] = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
        }
    }
    dec.h_context = entry.h_context;

    if (model.mode == HeadMode::Gated) {
        const auto raw = gating::gate_features_raw(z_x, entry.z_context, segment);
        const gating::GateStats stats =
            model.has_stats() ? model.stats : gating::identity_gate_stats(model.dims);
        const auto r = gating::standardize_gate_features(raw, stats, model.mask);
        dec.alpha = gating::gate_weights(r, model.head, model.dims);
    } else {
        dec.alpha = {0.5f, 0.5f};
    }

    if (model.mode == HeadMode::Concat) {
        dec.h_final.reserve(dec.h_sensor.size() + dec.h_context.size());
        dec.h_final.insert(dec.h_final.end(), dec.h_sensor.begin(), dec.h_sensor.end());
        dec.h_final.insert(dec.h_final.end(), dec.h_context.begin(), dec.h_context.end());
    } else {
        dec.h_final.resize(dec.h_sensor.size());
        for (size_t i = 0; i < dec.h_final.size(); ++i) {
            dec.h_final[i] = dec.alpha[0] * dec.h_sensor[i] + dec.alpha[1] * dec.h_context[i];
        }
    }
    const Tensor& w = model.head.value("head.cls.w");
    const Tensor& b = model.head.value("head.cls.b");
    const int64_t in = w.dim(0), out = w.dim(1);
    dec.logits.resize(static_cast<size_t>(out));
    for (int64_t j = 0; j < out; ++j) {
        double acc = static_cast<double>(b[j]);
        for (int64_t i = 0; i < in; ++i) {
            acc += static_cast<double>(dec.h_final[static_cast<size_t>(i)]) * static_cast<double>(w[i * out + j]);
        }
        dec.logits[static_cast<size_t>(j)] = static_cast<float>(acc);
    }
    dec.y_hat = 0;
    for (size_t j = 1; j < dec.logits.size(); ++j) {
        if (dec.logits[j] > dec.logits[static_cast<size_t>(dec.y_hat)]) dec.y_hat = static_cast<int64_t>(j);
    }
    return dec;
}

double percentile95(std::vector<int64_t> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t idx = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
    return static_cast<double>(v[std::min(idx, v.size() - 1)]);
}

}  // namespace

StreamReport run_stream(const std::vector<StreamEvent>& trace, const gating::InferenceModel& model,
                        const StreamConfig& config) {
    if (trace.empty()) throw ContractViolation("run_stream: empty trace");

    StreamReport report;
    ContextCache cache(config.cache_capacity);
    int64_t encoder_calls = 0;
    const auto encoder = [&](const std::string& description) {
        ++encoder_calls;
        return encode_context_entry(description, model);
    };

    std::vector<int64_t> latencies;
    latencies.reserve(trace.size());
    int64_t correct = 0;
    for (const auto& ev : trace) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto z_x = encode_sensor({ev.segment, ev.context_id, ev.label}, model.encoders, model.dims);
        bool hit = false;
        const CacheEntry& entry = cache.get_or_encode(ev.context_id, ev.description, encoder, &hit);
        const auto dec = infer_with_entry(ev.segment, z_x, entry, model);
        const auto t1 = std::chrono::steady_clock::now();

        SampleRecord rec;
        rec.index = ev.index;
        rec.context_id = ev.context_id;
        rec.hit = hit;
        rec.has_label = ev.label >= 0;
        rec.correct = rec.has_label && dec.y_hat == ev.label;
        rec.alpha_context = dec.alpha[1];
        rec.y_pred = dec.y_hat;
        rec.latency_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        latencies.push_back(rec.latency_ns);
        if (rec.has_label) {
            ++report.labeled_count;
            if (rec.correct) ++correct;
        }
        report.samples.push_back(std::move(rec));
    }

    report.hits = cache.hits();
    report.misses = cache.misses();
    report.evictions = cache.evictions();
    report.encoder_invocations = encoder_calls;
    report.hit_rate = static_cast<double>(report.hits) / static_cast<double>(trace.size());
    report.accuracy = report.labeled_count > 0
                          ? static_cast<double>(correct) / static_cast<double>(report.labeled_count)
                          : 0.0;
    double total = 0.0;
    for (int64_t l : latencies) total += static_cast<double>(l);
    report.mean_latency_ns = total / static_cast<double>(latencies.size());
    report.p95_latency_ns = percentile95(latencies);

    if (config.with_uncached_pass) {
        int64_t uncached_calls = 0;
        std::vector<int64_t> raw_lat;
        raw_lat.reserve(trace.size());
        for (size_t i = 0; i < trace.size(); ++i) {
            const auto& ev = trace[i];
            const auto t0 = std::chrono::steady_clock::now();
            const auto z_x = encode_sensor({ev.segment, ev.context_id, ev.label}, model.encoders, model.dims);
            ++uncached_calls;
            const CacheEntry entry = encode_context_entry(ev.description, model);
            const auto dec = infer_with_entry(ev.segment, z_x, entry, model);
            const auto t1 = std::chrono::steady_clock::now();
            raw_lat.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            // The cache must never change predictions.
            if (dec.y_hat != report.samples[i].y_pred) {
                throw NumericError("cache transparency violated at trace index " +
                                   std::to_string(ev.index));
            }
        }
        report.has_uncached = true;
        report.uncached_encoder_invocations = uncached_calls;
        double t = 0.0;
        for (int64_t l : raw_lat) t += static_cast<double>(l);
        report.uncached_mean_latency_ns = t / static_cast<double>(raw_lat.size());
        report.uncached_p95_latency_ns = percentile95(raw_lat);
    }
    return report;
}

}  // namespace chorus::streaming
