#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <deque>

#include "chorus/streaming.hpp"

using namespace chorus;
using streaming::CacheEntry;
using streaming::ContextCache;

namespace {

ModelDims tiny_dims() {
    ModelDims d;
    d.channels = 2;
    d.length = 16;
    d.classes = 3;
    d.latent = 4;
    d.text_dim = 8;
    d.conv1 = 3;
    d.conv2 = 4;
    d.ctx_hidden = 5;
    d.dec_hidden = 6;
    d.head_hidden = 4;
    d.gate_hidden = 3;
    return d;
}

shiftlab::Dataset tiny_dataset(const ModelDims& dims, uint64_t seed) {
    shiftlab::SyntheticSpec spec;
    spec.classes = dims.classes;
    spec.channels = dims.channels;
    spec.length = dims.length;
    spec.samples_per_cell = 10;
    spec.seed = seed;
    spec.contexts = {{"alpha", 0.1, 1.0, 0.05},
                     {"beta", 0.4, 1.0, 0.05},
                     {"gamma", 0.8, 1.0, 0.05}};
    return shiftlab::generate_dataset(spec);
}

gating::InferenceModel tiny_model(const ModelDims& dims, uint64_t seed) {
    gating::InferenceModel model;
    init_encoder_params(model.encoders, dims, seed);
    init_head_params(model.head, dims, seed + 1, HeadMode::Gated);
    model.dims = dims;
    model.stats = gating::identity_gate_stats(dims);
    return model;
}

CacheEntry dummy_entry(const std::string& description) {
    CacheEntry e;
    e.z_context = {static_cast<float>(description.size()), 1.0f};
    e.h_context = {2.0f};
    return e;
}

// Reference single-file LRU simulation.
struct LruOracle {
    size_t capacity;
    std::deque<std::string> order;  // front = most recent
    int64_t hits = 0, misses = 0, evictions = 0;

    bool access(const std::string& key) {
        auto it = std::find(order.begin(), order.end(), key);
        if (it != order.end()) {
            order.erase(it);
            order.push_front(key);
            ++hits;
            return true;
        }
        ++misses;
        order.push_front(key);
        if (order.size() > capacity) {
            order.pop_back();
            ++evictions;
        }
        return false;
    }
};

}  // namespace

TEST_CASE("second lookup of the same id is a hit") {
    ContextCache cache(4);
    int64_t calls = 0;
    const auto enc = [&](const std::string& d) {
        ++calls;
        return dummy_entry(d);
    };
    bool hit = true;
    cache.get_or_encode("belt", "belt", enc, &hit);
    CHECK_FALSE(hit);
    cache.get_or_encode("belt", "belt", enc, &hit);
    CHECK(hit);
    CHECK(calls == 1);
    CHECK(cache.hits() == 1);
    CHECK(cache.misses() == 1);
    CHECK(cache.lookups() == 2);
}

TEST_CASE("N samples of one context invoke the encoder once") {
    ContextCache cache(2);
    int64_t calls = 0;
    const auto enc = [&](const std::string& d) {
        ++calls;
        return dummy_entry(d);
    };
    for (int i = 0; i < 50; ++i) cache.get_or_encode("wrist", "wrist", enc, nullptr);
    CHECK(calls == 1);
}

TEST_CASE("alternating contexts with capacity 1 always miss") {
    ContextCache cache(1);
    int64_t calls = 0;
    const auto enc = [&](const std::string& d) {
        ++calls;
        return dummy_entry(d);
    };
    for (int i = 0; i < 20; ++i) {
        bool hit = true;
        cache.get_or_encode(i % 2 ? "A" : "B", "desc", enc, &hit);
        CHECK_FALSE(hit);
    }
    CHECK(calls == 20);
    CHECK(cache.evictions() == 19);
}

TEST_CASE("capacity 0 is a configuration error") {
    CHECK_THROWS_AS(ContextCache(0), ConfigError);
}

TEST_CASE("miss without a description is a contract violation") {
    ContextCache cache(2);
    const auto enc = [&](const std::string& d) { return dummy_entry(d); };
    CHECK_THROWS_AS(cache.get_or_encode("belt", "", enc, nullptr), ContractViolation);
    // A hit never needs the description.
    cache.get_or_encode("belt", "belt", enc, nullptr);
    bool hit = false;
    cache.get_or_encode("belt", "", enc, &hit);
    CHECK(hit);
}

TEST_CASE("LRU behavior matches the simulation oracle on 1000 randomized traces") {
    rng::RngState rs(404, rng::kTrace);
    const auto enc = [](const std::string& d) { return dummy_entry(d); };
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t capacity = 1 + rs.next_u64() % 4;
        const int64_t n_keys = 2 + static_cast<int64_t>(rs.next_u64() % 6);
        ContextCache cache(static_cast<int64_t>(capacity));
        LruOracle oracle{capacity, {}, 0, 0, 0};
        const int steps = 30;
        for (int s = 0; s < steps; ++s) {
            const std::string key = "k" + std::to_string(rs.next_u64() % static_cast<uint64_t>(n_keys));
            bool hit = false;
            cache.get_or_encode(key, key, enc, &hit);
            const bool oracle_hit = oracle.access(key);
            REQUIRE(hit == oracle_hit);
            REQUIRE(cache.keys_mru() == std::vector<std::string>(oracle.order.begin(), oracle.order.end()));
        }
        CHECK(cache.hits() == oracle.hits);
        CHECK(cache.misses() == oracle.misses);
        CHECK(cache.evictions() == oracle.evictions);
    }
}

TEST_CASE("make_switch_trace structure and determinism") {
    const ModelDims dims = tiny_dims();
    const auto ds = tiny_dataset(dims, 10);
    const auto trace = streaming::make_switch_trace(ds, {"alpha", "beta", "gamma"}, {40, 80}, 120, 3);
    REQUIRE(trace.size() == 120);
    int switches = 0;
    for (size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i].index == trace[i - 1].index + 1);
        if (trace[i].context_id != trace[i - 1].context_id) ++switches;
    }
    CHECK(switches == 2);
    CHECK(trace[0].context_id == "alpha");
    CHECK(trace[40].context_id == "beta");
    CHECK(trace[80].context_id == "gamma");

    const auto again = streaming::make_switch_trace(ds, {"alpha", "beta", "gamma"}, {40, 80}, 120, 3);
    for (size_t i = 0; i < trace.size(); ++i) {
        CHECK(trace[i].segment.vec() == again[i].segment.vec());
        CHECK(trace[i].label == again[i].label);
    }

    // single segment spec -> zero switches
    const auto single = streaming::make_switch_trace(ds, {"beta"}, {}, 30, 4);
    CHECK(single.size() == 30);
    for (const auto& ev : single) CHECK(ev.context_id == "beta");

    CHECK_THROWS_AS(streaming::make_switch_trace(ds, {"alpha", "zeta"}, {10}, 30, 5), ConfigError);
    CHECK_THROWS_AS(streaming::make_switch_trace(ds, {"alpha", "beta"}, {40}, 30, 5), ConfigError);
}

TEST_CASE("run_stream counters, transparency and miss bound") {
    const ModelDims dims = tiny_dims();
    const auto ds = tiny_dataset(dims, 11);
    const auto model = tiny_model(dims, 12);
    const auto trace = streaming::make_switch_trace(ds, {"alpha", "beta", "gamma"}, {50, 100}, 150, 6);

    streaming::StreamConfig cfg;
    cfg.cache_capacity = 3;
    cfg.with_uncached_pass = true;  // run_stream asserts prediction equality itself
    const auto report = streaming::run_stream(trace, model, cfg);
    CHECK(report.encoder_invocations == 3);  // one per distinct context
    CHECK(report.misses == 3);
    CHECK(report.hits == 147);
    CHECK(report.encoder_invocations == report.misses);
    CHECK(report.uncached_encoder_invocations == 150);
    CHECK(report.samples.size() == 150);

    // Capacity 1 on a switch-only trace: misses == switches + 1.
    streaming::StreamConfig cfg1;
    cfg1.cache_capacity = 1;
    const auto single_slot = streaming::run_stream(trace, model, cfg1);
    CHECK(single_slot.misses == 3);
    CHECK(single_slot.hits == 147);

    // Revisits with capacity 1 miss again.
    const auto back = streaming::make_switch_trace(ds, {"alpha", "beta", "alpha"}, {10, 20}, 30, 7);
    const auto revisit = streaming::run_stream(back, model, cfg1);
    CHECK(revisit.misses == 3);

    // With enough capacity the revisit hits: misses == distinct contexts.
    streaming::StreamConfig cfg3;
    cfg3.cache_capacity = 3;
    const auto revisit3 = streaming::run_stream(back, model, cfg3);
    CHECK(revisit3.misses == 2);
}

TEST_CASE("cached and uncached predictions are identical sample by sample") {
    const ModelDims dims = tiny_dims();
    const auto ds = tiny_dataset(dims, 13);
    const auto model = tiny_model(dims, 14);
    // Randomized context order stresses eviction paths.
    std::vector<streaming::TraceSegmentSpec> segments;
    rng::RngState rs(15, rng::kTrace);
    const char* names[3] = {"alpha", "beta", "gamma"};
    for (int i = 0; i < 12; ++i) {
        segments.push_back({names[rs.next_u64() % 3], 5 + static_cast<int64_t>(rs.next_u64() % 5)});
    }
    const auto trace = streaming::make_trace(ds, segments, 16);
    streaming::StreamConfig cfg;
    cfg.cache_capacity = 2;
    cfg.with_uncached_pass = true;  // throws on any prediction divergence
    const auto report = streaming::run_stream(trace, model, cfg);
    CHECK(report.has_uncached);
    CHECK(report.samples.size() == trace.size());
}

TEST_CASE("empty trace is a contract violation") {
    const ModelDims dims = tiny_dims();
    const auto model = tiny_model(dims, 17);
    CHECK_THROWS_AS(streaming::run_stream({}, model, {}), ContractViolation);
}
