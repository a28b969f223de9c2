#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "chorus/gating.hpp"
#include "chorus/gradcheck.hpp"
#include "chorus/losses.hpp"

using namespace chorus;

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

Tensor rand_segment(const ModelDims& dims, uint64_t tag) {
    Tensor t({dims.channels, dims.length});
    rng::RngState rs(5, rng::mix64(tag));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rs.next_uniform(-1.0, 1.0));
    return t;
}

shiftlab::Dataset tiny_dataset(const ModelDims& dims, uint64_t seed) {
    shiftlab::SyntheticSpec spec;
    spec.classes = dims.classes;
    spec.channels = dims.channels;
    spec.length = dims.length;
    spec.samples_per_cell = 12;
    spec.seed = seed;
    spec.contexts = {{"left pocket", 0.1, 1.0, 0.05}, {"right pocket", 0.15, 1.0, 0.05}};
    return shiftlab::generate_dataset(spec);
}

}  // namespace

TEST_CASE("gate features: identical embeddings give cosine 1, orthogonal give 0") {
    const ModelDims dims = tiny_dims();
    const Tensor seg = rand_segment(dims, 1);
    std::vector<float> z{1.0f, 2.0f, 0.0f, -1.0f};
    auto f = gating::gate_features_raw(z, z, seg);
    CHECK(f[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(f.size() == static_cast<size_t>(dims.gate_feature_count()));

    std::vector<float> a{1.0f, 0.0f, 0.0f, 0.0f}, b{0.0f, 1.0f, 0.0f, 0.0f};
    CHECK(gating::gate_features_raw(a, b, seg)[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("gate features: zero-norm embedding defines cosine as 0") {
    const ModelDims dims = tiny_dims();
    std::vector<float> zero(4, 0.0f), z{1.0f, 1.0f, 0.0f, 0.0f};
    CHECK(gating::gate_features_raw(zero, z, rand_segment(dims, 2))[0] == 0.0f);
}

TEST_CASE("constant segment has zero per-channel stds") {
    const ModelDims dims = tiny_dims();
    Tensor seg({dims.channels, dims.length});
    for (int64_t i = 0; i < seg.size(); ++i) seg[i] = 3.5f;
    std::vector<float> z{1.0f, 0.0f, 0.0f, 0.0f};
    const auto f = gating::gate_features_raw(z, z, seg);
    // layout: [cos, ||z_x||, means(C), stds(C), ||seg||]
    for (int64_t c = 0; c < dims.channels; ++c) {
        CHECK(f[static_cast<size_t>(2 + dims.channels + c)] == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(f[static_cast<size_t>(2 + c)] == doctest::Approx(3.5).epsilon(1e-6));
    }
}

TEST_CASE("gate weights: softmax closed forms") {
    const ModelDims dims = tiny_dims();
    ParamStore head;
    init_head_params(head, dims, 3, HeadMode::Gated);
    // Zero the controller so logits come only from the bias we set.
    for (const char* n : {"head.gate.fc1.w", "head.gate.fc1.b", "head.gate.fc2.w"}) {
        auto& t = head.value(n);
        for (int64_t i = 0; i < t.size(); ++i) t[i] = 0.0f;
    }
    auto& bias = head.value("head.gate.fc2.b");
    const std::vector<float> feats(static_cast<size_t>(dims.gate_feature_count()), 0.3f);

    bias[0] = 0.0f;
    bias[1] = 0.0f;
    auto alpha = gating::gate_weights(feats, head, dims);
    CHECK(alpha[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(alpha[1] == doctest::Approx(0.5).epsilon(1e-6));

    bias[0] = std::log(3.0f);
    alpha = gating::gate_weights(feats, head, dims);
    CHECK(alpha[0] == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(alpha[1] == doctest::Approx(0.25).epsilon(1e-6));

    bias[0] = 20.0f;
    alpha = gating::gate_weights(feats, head, dims);
    CHECK(alpha[0] > 0.999999f);
}

TEST_CASE("fusion identity, simplex alpha, convex combination") {
    const ModelDims dims = tiny_dims();
    ParamStore enc;
    init_encoder_params(enc, dims, 4);
    gating::InferenceModel model;
    model.encoders = enc;
    init_head_params(model.head, dims, 5, HeadMode::Gated);
    model.dims = dims;
    model.stats = gating::identity_gate_stats(dims);

    rng::RngState rs(6, rng::kData);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> zx(4), zc(4);
        for (auto& v : zx) v = static_cast<float>(rs.next_uniform(-1, 1));
        for (auto& v : zc) v = static_cast<float>(rs.next_uniform(-1, 1));
        const auto dec = gating::fuse_and_classify(zx, zc, rand_segment(dims, 100 + static_cast<uint64_t>(trial)), model);
        CHECK(dec.alpha[0] >= 0.0f);
        CHECK(dec.alpha[1] >= 0.0f);
        CHECK(dec.alpha[0] + dec.alpha[1] == doctest::Approx(1.0).epsilon(1e-6));
        for (size_t i = 0; i < dec.h_final.size(); ++i) {
            CHECK(dec.h_final[i] ==
                  doctest::Approx(dec.alpha[0] * dec.h_sensor[i] + dec.alpha[1] * dec.h_context[i])
                      .epsilon(1e-6));
        }
    }
}

TEST_CASE("alpha [1,0] reproduces the sensor branch exactly") {
    const ModelDims dims = tiny_dims();
    gating::InferenceModel model;
    init_encoder_params(model.encoders, dims, 7);
    init_head_params(model.head, dims, 8, HeadMode::Gated);
    model.dims = dims;
    model.stats = gating::identity_gate_stats(dims);
    // Saturate the controller toward the sensor branch.
    auto& w = model.head.value("head.gate.fc2.w");
    for (int64_t i = 0; i < w.size(); ++i) w[i] = 0.0f;
    auto& b = model.head.value("head.gate.fc2.b");
    b[0] = 60.0f;
    b[1] = -60.0f;
    std::vector<float> zx{0.5f, -0.2f, 0.8f, 0.1f}, zc{0.1f, 0.9f, -0.4f, 0.2f};
    const auto dec = gating::fuse_and_classify(zx, zc, rand_segment(dims, 9), model);
    for (size_t i = 0; i < dec.h_final.size(); ++i) CHECK(dec.h_final[i] == dec.h_sensor[i]);
}

TEST_CASE("tie logits predict the lowest class index") {
    const ModelDims dims = tiny_dims();
    gating::InferenceModel model;
    init_encoder_params(model.encoders, dims, 10);
    init_head_params(model.head, dims, 11, HeadMode::Gated);
    model.dims = dims;
    model.stats = gating::identity_gate_stats(dims);
    auto& w = model.head.value("head.cls.w");
    for (int64_t i = 0; i < w.size(); ++i) w[i] = 0.0f;
    auto& b = model.head.value("head.cls.b");
    for (int64_t i = 0; i < b.size(); ++i) b[i] = 1.25f;
    std::vector<float> zx{0.3f, 0.3f, 0.3f, 0.3f};
    const auto dec = gating::fuse_and_classify(zx, zx, rand_segment(dims, 12), model);
    CHECK(dec.y_hat == 0);
}

TEST_CASE("customize loss gradient w.r.t. head parameters passes grad_check") {
    const ModelDims dims = tiny_dims();
    ParamStore head;
    init_head_params(head, dims, 13, HeadMode::Gated);
    rng::RngState rs(14, rng::kData);
    const int64_t B = 6;
    Tensor zx({B, dims.latent}), zc({B, dims.latent}), feats({B, dims.gate_feature_count()});
    for (int64_t i = 0; i < zx.size(); ++i) zx[i] = static_cast<float>(rs.next_uniform(-1, 1));
    for (int64_t i = 0; i < zc.size(); ++i) zc[i] = static_cast<float>(rs.next_uniform(-1, 1));
    for (int64_t i = 0; i < feats.size(); ++i) feats[i] = static_cast<float>(rs.next_uniform(-1, 1));
    const std::vector<int64_t> labels{0, 1, 2, 0, 1, 2};

    auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
        auto hs = ag::relu(ag::linear(tape.constant(zx.cast<double>(), "zx"), P["head.proj_s.w"],
                                      P["head.proj_s.b"]));
        auto hc = ag::relu(ag::linear(tape.constant(zc.cast<double>(), "zc"), P["head.proj_c.w"],
                                      P["head.proj_c.b"]));
        auto g1 = ag::relu(ag::linear(tape.constant(feats.cast<double>(), "r"), P["head.gate.fc1.w"],
                                      P["head.gate.fc1.b"]));
        auto alpha = ag::softmax_rows(ag::linear(g1, P["head.gate.fc2.w"], P["head.gate.fc2.b"]));
        auto hf = ag::add(ag::scale_rows(hs, ag::slice_cols(alpha, 0, 1)),
                          ag::scale_rows(hc, ag::slice_cols(alpha, 1, 2)));
        auto logits = ag::linear(hf, P["head.cls.w"], P["head.cls.b"]);
        auto ce = ag::cross_entropy_logits(logits, labels);
        return ag::add(ce, ag::mul_scalar(losses::balance_loss_graph(alpha, 2), 0.01));
    };
    CHECK(grad_check(head, builder, 1e-3).max_rel_error < 1e-4);
}

TEST_CASE("run_customize freezes encoders and records the mask") {
    const ModelDims dims = tiny_dims();
    const auto ds = tiny_dataset(dims, 21);
    ParamStore enc;
    init_encoder_params(enc, dims, 22);
    const uint64_t hash_before = enc.content_hash();

    shiftlab::DatasetView labeled = shiftlab::make_view(ds, {"left pocket", "right pocket"}, true);
    gating::CustomizeConfig cfg;
    cfg.max_epochs = 3;
    cfg.optim.lr = 1e-3;
    for (const gating::GateMask mask :
         {gating::GateMask::Full, gating::GateMask::AlignOnly, gating::GateMask::DynOnly}) {
        cfg.mask = mask;
        const auto result = gating::run_customize(ds, labeled, enc, dims, cfg, 23);
        CHECK(result.report.encoder_hash_before == hash_before);
        CHECK(result.report.encoder_hash_after == hash_before);
        CHECK(enc.content_hash() == hash_before);
        CHECK(result.report.gate_mask == gating::gate_mask_name(mask));
        CHECK(result.report.epochs.size() == 3);
        // Both loss components are reported per epoch.
        for (const auto& e : result.report.epochs) {
            CHECK(std::isfinite(e.l_ce));
            CHECK(std::isfinite(e.l_balance));
        }
    }
}

TEST_CASE("run_customize requires at least K labeled samples") {
    const ModelDims dims = tiny_dims();
    const auto ds = tiny_dataset(dims, 31);
    ParamStore enc;
    init_encoder_params(enc, dims, 32);
    shiftlab::DatasetView tiny{&ds, {0, 1}, true};  // 2 < K = 3
    CHECK_THROWS_AS(gating::run_customize(ds, tiny, enc, dims, {}, 33), ConfigError);
}

TEST_CASE("masked features zero the right groups") {
    const ModelDims dims = tiny_dims();
    gating::GateStats stats = gating::identity_gate_stats(dims);
    std::vector<float> raw(static_cast<size_t>(dims.gate_feature_count()), 2.0f);
    const auto align = gating::standardize_gate_features(raw, stats, gating::GateMask::AlignOnly);
    CHECK(align[0] == 2.0f);
    CHECK(align[1] == 2.0f);
    for (size_t i = 2; i < align.size(); ++i) CHECK(align[i] == 0.0f);
    const auto dyn = gating::standardize_gate_features(raw, stats, gating::GateMask::DynOnly);
    CHECK(dyn[0] == 0.0f);
    CHECK(dyn[1] == 0.0f);
    for (size_t i = 2; i < dyn.size(); ++i) CHECK(dyn[i] == 2.0f);
}

TEST_CASE("gate stats floor the standard deviation") {
    std::vector<std::vector<float>> rows{{1.0f, 5.0f}, {1.0f, 7.0f}};
    const auto stats = gating::fit_gate_stats(rows);
    CHECK(stats.std[0] == 1e-6f);  // constant feature
    CHECK(stats.std[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(stats.mean[1] == doctest::Approx(6.0).epsilon(1e-6));
}
