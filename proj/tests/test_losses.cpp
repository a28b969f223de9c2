#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "chorus/gradcheck.hpp"
#include "chorus/losses.hpp"
#include "chorus/pretraining.hpp"

using namespace chorus;

namespace {

Tensor randt(std::vector<int64_t> shape, uint64_t tag, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    rng::RngState rs(99, rng::mix64(tag));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rs.next_uniform(lo, hi));
    return t;
}

ModelDims tiny_dims() {
    ModelDims d;
    d.channels = 2;
    d.length = 14;
    d.classes = 3;
    d.latent = 3;
    d.text_dim = 5;
    d.conv1 = 3;
    d.conv2 = 4;
    d.ctx_hidden = 5;
    d.dec_hidden = 6;
    return d;
}

}  // namespace

TEST_CASE("kl closed forms") {
    // mu = 0, logvar = 0 -> 0
    CHECK(losses::kl_loss(Tensor({1, 2}), Tensor({1, 2})) == doctest::Approx(0.0).epsilon(1e-9));
    // d = 1, mu = 1, logvar = 0 -> 0.5
    CHECK(losses::kl_loss(Tensor({1, 1}, {1.0f}), Tensor({1, 1})) ==
          doctest::Approx(0.5).epsilon(1e-6));
    // d = 1, mu = 0, logvar = 1 -> 0.5 (e - 2)
    CHECK(losses::kl_loss(Tensor({1, 1}), Tensor({1, 1}, {1.0f})) ==
          doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-6));
}

TEST_CASE("kl is non-negative and zero only at the prior") {
    for (uint64_t tag = 0; tag < 30; ++tag) {
        const Tensor mu = randt({4, 3}, tag, -2.0, 2.0);
        const Tensor lv = randt({4, 3}, tag + 100, -3.0, 3.0);
        const float v = losses::kl_loss(mu, lv);
        CHECK(v >= 0.0f);
        bool at_prior = true;
        for (int64_t i = 0; i < mu.size(); ++i) {
            if (std::fabs(mu[i]) > 1e-6f || std::fabs(lv[i]) > 1e-6f) at_prior = false;
        }
        if (!at_prior) CHECK(v > 1e-12f);
    }
    CHECK(losses::kl_loss(Tensor({2, 5}), Tensor({2, 5})) <= 1e-12f);
}

TEST_CASE("supcon: two samples, same label -> exactly zero") {
    const Tensor z = randt({2, 4}, 7);
    const auto r = losses::supcon_loss(z, {3, 3}, 0.7f);
    CHECK_FALSE(r.degenerate);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("supcon: no positives -> zero with warning flag") {
    const Tensor z = randt({2, 4}, 8);
    const auto r = losses::supcon_loss(z, {0, 1}, 0.5f);
    CHECK(r.degenerate);
    CHECK(r.value == 0.0f);
}

TEST_CASE("supcon three-sample closed form") {
    // e0 = e1, both orthogonal to e2, tau = 1:
    // each A anchor pays -log(e / (e + 1)) ~ 0.31326.
    Tensor z({3, 2}, {1.0f, 0.0f, 1.0f, 0.0f, 0.0f, 1.0f});
    const auto r = losses::supcon_loss(z, {0, 0, 1}, 1.0f);
    CHECK_FALSE(r.degenerate);
    CHECK(r.value == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-5));
    CHECK(r.value == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("supcon is invariant to a common rotation") {
    const Tensor z = randt({6, 4}, 9);
    const std::vector<int64_t> labels{0, 1, 0, 2, 1, 2};
    const float base = losses::supcon_loss(z, labels, 0.1f).value;
    // Givens rotations across coordinate pairs preserve all inner products.
    Tensor rot = z;
    const double cs = std::cos(0.83), sn = std::sin(0.83);
    for (int64_t i = 0; i < 6; ++i) {
        for (auto [a, b] : {std::pair<int, int>{0, 2}, {1, 3}}) {
            const double x = rot[i * 4 + a], y = rot[i * 4 + b];
            rot[i * 4 + a] = static_cast<float>(cs * x - sn * y);
            rot[i * 4 + b] = static_cast<float>(sn * x + cs * y);
        }
    }
    CHECK(losses::supcon_loss(rot, labels, 0.1f).value == doctest::Approx(base).epsilon(1e-4));
}

TEST_CASE("supcon preconditions") {
    CHECK_THROWS_AS(losses::supcon_loss(randt({1, 3}, 10), {0}, 0.5f), ContractViolation);
    CHECK_THROWS_AS(losses::supcon_loss(randt({2, 3}, 11), {0, 0}, 0.0f), ContractViolation);
}

TEST_CASE("recon loss: perfect reconstruction gives zeros; hand MSE") {
    ag::TapeT<float> tape;
    // chat = [1, 0] against c = [0, 0] over D_txt = 2 elements -> 0.5.
    auto chat = tape.leaf(Tensor({1, 2}, {1.0f, 0.0f}), false, "chat");
    auto xhat = tape.leaf(Tensor({1, 4}, {0.3f, -0.2f, 0.1f, 0.9f}), false, "xhat");
    Tensor c({1, 2});
    Tensor x({1, 4}, {0.3f, -0.2f, 0.1f, 0.9f});
    auto parts = losses::recon_loss_graph(chat, c, xhat, x, 1.0, 1.0);
    CHECK(parts.l_xc.value().item() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(parts.l_cx.value().item() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(parts.l_recon.value().item() == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("recon loss: weighted sum of parts") {
    ag::TapeT<float> tape;
    auto chat = tape.leaf(Tensor({1, 1}, {0.2f}), false, "chat");  // mse vs 0 = 0.04
    auto xhat = tape.leaf(Tensor({1, 1}, {0.3f}), false, "xhat");  // mse vs 0 = 0.09
    auto parts = losses::recon_loss_graph(chat, Tensor({1, 1}), xhat, Tensor({1, 1}), 2.0, 3.0);
    CHECK(parts.l_recon.value().item() ==
          doctest::Approx(2.0 * 0.04 + 3.0 * 0.09).epsilon(1e-6));
}

TEST_CASE("recon value wrapper checks batch sizes") {
    const ModelDims dims = tiny_dims();
    ParamStore enc;
    init_encoder_params(enc, dims, 1);
    CHECK_THROWS_AS(losses::recon_loss(randt({2, 3}, 1), randt({3, 3}, 2),
                                       randt({2, 2, 14}, 3), randt({2, 5}, 4), enc, dims, 1.0f, 1.0f),
                    ContractViolation);
}

TEST_CASE("cross entropy of uniform logits is ln K") {
    CHECK(losses::cross_entropy(Tensor({2, 6}), {0, 3}) ==
          doctest::Approx(std::log(6.0)).epsilon(1e-6));
    CHECK(losses::cross_entropy(Tensor({1, 6}), {5}) == doctest::Approx(1.79176).epsilon(1e-4));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    CHECK_THROWS_AS(losses::cross_entropy(Tensor({1, 3}), {3}), ContractViolation);
    CHECK_THROWS_AS(losses::cross_entropy(Tensor({1, 3}), {-1}), ContractViolation);
}

TEST_CASE("balance loss closed forms") {
    // batch mean [0.5, 0.5] -> 0
    CHECK(losses::balance_loss(Tensor({2, 2}, {0.5f, 0.5f, 0.5f, 0.5f}), 2) ==
          doctest::Approx(0.0).epsilon(1e-9));
    // batch mean [1, 0] -> 2 * (0.25 + 0.25) = 1
    CHECK(losses::balance_loss(Tensor({2, 2}, {1.0f, 0.0f, 1.0f, 0.0f}), 2) ==
          doctest::Approx(1.0).epsilon(1e-6));
    // opposite one-hot rows average to uniform -> 0 (per batch, not per sample)
    CHECK(losses::balance_loss(Tensor({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f}), 2) ==
          doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("balance loss range and uniqueness of the zero") {
    for (uint64_t tag = 0; tag < 20; ++tag) {
        Tensor alpha = randt({5, 2}, tag, 0.0, 1.0);
        for (int64_t i = 0; i < 5; ++i) {
            const float s = alpha[i * 2] + alpha[i * 2 + 1];
            alpha[i * 2] /= s;
            alpha[i * 2 + 1] /= s;
        }
        const float v = losses::balance_loss(alpha, 2);
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);  // K - 1
    }
}

TEST_CASE("pretrain loss composition and regime semantics") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 33);
    std::vector<SensorSegment> segs;
    std::vector<ContextRecord> recs;
    for (int i = 0; i < 4; ++i) {
        SensorSegment s;
        s.values = randt({dims.channels, dims.length}, 40 + static_cast<uint64_t>(i));
        s.context_id = i % 2 ? "wrist" : "belt";
        segs.push_back(s);
        recs.push_back(make_context_record(s.context_id, s.context_id, dims.text_dim));
    }
    std::vector<const SensorSegment*> seg_ptrs;
    std::vector<const ContextRecord*> rec_ptrs;
    for (int i = 0; i < 4; ++i) {
        seg_ptrs.push_back(&segs[static_cast<size_t>(i)]);
        rec_ptrs.push_back(&recs[static_cast<size_t>(i)]);
    }

    const auto weak = pretraining::pretrain_loss(seg_ptrs, rec_ptrs, params, dims, regime_weak(),
                                                 false, nullptr);
    CHECK(weak.l_pre == weak.l_recon);  // exact: same graph node

    const auto strong = pretraining::pretrain_loss(seg_ptrs, rec_ptrs, params, dims, regime_strong(),
                                                   false, nullptr);
    CHECK(strong.l_pre ==
          doctest::Approx(strong.l_recon + 0.01 * (strong.l_kl + 0.5 * strong.l_con)).epsilon(1e-5));

    const auto medium = pretraining::pretrain_loss(seg_ptrs, rec_ptrs, params, dims, regime_medium(),
                                                   false, nullptr);
    CHECK(medium.l_pre == doctest::Approx(medium.l_recon + 0.01 * medium.l_kl).epsilon(1e-5));
    CHECK(medium.l_con == strong.l_con);  // computed, just excluded from the objective
}

TEST_CASE("component arithmetic: 1.0 + 0.01 * (0.4 + 0.5 * 0.2) = 1.005") {
    ag::TapeT<float> tape;
    auto recon = tape.leaf(Tensor::scalar(1.0f), false, "recon");
    auto kl = tape.leaf(Tensor::scalar(0.4f), false, "kl");
    auto con = tape.leaf(Tensor::scalar(0.2f), false, "con");
    auto l_pre = ag::add(recon, ag::mul_scalar(ag::add(kl, ag::mul_scalar(con, 0.5)), 0.01));
    CHECK(l_pre.value().item() == doctest::Approx(1.005).epsilon(1e-7));
}

TEST_CASE("gradient suite: every loss and the composed objectives") {
    const ModelDims dims = tiny_dims();
    for (uint64_t inst = 0; inst < 3; ++inst) {
        ParamStore params;
        init_encoder_params(params, dims, 50 + inst);
        const Tensor x = randt({4, dims.channels, dims.length}, 60 + inst);
        const Tensor c = randt({4, dims.text_dim}, 70 + inst);
        const Tensor eps = randt({4, dims.latent}, 80 + inst);
        const std::vector<int64_t> ctx_labels{0, 1, 0, 1};

        for (const RegimeConfig& regime : {regime_weak(), regime_medium(), regime_strong()}) {
            auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
                auto xv = tape.constant(x.cast<double>(), "x");
                auto cv = tape.constant(c.cast<double>(), "c");
                auto z_x = sensor_encoder_fwd(P, xv, dims);
                auto post = context_encoder_fwd(P, cv, dims);
                auto z_c = reparameterize(tape, post.mu, post.logvar, eps.cast<double>());
                auto chat = decode_context_fwd(P, z_x, dims);
                auto xhat = decode_sensor_fwd(P, z_c, dims);
                auto rec = losses::recon_loss_graph(chat, c.cast<double>(), xhat, x.cast<double>(),
                                                    regime.lambda_xc, regime.lambda_cx);
                auto kl = losses::kl_loss_graph(post.mu, post.logvar);
                auto con = losses::supcon_loss_graph(tape, z_c, ctx_labels, 0.1);
                ag::VarT<double> l_pre = rec.l_recon;
                if (regime.lambda > 0) {
                    auto reg = regime.gamma > 0
                                   ? ag::add(kl, ag::mul_scalar(con.loss, regime.gamma))
                                   : kl;
                    l_pre = ag::add(rec.l_recon, ag::mul_scalar(reg, regime.lambda));
                }
                return l_pre;
            };
            const auto report = grad_check(params, builder, 1e-3);
            INFO("regime ", regime.name, " worst ", report.worst_param);
            CHECK(report.max_rel_error < 1e-4);
        }
    }
}
