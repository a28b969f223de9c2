#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chorus/autodiff.hpp"
#include "chorus/gradcheck.hpp"
#include "chorus/optim.hpp"
#include "chorus/rng.hpp"

using namespace chorus;

namespace {

Tensor randt(std::vector<int64_t> shape, uint64_t tag, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    rng::RngState rs(321, rng::mix64(tag));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rs.next_uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("sum of a vector has all-ones gradient") {
    ag::TapeT<float> tape;
    auto p = tape.leaf(Tensor({3}, {1.0f, 2.0f, 3.0f}), true, "p");
    auto loss = ag::sum_all(p);
    tape.backward(loss);
    const Tensor g = p.grad();
    for (int64_t i = 0; i < 3; ++i) CHECK(g[i] == 1.0f);
}

TEST_CASE("sum of squares gradient is 2p") {
    ag::TapeT<float> tape;
    auto p = tape.leaf(Tensor({2}, {1.0f, 2.0f}), true, "p");
    auto loss = ag::sum_all(ag::mul(p, p));
    tape.backward(loss);
    CHECK(p.grad()[0] == 2.0f);
    CHECK(p.grad()[1] == 4.0f);
}

TEST_CASE("non-participating parameters get zero gradient") {
    ag::TapeT<float> tape;
    auto p = tape.leaf(Tensor({2}, {1.0f, 2.0f}), true, "p");
    auto q = tape.leaf(Tensor({2}, {3.0f, 4.0f}), true, "q");
    tape.backward(ag::sum_all(p));
    CHECK(q.grad()[0] == 0.0f);
    CHECK(q.grad()[1] == 0.0f);
}

TEST_CASE("non-scalar loss is a contract violation") {
    ag::TapeT<float> tape;
    auto p = tape.leaf(Tensor({3}), true, "p");
    CHECK_THROWS_AS(tape.backward(ag::mul(p, p)), ContractViolation);
}

TEST_CASE("NaN production names the offending node") {
    ag::TapeT<float> tape;
    auto p = tape.leaf(Tensor({2}, {-1.0f, 2.0f}), true, "p");
    try {
        auto bad = ag::log(p);  // log(-1) = NaN
        (void)bad;
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("random 2-layer MLP matches central finite differences") {
    // h = 1e-3, relative error < 1e-4 on 10 random instances.
    for (uint64_t inst = 0; inst < 10; ++inst) {
        ParamStore params;
        params.add("w1", randt({6, 8}, 100 + inst));
        params.add("b1", randt({8}, 200 + inst, -0.1, 0.1));
        params.add("w2", randt({8, 3}, 300 + inst));
        params.add("b2", randt({3}, 400 + inst, -0.1, 0.1));
        const Tensor x = randt({4, 6}, 500 + inst);
        auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
            auto h = ag::relu(ag::linear(tape.constant(x.cast<double>(), "x"), P["w1"], P["b1"]));
            auto y = ag::linear(h, P["w2"], P["b2"]);
            return ag::mean_all(ag::mul(y, y));
        };
        const auto report = grad_check(params, builder, 1e-3);
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("grad_check on a linear graph is tiny") {
    ParamStore params;
    params.add("w", randt({5, 1}, 1));
    const Tensor x = randt({3, 5}, 2);
    auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
        return ag::sum_all(ag::matmul(tape.constant(x.cast<double>(), "x"), P["w"]));
    };
    CHECK(grad_check(params, builder, 1e-3).max_rel_error < 1e-8);
}

TEST_CASE("grad_check on softmax cross-entropy") {
    ParamStore params;
    params.add("logits", randt({5, 4}, 3, -2.0, 2.0));
    std::vector<int64_t> labels{0, 2, 1, 3, 2};
    auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
        (void)tape;
        return ag::cross_entropy_logits(P["logits"], labels);
    };
    CHECK(grad_check(params, builder, 1e-3).max_rel_error < 1e-4);
}

TEST_CASE("grad_check rejects h outside (0, 1e-1]") {
    ParamStore params;
    params.add("w", randt({2}, 4));
    auto builder = [&](ag::TapeT<double>&, BoundParams<double>& P) { return ag::sum_all(P["w"]); };
    CHECK_THROWS_AS(grad_check(params, builder, 0.0), ContractViolation);
    CHECK_THROWS_AS(grad_check(params, builder, 0.5), ContractViolation);
}

TEST_CASE("per-op gradients pass finite differences") {
    // Composite touching every elementwise/structural op once.
    for (uint64_t inst = 0; inst < 10; ++inst) {
        ParamStore params;
        params.add("a", randt({4, 6}, 600 + inst, 0.2, 1.5));  // positive for log/sqrt paths
        params.add("s", randt({4, 1}, 700 + inst, 0.5, 1.5));
        auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
            (void)tape;
            auto a = P["a"];
            auto t1 = ag::exp(ag::mul_scalar(a, 0.3));
            auto t2 = ag::log(ag::add_scalar(ag::mul(a, a), 0.5));
            auto t3 = ag::clamp(a, 0.3, 1.2);
            auto t4 = ag::l2_normalize_rows(a);
            auto t5 = ag::softmax_rows(a);
            auto cat = ag::concat_cols(ag::concat_cols(t1, t2), ag::concat_cols(t3, t4));
            auto sc = ag::scale_rows(cat, P["s"]);
            auto sl = ag::slice_cols(sc, 2, 20);
            auto red = ag::add(ag::sum_rows(sl), ag::scale_rows(ag::sum_rows(t5), P["s"]));
            auto colmean = ag::mean_over_rows(red);
            return ag::mean_all(ag::mul(colmean, colmean));
        };
        CHECK(grad_check(params, builder, 1e-3).max_rel_error < 1e-4);
    }
}

TEST_CASE("dropout mask scales activations and gradients consistently") {
    ag::TapeT<float> tape;
    auto p = tape.leaf(Tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}), true, "p");
    Tensor mask({2, 2}, {1.0f, 0.0f, 1.0f, 1.0f});
    auto d = ag::dropout_mask(p, mask, 0.5);
    CHECK(d.value()[0] == 2.0f);
    CHECK(d.value()[1] == 0.0f);
    tape.backward(ag::sum_all(d));
    CHECK(p.grad()[0] == 2.0f);
    CHECK(p.grad()[1] == 0.0f);
}

TEST_CASE("two identical runs produce bit-identical tensors") {
    auto run = [] {
        ag::TapeT<float> tape;
        auto p = tape.leaf(randt({8, 8}, 900), true, "p");
        auto q = ag::softmax_rows(ag::matmul(p, p));
        auto loss = ag::mean_all(ag::mul(q, q));
        tape.backward(loss);
        return std::make_pair(loss.value()[0], p.grad().vec());
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}
