#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "chorus/encoders.hpp"
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

SensorSegment rand_segment(const ModelDims& dims, uint64_t tag) {
    SensorSegment seg;
    seg.values = Tensor({dims.channels, dims.length});
    rng::RngState rs(55, rng::mix64(tag));
    for (int64_t i = 0; i < seg.values.size(); ++i) {
        seg.values[i] = static_cast<float>(rs.next_uniform(-1.0, 1.0));
    }
    seg.context_id = "ctx";
    return seg;
}

void zero_biases(ParamStore& store) {
    for (auto& [name, p] : store) {
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
            for (int64_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.0f;
        }
    }
}

}  // namespace

TEST_CASE("all-zero segment with zero biases encodes to zero") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 3);
    zero_biases(params);
    SensorSegment seg;
    seg.values = Tensor({dims.channels, dims.length});
    const auto z = encode_sensor(seg, params, dims);
    for (float v : z) CHECK(v == 0.0f);
}

TEST_CASE("encode_sensor is deterministic") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 4);
    const SensorSegment seg = rand_segment(dims, 9);
    CHECK(encode_sensor(seg, params, dims) == encode_sensor(seg, params, dims));
}

TEST_CASE("zero-bias conv/relu/pool/linear scales with the input") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 5);
    zero_biases(params);
    SensorSegment seg = rand_segment(dims, 10);
    const auto z1 = encode_sensor(seg, params, dims);
    for (int64_t i = 0; i < seg.values.size(); ++i) seg.values[i] *= 2.0f;
    const auto z2 = encode_sensor(seg, params, dims);
    for (size_t i = 0; i < z1.size(); ++i) CHECK(z2[i] == doctest::Approx(2.0f * z1[i]).epsilon(1e-4));
}

TEST_CASE("segment shape mismatch is a contract violation") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 6);
    SensorSegment seg;
    seg.values = Tensor({dims.channels, dims.length + 1});
    CHECK_THROWS_AS(encode_sensor(seg, params, dims), ContractViolation);
}

TEST_CASE("encode_context inference rule: z == mu, no RNG consumption") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 7);
    const ContextRecord rec = make_context_record("belt", "belt", dims.text_dim);
    rng::RngState rs(1, rng::kSample);
    const uint64_t counter_before = rs.counter;
    const auto enc = encode_context(rec, params, dims, false, &rs);
    CHECK(rs.counter == counter_before);
    CHECK(enc.z == enc.mu);
}

TEST_CASE("encode_context training draws are reproducible per cursor") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 8);
    const ContextRecord rec = make_context_record("wrist", "wrist", dims.text_dim);
    rng::RngState r1(9, rng::kSample), r2(9, rng::kSample);
    const auto a = encode_context(rec, params, dims, true, &r1);
    const auto b = encode_context(rec, params, dims, true, &r2);
    CHECK(a.z == b.z);
    CHECK(a.z != a.mu);  // noise was injected
}

TEST_CASE("logvar head output is clamped to +/-10") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 11);
    // Force a huge logvar by inflating the head weights and bias.
    auto& w = params.value("ctx.logvar.w");
    for (int64_t i = 0; i < w.size(); ++i) w[i] = 5.0f;
    auto& b = params.value("ctx.logvar.b");
    for (int64_t i = 0; i < b.size(); ++i) b[i] = 20.0f;
    const ContextRecord rec = make_context_record("belt", "belt", dims.text_dim);
    const auto enc = encode_context(rec, params, dims, false, nullptr);
    for (float lv : enc.logvar) CHECK(lv <= 10.0f);
    auto& b2 = params.value("ctx.logvar.b");
    for (int64_t i = 0; i < b2.size(); ++i) b2[i] = -20.0f;
    auto& w2 = params.value("ctx.logvar.w");
    for (int64_t i = 0; i < w2.size(); ++i) w2[i] = 0.0f;
    const auto enc2 = encode_context(rec, params, dims, false, nullptr);
    for (float lv : enc2.logvar) CHECK(lv >= -10.0f);
}

TEST_CASE("decode_sensor: zero latent and zero biases give a zero segment") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 12);
    zero_biases(params);
    const Tensor seg = decode_sensor(std::vector<float>(static_cast<size_t>(dims.latent), 0.0f), params, dims);
    CHECK(seg.shape() == std::vector<int64_t>{dims.channels, dims.length});
    for (int64_t i = 0; i < seg.size(); ++i) CHECK(seg[i] == 0.0f);
}

TEST_CASE("decode_context output length is D_txt and zero maps to zero") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 13);
    zero_biases(params);
    const auto out = decode_context(std::vector<float>(static_cast<size_t>(dims.latent), 0.0f), params, dims);
    CHECK(static_cast<int64_t>(out.size()) == dims.text_dim);
    for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("MSE(decode_sensor(z), x) gradient w.r.t. z matches finite differences") {
    const ModelDims dims = tiny_dims();
    ParamStore enc;
    init_encoder_params(enc, dims, 14);
    const SensorSegment seg = rand_segment(dims, 15);
    ParamStore probe;
    probe.add("z", Tensor({1, dims.latent}, std::vector<float>(static_cast<size_t>(dims.latent), 0.3f)));
    std::map<std::string, TensorT<double>> dec_vals;
    for (const auto& [name, p] : enc) dec_vals.emplace(name, p.value.cast<double>());
    auto builder = [&](ag::TapeT<double>& tape, BoundParams<double>& P) {
        auto frozen = bind_raw(tape, dec_vals, false);
        auto xhat = decode_sensor_fwd(frozen, P["z"], dims);
        Tensor target({1, dims.channels, dims.length}, seg.values.vec());
        return losses::mse_to_const(xhat, target.cast<double>());
    };
    CHECK(grad_check(probe, builder, 1e-3).max_rel_error < 1e-4);
}

TEST_CASE("least-squares context decoder beats the zero predictor") {
    // Fit dec_c by pseudoinverse on a tiny synthetic (z -> c) set and check its
    // MSE against predicting all zeros.
    const ModelDims dims = tiny_dims();
    const int64_t n = 32, d = dims.latent, D = dims.text_dim;
    rng::RngState rs(77, rng::kData);
    std::vector<std::vector<double>> Z(n), C(n);
    std::vector<double> truth(static_cast<size_t>(d * D));
    for (auto& v : truth) v = rs.next_uniform(-1.0, 1.0);
    for (int64_t i = 0; i < n; ++i) {
        Z[static_cast<size_t>(i)].resize(static_cast<size_t>(d));
        for (auto& v : Z[static_cast<size_t>(i)]) v = rs.next_uniform(-1.0, 1.0);
        C[static_cast<size_t>(i)].assign(static_cast<size_t>(D), 0.0);
        for (int64_t j = 0; j < D; ++j) {
            double acc = 0.1 * rs.next_normal();
            for (int64_t k = 0; k < d; ++k) acc += Z[static_cast<size_t>(i)][static_cast<size_t>(k)] * truth[static_cast<size_t>(k * D + j)];
            C[static_cast<size_t>(i)][static_cast<size_t>(j)] = acc;
        }
    }
    // Normal equations (Z^T Z) W = Z^T C solved by Gaussian elimination.
    std::vector<double> ztz(static_cast<size_t>(d * d), 0.0), ztc(static_cast<size_t>(d * D), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t a = 0; a < d; ++a) {
            for (int64_t b = 0; b < d; ++b) ztz[static_cast<size_t>(a * d + b)] += Z[static_cast<size_t>(i)][static_cast<size_t>(a)] * Z[static_cast<size_t>(i)][static_cast<size_t>(b)];
            for (int64_t j = 0; j < D; ++j) ztc[static_cast<size_t>(a * D + j)] += Z[static_cast<size_t>(i)][static_cast<size_t>(a)] * C[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
    for (int64_t a = 0; a < d; ++a) ztz[static_cast<size_t>(a * d + a)] += 1e-9;
    // Solve for W column block by elimination.
    std::vector<double> W = ztc;
    for (int64_t col = 0; col < d; ++col) {
        const double piv = ztz[static_cast<size_t>(col * d + col)];
        for (int64_t rrow = col + 1; rrow < d; ++rrow) {
            const double f = ztz[static_cast<size_t>(rrow * d + col)] / piv;
            for (int64_t k = col; k < d; ++k) ztz[static_cast<size_t>(rrow * d + k)] -= f * ztz[static_cast<size_t>(col * d + k)];
            for (int64_t j = 0; j < D; ++j) W[static_cast<size_t>(rrow * D + j)] -= f * W[static_cast<size_t>(col * D + j)];
        }
    }
    for (int64_t col = d - 1; col >= 0; --col) {
        for (int64_t j = 0; j < D; ++j) {
            double acc = W[static_cast<size_t>(col * D + j)];
            for (int64_t k = col + 1; k < d; ++k) acc -= ztz[static_cast<size_t>(col * d + k)] * W[static_cast<size_t>(k * D + j)];
            W[static_cast<size_t>(col * D + j)] = acc / ztz[static_cast<size_t>(col * d + col)];
        }
    }
    double mse_fit = 0.0, mse_zero = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < D; ++j) {
            double pred = 0.0;
            for (int64_t k = 0; k < d; ++k) pred += Z[static_cast<size_t>(i)][static_cast<size_t>(k)] * W[static_cast<size_t>(k * D + j)];
            const double c = C[static_cast<size_t>(i)][static_cast<size_t>(j)];
            mse_fit += (pred - c) * (pred - c);
            mse_zero += c * c;
        }
    CHECK(mse_fit < mse_zero);

    // The artifact's linear decoder with the fitted weights reproduces it.
    ParamStore dec;
    init_encoder_params(dec, dims, 20);
    auto& w = dec.value("dec_c.w");
    for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(W[static_cast<size_t>(i)]);
    auto& b = dec.value("dec_c.b");
    for (int64_t i = 0; i < b.size(); ++i) b[i] = 0.0f;
    std::vector<float> z0(Z[0].begin(), Z[0].end());
    const auto pred = decode_context(z0, dec, dims);
    double manual = 0.0;
    for (int64_t j = 0; j < D; ++j) {
        double acc = 0.0;
        for (int64_t k = 0; k < d; ++k) acc += Z[0][static_cast<size_t>(k)] * W[static_cast<size_t>(k * D + j)];
        manual += std::fabs(acc - static_cast<double>(pred[static_cast<size_t>(j)]));
    }
    CHECK(manual < 1e-3);
}

TEST_CASE("parameter initialization is fan-in bounded with zero biases") {
    const ModelDims dims = tiny_dims();
    ParamStore params;
    init_encoder_params(params, dims, 21);
    const double bound = std::sqrt(1.0 / static_cast<double>(dims.channels * dims.kernel));
    const Tensor& w = params.value("enc.conv1.w");
    for (int64_t i = 0; i < w.size(); ++i) {
        CHECK(std::fabs(w[i]) <= bound);
    }
    const Tensor& b = params.value("enc.conv1.b");
    for (int64_t i = 0; i < b.size(); ++i) CHECK(b[i] == 0.0f);
}
