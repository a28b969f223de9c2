#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/optim.hpp"
#include "chorus/rng.hpp"
#include "chorus/tensor.hpp"
#include "chorus/text.hpp"

namespace chorus {

struct ModelDims {
    int64_t channels = 3;    // C
    int64_t length = 128;    // T
    int64_t classes = 6;     // K
    int64_t latent = 32;     // d
    int64_t text_dim = 64;   // D_txt
    int64_t conv1 = 16;
    int64_t conv2 = 32;
    int64_t kernel = 5;
    int64_t stride = 2;
    int64_t ctx_hidden = 64;
    int64_t dec_hidden = 128;
    int64_t head_hidden = 32;  // h
    int64_t gate_hidden = 16;
    double logvar_clamp = 10.0;

    int64_t gate_feature_count() const { return 2 + 2 * channels + 1; }
    int64_t segment_size() const { return channels * length; }
};

struct SensorSegment {
    Tensor values;  // shape (C, T)
    std::string context_id;
    int64_t label = -1;  // -1 = unlabeled
};

struct ContextRecord {
    std::string context_id;
    std::string description;
    std::vector<float> features;  // length D_txt, L2-normalized unless all-zero
    bool normalized = false;
};

ContextRecord make_context_record(const std::string& context_id, const std::string& description,
                                  int64_t text_dim);

struct LatentPair {
    std::vector<float> z_x;
    std::vector<float> mu_c;
    std::vector<float> logvar_c;
    std::vector<float> z_c;
};

// ---------------------------------------------------------------------------
// Parameter initialization: uniform(-a, a), a = sqrt(1/fan_in), zero biases.
// Each tensor draws from its own RNG substream keyed by parameter name.
// ---------------------------------------------------------------------------
Tensor init_uniform_fanin(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                          uint64_t seed);

// Sensor encoder, context encoder (Gaussian posterior heads) and both decoders.
void init_encoder_params(ParamStore& store, const ModelDims& dims, uint64_t seed);

enum class HeadMode { Gated, Concat, Add };

// Stage-2 head: projections, controller (Gated only) and classifier.
void init_head_params(ParamStore& store, const ModelDims& dims, uint64_t seed, HeadMode mode);

// From-scratch baseline: sensor encoder plus a linear classifier on z_x.
void init_backbone_classifier(ParamStore& store, const ModelDims& dims, uint64_t seed);

// ---------------------------------------------------------------------------
// Graph builders (templated so gradient checks can run in double).
// ---------------------------------------------------------------------------

template <class T>
ag::VarT<T> sensor_encoder_fwd(const BoundParams<T>& P, ag::VarT<T> x, const ModelDims& dims) {
    auto h1 = ag::relu(ag::conv1d(x, P["enc.conv1.w"], P["enc.conv1.b"], dims.stride));
    auto h2 = ag::relu(ag::conv1d(h1, P["enc.conv2.w"], P["enc.conv2.b"], dims.stride));
    auto pooled = ag::mean_pool_time(h2);
    return ag::linear(pooled, P["enc.out.w"], P["enc.out.b"]);
}

template <class T>
struct ContextPosterior {
    ag::VarT<T> mu;
    ag::VarT<T> logvar;
};

template <class T>
ContextPosterior<T> context_encoder_fwd(const BoundParams<T>& P, ag::VarT<T> feats,
                                        const ModelDims& dims) {
    auto h = ag::relu(ag::linear(feats, P["ctx.fc.w"], P["ctx.fc.b"]));
    auto mu = ag::linear(h, P["ctx.mu.w"], P["ctx.mu.b"]);
    auto logvar = ag::clamp(ag::linear(h, P["ctx.logvar.w"], P["ctx.logvar.b"]),
                            -dims.logvar_clamp, dims.logvar_clamp);
    return {mu, logvar};
}

// z = mu + exp(logvar/2) * eps with a fixed noise tensor.
template <class T>
ag::VarT<T> reparameterize(ag::TapeT<T>& tape, ag::VarT<T> mu, ag::VarT<T> logvar,
                           TensorT<T> eps) {
    auto sigma = ag::exp(ag::mul_scalar(logvar, 0.5));
    return ag::add(mu, ag::mul(sigma, tape.constant(std::move(eps), "eps")));
}

template <class T>
ag::VarT<T> decode_sensor_fwd(const BoundParams<T>& P, ag::VarT<T> z, const ModelDims& dims) {
    auto h = ag::relu(ag::linear(z, P["dec_x.fc1.w"], P["dec_x.fc1.b"]));
    auto flat = ag::linear(h, P["dec_x.fc2.w"], P["dec_x.fc2.b"]);
    return ag::reshape(flat, {z.value().dim(0), dims.channels, dims.length});
}

template <class T>
ag::VarT<T> decode_context_fwd(const BoundParams<T>& P, ag::VarT<T> z, const ModelDims&) {
    return ag::linear(z, P["dec_c.w"], P["dec_c.b"]);
}

// ---------------------------------------------------------------------------
// Single-sample f32 convenience API.
// ---------------------------------------------------------------------------

std::vector<float> encode_sensor(const SensorSegment& segment, const ParamStore& params,
                                 const ModelDims& dims);

struct ContextEncoding {
    std::vector<float> mu;
    std::vector<float> logvar;
    std::vector<float> z;
};

// training=true draws reparameterization noise from rng; training=false is a
// pure function (z == mu, no RNG consumption) and rng may be null.
ContextEncoding encode_context(const ContextRecord& record, const ParamStore& params,
                               const ModelDims& dims, bool training, rng::RngState* rng);

Tensor decode_sensor(const std::vector<float>& z_c, const ParamStore& params,
                     const ModelDims& dims);

std::vector<float> decode_context(const std::vector<float>& z_x, const ParamStore& params,
                                  const ModelDims& dims);

// Batch helpers.
Tensor segments_to_batch(const std::vector<const SensorSegment*>& segments, const ModelDims& dims);
Tensor features_to_batch(const std::vector<const ContextRecord*>& records, const ModelDims& dims);

}  // namespace chorus
