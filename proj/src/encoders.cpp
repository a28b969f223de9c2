#include "chorus/encoders.hpp"

namespace chorus {

ContextRecord make_context_record(const std::string& context_id, const std::string& description,
                                  int64_t text_dim) {
    ContextRecord rec;
    rec.context_id = context_id;
    rec.description = description;
    auto feats = text::featurize_text(description, static_cast<int>(text_dim));
    rec.features = std::move(feats.values);
    rec.normalized = feats.normalized;
    return rec;
}

Tensor init_uniform_fanin(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                          uint64_t seed) {
    Tensor t(std::move(shape));
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    rng::RngState rs = rng::substream(seed, rng::kInit, text::fnv1a64(name.data(), name.size()));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rs.next_uniform(-a, a));
    return t;
}

namespace {

void add_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
                uint64_t seed) {
    store.add(prefix + ".w", init_uniform_fanin(prefix + ".w", {in, out}, in, seed));
    store.add(prefix + ".b", Tensor({out}));
}

void add_conv(ParamStore& store, const std::string& prefix, int64_t co, int64_t ci, int64_t kw,
              uint64_t seed) {
    store.add(prefix + ".w", init_uniform_fanin(prefix + ".w", {co, ci, kw}, ci * kw, seed));
    store.add(prefix + ".b", Tensor({co}));
}

}  // namespace

void init_encoder_params(ParamStore& store, const ModelDims& dims, uint64_t seed) {
    add_conv(store, "enc.conv1", dims.conv1, dims.channels, dims.kernel, seed);
    add_conv(store, "enc.conv2", dims.conv2, dims.conv1, dims.kernel, seed);
    add_linear(store, "enc.out", dims.conv2, dims.latent, seed);
    add_linear(store, "ctx.fc", dims.text_dim, dims.ctx_hidden, seed);
    add_linear(store, "ctx.mu", dims.ctx_hidden, dims.latent, seed);
    add_linear(store, "ctx.logvar", dims.ctx_hidden, dims.latent, seed);
    add_linear(store, "dec_x.fc1", dims.latent, dims.dec_hidden, seed);
    add_linear(store, "dec_x.fc2", dims.dec_hidden, dims.segment_size(), seed);
    add_linear(store, "dec_c", dims.latent, dims.text_dim, seed);
}

void init_head_params(ParamStore& store, const ModelDims& dims, uint64_t seed, HeadMode mode) {
    add_linear(store, "head.proj_s", dims.latent, dims.head_hidden, seed);
    add_linear(store, "head.proj_c", dims.latent, dims.head_hidden, seed);
    if (mode == HeadMode::Gated) {
        add_linear(store, "head.gate.fc1", dims.gate_feature_count(), dims.gate_hidden, seed);
        add_linear(store, "head.gate.fc2", dims.gate_hidden, 2, seed);
    }
    const int64_t cls_in = (mode == HeadMode::Concat) ? 2 * dims.head_hidden : dims.head_hidden;
    add_linear(store, "head.cls", cls_in, dims.classes, seed);
}

void init_backbone_classifier(ParamStore& store, const ModelDims& dims, uint64_t seed) {
    add_conv(store, "enc.conv1", dims.conv1, dims.channels, dims.kernel, seed);
    add_conv(store, "enc.conv2", dims.conv2, dims.conv1, dims.kernel, seed);
    add_linear(store, "enc.out", dims.conv2, dims.latent, seed);
    add_linear(store, "cls", dims.latent, dims.classes, seed);
}

namespace {

void check_segment(const SensorSegment& segment, const ModelDims& dims) {
    if (segment.values.rank() != 2 || segment.values.dim(0) != dims.channels ||
        segment.values.dim(1) != dims.length) {
        throw ContractViolation("sensor segment shape " + segment.values.shape_str() +
                                " does not match (C,T)");
    }
}

}  // namespace

std::vector<float> encode_sensor(const SensorSegment& segment, const ParamStore& params,
                                 const ModelDims& dims) {
    check_segment(segment, dims);
    ag::TapeT<float> tape;
    auto bound = bind_params<float>(tape, params, false);
    auto x = tape.constant(Tensor({1, dims.channels, dims.length}, segment.values.vec()), "x");
    auto z = sensor_encoder_fwd(bound, x, dims);
    return z.value().vec();
}

ContextEncoding encode_context(const ContextRecord& record, const ParamStore& params,
                               const ModelDims& dims, bool training, rng::RngState* rng) {
    if (static_cast<int64_t>(record.features.size()) != dims.text_dim) {
        throw ContractViolation("context features length does not match D_txt");
    }
    ag::TapeT<float> tape;
    auto bound = bind_params<float>(tape, params, false);
    auto feats = tape.constant(Tensor({1, dims.text_dim}, record.features), "c_s");
    auto post = context_encoder_fwd(bound, feats, dims);
    ContextEncoding out;
    out.mu = post.mu.value().vec();
    out.logvar = post.logvar.value().vec();
    if (training) {
        if (!rng) throw ContractViolation("encode_context: training mode requires an RNG state");
        out.z.resize(out.mu.size());
        for (size_t i = 0; i < out.z.size(); ++i) {
            const float eps = static_cast<float>(rng->next_normal());
            out.z[i] = out.mu[i] + std::exp(out.logvar[i] * 0.5f) * eps;
        }
    } else {
        out.z = out.mu;  // inference rule: z_c == mu_c, no RNG consumption
    }
    return out;
}

Tensor decode_sensor(const std::vector<float>& z_c, const ParamStore& params,
                     const ModelDims& dims) {
    if (static_cast<int64_t>(z_c.size()) != dims.latent) {
        throw ContractViolation("decode_sensor: latent length mismatch");
    }
    ag::TapeT<float> tape;
    auto bound = bind_params<float>(tape, params, false);
    auto z = tape.constant(Tensor({1, dims.latent}, z_c), "z_c");
    auto xhat = decode_sensor_fwd(bound, z, dims);
    return Tensor({dims.channels, dims.length}, xhat.value().vec());
}

std::vector<float> decode_context(const std::vector<float>& z_x, const ParamStore& params,
                                  const ModelDims& dims) {
    if (static_cast<int64_t>(z_x.size()) != dims.latent) {
        throw ContractViolation("decode_context: latent length mismatch");
    }
    ag::TapeT<float> tape;
    auto bound = bind_params<float>(tape, params, false);
    auto z = tape.constant(Tensor({1, dims.latent}, z_x), "z_x");
    auto chat = decode_context_fwd(bound, z, dims);
    return chat.value().vec();
}

Tensor segments_to_batch(const std::vector<const SensorSegment*>& segments, const ModelDims& dims) {
    if (segments.empty()) throw ContractViolation("segments_to_batch: empty batch");
    const int64_t B = static_cast<int64_t>(segments.size());
    Tensor out({B, dims.channels, dims.length});
    const int64_t n = dims.segment_size();
    for (int64_t b = 0; b < B; ++b) {
        check_segment(*segments[static_cast<size_t>(b)], dims);
        const auto& src = segments[static_cast<size_t>(b)]->values;
        for (int64_t i = 0; i < n; ++i) out[b * n + i] = src[i];
    }
    return out;
}

Tensor features_to_batch(const std::vector<const ContextRecord*>& records, const ModelDims& dims) {
    if (records.empty()) throw ContractViolation("features_to_batch: empty batch");
    const int64_t B = static_cast<int64_t>(records.size());
    Tensor out({B, dims.text_dim});
    for (int64_t b = 0; b < B; ++b) {
        const auto& f = records[static_cast<size_t>(b)]->features;
        if (static_cast<int64_t>(f.size()) != dims.text_dim) {
            throw ContractViolation("features_to_batch: feature length mismatch");
        }
        for (int64_t i = 0; i < dims.text_dim; ++i) out[b * dims.text_dim + i] = f[static_cast<size_t>(i)];
    }
    return out;
}

}  // namespace chorus
