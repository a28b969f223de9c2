#include "chorus/gating.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "chorus/losses.hpp"

namespace chorus::gating {

std::string gate_mask_name(GateMask mask) {
    switch (mask) {
        case GateMask::Full: return "full";
        case GateMask::AlignOnly: return "align";
        case GateMask::DynOnly: return "dyn";
    }
    return "full";
}

GateMask gate_mask_from_name(const std::string& name) {
    if (name == "full") return GateMask::Full;
    if (name == "align") return GateMask::AlignOnly;
    if (name == "dyn") return GateMask::DynOnly;
    throw ConfigError("unknown gate mask '" + name + "' (expected full|align|dyn)");
}

std::vector<float> gate_features_raw(const std::vector<float>& z_x, const std::vector<float>& z_c,
                                     const Tensor& segment) {
    if (z_x.size() != z_c.size()) throw ContractViolation("gate_features: embedding length mismatch");
    if (segment.rank() != 2) throw ContractViolation("gate_features: segment must be (C,T)");
    const int64_t C = segment.dim(0), T = segment.dim(1);

    double dot = 0.0, nx = 0.0, nc = 0.0;
    for (size_t i = 0; i < z_x.size(); ++i) {
        dot += static_cast<double>(z_x[i]) * static_cast<double>(z_c[i]);
        nx += static_cast<double>(z_x[i]) * static_cast<double>(z_x[i]);
        nc += static_cast<double>(z_c[i]) * static_cast<double>(z_c[i]);
    }
    nx = std::sqrt(nx);
    nc = std::sqrt(nc);
    const double cosine = (nx > 0.0 && nc > 0.0) ? dot / (nx * nc) : 0.0;

    std::vector<float> out;
    out.reserve(static_cast<size_t>(2 + 2 * C + 1));
    out.push_back(static_cast<float>(cosine));
    out.push_back(static_cast<float>(nx));

    double global_sq = 0.0;
    std::vector<float> stds;
    stds.reserve(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
        const float* row = segment.data() + c * T;
        double mean = 0.0;
        for (int64_t t = 0; t < T; ++t) mean += static_cast<double>(row[t]);
        mean /= static_cast<double>(T);
        double var = 0.0;
        for (int64_t t = 0; t < T; ++t) {
            const double diff = static_cast<double>(row[t]) - mean;
            var += diff * diff;
            global_sq += static_cast<double>(row[t]) * static_cast<double>(row[t]);
        }
        out.push_back(static_cast<float>(mean));
        stds.push_back(static_cast<float>(std::sqrt(var / static_cast<double>(T))));
    }
    out.insert(out.end(), stds.begin(), stds.end());
    out.push_back(static_cast<float>(std::sqrt(global_sq)));
    return out;
}

GateStats fit_gate_stats(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw ContractViolation("fit_gate_stats: no rows");
    const size_t d = rows[0].size();
    GateStats stats;
    stats.mean.assign(d, 0.0f);
    stats.std.assign(d, 0.0f);
    for (const auto& r : rows)
        for (size_t j = 0; j < d; ++j) stats.mean[j] += r[j];
    for (size_t j = 0; j < d; ++j) stats.mean[j] /= static_cast<float>(rows.size());
    for (const auto& r : rows)
        for (size_t j = 0; j < d; ++j) {
            const float diff = r[j] - stats.mean[j];
            stats.std[j] += diff * diff;
        }
    for (size_t j = 0; j < d; ++j) {
        stats.std[j] = std::max(std::sqrt(stats.std[j] / static_cast<float>(rows.size())), 1e-6f);
    }
    return stats;
}

GateStats identity_gate_stats(const ModelDims& dims) {
    GateStats stats;
    stats.mean.assign(static_cast<size_t>(dims.gate_feature_count()), 0.0f);
    stats.std.assign(static_cast<size_t>(dims.gate_feature_count()), 1.0f);
    return stats;
}

std::vector<float> standardize_gate_features(const std::vector<float>& raw, const GateStats& stats,
                                             GateMask mask) {
    if (raw.size() != stats.mean.size()) {
        throw ContractViolation("standardize_gate_features: stats dimension mismatch");
    }
    std::vector<float> out(raw.size());
    for (size_t j = 0; j < raw.size(); ++j) out[j] = (raw[j] - stats.mean[j]) / stats.std[j];
    if (mask == GateMask::AlignOnly) {
        for (size_t j = 2; j < out.size(); ++j) out[j] = 0.0f;
    } else if (mask == GateMask::DynOnly) {
        out[0] = 0.0f;
        out[1] = 0.0f;
    }
    return out;
}

namespace {

std::vector<float> linear_forward(const std::vector<float>& x, const Tensor& w, const Tensor& b) {
    const int64_t in = w.dim(0), out_dim = w.dim(1);
    if (static_cast<int64_t>(x.size()) != in) throw ContractViolation("linear_forward: input length mismatch");
    std::vector<float> out(static_cast<size_t>(out_dim));
    for (int64_t j = 0; j < out_dim; ++j) {
        double acc = static_cast<double>(b[j]);
        for (int64_t i = 0; i < in; ++i) acc += static_cast<double>(x[static_cast<size_t>(i)]) * static_cast<double>(w[i * out_dim + j]);
        out[static_cast<size_t>(j)] = static_cast<float>(acc);
    }
    return out;
}

void relu_inplace(std::vector<float>& v) {
    for (float& x : v)
        if (x < 0.0f) x = 0.0f;
}

int64_t argmax_lowest(const std::vector<float>& v) {
    int64_t best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
    }
    return best;
}

}  // namespace

std::array<float, 2> gate_weights(const std::vector<float>& features, const ParamStore& head,
                                  const ModelDims& dims) {
    if (static_cast<int64_t>(features.size()) != dims.gate_feature_count()) {
        throw ContractViolation("gate_weights: feature length mismatch");
    }
    auto hidden = linear_forward(features, head.value("head.gate.fc1.w"), head.value("head.gate.fc1.b"));
    relu_inplace(hidden);
    auto logits = linear_forward(hidden, head.value("head.gate.fc2.w"), head.value("head.gate.fc2.b"));
    const float m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(static_cast<double>(logits[0] - m));
    const double e1 = std::exp(static_cast<double>(logits[1] - m));
    const double denom = e0 + e1;
    return {static_cast<float>(e0 / denom), static_cast<float>(e1 / denom)};
}

GateDecision fuse_and_classify(const std::vector<float>& z_x, const std::vector<float>& z_c,
                               const Tensor& segment, const InferenceModel& model) {
    GateDecision dec;
    dec.h_sensor = linear_forward(z_x, model.head.value("head.proj_s.w"), model.head.value("head.proj_s.b"));
    relu_inplace(dec.h_sensor);
    dec.h_context = linear_forward(z_c, model.head.value("head.proj_c.w"), model.head.value("head.proj_c.b"));
    relu_inplace(dec.h_context);

    if (model.mode == HeadMode::Gated) {
        const auto raw = gate_features_raw(z_x, z_c, segment);
        const GateStats& stats = model.has_stats() ? model.stats : identity_gate_stats(model.dims);
        const auto r = standardize_gate_features(raw, stats, model.mask);
        dec.alpha = gate_weights(r, model.head, model.dims);
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
    dec.logits = linear_forward(dec.h_final, model.head.value("head.cls.w"), model.head.value("head.cls.b"));
    dec.y_hat = argmax_lowest(dec.logits);
    return dec;
}

// ---------------------------------------------------------------------------
// Stage-2 training
// ---------------------------------------------------------------------------

namespace {

struct HeadGraphOut {
    ag::VarT<float> loss;
    double l_ce = 0.0;
    double l_balance = 0.0;
    double mean_alpha_sensor = 0.5;
    double mean_alpha_context = 0.5;
};

HeadGraphOut head_graph(ag::TapeT<float>& tape, const BoundParams<float>& P, const Tensor& zx,
                        const Tensor& zc, const Tensor& feats, const std::vector<int64_t>& labels,
                        const CustomizeConfig& cfg, bool training, rng::RngState* dropout_rng) {
    auto zxv = tape.constant(zx, "z_x");
    auto zcv = tape.constant(zc, "z_c");
    auto hs = ag::relu(ag::linear(zxv, P["head.proj_s.w"], P["head.proj_s.b"]));
    auto hc = ag::relu(ag::linear(zcv, P["head.proj_c.w"], P["head.proj_c.b"]));
    if (training && cfg.dropout > 0.0) {
        const double keep = 1.0 - cfg.dropout;
        Tensor mask_s(hs.shape());
        Tensor mask_c(hc.shape());
        for (int64_t i = 0; i < mask_s.size(); ++i)
            mask_s[i] = dropout_rng->next_uniform01() < keep ? 1.0f : 0.0f;
        for (int64_t i = 0; i < mask_c.size(); ++i)
            mask_c[i] = dropout_rng->next_uniform01() < keep ? 1.0f : 0.0f;
        hs = ag::dropout_mask(hs, std::move(mask_s), keep);
        hc = ag::dropout_mask(hc, std::move(mask_c), keep);
    }

    HeadGraphOut out;
    ag::VarT<float> hf;
    ag::VarT<float> alpha;
    bool has_alpha_graph = false;
    if (cfg.mode == HeadMode::Gated) {
        auto rv = tape.constant(feats, "r");
        auto g1 = ag::relu(ag::linear(rv, P["head.gate.fc1.w"], P["head.gate.fc1.b"]));
        auto gate_logits = ag::linear(g1, P["head.gate.fc2.w"], P["head.gate.fc2.b"]);
        alpha = ag::softmax_rows(gate_logits);
        has_alpha_graph = true;
        auto a_s = ag::slice_cols(alpha, 0, 1);
        auto a_c = ag::slice_cols(alpha, 1, 2);
        hf = ag::add(ag::scale_rows(hs, a_s), ag::scale_rows(hc, a_c));
    } else if (cfg.mode == HeadMode::Add) {
        hf = ag::mul_scalar(ag::add(hs, hc), 0.5);
    } else {
        hf = ag::concat_cols(hs, hc);
    }

    auto logits = ag::linear(hf, P["head.cls.w"], P["head.cls.b"]);
    auto ce = ag::cross_entropy_logits(logits, labels);
    out.l_ce = ce.value().item();
    if (has_alpha_graph) {
        auto bal = losses::balance_loss_graph(alpha, 2);
        out.l_balance = bal.value().item();
        out.loss = ag::add(ce, ag::mul_scalar(bal, cfg.lambda_balance));
        const int64_t B = alpha.value().dim(0);
        double as = 0.0, ac = 0.0;
        for (int64_t i = 0; i < B; ++i) {
            as += static_cast<double>(alpha.value()[i * 2]);
            ac += static_cast<double>(alpha.value()[i * 2 + 1]);
        }
        out.mean_alpha_sensor = as / static_cast<double>(B);
        out.mean_alpha_context = ac / static_cast<double>(B);
    } else {
        out.loss = ce;
        out.l_balance = 0.0;
    }
    return out;
}

struct LabeledCache {
    std::vector<std::vector<float>> z_x;
    std::vector<std::vector<float>> z_c;
    std::vector<std::vector<float>> raw_feats;
    std::vector<int64_t> labels;
};

}  // namespace

CustomizeResult run_customize(const shiftlab::Dataset& dataset,
                              const shiftlab::DatasetView& labeled, const ParamStore& encoders,
                              const ModelDims& dims, const CustomizeConfig& config, uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    if (static_cast<int64_t>(labeled.size()) < dims.classes) {
        throw ConfigError("run_customize: need at least K labeled samples (got " +
                          std::to_string(labeled.size()) + ")");
    }

    CustomizeResult result;
    result.report.encoder_hash_before = encoders.content_hash();
    result.report.gate_mask = gate_mask_name(config.mask);
    result.report.head_mode = config.mode == HeadMode::Gated ? "gated"
                              : config.mode == HeadMode::Add ? "add"
                                                             : "concat";
    result.report.labeled_count = static_cast<int64_t>(labeled.size());

    // Frozen-encoder outputs for the labeled set; context means are shared.
    LabeledCache cache;
    const size_t n = labeled.size();
    cache.z_x.resize(n);
    cache.z_c.resize(n);
    cache.raw_feats.resize(n);
    cache.labels.resize(n);
    std::vector<std::vector<float>> mu_by_context(dataset.contexts.size());
    for (size_t ci = 0; ci < dataset.contexts.size(); ++ci) {
        mu_by_context[ci] = encode_context(dataset.contexts[ci], encoders, dims, false, nullptr).z;
    }
    for (size_t i = 0; i < n; ++i) {
        const auto& s = labeled.sample(i);
        if (s.label < 0 || s.label >= dims.classes) {
            throw ContractViolation("run_customize: label out of range in labeled view");
        }
        SensorSegment seg{s.values, dataset.contexts[static_cast<size_t>(s.context)].context_id,
                          s.label};
        cache.z_x[i] = encode_sensor(seg, encoders, dims);
        cache.z_c[i] = mu_by_context[static_cast<size_t>(s.context)];
        cache.raw_feats[i] = gate_features_raw(cache.z_x[i], cache.z_c[i], s.values);
        cache.labels[i] = s.label;
    }

    // Seeded train/val split of the labeled subset.
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    rng::RngState split_rng = rng::substream(seed, rng::kShuffle, 0x6EAD);
    split_rng.shuffle(order);
    size_t n_val = static_cast<size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
    if (n >= 2) n_val = std::clamp<size_t>(n_val, 1, n - 1);
    else n_val = 0;
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
    std::vector<size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());
    if (val_idx.empty()) val_idx = train_idx;
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    // Standardization stats from the training split only.
    std::vector<std::vector<float>> train_rows;
    train_rows.reserve(train_idx.size());
    for (size_t i : train_idx) train_rows.push_back(cache.raw_feats[i]);
    result.stats = fit_gate_stats(train_rows);

    std::vector<std::vector<float>> std_feats(n);
    for (size_t i = 0; i < n; ++i) {
        std_feats[i] = standardize_gate_features(cache.raw_feats[i], result.stats, config.mask);
    }

    ParamStore head;
    init_head_params(head, dims, seed, config.mode);

    auto assemble = [&](const std::vector<size_t>& ids, size_t from, size_t to, Tensor& zx,
                        Tensor& zc, Tensor& feats, std::vector<int64_t>& labels) {
        const int64_t B = static_cast<int64_t>(to - from);
        zx = Tensor({B, dims.latent});
        zc = Tensor({B, dims.latent});
        feats = Tensor({B, dims.gate_feature_count()});
        labels.clear();
        for (size_t i = from; i < to; ++i) {
            const size_t id = ids[i];
            const int64_t b = static_cast<int64_t>(i - from);
            for (int64_t j = 0; j < dims.latent; ++j) {
                zx[b * dims.latent + j] = cache.z_x[id][static_cast<size_t>(j)];
                zc[b * dims.latent + j] = cache.z_c[id][static_cast<size_t>(j)];
            }
            for (int64_t j = 0; j < dims.gate_feature_count(); ++j) {
                feats[b * dims.gate_feature_count() + j] = std_feats[id][static_cast<size_t>(j)];
            }
            labels.push_back(cache.labels[id]);
        }
    };

    auto eval_split = [&](const std::vector<size_t>& ids) {
        double acc = 0.0;
        for (size_t from = 0; from < ids.size(); from += static_cast<size_t>(config.batch_size)) {
            const size_t to = std::min(ids.size(), from + static_cast<size_t>(config.batch_size));
            Tensor zx, zc, feats;
            std::vector<int64_t> labels;
            assemble(ids, from, to, zx, zc, feats, labels);
            ag::TapeT<float> tape;
            auto bound = bind_params<float>(tape, head, false);
            auto g = head_graph(tape, bound, zx, zc, feats, labels, config, false, nullptr);
            acc += g.loss.value().item() * static_cast<double>(to - from) / static_cast<double>(ids.size());
        }
        return acc;
    };

    rng::RngState dropout_rng(seed, rng::kDropout);
    rng::RngState shuffle_rng = rng::substream(seed, rng::kShuffle, 0x6EAD + 1);
    double best_val = std::numeric_limits<double>::infinity();
    int64_t patience_left = config.patience;
    result.head = head;
    std::string stop_reason = config.max_epochs > 0 ? "max_epochs" : "zero_epoch_budget";

    std::vector<size_t> train_order = train_idx;
    for (int64_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(train_order);
        CustomizeEpoch ep;
        double alpha_s = 0.0, alpha_c = 0.0;
        const size_t n_train = train_order.size();
        for (size_t from = 0; from < n_train; from += static_cast<size_t>(config.batch_size)) {
            const size_t to = std::min(n_train, from + static_cast<size_t>(config.batch_size));
            Tensor zx, zc, feats;
            std::vector<int64_t> labels;
            assemble(train_order, from, to, zx, zc, feats, labels);
            ag::TapeT<float> tape;
            auto bound = bind_params<float>(tape, head, true);
            auto g = head_graph(tape, bound, zx, zc, feats, labels, config, true, &dropout_rng);
            tape.backward(g.loss);
            head.adamw_step(collect_grads(bound), config.optim);
            const double w = static_cast<double>(to - from) / static_cast<double>(n_train);
            ep.l_custom += g.loss.value().item() * w;
            ep.l_ce += g.l_ce * w;
            ep.l_balance += g.l_balance * w;
            alpha_s += g.mean_alpha_sensor * w;
            alpha_c += g.mean_alpha_context * w;
        }
        ep.mean_alpha_sensor = alpha_s;
        ep.mean_alpha_context = alpha_c;
        ep.val_l_custom = eval_split(val_idx);
        result.report.epochs.push_back(ep);

        if (ep.val_l_custom < best_val) {
            best_val = ep.val_l_custom;
            result.report.best_epoch = epoch;
            result.head = head;
            patience_left = config.patience;
        } else {
            --patience_left;
            if (patience_left <= 0) {
                stop_reason = "early_stop";
                break;
            }
        }
    }
    result.report.stop_reason = stop_reason;
    result.report.encoder_hash_after = encoders.content_hash();
    result.report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace chorus::gating
