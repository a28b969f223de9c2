#include "chorus/pretraining.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace chorus::pretraining {

namespace {

struct BatchTensors {
    Tensor x;
    Tensor c;
    std::vector<int64_t> ctx_labels;
};

BatchTensors assemble_batch(const shiftlab::Dataset& ds, const shiftlab::DatasetView& view,
                            const std::vector<size_t>& order, size_t from, size_t to,
                            const ModelDims& dims) {
    const int64_t B = static_cast<int64_t>(to - from);
    BatchTensors out{Tensor({B, dims.channels, dims.length}), Tensor({B, dims.text_dim}), {}};
    out.ctx_labels.reserve(static_cast<size_t>(B));
    const int64_t seg = dims.segment_size();
    for (size_t i = from; i < to; ++i) {
        const auto& s = view.sample(order[i]);
        const int64_t b = static_cast<int64_t>(i - from);
        for (int64_t j = 0; j < seg; ++j) out.x[b * seg + j] = s.values[j];
        const auto& feats = ds.context_record(s.context).features;
        for (int64_t j = 0; j < dims.text_dim; ++j) out.c[b * dims.text_dim + j] = feats[static_cast<size_t>(j)];
        out.ctx_labels.push_back(s.context);
    }
    return out;
}

struct GraphOut {
    ag::VarT<float> l_pre;
    EpochLosses losses;
    bool con_degenerate = false;
};

GraphOut build_graph(ag::TapeT<float>& tape, const BoundParams<float>& P, const BatchTensors& batch,
                     const ModelDims& dims, const RegimeConfig& regime, double supcon_tau,
                     const Tensor* eps) {
    auto xv = tape.constant(batch.x, "x");
    auto cv = tape.constant(batch.c, "c_s");
    auto z_x = sensor_encoder_fwd(P, xv, dims);
    auto post = context_encoder_fwd(P, cv, dims);
    ag::VarT<float> z_c = eps ? reparameterize(tape, post.mu, post.logvar, *eps) : post.mu;
    auto chat = decode_context_fwd(P, z_x, dims);
    auto xhat = decode_sensor_fwd(P, z_c, dims);
    auto rec = losses::recon_loss_graph(chat, batch.c, xhat, batch.x, regime.lambda_xc, regime.lambda_cx);
    auto kl = losses::kl_loss_graph(post.mu, post.logvar);

    GraphOut out;
    ag::VarT<float> con;
    if (batch.x.dim(0) >= 2) {
        auto sc = losses::supcon_loss_graph(tape, z_c, batch.ctx_labels, supcon_tau);
        con = sc.loss;
        out.con_degenerate = sc.degenerate;
    } else {
        con = tape.constant(Tensor::scalar(0.0f), "supcon_zero");
        out.con_degenerate = true;
    }

    // L_pre = L_recon + lambda * (L_KL + gamma * L_con). The weak regime keeps
    // L_pre equal to L_recon exactly; medium excludes L_con from the objective.
    ag::VarT<float> l_pre = rec.l_recon;
    if (regime.lambda > 0.0) {
        ag::VarT<float> reg = regime.gamma > 0.0 ? ag::add(kl, ag::mul_scalar(con, regime.gamma)) : kl;
        l_pre = ag::add(rec.l_recon, ag::mul_scalar(reg, regime.lambda));
    }

    out.l_pre = l_pre;
    out.losses.l_xc = rec.l_xc.value().item();
    out.losses.l_cx = rec.l_cx.value().item();
    out.losses.l_kl = kl.value().item();
    out.losses.l_con = con.value().item();
    out.losses.l_pre = l_pre.value().item();
    return out;
}

void accumulate(EpochLosses& acc, const EpochLosses& batch, double weight) {
    acc.l_xc += batch.l_xc * weight;
    acc.l_cx += batch.l_cx * weight;
    acc.l_kl += batch.l_kl * weight;
    acc.l_con += batch.l_con * weight;
    acc.l_pre += batch.l_pre * weight;
}

EpochLosses evaluate_split(const shiftlab::Dataset& ds, const shiftlab::DatasetView& view,
                           const std::vector<size_t>& order, const ParamStore& params,
                           const ModelDims& dims, const RegimeConfig& regime, double tau,
                           int64_t batch_size) {
    EpochLosses acc;
    const size_t n = order.size();
    for (size_t from = 0; from < n; from += static_cast<size_t>(batch_size)) {
        const size_t to = std::min(n, from + static_cast<size_t>(batch_size));
        const auto batch = assemble_batch(ds, view, order, from, to, dims);
        ag::TapeT<float> tape;
        auto bound = bind_params<float>(tape, params, false);
        auto g = build_graph(tape, bound, batch, dims, regime, tau, nullptr);
        accumulate(acc, g.losses, static_cast<double>(to - from) / static_cast<double>(n));
    }
    return acc;
}

}  // namespace

PretrainLossValue pretrain_loss(const std::vector<const SensorSegment*>& segments,
                                const std::vector<const ContextRecord*>& records,
                                const ParamStore& params, const ModelDims& dims,
                                const RegimeConfig& regime, bool training, rng::RngState* rng) {
    regime.validate();
    if (segments.empty()) throw ContractViolation("pretrain_loss: empty batch");
    if (segments.size() != records.size()) {
        throw ContractViolation("pretrain_loss: segment/record batch sizes do not match");
    }
    BatchTensors batch{segments_to_batch(segments, dims), features_to_batch(records, dims), {}};
    // Context labels from the record ids, assigned in order of first appearance.
    std::vector<std::string> seen;
    for (const auto* r : records) {
        auto it = std::find(seen.begin(), seen.end(), r->context_id);
        if (it == seen.end()) {
            batch.ctx_labels.push_back(static_cast<int64_t>(seen.size()));
            seen.push_back(r->context_id);
        } else {
            batch.ctx_labels.push_back(static_cast<int64_t>(it - seen.begin()));
        }
    }

    Tensor eps;
    if (training) {
        if (!rng) throw ContractViolation("pretrain_loss: training mode requires an RNG state");
        eps = Tensor({static_cast<int64_t>(segments.size()), dims.latent});
        for (int64_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<float>(rng->next_normal());
    }

    ag::TapeT<float> tape;
    auto bound = bind_params<float>(tape, params, false);
    auto g = build_graph(tape, bound, batch, dims, regime, kSupConTau, training ? &eps : nullptr);
    PretrainLossValue out;
    out.l_xc = static_cast<float>(g.losses.l_xc);
    out.l_cx = static_cast<float>(g.losses.l_cx);
    out.l_recon = static_cast<float>(regime.lambda_xc * g.losses.l_xc + regime.lambda_cx * g.losses.l_cx);
    out.l_kl = static_cast<float>(g.losses.l_kl);
    out.l_con = static_cast<float>(g.losses.l_con);
    out.l_pre = static_cast<float>(g.losses.l_pre);
    out.con_degenerate = g.con_degenerate;
    return out;
}

PretrainResult run_pretrain(const shiftlab::Dataset& dataset, const shiftlab::DatasetView& pool,
                            const RegimeConfig& regime, const PretrainConfig& config,
                            const ModelDims& dims, uint64_t seed) {
    regime.validate();
    if (pool.indices.empty()) throw ContractViolation("run_pretrain: empty unlabeled pool");
    const auto t0 = std::chrono::steady_clock::now();

    PretrainResult result;
    result.report.regime = regime.name;

    // Distinct contexts in the pool; a single context degenerates the
    // contrastive term but training proceeds.
    {
        std::vector<int32_t> seen;
        for (size_t i = 0; i < pool.size(); ++i) {
            const int32_t c = dataset.samples[static_cast<size_t>(pool.indices[i])].context;
            if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
        }
        if (seen.size() < 2) result.report.single_context_warning = true;
    }

    // Seeded 90/10 train/val split of the pool.
    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::RngState shuffle_rng(seed, rng::kShuffle);
    shuffle_rng.shuffle(order);
    const size_t n = order.size();
    size_t n_val = static_cast<size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
    if (n >= 2) n_val = std::clamp<size_t>(n_val, 1, n - 1);
    else n_val = 0;
    std::vector<size_t> val_order(order.begin(), order.begin() + static_cast<long>(n_val));
    std::vector<size_t> train_order(order.begin() + static_cast<long>(n_val), order.end());
    if (val_order.empty()) val_order = train_order;  // single-sample pools
    std::sort(val_order.begin(), val_order.end());
    std::sort(train_order.begin(), train_order.end());

    ParamStore params;
    init_encoder_params(params, dims, seed);
    result.report.init_val = evaluate_split(dataset, pool, val_order, params, dims, regime,
                                            config.supcon_tau, config.batch_size);

    result.checkpoint = params;
    if (config.max_epochs <= 0) {
        result.report.stop_reason = "zero_epoch_budget";
        result.report.wall_ms = std::chrono::duration<double, std::milli>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
        return result;
    }

    rng::RngState eps_rng(seed, rng::kSample);
    double best_val = std::numeric_limits<double>::infinity();
    int64_t patience_left = config.patience;
    std::string stop_reason = "max_epochs";

    for (int64_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(train_order);
        EpochLosses train_acc;
        const size_t n_train = train_order.size();
        for (size_t from = 0; from < n_train; from += static_cast<size_t>(config.batch_size)) {
            const size_t to = std::min(n_train, from + static_cast<size_t>(config.batch_size));
            const auto batch = assemble_batch(dataset, pool, train_order, from, to, dims);
            Tensor eps({batch.x.dim(0), dims.latent});
            for (int64_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<float>(eps_rng.next_normal());

            ag::TapeT<float> tape;
            auto bound = bind_params<float>(tape, params, true);
            auto g = build_graph(tape, bound, batch, dims, regime, config.supcon_tau, &eps);
            tape.backward(g.l_pre);
            params.adamw_step(collect_grads(bound), config.optim);

            if (g.con_degenerate) ++result.report.supcon_degenerate_batches;
            accumulate(train_acc, g.losses, static_cast<double>(to - from) / static_cast<double>(n_train));
        }
        result.report.train.push_back(train_acc);

        const EpochLosses val = evaluate_split(dataset, pool, val_order, params, dims, regime,
                                               config.supcon_tau, config.batch_size);
        result.report.val.push_back(val);

        if (val.l_pre < best_val) {
            best_val = val.l_pre;
            result.report.best_epoch = epoch;
            result.checkpoint = params;
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
    result.report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace chorus::pretraining
