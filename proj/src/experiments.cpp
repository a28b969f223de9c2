#include "chorus/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "chorus/kernels.hpp"

namespace chorus::experiments {

Metrics compute_metrics(const std::vector<int64_t>& y_true, const std::vector<int64_t>& y_pred,
                        int64_t K) {
    if (y_true.size() != y_pred.size() || y_true.empty()) {
        throw ContractViolation("compute_metrics: label/prediction size mismatch or empty");
    }
    std::vector<int64_t> confusion(static_cast<size_t>(K * K), 0);
    int64_t correct = 0;
    for (size_t i = 0; i < y_true.size(); ++i) {
        const int64_t t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= K || p < 0 || p >= K) {
            throw ContractViolation("compute_metrics: label out of range");
        }
        ++confusion[static_cast<size_t>(t * K + p)];
        if (t == p) ++correct;
    }
    Metrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
    double prec = 0.0, rec = 0.0, f1 = 0.0;
    for (int64_t c = 0; c < K; ++c) {
        int64_t tp = confusion[static_cast<size_t>(c * K + c)];
        int64_t fp = 0, fn = 0;
        for (int64_t o = 0; o < K; ++o) {
            if (o == c) continue;
            fp += confusion[static_cast<size_t>(o * K + c)];
            fn += confusion[static_cast<size_t>(c * K + o)];
        }
        const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        prec += p;
        rec += r;
        f1 += (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
    }
    m.precision = prec / static_cast<double>(K);
    m.recall = rec / static_cast<double>(K);
    m.f1 = f1 / static_cast<double>(K);
    return m;
}

ExperimentPlan default_plan() {
    ExperimentPlan plan;
    plan.spec = shiftlab::default_spec(1);
    return plan;
}

const Aggregate* ResultTable::find(const std::string& method, const std::string& tier) const {
    for (const auto& a : aggregates) {
        if (a.method == method && a.tier == tier) return &a;
    }
    return nullptr;
}

std::vector<const ResultRow*> ResultTable::rows_for(const std::string& method,
                                                    const std::string& tier) const {
    std::vector<const ResultRow*> out;
    for (const auto& r : rows) {
        if (r.method == method && r.tier == tier) out.push_back(&r);
    }
    return out;
}

TierDiag gate_diagnostics(const DiagInput& input) {
    if (input.sensor_correct.size() != input.chorus_correct.size() ||
        input.sensor_correct.size() != input.chorus_alpha_context.size()) {
        throw ContractViolation("gate_diagnostics: input vectors must have equal length");
    }
    TierDiag diag;
    double easy_sum = 0.0, hard_sum = 0.0;
    for (size_t i = 0; i < input.sensor_correct.size(); ++i) {
        if (input.sensor_correct[i]) {
            easy_sum += input.chorus_alpha_context[i];
            ++diag.easy_count;
        } else if (input.chorus_correct[i]) {
            hard_sum += input.chorus_alpha_context[i];
            ++diag.hard_fixed_count;
        }
    }
    if (diag.easy_count > 0) {
        diag.easy_present = true;
        diag.easy_alpha = easy_sum / static_cast<double>(diag.easy_count);
    }
    if (diag.hard_fixed_count > 0) {
        diag.hard_fixed_present = true;
        diag.hard_fixed_alpha = hard_sum / static_cast<double>(diag.hard_fixed_count);
    }
    return diag;
}

std::vector<int64_t> stratified_subset(const shiftlab::Dataset& dataset,
                                       const std::vector<int64_t>& candidates, int64_t count,
                                       uint64_t seed) {
    if (count <= 0) throw ConfigError("stratified_subset: count must be positive");
    std::map<int32_t, std::vector<int64_t>> by_class;
    for (int64_t idx : candidates) by_class[dataset.samples[static_cast<size_t>(idx)].label].push_back(idx);

    rng::RngState rs(seed, rng::kSubset);
    for (auto& [label, pool] : by_class) rs.shuffle(pool);

    // Round-robin over classes keeps every class present once count >= #classes.
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(count));
    size_t offset = 0;
    while (static_cast<int64_t>(out.size()) < count) {
        bool advanced = false;
        for (auto& [label, pool] : by_class) {
            if (offset < pool.size()) {
                out.push_back(pool[offset]);
                advanced = true;
                if (static_cast<int64_t>(out.size()) == count) break;
            }
        }
        if (!advanced) break;  // candidates exhausted
        ++offset;
    }
    std::sort(out.begin(), out.end());
    return out;
}

SourceSplit split_source_pool(const shiftlab::Dataset& dataset,
                              const std::vector<std::string>& sources, double unlabeled_fraction,
                              double budget, uint64_t seed) {
    shiftlab::DatasetView source_all = shiftlab::make_view(dataset, sources, false);
    std::vector<int64_t> pool = source_all.indices;
    rng::RngState pool_rng = rng::substream(seed, rng::kShuffle, 0xB001533D);
    pool_rng.shuffle(pool);
    const size_t n_unlabeled =
        static_cast<size_t>(std::llround(unlabeled_fraction * static_cast<double>(pool.size())));
    SourceSplit split;
    split.unlabeled.assign(pool.begin(), pool.begin() + static_cast<long>(n_unlabeled));
    std::vector<int64_t> candidates(pool.begin() + static_cast<long>(n_unlabeled), pool.end());
    std::sort(split.unlabeled.begin(), split.unlabeled.end());
    std::sort(candidates.begin(), candidates.end());

    int64_t budget_count =
        static_cast<int64_t>(std::llround(budget * static_cast<double>(pool.size())));
    budget_count = std::clamp<int64_t>(budget_count, 1, static_cast<int64_t>(candidates.size()));
    split.budget_count = budget_count;
    split.labeled = stratified_subset(dataset, candidates, budget_count, seed);
    return split;
}

// ---------------------------------------------------------------------------
// Sensor-only baseline
// ---------------------------------------------------------------------------

namespace {

Tensor batch_segments(const shiftlab::Dataset& ds, const shiftlab::DatasetView& view,
                      const std::vector<size_t>& order, size_t from, size_t to,
                      const ModelDims& dims, std::vector<int64_t>* labels) {
    const int64_t B = static_cast<int64_t>(to - from);
    Tensor x({B, dims.channels, dims.length});
    const int64_t seg = dims.segment_size();
    if (labels) labels->clear();
    for (size_t i = from; i < to; ++i) {
        const auto& s = view.sample(order[i]);
        const int64_t b = static_cast<int64_t>(i - from);
        for (int64_t j = 0; j < seg; ++j) x[b * seg + j] = s.values[j];
        if (labels) labels->push_back(s.label);
    }
    (void)ds;
    return x;
}

ag::VarT<float> backbone_logits(const BoundParams<float>& P, ag::VarT<float> x,
                                const ModelDims& dims) {
    auto z = sensor_encoder_fwd(P, x, dims);
    return ag::linear(z, P["cls.w"], P["cls.b"]);
}

}  // namespace

SensorOnlyModel train_sensor_only(const shiftlab::Dataset& dataset,
                                  const shiftlab::DatasetView& labeled, const ModelDims& dims,
                                  const SensorOnlyTrainConfig& config, uint64_t seed) {
    if (static_cast<int64_t>(labeled.size()) < dims.classes) {
        throw ConfigError("train_sensor_only: need at least K labeled samples");
    }
    SensorOnlyModel model;
    model.dims = dims;
    init_backbone_classifier(model.params, dims, seed);

    std::vector<size_t> order(labeled.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::RngState split_rng = rng::substream(seed, rng::kShuffle, 0x5E50);
    split_rng.shuffle(order);
    size_t n_val = static_cast<size_t>(std::llround(config.val_fraction * static_cast<double>(order.size())));
    if (order.size() >= 2) n_val = std::clamp<size_t>(n_val, 1, order.size() - 1);
    else n_val = 0;
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
    std::vector<size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());
    if (val_idx.empty()) val_idx = train_idx;
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    auto eval_loss = [&](const std::vector<size_t>& ids) {
        double acc = 0.0;
        for (size_t from = 0; from < ids.size(); from += static_cast<size_t>(config.batch_size)) {
            const size_t to = std::min(ids.size(), from + static_cast<size_t>(config.batch_size));
            std::vector<int64_t> labels;
            Tensor x = batch_segments(dataset, labeled, ids, from, to, dims, &labels);
            ag::TapeT<float> tape;
            auto bound = bind_params<float>(tape, model.params, false);
            auto loss = ag::cross_entropy_logits(backbone_logits(bound, tape.constant(x, "x"), dims), labels);
            acc += loss.value().item() * static_cast<double>(to - from) / static_cast<double>(ids.size());
        }
        return acc;
    };

    rng::RngState shuffle_rng = rng::substream(seed, rng::kShuffle, 0x5E51);
    ParamStore best = model.params;
    double best_val = std::numeric_limits<double>::infinity();
    int64_t patience_left = config.patience;
    std::vector<size_t> train_order = train_idx;
    for (int64_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(train_order);
        for (size_t from = 0; from < train_order.size(); from += static_cast<size_t>(config.batch_size)) {
            const size_t to = std::min(train_order.size(), from + static_cast<size_t>(config.batch_size));
            std::vector<int64_t> labels;
            Tensor x = batch_segments(dataset, labeled, train_order, from, to, dims, &labels);
            ag::TapeT<float> tape;
            auto bound = bind_params<float>(tape, model.params, true);
            auto loss = ag::cross_entropy_logits(backbone_logits(bound, tape.constant(x, "x"), dims), labels);
            tape.backward(loss);
            model.params.adamw_step(collect_grads(bound), config.optim);
        }
        const double val = eval_loss(val_idx);
        if (val < best_val) {
            best_val = val;
            best = model.params;
            patience_left = config.patience;
        } else if (--patience_left <= 0) {
            break;
        }
    }
    model.params = best;
    return model;
}

namespace {

// Batched frozen-encoder embeddings for a view, in view order.
std::vector<std::vector<float>> batch_encode_zx(const shiftlab::Dataset& ds,
                                                const shiftlab::DatasetView& view,
                                                const ParamStore& params, const ModelDims& dims) {
    std::vector<std::vector<float>> out(view.size());
    constexpr size_t kChunk = 256;
    std::vector<size_t> order(view.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t from = 0; from < view.size(); from += kChunk) {
        const size_t to = std::min(view.size(), from + kChunk);
        Tensor x = batch_segments(ds, view, order, from, to, dims, nullptr);
        ag::TapeT<float> tape;
        auto bound = bind_params<float>(tape, params, false);
        auto z = sensor_encoder_fwd(bound, tape.constant(x, "x"), dims);
        const int64_t d = dims.latent;
        for (size_t i = from; i < to; ++i) {
            const int64_t b = static_cast<int64_t>(i - from);
            out[i].resize(static_cast<size_t>(d));
            for (int64_t j = 0; j < d; ++j) out[i][static_cast<size_t>(j)] = z.value()[b * d + j];
        }
    }
    return out;
}

}  // namespace

EvalRecords evaluate_sensor_only(const shiftlab::Dataset& dataset,
                                 const shiftlab::DatasetView& view, const SensorOnlyModel& model) {
    EvalRecords rec;
    const auto zx = batch_encode_zx(dataset, view, model.params, model.dims);
    const Tensor& w = model.params.value("cls.w");
    const Tensor& b = model.params.value("cls.b");
    const int64_t d = model.dims.latent, K = model.dims.classes;
    for (size_t i = 0; i < view.size(); ++i) {
        const auto& s = view.sample(i);
        int64_t best = 0;
        float best_v = -std::numeric_limits<float>::infinity();
        for (int64_t c = 0; c < K; ++c) {
            double acc = static_cast<double>(b[c]);
            for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(zx[i][static_cast<size_t>(j)]) * static_cast<double>(w[j * K + c]);
            const float v = static_cast<float>(acc);
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        rec.y_true.push_back(s.label);
        rec.y_pred.push_back(best);
    }
    return rec;
}

EvalRecords evaluate_inference_model(const shiftlab::Dataset& dataset,
                                     const shiftlab::DatasetView& view,
                                     const gating::InferenceModel& model) {
    EvalRecords rec;
    const auto zx = batch_encode_zx(dataset, view, model.encoders, model.dims);
    std::vector<std::vector<float>> mu_by_context(dataset.contexts.size());
    for (size_t ci = 0; ci < dataset.contexts.size(); ++ci) {
        mu_by_context[ci] = encode_context(dataset.contexts[ci], model.encoders, model.dims, false, nullptr).z;
    }
    const bool gated = model.mode == HeadMode::Gated;
    for (size_t i = 0; i < view.size(); ++i) {
        const auto& s = view.sample(i);
        const auto dec = gating::fuse_and_classify(zx[i], mu_by_context[static_cast<size_t>(s.context)],
                                                   s.values, model);
        rec.y_true.push_back(s.label);
        rec.y_pred.push_back(dec.y_hat);
        if (gated) rec.alpha_context.push_back(dec.alpha[1]);
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Plan runner
// ---------------------------------------------------------------------------

namespace {

struct MethodSpec {
    std::string regime_kind;  // "weak" or "auto" (the C_m-selected regime)
    HeadMode mode = HeadMode::Gated;
    gating::GateMask mask = gating::GateMask::Full;
};

MethodSpec method_spec(const std::string& name) {
    if (name == "chorus") return {"auto", HeadMode::Gated, gating::GateMask::Full};
    if (name == "fix_add") return {"auto", HeadMode::Add, gating::GateMask::Full};
    if (name == "fix_concat") return {"auto", HeadMode::Concat, gating::GateMask::Full};
    if (name == "align_only") return {"auto", HeadMode::Gated, gating::GateMask::AlignOnly};
    if (name == "dyn_only") return {"auto", HeadMode::Gated, gating::GateMask::DynOnly};
    if (name == "c1") return {"weak", HeadMode::Concat, gating::GateMask::Full};
    if (name == "c1c2") return {"weak", HeadMode::Gated, gating::GateMask::Full};
    throw ConfigError("unknown method '" + name + "'");
}

struct SeedResults {
    std::vector<ResultRow> rows;
    std::vector<TierDiag> diagnostics;
    SeedInfo info;
};

double row_mean(const std::vector<float>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (float x : v) s += x;
    return s / static_cast<double>(v.size());
}

SeedResults run_seed(const ExperimentPlan& plan, uint64_t seed) {
    SeedResults out;
    out.info.seed = seed;

    shiftlab::SyntheticSpec spec = plan.spec;
    spec.seed = seed;
    const auto phase0 = std::chrono::steady_clock::now();
    shiftlab::Dataset ds = shiftlab::generate_dataset(spec);

    out.info.shift = shiftlab::build_tiers(ds, plan.sources, plan.targets, plan.mmd_features);
    std::map<std::string, std::string> tier_of;  // context -> tier
    for (const auto& row : out.info.shift.rows) tier_of[row.context] = row.tier;

    const SourceSplit split =
        split_source_pool(ds, plan.sources, plan.pretrain.unlabeled_fraction, plan.budget, seed);
    shiftlab::DatasetView unlabeled_view{&ds, split.unlabeled, true};
    shiftlab::DatasetView labeled_view{&ds, split.labeled, true};

    // Sensor-only baseline: always trained (C_m and gate diagnostics need it).
    SensorOnlyTrainConfig so_cfg;
    so_cfg.optim = plan.customize.optim;
    so_cfg.batch_size = plan.customize.batch_size;
    so_cfg.max_epochs = plan.customize.max_epochs;
    so_cfg.patience = plan.customize.patience;
    so_cfg.val_fraction = plan.customize.val_fraction;
    const SensorOnlyModel sensor_only = train_sensor_only(ds, labeled_view, plan.dims, so_cfg, seed);

    std::map<std::string, EvalRecords> sensor_records;  // tier -> records
    for (const auto& target : plan.targets) {
        shiftlab::DatasetView view = shiftlab::make_view(ds, {target}, false);
        sensor_records[tier_of[target]] = evaluate_sensor_only(ds, view, sensor_only);
    }
    out.info.sensor_phase_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - phase0).count();

    {
        const auto& low = sensor_records.at("Low");
        const auto& high = sensor_records.at("High");
        out.info.perf_low = compute_metrics(low.y_true, low.y_pred, plan.dims.classes).accuracy;
        out.info.perf_high = compute_metrics(high.y_true, high.y_pred, plan.dims.classes).accuracy;
    }
    out.info.c_m = shiftlab::compute_cm(out.info.perf_low, out.info.perf_high);
    RegimeConfig auto_regime = plan.regime_override.empty()
                                   ? shiftlab::select_regime(out.info.c_m, plan.thresholds)
                                   : regime_from_name(plan.regime_override);
    out.info.regime = auto_regime.name;

    // Pretrained checkpoints, one per distinct regime the methods need.
    std::set<std::string> regime_kinds;
    for (const auto& m : plan.methods) {
        if (m != "sensor_only") regime_kinds.insert(method_spec(m).regime_kind);
    }
    std::map<std::string, ParamStore> pretrained;  // regime kind -> encoder params
    for (const auto& kind : regime_kinds) {
        const RegimeConfig regime = kind == "weak" ? regime_weak() : auto_regime;
        if (kind != "weak" && pretrained.count("weak") && regime.name == "weak") {
            pretrained.emplace(kind, pretrained.at("weak"));
            continue;
        }
        auto res = pretraining::run_pretrain(ds, unlabeled_view, regime, plan.pretrain, plan.dims, seed);
        pretrained.emplace(kind, std::move(res.checkpoint));
    }

    // Heads per method on the identical labeled subset.
    struct TrainedMethod {
        std::string name;
        gating::InferenceModel model;
    };
    std::vector<TrainedMethod> trained;
    for (const auto& name : plan.methods) {
        if (name == "sensor_only") continue;
        const MethodSpec spec_m = method_spec(name);
        gating::CustomizeConfig cfg = plan.customize;
        cfg.mode = spec_m.mode;
        cfg.mask = spec_m.mask;
        auto res = gating::run_customize(ds, labeled_view, pretrained.at(spec_m.regime_kind),
                                         plan.dims, cfg, seed);
        gating::InferenceModel model;
        model.encoders = pretrained.at(spec_m.regime_kind);
        model.head = std::move(res.head);
        model.stats = std::move(res.stats);
        model.dims = plan.dims;
        model.mode = spec_m.mode;
        model.mask = spec_m.mask;
        trained.push_back({name, std::move(model)});
    }

    // Source-only audit: all training is done; no target context may have been
    // read through a training view.
    for (const auto& target : plan.targets) {
        const int idx = ds.context_index(target);
        if (ds.train_reads[static_cast<size_t>(idx)] != 0) {
            throw ContractViolation("source-only protocol violated: target context '" + target +
                                    "' was read during training");
        }
    }

    std::map<std::string, std::map<std::string, EvalRecords>> records;  // method -> tier -> records
    records["sensor_only"] = sensor_records;
    for (const auto& tm : trained) {
        for (const auto& target : plan.targets) {
            shiftlab::DatasetView view = shiftlab::make_view(ds, {target}, false);
            records[tm.name][tier_of[target]] = evaluate_inference_model(ds, view, tm.model);
        }
    }

    for (const auto& name : plan.methods) {
        for (const auto& target : plan.targets) {
            const std::string tier = tier_of[target];
            const EvalRecords& r = records.at(name).at(tier);
            ResultRow row;
            row.method = name;
            row.tier = tier;
            row.seed = seed;
            row.metrics = compute_metrics(r.y_true, r.y_pred, plan.dims.classes);
            if (!r.alpha_context.empty()) {
                row.has_alpha = true;
                row.mean_alpha_context = row_mean(r.alpha_context);
                row.min_alpha_context = *std::min_element(r.alpha_context.begin(), r.alpha_context.end());
                row.max_alpha_context = *std::max_element(r.alpha_context.begin(), r.alpha_context.end());
            }
            out.rows.push_back(row);
        }
    }

    // Easy / hard-but-fixed gate diagnostics (needs both chorus and sensor_only).
    if (records.count("chorus")) {
        for (const auto& target : plan.targets) {
            const std::string tier = tier_of[target];
            const EvalRecords& so = records.at("sensor_only").at(tier);
            const EvalRecords& ch = records.at("chorus").at(tier);
            DiagInput din;
            din.sensor_correct.reserve(so.y_true.size());
            for (size_t i = 0; i < so.y_true.size(); ++i) {
                din.sensor_correct.push_back(so.y_pred[i] == so.y_true[i]);
                din.chorus_correct.push_back(ch.y_pred[i] == ch.y_true[i]);
            }
            din.chorus_alpha_context = ch.alpha_context;
            TierDiag diag = gate_diagnostics(din);
            diag.seed = seed;
            diag.tier = tier;
            out.diagnostics.push_back(diag);
        }
    }

    out.info.ok = true;
    return out;
}

}  // namespace

ResultTable run_plan(const ExperimentPlan& plan) {
    if (plan.budget <= 0.0 || plan.budget > 1.0) {
        throw ConfigError("experiment plan: budget must be in (0, 1]");
    }
    for (const auto& t : plan.targets) {
        if (std::find(plan.sources.begin(), plan.sources.end(), t) != plan.sources.end()) {
            throw ConfigError("experiment plan: target context '" + t +
                              "' also appears in sources (source-only protocol)");
        }
    }
    for (const auto& m : plan.methods) {
        if (m != "sensor_only") method_spec(m);  // validates names
    }

    const auto t0 = std::chrono::steady_clock::now();
    ResultTable table;
    const int64_t n_seeds = static_cast<int64_t>(plan.seeds.size());
    std::vector<SeedResults> results(static_cast<size_t>(n_seeds));
    std::vector<std::string> errors(static_cast<size_t>(n_seeds));

    // Seeds are independent jobs; kernels fall back to serial inside this region.
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
    for (int64_t i = 0; i < n_seeds; ++i) {
        try {
            results[static_cast<size_t>(i)] = run_seed(plan, plan.seeds[static_cast<size_t>(i)]);
        } catch (const std::exception& e) {
            errors[static_cast<size_t>(i)] = e.what();
        }
    }

    for (int64_t i = 0; i < n_seeds; ++i) {
        auto& r = results[static_cast<size_t>(i)];
        if (!errors[static_cast<size_t>(i)].empty()) {
            SeedInfo info;
            info.seed = plan.seeds[static_cast<size_t>(i)];
            info.ok = false;
            info.error = errors[static_cast<size_t>(i)];
            table.seeds.push_back(info);
            continue;
        }
        table.seeds.push_back(r.info);
        table.rows.insert(table.rows.end(), r.rows.begin(), r.rows.end());
        table.diagnostics.insert(table.diagnostics.end(), r.diagnostics.begin(), r.diagnostics.end());
    }

    // Per (method, tier) aggregates over successful seeds.
    for (const auto& method : plan.methods) {
        for (const char* tier : {"Low", "Mid", "High"}) {
            std::vector<const ResultRow*> rows = table.rows_for(method, tier);
            if (rows.empty()) continue;
            Aggregate agg;
            agg.method = method;
            agg.tier = tier;
            agg.n_seeds = static_cast<int64_t>(rows.size());
            double acc = 0.0, f1 = 0.0, prec = 0.0, rec = 0.0, alpha = 0.0;
            for (const auto* r : rows) {
                acc += r->metrics.accuracy;
                f1 += r->metrics.f1;
                prec += r->metrics.precision;
                rec += r->metrics.recall;
                alpha += r->mean_alpha_context;
                agg.has_alpha = agg.has_alpha || r->has_alpha;
            }
            const double n = static_cast<double>(rows.size());
            agg.mean_accuracy = acc / n;
            agg.mean_f1 = f1 / n;
            agg.mean_precision = prec / n;
            agg.mean_recall = rec / n;
            agg.mean_alpha_context = alpha / n;
            double var_acc = 0.0, var_f1 = 0.0;
            for (const auto* r : rows) {
                var_acc += (r->metrics.accuracy - agg.mean_accuracy) * (r->metrics.accuracy - agg.mean_accuracy);
                var_f1 += (r->metrics.f1 - agg.mean_f1) * (r->metrics.f1 - agg.mean_f1);
            }
            agg.std_accuracy = std::sqrt(var_acc / n);
            agg.std_f1 = std::sqrt(var_f1 / n);
            table.aggregates.push_back(agg);
        }
    }
    table.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return table;
}

// ---------------------------------------------------------------------------
// Context-embedding probe
// ---------------------------------------------------------------------------

ProbeResult probe_context_embeddings(const ParamStore& encoders, const ModelDims& dims,
                                     const shiftlab::Dataset& dataset, uint64_t seed) {
    ProbeResult out;
    const int64_t n_ctx = static_cast<int64_t>(dataset.contexts.size());
    out.n_contexts = n_ctx;

    std::vector<std::vector<float>> mu(static_cast<size_t>(n_ctx));
    for (int64_t c = 0; c < n_ctx; ++c) {
        mu[static_cast<size_t>(c)] =
            encode_context(dataset.contexts[static_cast<size_t>(c)], encoders, dims, false, nullptr).z;
    }

    out.centroid_distances.assign(static_cast<size_t>(n_ctx * n_ctx), 0.0);
    for (int64_t a = 0; a < n_ctx; ++a) {
        for (int64_t b = 0; b < n_ctx; ++b) {
            double sq = 0.0;
            for (int64_t j = 0; j < dims.latent; ++j) {
                const double diff = static_cast<double>(mu[static_cast<size_t>(a)][static_cast<size_t>(j)]) -
                                    static_cast<double>(mu[static_cast<size_t>(b)][static_cast<size_t>(j)]);
                sq += diff * diff;
            }
            out.centroid_distances[static_cast<size_t>(a * n_ctx + b)] = std::sqrt(sq);
        }
    }

    if (n_ctx < 2) return out;  // diagnostics only

    // Sample-level rows (mu is shared within a context; counts weight the probe).
    std::vector<int64_t> sample_ctx;
    sample_ctx.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples) sample_ctx.push_back(s.context);

    rng::RngState rs(seed, rng::kProbe);
    std::vector<size_t> order(sample_ctx.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rs.shuffle(order);
    const size_t n_test = std::max<size_t>(1, order.size() / 5);
    std::vector<size_t> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
    std::vector<size_t> train_idx(order.begin() + static_cast<long>(n_test), order.end());

    // Multinomial linear probe on the frozen embeddings.
    ParamStore probe;
    probe.add("w", init_uniform_fanin("probe.w", {dims.latent, n_ctx}, dims.latent, seed));
    probe.add("b", Tensor({n_ctx}));
    Tensor train_x({static_cast<int64_t>(train_idx.size()), dims.latent});
    std::vector<int64_t> train_y;
    train_y.reserve(train_idx.size());
    for (size_t i = 0; i < train_idx.size(); ++i) {
        const int64_t c = sample_ctx[train_idx[i]];
        for (int64_t j = 0; j < dims.latent; ++j) {
            train_x[static_cast<int64_t>(i) * dims.latent + j] = mu[static_cast<size_t>(c)][static_cast<size_t>(j)];
        }
        train_y.push_back(c);
    }
    AdamWConfig probe_opt;
    probe_opt.lr = 0.05;
    probe_opt.weight_decay = 0.0;
    for (int step = 0; step < 200; ++step) {
        ag::TapeT<float> tape;
        auto bound = bind_params<float>(tape, probe, true);
        auto logits = ag::linear(tape.constant(train_x, "mu"), bound["w"], bound["b"]);
        auto loss = ag::cross_entropy_logits(logits, train_y);
        tape.backward(loss);
        probe.adamw_step(collect_grads(bound), probe_opt);
    }
    int64_t correct = 0;
    const Tensor& w = probe.value("w");
    const Tensor& b = probe.value("b");
    for (size_t i : test_idx) {
        const int64_t c = sample_ctx[i];
        int64_t best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int64_t k = 0; k < n_ctx; ++k) {
            double acc = static_cast<double>(b[k]);
            for (int64_t j = 0; j < dims.latent; ++j) {
                acc += static_cast<double>(mu[static_cast<size_t>(c)][static_cast<size_t>(j)]) *
                       static_cast<double>(w[j * n_ctx + k]);
            }
            if (acc > best_v) {
                best_v = acc;
                best = k;
            }
        }
        if (best == c) ++correct;
    }
    out.probe_defined = true;
    out.probe_accuracy = static_cast<double>(correct) / static_cast<double>(test_idx.size());

    // Silhouette on a seeded subsample (embeddings repeat per context, so this
    // mainly guards against cross-context collapse).
    constexpr size_t kPerContext = 64;
    std::vector<int64_t> sil_ctx;
    for (int64_t c = 0; c < n_ctx; ++c) {
        const size_t count = std::min(kPerContext, dataset.by_context[static_cast<size_t>(c)].size());
        for (size_t i = 0; i < count; ++i) sil_ctx.push_back(c);
    }
    const size_t n_sil = sil_ctx.size();
    auto dist = [&](size_t a, size_t b) {
        return out.centroid_distances[static_cast<size_t>(sil_ctx[a] * n_ctx + sil_ctx[b])];
    };
    bool any_nonzero = false;
    for (size_t a = 0; a < n_sil && !any_nonzero; ++a) {
        for (size_t b = a + 1; b < n_sil; ++b) {
            if (dist(a, b) > 0.0) {
                any_nonzero = true;
                break;
            }
        }
    }
    if (!any_nonzero) {
        out.silhouette_degenerate = true;
        out.silhouette = 0.0;
        return out;
    }
    double sil_sum = 0.0;
    for (size_t i = 0; i < n_sil; ++i) {
        double intra = 0.0;
        int64_t n_intra = 0;
        std::vector<double> inter_sum(static_cast<size_t>(n_ctx), 0.0);
        std::vector<int64_t> inter_n(static_cast<size_t>(n_ctx), 0);
        for (size_t j = 0; j < n_sil; ++j) {
            if (i == j) continue;
            if (sil_ctx[j] == sil_ctx[i]) {
                intra += dist(i, j);
                ++n_intra;
            } else {
                inter_sum[static_cast<size_t>(sil_ctx[j])] += dist(i, j);
                ++inter_n[static_cast<size_t>(sil_ctx[j])];
            }
        }
        if (n_intra == 0) continue;  // singleton cluster contributes 0
        const double a = intra / static_cast<double>(n_intra);
        double b = std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < n_ctx; ++c) {
            if (inter_n[static_cast<size_t>(c)] > 0) {
                b = std::min(b, inter_sum[static_cast<size_t>(c)] / static_cast<double>(inter_n[static_cast<size_t>(c)]));
            }
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) sil_sum += (b - a) / denom;
    }
    out.silhouette = sil_sum / static_cast<double>(n_sil);
    return out;
}

}  // namespace chorus::experiments
