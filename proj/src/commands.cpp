#include "chorus/commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "chorus/checkpoint.hpp"
#include "chorus/config.hpp"
#include "chorus/dataset_io.hpp"
#include "chorus/experiments.hpp"
#include "chorus/pretraining.hpp"
#include "chorus/streaming.hpp"

namespace chorus::commands {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

config::RunConfig load_cfg(const Options& opt) {
    config::RunConfig cfg =
        opt.config_path.empty() ? config::default_config() : config::load_config(opt.config_path);
    if (opt.seed) cfg.seed = *opt.seed;
    cfg.data.seed = cfg.seed;
    return cfg;
}

std::string out_path(const Options& opt, const std::string& name) {
    fs::create_directories(opt.out_dir);
    return (fs::path(opt.out_dir) / name).string();
}

std::string dataset_path(const config::RunConfig& cfg, const Options& opt) {
    return cfg.dataset_path.empty() ? (fs::path(opt.out_dir) / "dataset.jsonl").string()
                                    : cfg.dataset_path;
}

std::string checkpoint_path(const config::RunConfig& cfg, const Options& opt) {
    return cfg.checkpoint_path.empty() ? (fs::path(opt.out_dir) / "checkpoint.chor").string()
                                       : cfg.checkpoint_path;
}

void refuse_overwrite(const std::string& path, bool force) {
    if (!force && fs::exists(path)) {
        throw ConfigError("output '" + path + "' already exists; pass --force to overwrite");
    }
}

shiftlab::Dataset load_dataset_checked(const config::RunConfig& cfg, const Options& opt) {
    const std::string path = dataset_path(cfg, opt);
    if (!fs::exists(path)) {
        throw IoError("dataset '" + path + "' not found; run the generate command first");
    }
    return dataset_io::load_dataset(path);
}

int run_command(const char* name, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        json err{{"error", {{"command", name}, {"type", typeid(e).name()}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}

// Sensor-only baseline accuracy on the Low and High tiers; used for C_m when
// the config does not pin the performances.
void measure_sensor_perf(const config::RunConfig& cfg, const shiftlab::Dataset& ds,
                         const shiftlab::ShiftReport& shift, double* perf_low, double* perf_high) {
    const auto split = experiments::split_source_pool(ds, cfg.sources,
                                                      cfg.pretrain.unlabeled_fraction, cfg.budget,
                                                      cfg.seed);
    shiftlab::DatasetView labeled{&ds, split.labeled, true};
    experiments::SensorOnlyTrainConfig so_cfg;
    so_cfg.optim = cfg.customize.optim;
    so_cfg.batch_size = cfg.customize.batch_size;
    so_cfg.max_epochs = cfg.customize.max_epochs;
    so_cfg.patience = cfg.customize.patience;
    so_cfg.val_fraction = cfg.customize.val_fraction;
    const auto model = experiments::train_sensor_only(ds, labeled, cfg.dims, so_cfg, cfg.seed);
    const auto eval_tier = [&](const std::string& tier) {
        const auto* row = shift.find_tier(tier);
        if (!row) throw ContractViolation("shift report lacks tier " + tier);
        shiftlab::DatasetView view = shiftlab::make_view(ds, {row->context}, false);
        const auto rec = experiments::evaluate_sensor_only(ds, view, model);
        return experiments::compute_metrics(rec.y_true, rec.y_pred, cfg.dims.classes).accuracy;
    };
    *perf_low = eval_tier("Low");
    *perf_high = eval_tier("High");
}

shiftlab::ShiftReport shift_with_cm(const config::RunConfig& cfg, const shiftlab::Dataset& ds) {
    shiftlab::ShiftReport report =
        shiftlab::build_tiers(ds, cfg.sources, cfg.targets, cfg.mmd_features, cfg.mmd_estimator);
    double perf_low, perf_high;
    if (cfg.shift_perf_low && cfg.shift_perf_high) {
        perf_low = *cfg.shift_perf_low;
        perf_high = *cfg.shift_perf_high;
    } else {
        measure_sensor_perf(cfg, ds, report, &perf_low, &perf_high);
    }
    report.perf_low = perf_low;
    report.perf_high = perf_high;
    report.c_m = shiftlab::compute_cm(perf_low, perf_high);
    report.has_cm = true;
    report.regime = shiftlab::select_regime(report.c_m, cfg.thresholds).name;
    return report;
}

json shift_report_json(const shiftlab::ShiftReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"context", row.context}, {"mmd", row.mmd}, {"tier", row.tier}});
    }
    json j{{"rows", rows},
           {"sigma", r.sigma},
           {"estimator", r.estimator},
           {"features", r.features},
           {"tie_break_used", r.tie_break_used}};
    if (r.has_cm) {
        j["perf_low"] = r.perf_low;
        j["perf_high"] = r.perf_high;
        j["c_m"] = r.c_m;
        j["regime"] = r.regime;
    }
    return j;
}

RegimeConfig resolve_regime(const config::RunConfig& cfg, const shiftlab::Dataset& ds,
                            std::string* regime_source, shiftlab::ShiftReport* report_out) {
    if (cfg.regime != "auto") {
        *regime_source = "config";
        return regime_from_name(cfg.regime);
    }
    shiftlab::ShiftReport report = shift_with_cm(cfg, ds);
    if (report_out) *report_out = report;
    *regime_source = "auto_cm";
    return shiftlab::select_regime(report.c_m, cfg.thresholds);
}

json epochs_json(const pretraining::PretrainReport& rep) {
    json train = json::array(), val = json::array();
    const auto dump = [](const pretraining::EpochLosses& e) {
        return json{{"l_xc", e.l_xc}, {"l_cx", e.l_cx}, {"l_kl", e.l_kl},
                    {"l_con", e.l_con}, {"l_pre", e.l_pre}};
    };
    for (const auto& e : rep.train) train.push_back(dump(e));
    for (const auto& e : rep.val) val.push_back(dump(e));
    return json{{"train", train},
                {"val", val},
                {"init_val", dump(rep.init_val)},
                {"best_epoch", rep.best_epoch},
                {"stop_reason", rep.stop_reason},
                {"regime", rep.regime},
                {"supcon_degenerate_batches", rep.supcon_degenerate_batches},
                {"single_context_warning", rep.single_context_warning},
                {"wall_ms", rep.wall_ms}};
}

gating::InferenceModel model_from_checkpoint(const checkpoint::Loaded& loaded, uint64_t seed) {
    gating::InferenceModel model;
    model.dims = loaded.meta.dims;
    if (loaded.meta.head_mode == "concat") model.mode = HeadMode::Concat;
    else if (loaded.meta.head_mode == "add") model.mode = HeadMode::Add;
    else model.mode = HeadMode::Gated;
    model.mask = loaded.meta.gate_mask.empty() ? gating::GateMask::Full
                                               : gating::gate_mask_from_name(loaded.meta.gate_mask);
    for (const auto& [name, p] : loaded.params) {
        if (name.rfind("head.", 0) == 0) model.head.add(name, p.value);
        else model.encoders.add(name, p.value);
    }
    if (model.head.count() == 0) {
        // Pretrain-only checkpoint: evaluate with a freshly initialized head.
        init_head_params(model.head, model.dims, seed, model.mode);
    }
    if (loaded.meta.has_gate_stats) {
        model.stats.mean = loaded.meta.gate_mean;
        model.stats.std = loaded.meta.gate_std;
    }
    return model;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

int cmd_generate(const Options& opt) {
    return run_command("generate", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const std::string path = dataset_path(cfg, opt);
        refuse_overwrite(path, opt.force);
        fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
        const shiftlab::Dataset ds = shiftlab::generate_dataset(cfg.data);
        dataset_io::save_dataset(path, ds);
        std::cout << json{{"dataset", path}, {"records", ds.size()}}.dump() << "\n";
    });
}

int cmd_shift(const Options& opt) {
    return run_command("shift", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const shiftlab::Dataset ds = load_dataset_checked(cfg, opt);
        const shiftlab::ShiftReport report = shift_with_cm(cfg, ds);

        dataset_io::write_file_atomic(out_path(opt, "shift_report.json"),
                                      shift_report_json(report).dump(2) + "\n");
        std::ostringstream csv;
        csv << "context,mmd,tier\n";
        for (const auto& row : report.rows) {
            csv << row.context << "," << fmt(row.mmd) << "," << row.tier << "\n";
        }
        dataset_io::write_file_atomic(out_path(opt, "shift_report.csv"), csv.str());
        std::cout << shift_report_json(report).dump() << "\n";
    });
}

int cmd_pretrain(const Options& opt) {
    return run_command("pretrain", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const shiftlab::Dataset ds = load_dataset_checked(cfg, opt);
        std::string regime_source;
        const RegimeConfig regime = resolve_regime(cfg, ds, &regime_source, nullptr);

        const auto split = experiments::split_source_pool(
            ds, cfg.sources, cfg.pretrain.unlabeled_fraction, cfg.budget, cfg.seed);
        shiftlab::DatasetView pool{&ds, split.unlabeled, true};
        auto result = pretraining::run_pretrain(ds, pool, regime, cfg.pretrain, cfg.dims, cfg.seed);
        if (opt.canonical) result.report.wall_ms = 0.0;

        checkpoint::Meta meta;
        meta.dims = cfg.dims;
        meta.regime = regime.name;
        meta.seed = cfg.seed;
        const std::string ckpt = checkpoint_path(cfg, opt);
        refuse_overwrite(ckpt, opt.force);
        checkpoint::save(ckpt, result.checkpoint, meta);

        json rep = epochs_json(result.report);
        rep["regime_source"] = regime_source;
        dataset_io::write_file_atomic(out_path(opt, "pretrain_report.json"), rep.dump(2) + "\n");
        std::cout << json{{"checkpoint", ckpt},
                          {"regime", regime.name},
                          {"epochs", result.report.val.size()},
                          {"best_epoch", result.report.best_epoch}}
                         .dump()
                  << "\n";
    });
}

int cmd_customize(const Options& opt) {
    return run_command("customize", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const shiftlab::Dataset ds = load_dataset_checked(cfg, opt);
        const auto loaded = checkpoint::load(checkpoint_path(cfg, opt));

        const auto split = experiments::split_source_pool(
            ds, cfg.sources, cfg.pretrain.unlabeled_fraction, cfg.budget, cfg.seed);
        shiftlab::DatasetView labeled{&ds, split.labeled, true};
        auto result = gating::run_customize(ds, labeled, loaded.params, cfg.dims, cfg.customize,
                                            cfg.seed);
        if (opt.canonical) result.report.wall_ms = 0.0;

        ParamStore combined;
        for (const auto& [name, p] : loaded.params) combined.add(name, p.value);
        for (const auto& [name, p] : result.head) combined.add(name, p.value);
        checkpoint::Meta meta;
        meta.dims = cfg.dims;
        meta.regime = loaded.meta.regime;
        meta.seed = cfg.seed;
        meta.head_mode = result.report.head_mode;
        meta.gate_mask = result.report.gate_mask;
        meta.has_gate_stats = true;
        meta.gate_mean = result.stats.mean;
        meta.gate_std = result.stats.std;
        const std::string out_ckpt = out_path(opt, "checkpoint_customized.chor");
        refuse_overwrite(out_ckpt, opt.force);
        checkpoint::save(out_ckpt, combined, meta);

        json epochs = json::array();
        for (const auto& e : result.report.epochs) {
            epochs.push_back({{"l_custom", e.l_custom},
                              {"l_ce", e.l_ce},
                              {"l_balance", e.l_balance},
                              {"val_l_custom", e.val_l_custom},
                              {"mean_alpha_sensor", e.mean_alpha_sensor},
                              {"mean_alpha_context", e.mean_alpha_context}});
        }
        json rep{{"epochs", epochs},
                 {"best_epoch", result.report.best_epoch},
                 {"stop_reason", result.report.stop_reason},
                 {"gate_mask", result.report.gate_mask},
                 {"head_mode", result.report.head_mode},
                 {"labeled_count", result.report.labeled_count},
                 {"encoders_frozen",
                  result.report.encoder_hash_before == result.report.encoder_hash_after},
                 {"wall_ms", result.report.wall_ms}};
        dataset_io::write_file_atomic(out_path(opt, "customize_report.json"), rep.dump(2) + "\n");
        std::cout << json{{"checkpoint", out_ckpt}, {"labeled", result.report.labeled_count}}.dump()
                  << "\n";
    });
}

int cmd_evaluate(const Options& opt) {
    return run_command("evaluate", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const shiftlab::Dataset ds = load_dataset_checked(cfg, opt);
        const auto loaded = checkpoint::load(checkpoint_path(cfg, opt));
        const auto model = model_from_checkpoint(loaded, cfg.seed);
        const shiftlab::ShiftReport shift =
            shiftlab::build_tiers(ds, cfg.sources, cfg.targets, cfg.mmd_features, cfg.mmd_estimator);

        json tiers = json::array();
        std::ostringstream csv;
        csv << "tier,context,accuracy,f1,precision,recall\n";
        for (const auto& row : shift.rows) {
            shiftlab::DatasetView view = shiftlab::make_view(ds, {row.context}, false);
            const auto rec = experiments::evaluate_inference_model(ds, view, model);
            const auto m = experiments::compute_metrics(rec.y_true, rec.y_pred, cfg.dims.classes);
            tiers.push_back({{"tier", row.tier},
                             {"context", row.context},
                             {"accuracy", m.accuracy},
                             {"f1", m.f1},
                             {"precision", m.precision},
                             {"recall", m.recall}});
            csv << row.tier << "," << row.context << "," << fmt(m.accuracy) << "," << fmt(m.f1)
                << "," << fmt(m.precision) << "," << fmt(m.recall) << "\n";
        }
        json rep{{"tiers", tiers},
                 {"head", loaded.params.has("head.cls.w") ? "trained" : "untrained_init"}};
        dataset_io::write_file_atomic(out_path(opt, "eval_report.json"), rep.dump(2) + "\n");
        dataset_io::write_file_atomic(out_path(opt, "eval_report.csv"), csv.str());
        std::cout << rep.dump() << "\n";
    });
}

int cmd_stream(const Options& opt) {
    return run_command("stream", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const shiftlab::Dataset ds = load_dataset_checked(cfg, opt);
        const auto loaded = checkpoint::load(checkpoint_path(cfg, opt));
        const auto model = model_from_checkpoint(loaded, cfg.seed);

        std::vector<streaming::StreamEvent> trace;
        if (!cfg.trace_path.empty()) {
            trace = dataset_io::load_trace(cfg.trace_path, cfg.dims);
        } else {
            trace = streaming::make_switch_trace(ds, cfg.stream_contexts, cfg.stream_switches,
                                                 cfg.stream_length, cfg.seed);
            dataset_io::save_trace(out_path(opt, "trace.jsonl"), trace);
        }

        streaming::StreamConfig scfg;
        scfg.cache_capacity = cfg.cache_capacity;
        scfg.with_uncached_pass = cfg.stream_uncached_pass;
        streaming::StreamReport report = streaming::run_stream(trace, model, scfg);
        if (opt.canonical) {
            report.mean_latency_ns = report.p95_latency_ns = 0.0;
            report.uncached_mean_latency_ns = report.uncached_p95_latency_ns = 0.0;
            for (auto& s : report.samples) s.latency_ns = 0;
        }

        json rep{{"accuracy", report.accuracy},
                 {"labeled_count", report.labeled_count},
                 {"hits", report.hits},
                 {"misses", report.misses},
                 {"evictions", report.evictions},
                 {"encoder_invocations", report.encoder_invocations},
                 {"hit_rate", report.hit_rate},
                 {"mean_latency_ns", report.mean_latency_ns},
                 {"p95_latency_ns", report.p95_latency_ns}};
        if (report.has_uncached) {
            rep["uncached_mean_latency_ns"] = report.uncached_mean_latency_ns;
            rep["uncached_p95_latency_ns"] = report.uncached_p95_latency_ns;
            rep["uncached_encoder_invocations"] = report.uncached_encoder_invocations;
        }
        dataset_io::write_file_atomic(out_path(opt, "stream_report.json"), rep.dump(2) + "\n");

        std::ostringstream csv;
        csv << "index,context_id,hit,correct,alpha_context,latency_ns\n";
        for (const auto& s : report.samples) {
            csv << s.index << "," << s.context_id << "," << (s.hit ? 1 : 0) << ","
                << (s.correct ? 1 : 0) << "," << fmt(s.alpha_context) << "," << s.latency_ns << "\n";
        }
        dataset_io::write_file_atomic(out_path(opt, "stream_samples.csv"), csv.str());
        std::cout << rep.dump() << "\n";
    });
}

int cmd_experiment(const Options& opt) {
    return run_command("experiment", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        experiments::ExperimentPlan plan = cfg.to_plan();
        experiments::ResultTable table = experiments::run_plan(plan);
        if (opt.canonical) {
            table.total_seconds = 0.0;
            for (auto& s : table.seeds) s.sensor_phase_seconds = 0.0;
        }

        std::ostringstream csv;
        csv << "method,tier,seed,accuracy,f1,precision,recall,mean_alpha_context\n";
        for (const auto& r : table.rows) {
            csv << r.method << "," << r.tier << "," << r.seed << "," << fmt(r.metrics.accuracy)
                << "," << fmt(r.metrics.f1) << "," << fmt(r.metrics.precision) << ","
                << fmt(r.metrics.recall) << "," << (r.has_alpha ? fmt(r.mean_alpha_context) : "")
                << "\n";
        }
        dataset_io::write_file_atomic(out_path(opt, "result_table.csv"), csv.str());

        std::ostringstream diag;
        diag << "tier,seed,easy_alpha,easy_count,hard_fixed_alpha,hard_fixed_count\n";
        for (const auto& d : table.diagnostics) {
            diag << d.tier << "," << d.seed << ","
                 << (d.easy_present ? fmt(d.easy_alpha) : "") << "," << d.easy_count << ","
                 << (d.hard_fixed_present ? fmt(d.hard_fixed_alpha) : "") << "," << d.hard_fixed_count
                 << "\n";
        }
        dataset_io::write_file_atomic(out_path(opt, "diagnostics.csv"), diag.str());

        json aggs = json::array();
        for (const auto& a : table.aggregates) {
            aggs.push_back({{"method", a.method},
                            {"tier", a.tier},
                            {"mean_accuracy", a.mean_accuracy},
                            {"std_accuracy", a.std_accuracy},
                            {"mean_f1", a.mean_f1},
                            {"std_f1", a.std_f1},
                            {"mean_precision", a.mean_precision},
                            {"mean_recall", a.mean_recall},
                            {"mean_alpha_context", a.mean_alpha_context},
                            {"n_seeds", a.n_seeds}});
        }
        json seeds = json::array();
        for (const auto& s : table.seeds) {
            json sj{{"seed", s.seed}, {"ok", s.ok}};
            if (!s.ok) sj["error"] = s.error;
            else {
                sj["c_m"] = s.c_m;
                sj["regime"] = s.regime;
                sj["perf_low"] = s.perf_low;
                sj["perf_high"] = s.perf_high;
                sj["sensor_phase_seconds"] = s.sensor_phase_seconds;
                sj["shift"] = shift_report_json(s.shift);
            }
            seeds.push_back(sj);
        }
        json rep{{"aggregates", aggs}, {"seeds", seeds}, {"total_seconds", table.total_seconds}};
        dataset_io::write_file_atomic(out_path(opt, "result_table.json"), rep.dump(2) + "\n");
        std::cout << json{{"rows", table.rows.size()}, {"out", opt.out_dir}}.dump() << "\n";
    });
}

int cmd_probe(const Options& opt) {
    return run_command("probe", [&] {
        const config::RunConfig cfg = load_cfg(opt);
        const shiftlab::Dataset ds = load_dataset_checked(cfg, opt);
        const auto loaded = checkpoint::load(checkpoint_path(cfg, opt));
        const auto model = model_from_checkpoint(loaded, cfg.seed);
        const auto probe = experiments::probe_context_embeddings(model.encoders, cfg.dims, ds, cfg.seed);

        json centroid = json::array();
        for (double v : probe.centroid_distances) centroid.push_back(v);
        json rep{{"probe_defined", probe.probe_defined},
                 {"probe_accuracy", probe.probe_accuracy},
                 {"silhouette", probe.silhouette},
                 {"silhouette_degenerate", probe.silhouette_degenerate},
                 {"n_contexts", probe.n_contexts},
                 {"centroid_distances", centroid}};
        dataset_io::write_file_atomic(out_path(opt, "probe_report.json"), rep.dump(2) + "\n");
        std::cout << rep.dump() << "\n";
    });
}

}  // namespace chorus::commands
