#include "chorus/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace chorus::config {

using nlohmann::json;

namespace {

void require_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
        }
    }
}

template <class T>
void get_if(const json& obj, const char* key, T& target) {
    if (obj.contains(key)) target = obj.at(key).get<T>();
}

void parse_dims(const json& j, ModelDims& d) {
    require_keys(j, "dims",
                 {"channels", "length", "classes", "latent", "text_dim", "conv1", "conv2", "kernel",
                  "stride", "ctx_hidden", "dec_hidden", "head_hidden", "gate_hidden", "logvar_clamp"});
    get_if(j, "channels", d.channels);
    get_if(j, "length", d.length);
    get_if(j, "classes", d.classes);
    get_if(j, "latent", d.latent);
    get_if(j, "text_dim", d.text_dim);
    get_if(j, "conv1", d.conv1);
    get_if(j, "conv2", d.conv2);
    get_if(j, "kernel", d.kernel);
    get_if(j, "stride", d.stride);
    get_if(j, "ctx_hidden", d.ctx_hidden);
    get_if(j, "dec_hidden", d.dec_hidden);
    get_if(j, "head_hidden", d.head_hidden);
    get_if(j, "gate_hidden", d.gate_hidden);
    get_if(j, "logvar_clamp", d.logvar_clamp);
}

void parse_data(const json& j, RunConfig& cfg) {
    require_keys(j, "data",
                 {"samples_per_cell", "mix_strength", "contexts", "sources", "targets", "path"});
    get_if(j, "samples_per_cell", cfg.data.samples_per_cell);
    get_if(j, "mix_strength", cfg.data.mix_strength);
    get_if(j, "path", cfg.dataset_path);
    if (j.contains("contexts")) {
        cfg.data.contexts.clear();
        size_t i = 0;
        for (const auto& c : j.at("contexts")) {
            require_keys(c, "data.contexts[" + std::to_string(i) + "]", {"name", "shift", "gain", "noise"});
            shiftlab::ContextSpec spec;
            spec.name = c.at("name").get<std::string>();
            get_if(c, "shift", spec.shift);
            get_if(c, "gain", spec.gain);
            get_if(c, "noise", spec.noise);
            cfg.data.contexts.push_back(spec);
            ++i;
        }
    }
    get_if(j, "sources", cfg.sources);
    get_if(j, "targets", cfg.targets);
}

void parse_pretrain(const json& j, RunConfig& cfg) {
    require_keys(j, "pretrain",
                 {"regime", "lr", "weight_decay", "batch_size", "max_epochs", "patience",
                  "val_fraction", "unlabeled_fraction", "supcon_tau"});
    get_if(j, "regime", cfg.regime);
    get_if(j, "lr", cfg.pretrain.optim.lr);
    get_if(j, "weight_decay", cfg.pretrain.optim.weight_decay);
    get_if(j, "batch_size", cfg.pretrain.batch_size);
    get_if(j, "max_epochs", cfg.pretrain.max_epochs);
    get_if(j, "patience", cfg.pretrain.patience);
    get_if(j, "val_fraction", cfg.pretrain.val_fraction);
    get_if(j, "unlabeled_fraction", cfg.pretrain.unlabeled_fraction);
    get_if(j, "supcon_tau", cfg.pretrain.supcon_tau);
}

void parse_regimes(const json& j, RunConfig& cfg) {
    require_keys(j, "regimes", {"weak_below", "medium_below"});
    get_if(j, "weak_below", cfg.thresholds.weak_below);
    get_if(j, "medium_below", cfg.thresholds.medium_below);
}

void parse_customize(const json& j, RunConfig& cfg) {
    require_keys(j, "customize",
                 {"budget", "lr", "weight_decay", "batch_size", "max_epochs", "patience", "dropout",
                  "lambda_balance", "gate_mask", "head_mode", "val_fraction"});
    get_if(j, "budget", cfg.budget);
    get_if(j, "lr", cfg.customize.optim.lr);
    get_if(j, "weight_decay", cfg.customize.optim.weight_decay);
    get_if(j, "batch_size", cfg.customize.batch_size);
    get_if(j, "max_epochs", cfg.customize.max_epochs);
    get_if(j, "patience", cfg.customize.patience);
    get_if(j, "dropout", cfg.customize.dropout);
    get_if(j, "lambda_balance", cfg.customize.lambda_balance);
    get_if(j, "val_fraction", cfg.customize.val_fraction);
    if (j.contains("gate_mask")) {
        cfg.customize.mask = gating::gate_mask_from_name(j.at("gate_mask").get<std::string>());
    }
    if (j.contains("head_mode")) {
        const std::string mode = j.at("head_mode").get<std::string>();
        if (mode == "gated") cfg.customize.mode = HeadMode::Gated;
        else if (mode == "concat") cfg.customize.mode = HeadMode::Concat;
        else if (mode == "add") cfg.customize.mode = HeadMode::Add;
        else throw ConfigError("customize.head_mode must be gated|concat|add, got '" + mode + "'");
    }
}

void parse_mmd(const json& j, RunConfig& cfg) {
    require_keys(j, "mmd", {"features", "estimator", "perf_low", "perf_high"});
    if (j.contains("features")) {
        const std::string f = j.at("features").get<std::string>();
        if (f == "summary") cfg.mmd_features = shiftlab::FeatureKind::Summary;
        else if (f == "raw") cfg.mmd_features = shiftlab::FeatureKind::Raw;
        else throw ConfigError("mmd.features must be summary|raw, got '" + f + "'");
    }
    if (j.contains("estimator")) {
        const std::string e = j.at("estimator").get<std::string>();
        if (e == "biased") cfg.mmd_estimator = shiftlab::MmdKind::Biased;
        else if (e == "unbiased") cfg.mmd_estimator = shiftlab::MmdKind::Unbiased;
        else throw ConfigError("mmd.estimator must be biased|unbiased, got '" + e + "'");
    }
    if (j.contains("perf_low")) cfg.shift_perf_low = j.at("perf_low").get<double>();
    if (j.contains("perf_high")) cfg.shift_perf_high = j.at("perf_high").get<double>();
}

void parse_stream(const json& j, RunConfig& cfg) {
    require_keys(j, "stream",
                 {"cache_capacity", "uncached_pass", "contexts", "switches", "length", "trace_path"});
    get_if(j, "cache_capacity", cfg.cache_capacity);
    get_if(j, "uncached_pass", cfg.stream_uncached_pass);
    get_if(j, "contexts", cfg.stream_contexts);
    get_if(j, "switches", cfg.stream_switches);
    get_if(j, "length", cfg.stream_length);
    get_if(j, "trace_path", cfg.trace_path);
}

void parse_experiment(const json& j, RunConfig& cfg) {
    require_keys(j, "experiment", {"methods", "seeds"});
    get_if(j, "methods", cfg.methods);
    get_if(j, "seeds", cfg.seeds);
}

void validate(const RunConfig& cfg) {
    if (cfg.budget <= 0.0 || cfg.budget > 1.0) {
        throw ConfigError("customize.budget must be in (0, 1], got " + std::to_string(cfg.budget));
    }
    if (cfg.regime != "auto") regime_from_name(cfg.regime);
    if (cfg.pretrain.val_fraction <= 0.0 || cfg.pretrain.val_fraction >= 1.0) {
        throw ConfigError("pretrain.val_fraction must be in (0, 1)");
    }
    if (cfg.pretrain.unlabeled_fraction <= 0.0 || cfg.pretrain.unlabeled_fraction >= 1.0) {
        throw ConfigError("pretrain.unlabeled_fraction must be in (0, 1)");
    }
    if (cfg.customize.dropout < 0.0 || cfg.customize.dropout >= 1.0) {
        throw ConfigError("customize.dropout must be in [0, 1)");
    }
    if (cfg.cache_capacity <= 0) throw ConfigError("stream.cache_capacity must be positive");
    if (cfg.seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
}

}  // namespace

experiments::ExperimentPlan RunConfig::to_plan() const {
    experiments::ExperimentPlan plan;
    plan.spec = data;
    plan.sources = sources;
    plan.targets = targets;
    plan.budget = budget;
    plan.methods = methods;
    plan.seeds = seeds;
    plan.regime_override = regime == "auto" ? "" : regime;
    plan.dims = dims;
    plan.pretrain = pretrain;
    plan.customize = customize;
    plan.thresholds = thresholds;
    plan.mmd_features = mmd_features;
    return plan;
}

RunConfig default_config() {
    RunConfig cfg;
    cfg.data = shiftlab::default_spec(cfg.seed);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    require_keys(j, "",
                 {"seed", "dims", "data", "pretrain", "regimes", "customize", "mmd", "stream",
                  "experiment", "checkpoint_path"});
    RunConfig cfg = default_config();
    get_if(j, "seed", cfg.seed);
    get_if(j, "checkpoint_path", cfg.checkpoint_path);
    if (j.contains("dims")) parse_dims(j.at("dims"), cfg.dims);
    if (j.contains("data")) parse_data(j.at("data"), cfg);
    if (j.contains("pretrain")) parse_pretrain(j.at("pretrain"), cfg);
    if (j.contains("regimes")) parse_regimes(j.at("regimes"), cfg);
    if (j.contains("customize")) parse_customize(j.at("customize"), cfg);
    if (j.contains("mmd")) parse_mmd(j.at("mmd"), cfg);
    if (j.contains("stream")) parse_stream(j.at("stream"), cfg);
    if (j.contains("experiment")) parse_experiment(j.at("experiment"), cfg);
    cfg.data.seed = cfg.seed;
    validate(cfg);
    return cfg;
}

std::string default_config_json() {
    const RunConfig cfg = default_config();
    json contexts = json::array();
    for (const auto& c : cfg.data.contexts) {
        contexts.push_back({{"name", c.name}, {"shift", c.shift}, {"gain", c.gain}, {"noise", c.noise}});
    }
    json j{
        {"seed", cfg.seed},
        {"checkpoint_path", cfg.checkpoint_path},
        {"dims",
         {{"channels", cfg.dims.channels},
          {"length", cfg.dims.length},
          {"classes", cfg.dims.classes},
          {"latent", cfg.dims.latent},
          {"text_dim", cfg.dims.text_dim},
          {"conv1", cfg.dims.conv1},
          {"conv2", cfg.dims.conv2},
          {"kernel", cfg.dims.kernel},
          {"stride", cfg.dims.stride},
          {"ctx_hidden", cfg.dims.ctx_hidden},
          {"dec_hidden", cfg.dims.dec_hidden},
          {"head_hidden", cfg.dims.head_hidden},
          {"gate_hidden", cfg.dims.gate_hidden},
          {"logvar_clamp", cfg.dims.logvar_clamp}}},
        {"data",
         {{"samples_per_cell", cfg.data.samples_per_cell},
          {"mix_strength", cfg.data.mix_strength},
          {"contexts", contexts},
          {"sources", cfg.sources},
          {"targets", cfg.targets},
          {"path", cfg.dataset_path}}},
        {"pretrain",
         {{"regime", cfg.regime},
          {"lr", cfg.pretrain.optim.lr},
          {"weight_decay", cfg.pretrain.optim.weight_decay},
          {"batch_size", cfg.pretrain.batch_size},
          {"max_epochs", cfg.pretrain.max_epochs},
          {"patience", cfg.pretrain.patience},
          {"val_fraction", cfg.pretrain.val_fraction},
          {"unlabeled_fraction", cfg.pretrain.unlabeled_fraction},
          {"supcon_tau", cfg.pretrain.supcon_tau}}},
        {"regimes",
         {{"weak_below", cfg.thresholds.weak_below}, {"medium_below", cfg.thresholds.medium_below}}},
        {"customize",
         {{"budget", cfg.budget},
          {"lr", cfg.customize.optim.lr},
          {"weight_decay", cfg.customize.optim.weight_decay},
          {"batch_size", cfg.customize.batch_size},
          {"max_epochs", cfg.customize.max_epochs},
          {"patience", cfg.customize.patience},
          {"dropout", cfg.customize.dropout},
          {"lambda_balance", cfg.customize.lambda_balance},
          {"gate_mask", gating::gate_mask_name(cfg.customize.mask)},
          {"head_mode", "gated"},
          {"val_fraction", cfg.customize.val_fraction}}},
        {"mmd", {{"features", "summary"}, {"estimator", "biased"}}},
        {"stream",
         {{"cache_capacity", cfg.cache_capacity},
          {"uncached_pass", cfg.stream_uncached_pass},
          {"contexts", cfg.stream_contexts},
          {"switches", cfg.stream_switches},
          {"length", cfg.stream_length},
          {"trace_path", cfg.trace_path}}},
        {"experiment", {{"methods", cfg.methods}, {"seeds", cfg.seeds}}},
    };
    return j.dump(2) + "\n";
}

}  // namespace chorus::config
