#include <CLI11.hpp>

#include "chorus/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"chorus - context-aware data-free model customization pipeline"};
    app.require_subcommand(1);

    chorus::commands::Options opt;
    uint64_t seed_value = 0;
    bool seed_given = false;
    app.add_option("--config", opt.config_path, "JSON config file (defaults apply when omitted)");
    app.add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
    app.add_flag("--force", opt.force, "overwrite existing outputs");
    app.add_flag("--canonical", opt.canonical, "zero timing fields for byte-level comparisons");

    struct Verb {
        const char* name;
        const char* help;
        int (*fn)(const chorus::commands::Options&);
    };
    const Verb verbs[] = {
        {"generate", "write the synthetic dataset", chorus::commands::cmd_generate},
        {"shift", "MMD table, tiers, C_m and regime", chorus::commands::cmd_shift},
        {"pretrain", "stage-1 cross-modal pre-training", chorus::commands::cmd_pretrain},
        {"customize", "stage-2 gated head training", chorus::commands::cmd_customize},
        {"evaluate", "per-tier metrics for a checkpoint", chorus::commands::cmd_evaluate},
        {"stream", "streaming inference with the context cache", chorus::commands::cmd_stream},
        {"experiment", "full multi-seed method comparison", chorus::commands::cmd_experiment},
        {"probe", "context-embedding probe", chorus::commands::cmd_probe},
    };
    int (*selected)(const chorus::commands::Options&) = nullptr;
    for (const auto& v : verbs) {
        CLI::App* sub = app.add_subcommand(v.name, v.help);
        sub->callback([&selected, fn = v.fn]() { selected = fn; });
    }

    CLI11_PARSE(app, argc, argv);
    seed_given = seed_opt->count() > 0;
    if (seed_given) opt.seed = seed_value;
    return selected ? selected(opt) : 1;
}
