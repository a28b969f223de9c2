#pragma once

#include <optional>
#include <string>

namespace chorus::commands {

struct Options {
    std::string config_path;  // empty = built-in defaults
    std::string out_dir = ".";
    std::optional<uint64_t> seed;  // overrides the config seed
    bool force = false;
    bool canonical = false;  // zero timing fields in every output
};

int cmd_generate(const Options& options);
int cmd_shift(const Options& options);
int cmd_pretrain(const Options& options);
int cmd_customize(const Options& options);
int cmd_evaluate(const Options& options);
int cmd_stream(const Options& options);
int cmd_experiment(const Options& options);
int cmd_probe(const Options& options);

}  // namespace chorus::commands
