// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/config.hpp"
#include "osketch/evalsuite.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace osketch::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kValidation = 2, kDivergence = 3, kIo = 4 };

/// Flags shared by every subcommand; set values override the config file.
struct Overrides {
    std::optional<std::string> train_id;
    std::optional<std::string> optional_text;
    std::optional<double> lambda_edit;
    std::optional<std::string> edit_sign;
    std::optional<std::string> backend;
    std::optional<std::string> out;
    std::optional<int> n_steps;
    std::optional<int> sampler_steps;
};

RunConfig resolve_config(const std::filesystem::path& config_path, const Overrides& overrides);

struct InvertResult {
    std::filesystem::path instruction_path;
    std::filesystem::path trace_path;
    std::filesystem::path manifest_path;
    double train_wall_s = 0.0;
};

/// Inverts the instruction on the configured training pair; writes
/// ins.osi, trace.jsonl and run_invert.json under the output directory.
InvertResult cmd_invert(const RunConfig& config, std::ostream& log);

struct InferOptions {
    std::optional<std::filesystem::path> instruction;  // default <out>/ins.osi
    std::vector<std::string> ids;                       // default: the eval split
    int jobs = 1;
};

struct InferResult {
    std::vector<std::filesystem::path> images;
    double infer_wall_s_per_image = 0.0;
};

/// Composes the hybrid instruction and writes <out>/images/<id>.png per photo.
InferResult cmd_infer(const RunConfig& config, const InferOptions& options, std::ostream& log);

/// Scores <outputs_dir>/*.png against the manifest sketches; writes report.json / report.csv.
MetricReport cmd_eval(const RunConfig& config, const std::optional<std::filesystem::path>& outputs_dir,
                      std::ostream& log);

struct BenchOptions {
    int images = 3;
};

/// Times the inversion loop and per-image sampling; returns the table (also written to <out>/bench.json).
nlohmann::ordered_json cmd_bench(const RunConfig& config, const BenchOptions& options, std::ostream& log);

/// Maps an exception to the documented exit code.
int exit_code_for(const std::exception& error);

/// Full command-line entry point (argv[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace osketch::cli
