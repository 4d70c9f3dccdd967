// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"
#include "osketch/diffusion.hpp"
#include "osketch/inversion.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace osketch {

/// Everything a run needs; one TOML file plus command-line overrides.
struct RunConfig {
    BackendSpec backend;

    int schedule_T = 1000;
    ScheduleKind schedule_kind = ScheduleKind::linear_beta;

    OptimizeConfig optimize;
    LossWeights weights;
    int n_learnable = 10;
    InitMode init = InitMode::random;

    SamplerConfig sampler;
    std::string optional_text;

    std::filesystem::path dataset_root;
    std::string train_id;

    std::filesystem::path output_dir = "out";

    NoiseSchedule schedule() const { return make_schedule(schedule_T, schedule_kind); }

    /// Enforces every numeric constraint; throws ValidationError with a field path.
    /// `require_dataset` additionally checks dataset.root exists; `require_train_id`
    /// checks dataset.train_id is set.
    void validate(bool require_dataset, bool require_train_id) const;
};

/// Parses TOML text. Relative paths resolve against `base_dir`.
/// Unknown sections or keys are rejected with their path.
RunConfig parse_run_config(const std::string& toml_text, const std::filesystem::path& base_dir = {});

RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical TOML rendering of the resolved config (paths absolute).
std::string to_toml(const RunConfig& config);

/// Stable hex digest of the canonical config, excluding the output directory.
std::string config_hash(const RunConfig& config);

}  // namespace osketch
