// SPDX-License-Identifier: Apache-2.0
#pragma once

// CLI commands as library calls. Each run writes its artifacts plus a
// run_manifest.json that is sufficient to replay it.

#include "fvg/studies.hpp"

namespace fvg {

struct CommandRequest {
    std::string command;  // gen-data | pretrain | finetune-anchor | sample | eval | study
    nlohmann::json args = nlohmann::json::object();
    Config config;
    std::filesystem::path out;
    int jobs = 1;
};

/// Seed that drives the command: data.seed, train.seed, sample.seed or study.seed.
std::uint64_t command_seed(const std::string& command, const Config& config);

/// Runs the command, writes run_manifest.json and timing.json, returns the manifest.
RunManifest run_command(const CommandRequest& request, const ProgressLog& log = {});

struct ReplayResult {
    RunManifest original;
    RunManifest rerun;
    std::vector<std::string> mismatched;  // output names whose bytes differ or are missing
    bool identical() const { return mismatched.empty(); }
};

/// Re-executes a recorded run into `out` (with its own job count) and compares output hashes.
ReplayResult replay_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out, int jobs,
                             const ProgressLog& log = {});

}  // namespace fvg
