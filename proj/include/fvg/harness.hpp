// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration, run manifests and CSV helpers shared by the CLI
// and the studies.

#include "fvg/sampling.hpp"
#include "fvg/training.hpp"

#include <map>

namespace fvg {

inline constexpr const char* kCodeVersion = "fvg-1.0.0";
inline constexpr const char* kRunManifestName = "run_manifest.json";

struct DataConfig {
    int n = 4096;
    std::uint64_t seed = 7;
    bool operator==(const DataConfig&) const = default;
};

struct StudySpec {
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::vector<int> steps = {50, 30, 15};
    int eval_prompts = kEvalPrompts;
    int diagnostic_seeds = 4;      // 64 prompts x 4 = 256 videos per mode
    int diversity_prompts = 16;
    int diversity_videos = 25;
    int sensitivity_prompts = kEvalPrompts;
    int sensitivity_anchors = 5;
    int naive_prompts = kEvalPrompts;

    void validate() const;
};

struct Config {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    std::uint64_t train_seed = 0;
    SampleConfig sample;
    StudySpec study;

    void validate() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const StudySpec& c);
void from_json(const nlohmann::json& j, StudySpec& c);
void to_json(nlohmann::json& j, const Config& c);
void from_json(const nlohmann::json& j, Config& c);

/// Missing sections or fields keep their defaults; unknown sections are a ConfigError.
Config load_config(const std::filesystem::path& path);
Config config_from_json(const nlohmann::json& j);

/// Provenance record written next to every command's outputs. Wall-clock
/// timings are kept out of it (see write_timing) so reruns compare byte-equal.
struct RunManifest {
    std::string command;
    nlohmann::json args = nlohmann::json::object();
    std::uint64_t master_seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::string> inputs;   // name -> path
    std::map<std::string, std::string> outputs;  // name -> path relative to the output dir
    std::map<std::string, std::string> output_hashes;

    /// Hash of command, args, seed, config and code version.
    std::string run_id() const;
    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

/// Hashes every listed output under out_dir and writes run_manifest.json.
void write_manifest(const std::filesystem::path& out_dir, RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

/// timing.json: stage name -> seconds.
void write_timing(const std::filesystem::path& out_dir, const std::map<std::string, double>& seconds);

/// Appends the provenance trailer line to CSV text.
std::string with_run_id(std::string csv, const std::string& run_id);

std::string format_double(double v);

/// CLI exit code for an exception: 2 config, 3 missing artifact, 4 divergence, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace fvg
