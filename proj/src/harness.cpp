// SPDX-License-Identifier: Apache-2.0
#include "fvg/harness.hpp"

#include <cstdio>
#include <set>

namespace fvg {

void StudySpec::validate() const {
    if (seeds.empty()) throw ConfigError("study field 'seeds' must not be empty");
    if (steps.empty()) throw ConfigError("study field 'steps' must not be empty");
    for (int s : steps)
        if (s < 1) throw ConfigError("study field 'steps' entries must be >= 1");
    auto range = [](int v, int lo, int hi, const char* field) {
        if (v < lo || v > hi)
            throw ConfigError(std::string("study field '") + field + "' must be in [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
    };
    range(eval_prompts, 1, kEvalPrompts, "eval_prompts");
    range(diagnostic_seeds, 1, static_cast<int>(seeds.size()), "diagnostic_seeds");
    range(diversity_prompts, 1, eval_prompts, "diversity_prompts");
    range(diversity_videos, 2, 1000, "diversity_videos");
    range(sensitivity_prompts, 1, eval_prompts, "sensitivity_prompts");
    range(sensitivity_anchors, 2, 1000, "sensitivity_anchors");
    range(naive_prompts, 1, eval_prompts, "naive_prompts");
    if (static_cast<int>(seeds.size()) < 2) throw ConfigError("study field 'seeds' needs at least 2 entries");
}

void Config::validate() const {
    if (data.n < 1) throw ConfigError("data field 'n' must be >= 1");
    model.validate();
    train.validate();
    sample.validate();
    study.validate();
}

void to_json(nlohmann::json& j, const DataConfig& c) { j = {{"n", c.n}, {"seed", c.seed}}; }
void from_json(const nlohmann::json& j, DataConfig& c) {
    const DataConfig d;
    c.n = j.value("n", d.n);
    c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const StudySpec& c) {
    j = {{"seed", c.seed},
         {"seeds", c.seeds},
         {"steps", c.steps},
         {"eval_prompts", c.eval_prompts},
         {"diagnostic_seeds", c.diagnostic_seeds},
         {"diversity_prompts", c.diversity_prompts},
         {"diversity_videos", c.diversity_videos},
         {"sensitivity_prompts", c.sensitivity_prompts},
         {"sensitivity_anchors", c.sensitivity_anchors},
         {"naive_prompts", c.naive_prompts}};
}

void from_json(const nlohmann::json& j, StudySpec& c) {
    const StudySpec d;
    c.seed = j.value("seed", d.seed);
    c.seeds = j.value("seeds", d.seeds);
    c.steps = j.value("steps", d.steps);
    c.eval_prompts = j.value("eval_prompts", d.eval_prompts);
    c.diagnostic_seeds = j.value("diagnostic_seeds", d.diagnostic_seeds);
    c.diversity_prompts = j.value("diversity_prompts", d.diversity_prompts);
    c.diversity_videos = j.value("diversity_videos", d.diversity_videos);
    c.sensitivity_prompts = j.value("sensitivity_prompts", d.sensitivity_prompts);
    c.sensitivity_anchors = j.value("sensitivity_anchors", d.sensitivity_anchors);
    c.naive_prompts = j.value("naive_prompts", d.naive_prompts);
}

void to_json(nlohmann::json& j, const Config& c) {
    nlohmann::json train = c.train;
    train["seed"] = c.train_seed;
    j = {{"data", c.data}, {"model", c.model}, {"train", train}, {"sample", c.sample}, {"study", c.study}};
}

void from_json(const nlohmann::json& j, Config& c) {
    static const std::set<std::string> sections = {"data", "model", "train", "sample", "study"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!sections.count(it.key())) throw ConfigError("unknown config section '" + it.key() + "'");
    c = Config{};
    if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) {
        c.train = j.at("train").get<TrainConfig>();
        c.train_seed = j.at("train").value("seed", std::uint64_t{0});
    }
    if (j.contains("sample")) c.sample = j.at("sample").get<SampleConfig>();
    if (j.contains("study")) c.study = j.at("study").get<StudySpec>();
}

Config config_from_json(const nlohmann::json& j) {
    Config c;
    try {
        c = j.get<Config>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------
std::string RunManifest::run_id() const {
    const nlohmann::json key = {
        {"command", command}, {"args", args}, {"seed", master_seed}, {"config", config}, {"code", kCodeVersion}};
    return sha256_hex(key.dump()).substr(0, 16);
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json outs = nlohmann::json::object();
    for (const auto& [name, path] : outputs) {
        nlohmann::json o = {{"path", path}};
        if (auto it = output_hashes.find(name); it != output_hashes.end()) o["sha256"] = it->second;
        outs[name] = o;
    }
    return {{"run_id", run_id()},   {"command", command}, {"args", args},   {"master_seed", master_seed},
            {"config", config},     {"code_version", kCodeVersion},       {"inputs", inputs}, {"outputs", outs},
            {"timing", "timing.json"}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.command = j.at("command").get<std::string>();
        m.args = j.at("args");
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.config = j.at("config");
        m.inputs = j.value("inputs", std::map<std::string, std::string>{});
        for (auto it = j.at("outputs").begin(); it != j.at("outputs").end(); ++it) {
            m.outputs[it.key()] = it.value().at("path").get<std::string>();
            if (it.value().contains("sha256")) m.output_hashes[it.key()] = it.value().at("sha256").get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& out_dir, RunManifest& manifest) {
    manifest.output_hashes.clear();
    for (const auto& [name, rel] : manifest.outputs) {
        const auto p = out_dir / rel;
        if (std::filesystem::exists(p)) manifest.output_hashes[name] = file_sha256(p);
    }
    write_text_file(out_dir / kRunManifestName, manifest.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("manifest not found: " + path.string());
    try {
        return RunManifest::from_json(nlohmann::json::parse(read_text_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
}

void write_timing(const std::filesystem::path& out_dir, const std::map<std::string, double>& seconds) {
    nlohmann::json j = seconds;
    write_text_file(out_dir / "timing.json", j.dump(2) + "\n");
}

std::string with_run_id(std::string csv, const std::string& run_id) {
    if (!csv.empty() && csv.back() != '\n') csv += '\n';
    return csv + "# run_id=" + run_id + "\n";
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SyntaxError*>(&e) ||
        dynamic_cast<const SemanticError*>(&e) || dynamic_cast<const LengthError*>(&e))
        return 2;
    if (dynamic_cast<const MissingArtifactError*>(&e)) return 3;
    if (dynamic_cast<const DivergenceError*>(&e)) return 4;
    return 1;
}

}  // namespace fvg
