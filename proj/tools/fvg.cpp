// SPDX-License-Identifier: Apache-2.0
// fvg: data generation, training, sampling, evaluation and studies.

#include "fvg/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

std::string absolute(const std::string& p) {
    return p.empty() ? p : std::filesystem::absolute(p).lexically_normal().string();
}

void log_line(const std::string& s) { std::cerr << "[fvg] " << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Factorized video generation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    app.add_option("--config", config_path, "JSON config with sections data, model, train, sample, study");
    app.add_option("--seed", seed, "master seed of the command");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset");
    std::optional<int> n;
    gen->add_option("--n", n, "number of training samples");

    std::string data, ckpt, lora;
    std::optional<int> train_steps;
    auto* pre = app.add_subcommand("pretrain", "train the text-to-video base model");
    pre->add_option("--data", data, "dataset directory")->required();
    pre->add_option("--steps", train_steps, "optimizer steps");

    auto* fin = app.add_subcommand("finetune-anchor", "train anchor-grounding adapters");
    fin->add_option("--data", data, "dataset directory")->required();
    fin->add_option("--ckpt", ckpt, "base checkpoint")->required();
    fin->add_option("--steps", train_steps, "optimizer steps");

    auto* smp = app.add_subcommand("sample", "generate one video");
    std::string mode, prompt;
    std::optional<int> steps;
    std::optional<double> cfg_scale;
    std::uint64_t anchor_seed = 0;
    smp->add_option("--mode", mode, "t2v | i2v | i2v_text | factorized");
    smp->add_option("--ckpt", ckpt, "base checkpoint")->required();
    smp->add_option("--lora", lora, "adapter checkpoint (anchored modes)");
    smp->add_option("--prompt", prompt, "prompt text")->required();
    smp->add_option("--steps", steps, "Euler steps");
    smp->add_option("--cfg-scale", cfg_scale, "guidance scale");
    smp->add_option("--anchor-seed", anchor_seed, "jitter seed of the anchor image");

    auto* ev = app.add_subcommand("eval", "score sample directories");
    std::vector<std::string> inputs;
    ev->add_option("--input", inputs, "sample output directory")->required();

    auto* st = app.add_subcommand("study", "run an evaluation study");
    std::string study_name;
    st->add_option("name", study_name, "diagnostic | compbench | steps | diversity | anchor_sensitivity | naive_anchor | all")
        ->required();
    st->add_option("--ckpt", ckpt, "base checkpoint")->required();
    st->add_option("--lora", lora, "adapter checkpoint")->required();
    st->add_option("--data", data, "dataset directory")->required();

    auto* rp = app.add_subcommand("replay", "re-run a recorded command and compare its outputs");
    std::string manifest;
    rp->add_option("--manifest", manifest, "run_manifest.json of the original run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (out_dir.empty()) throw fvg::ConfigError("missing --out");
        out_dir = absolute(out_dir);

        if (rp->parsed()) {
            const auto r = fvg::replay_manifest(manifest, out_dir, jobs, log_line);
            if (r.identical()) {
                std::cout << "replay identical: " << r.rerun.output_hashes.size() << " outputs\n";
                return 0;
            }
            for (const auto& name : r.mismatched) std::cout << "replay mismatch: " << name << "\n";
            return 1;
        }

        fvg::CommandRequest rq;
        rq.config = config_path.empty() ? fvg::Config{} : fvg::load_config(config_path);
        rq.out = out_dir;
        rq.jobs = jobs;
        auto& cfg = rq.config;
        if (gen->parsed()) {
            rq.command = "gen-data";
            if (n) cfg.data.n = *n;
            if (seed) cfg.data.seed = *seed;
        } else if (pre->parsed() || fin->parsed()) {
            rq.command = pre->parsed() ? "pretrain" : "finetune-anchor";
            rq.args["data"] = absolute(data);
            if (fin->parsed()) rq.args["ckpt"] = absolute(ckpt);
            if (train_steps) (pre->parsed() ? cfg.train.pretrain_steps : cfg.train.finetune_steps) = *train_steps;
            if (seed) cfg.train_seed = *seed;
        } else if (smp->parsed()) {
            rq.command = "sample";
            rq.args = {{"ckpt", absolute(ckpt)}, {"lora", absolute(lora)}, {"prompt", prompt}, {"anchor_seed", anchor_seed}};
            if (!mode.empty()) cfg.sample.mode = fvg::parse_sample_mode(mode);
            if (steps) cfg.sample.steps = *steps;
            if (cfg_scale) cfg.sample.cfg_scale = *cfg_scale;
            if (seed) cfg.sample.seed = *seed;
        } else if (ev->parsed()) {
            rq.command = "eval";
            nlohmann::json list = nlohmann::json::array();
            for (const auto& i : inputs) list.push_back(absolute(i));
            rq.args["inputs"] = list;
        } else {
            rq.command = "study";
            rq.args = {{"name", study_name}, {"ckpt", absolute(ckpt)}, {"lora", absolute(lora)}, {"data", absolute(data)}};
            if (seed) cfg.study.seed = *seed;
        }
        const auto m = fvg::run_command(rq, log_line);
        std::cout << "run_id " << m.run_id() << " -> " << out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "fvg: error: " << e.what() << std::endl;
        return fvg::exit_code_for(e);
    }
}
