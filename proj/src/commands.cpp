// SPDX-License-Identifier: Apache-2.0
#include "fvg/commands.hpp"

#include "fvg/tensor_io.hpp"

#include <chrono>
#include <sstream>

namespace fvg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::filesystem::path arg_path(const nlohmann::json& args, const char* name) {
    if (!args.contains(name) || !args.at(name).is_string() || args.at(name).get<std::string>().empty())
        throw ConfigError(std::string("missing argument --") + name);
    return args.at(name).get<std::string>();
}

void require_file(const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::exists(p)) throw MissingArtifactError(std::string(what) + " not found: " + p.string());
}

void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

ProgressFn train_progress(const ProgressLog& log, const std::string& stage) {
    if (!log) return {};
    return [log, stage](const LogRow& r) {
        std::ostringstream s;
        s << stage << " step " << r.step << " loss " << r.loss << " (" << static_cast<int>(r.wallclock_s) << "s)";
        log(s.str());
    };
}

void run_gen_data(const CommandRequest& rq, RunManifest& m, std::map<std::string, double>& timing) {
    const auto t0 = Clock::now();
    gen_dataset(rq.config.data.n, rq.config.data.seed, rq.out);
    timing["gen_data"] = seconds_since(t0);
    m.outputs = {{"videos", "videos.fvt"}, {"prompts", "prompts.jsonl"}, {"dataset_manifest", "manifest.json"}};
}

void run_pretrain(const CommandRequest& rq, RunManifest& m, std::map<std::string, double>& timing,
                  const ProgressLog& log) {
    const auto data = arg_path(rq.args, "data");
    const Dataset ds = load_dataset(data);
    m.inputs["data"] = data.string();
    const auto t0 = Clock::now();
    TrainResult result;
    const auto params = pretrain_t2v<float>(ds, rq.config.model, rq.config.train, rq.config.train_seed, rq.jobs, &result,
                                            train_progress(log, "pretrain"));
    timing["pretrain"] = seconds_since(t0);
    save_base_checkpoint(rq.out / "base.fvgc", params,
                         {{"seed", rq.config.train_seed},
                          {"steps", result.steps},
                          {"initial_loss", result.initial_smoothed_loss},
                          {"final_loss", result.final_smoothed_loss}});
    write_train_log(rq.out / "pretrain_log.csv", result.log);
    write_train_timing(rq.out / "pretrain_timing.csv", result.log);
    m.outputs = {{"checkpoint", "base.fvgc"}, {"log", "pretrain_log.csv"}};
}

void run_finetune(const CommandRequest& rq, RunManifest& m, std::map<std::string, double>& timing,
                  const ProgressLog& log) {
    const auto data = arg_path(rq.args, "data");
    const auto ckpt = arg_path(rq.args, "ckpt");
    require_file(ckpt, "base checkpoint");
    const Dataset ds = load_dataset(data);
    const auto base = load_base_checkpoint<float>(ckpt);
    const auto base_hash = file_sha256(ckpt);
    m.inputs["data"] = data.string();
    m.inputs["ckpt"] = ckpt.string();
    const auto t0 = Clock::now();
    TrainResult result;
    const auto lora = finetune_anchor<float>(base, ds, rq.config.train, rq.config.train_seed, rq.jobs, &result,
                                             train_progress(log, "finetune"));
    timing["finetune"] = seconds_since(t0);
    save_lora_checkpoint(rq.out / "lora.fvgc", lora, base.config, base_hash,
                         {{"seed", rq.config.train_seed},
                          {"steps", result.steps},
                          {"initial_loss", result.initial_smoothed_loss},
                          {"final_loss", result.final_smoothed_loss}});
    write_train_log(rq.out / "finetune_log.csv", result.log);
    write_train_timing(rq.out / "finetune_timing.csv", result.log);
    m.outputs = {{"lora", "lora.fvgc"}, {"log", "finetune_log.csv"}};
}

void run_sample(const CommandRequest& rq, RunManifest& m, std::map<std::string, double>& timing) {
    const auto ckpt = arg_path(rq.args, "ckpt");
    const SampleConfig& cfg = rq.config.sample;
    const std::filesystem::path lora =
        is_anchored(cfg.mode) ? arg_path(rq.args, "lora") : std::filesystem::path(rq.args.value("lora", ""));
    if (!rq.args.contains("prompt")) throw ConfigError("missing argument --prompt");
    const std::string prompt = rq.args.at("prompt").get<std::string>();
    const std::uint64_t anchor_seed = rq.args.value("anchor_seed", std::uint64_t{0});
    const Generator gen(ckpt, lora);
    m.inputs["ckpt"] = ckpt.string();
    if (!lora.empty()) m.inputs["lora"] = lora.string();

    const auto t0 = Clock::now();
    const PromptAst ast = parse_prompt(prompt);
    std::optional<Frame> anchor;
    VideoTensor video;
    if (cfg.mode == SampleMode::t2v) {
        video = gen.sample_t2v(tokenize(ast), cfg);
    } else {
        anchor = render_frame(scene_from_ast(reduce_to_first_frame(ast), anchor_seed));
        video = gen.sample_anchored(*anchor, tokenize(ast), cfg);
    }
    timing["sample"] = seconds_since(t0);
    const nlohmann::json meta = {{"prompt", serialize_prompt(ast)},
                                 {"reduced_prompt", serialize_prompt(reduce_to_first_frame(ast))},
                                 {"prompt_id", rq.args.value("prompt_id", -1)},
                                 {"mode", std::string(to_string(cfg.mode))},
                                 {"steps", cfg.steps},
                                 {"cfg_scale", cfg.cfg_scale},
                                 {"seed", cfg.seed},
                                 {"anchor_seed", anchor ? nlohmann::json(anchor_seed) : nlohmann::json(nullptr)},
                                 {"base_hash", gen.base_hash()},
                                 {"lora_hash", gen.lora_hash()}};
    write_sample_outputs(rq.out, video, anchor ? &*anchor : nullptr, meta);
    m.outputs = {{"video", "video.fvt"}, {"meta", "meta.json"}};
    for (int f = 0; f < video.frames; ++f) m.outputs["frame_" + std::to_string(f)] = "frame_" + std::to_string(f) + ".ppm";
    if (anchor) m.outputs["anchor"] = "anchor.ppm";
}

void run_eval(const CommandRequest& rq, RunManifest& m) {
    if (!rq.args.contains("inputs") || rq.args.at("inputs").empty()) throw ConfigError("missing argument --input");
    std::ostringstream csv;
    csv << kScoreCsvHeader << '\n';
    int index = 0;
    for (const auto& item : rq.args.at("inputs")) {
        const std::filesystem::path dir = item.get<std::string>();
        require_file(dir / "meta.json", "sample metadata");
        require_file(dir / "video.fvt", "sample video");
        const auto meta = nlohmann::json::parse(read_text_file(dir / "meta.json"));
        const TensorFile tf = read_fvt(dir / "video.fvt");
        if (tf.shape.size() != 4 || tf.shape[1] != kImageSize || tf.shape[2] != kImageSize || tf.shape[3] != kChannels)
            throw FormatError("video.fvt in " + dir.string() + " is not a F x 32 x 32 x 3 video");
        VideoTensor video(static_cast<int>(tf.shape[0]));
        video.data = tf.values;
        const PromptAst ast = parse_prompt(meta.at("prompt").get<std::string>());
        const int prompt_id = meta.value("prompt_id", -1) >= 0 ? meta.value("prompt_id", -1) : index;
        csv << score_csv_row(prompt_id, meta.value("seed", std::uint64_t{0}), meta.value("mode", std::string("unknown")),
                             meta.value("steps", 0), score_video(video, ast))
            << '\n';
        m.inputs["input_" + std::to_string(index)] = dir.string();
        ++index;
    }
    write_text_file(rq.out / "scores.csv", with_run_id(csv.str(), m.run_id()));
    m.outputs = {{"scores", "scores.csv"}};
}

void run_studies(const CommandRequest& rq, RunManifest& m, std::map<std::string, double>& timing,
                 const ProgressLog& log) {
    if (!rq.args.contains("name")) throw ConfigError("missing study name");
    const std::string name = rq.args.at("name").get<std::string>();
    std::vector<std::string> names;
    if (name == "all") {
        names = study_names();
    } else if (std::find(study_names().begin(), study_names().end(), name) != study_names().end()) {
        names = {name};
    } else {
        throw ConfigError("unknown study '" + name + "'");
    }
    const auto ckpt = arg_path(rq.args, "ckpt");
    const auto lora = arg_path(rq.args, "lora");
    const auto data = arg_path(rq.args, "data");
    const Generator gen(ckpt, lora);
    const Dataset ds = load_dataset(data);
    m.inputs = {{"ckpt", ckpt.string()}, {"lora", lora.string()}, {"data", data.string()}};
    StudyContext ctx(gen, eval_prompt_set(ds, rq.config.study.eval_prompts), rq.config.study, rq.config.sample, rq.jobs,
                     log);
    const std::string run_id = m.run_id();
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& n : names) {
        if (log) log("study " + n);
        const auto t0 = Clock::now();
        const StudyOutput out = run_study(n, ctx);
        timing[n] = seconds_since(t0);
        for (const auto& [file, body] : out.files) {
            write_text_file(rq.out / file, with_run_id(body, run_id));
            m.outputs[file] = file;
        }
        for (const auto& [file, body] : out.timing_files) write_text_file(rq.out / file, with_run_id(body, run_id));
        for (const auto& [key, secs] : out.timing) timing[n + "." + key] = secs;
        summary[n] = out.summary;
    }
    write_text_file(rq.out / "summary.json", summary.dump(2) + "\n");
    m.outputs["summary"] = "summary.json";
}

}  // namespace

std::uint64_t command_seed(const std::string& command, const Config& config) {
    if (command == "gen-data") return config.data.seed;
    if (command == "pretrain" || command == "finetune-anchor") return config.train_seed;
    if (command == "sample") return config.sample.seed;
    if (command == "study") return config.study.seed;
    if (command == "eval") return 0;
    throw ConfigError("unknown command '" + command + "'");
}

RunManifest run_command(const CommandRequest& rq, const ProgressLog& log) {
    rq.config.validate();
    RunManifest m;
    m.command = rq.command;
    m.args = rq.args;
    m.master_seed = command_seed(rq.command, rq.config);
    m.config = rq.config;
    make_dir(rq.out);
    std::map<std::string, double> timing;
    const auto t0 = Clock::now();
    if (rq.command == "gen-data") {
        run_gen_data(rq, m, timing);
    } else if (rq.command == "pretrain") {
        run_pretrain(rq, m, timing, log);
    } else if (rq.command == "finetune-anchor") {
        run_finetune(rq, m, timing, log);
    } else if (rq.command == "sample") {
        run_sample(rq, m, timing);
    } else if (rq.command == "eval") {
        run_eval(rq, m);
    } else {
        run_studies(rq, m, timing, log);
    }
    timing["total"] = seconds_since(t0);
    write_manifest(rq.out, m);
    write_timing(rq.out, timing);
    return m;
}

ReplayResult replay_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out, int jobs,
                             const ProgressLog& log) {
    ReplayResult r;
    r.original = read_manifest(manifest_path);
    CommandRequest rq;
    rq.command = r.original.command;
    rq.args = r.original.args;
    rq.config = config_from_json(r.original.config);
    rq.out = out;
    rq.jobs = jobs;
    r.rerun = run_command(rq, log);
    for (const auto& [name, hash] : r.original.output_hashes) {
        auto it = r.rerun.output_hashes.find(name);
        if (it == r.rerun.output_hashes.end() || it->second != hash) r.mismatched.push_back(name);
    }
    if (r.rerun.run_id() != r.original.run_id()) r.mismatched.push_back("run_id");
    return r;
}

}  // namespace fvg
