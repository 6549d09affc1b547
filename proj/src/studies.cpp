// SPDX-License-Identifier: Apache-2.0
#include "fvg/studies.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace fvg {

namespace {

constexpr std::uint64_t kSamplerStream = 0x53414D50;
constexpr std::uint64_t kAnchorStream = 0x414E4348;
constexpr std::uint64_t kRephraseStream = 0x52455048;
constexpr int kAnchorAttempts = 64;

using Clock = std::chrono::steady_clock;

std::string fmt(double v) { return format_double(v); }

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string token_key(const TokenSequence& t) {
    std::string out;
    for (int i = 0; i < kTextLen; ++i) {
        if (!t.mask[static_cast<std::size_t>(i)]) continue;
        out += std::to_string(t.ids[static_cast<std::size_t>(i)]);
        out += '.';
    }
    return out;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<VideoTensor> collect(const std::vector<std::shared_ptr<const GeneratedVideo>>& videos, std::size_t begin,
                                 std::size_t end) {
    std::vector<VideoTensor> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(videos[i]->video);
    return out;
}

// Fraction of turning objects whose pre-turn colour, shape and cell are all
// found in the decoded frame. 1.0 for a faithful anchor.
std::optional<double> turn_color_match(const Frame& anchor, const PromptAst& ast) {
    const auto decoded = decode_scene(anchor);
    int turning = 0, matched = 0;
    for (const auto& obj : ast.objects) {
        const bool turns = std::any_of(obj.motions.begin(), obj.motions.end(),
                                       [](const Motion& m) { return std::holds_alternative<Turn>(m); });
        if (!turns) continue;
        ++turning;
        for (const auto& d : decoded.objects)
            if (d.color == obj.color && d.shape == obj.shape && d.cell == obj.cell) {
                ++matched;
                break;
            }
    }
    if (turning == 0) return std::nullopt;
    return static_cast<double>(matched) / turning;
}

struct ModeRows {
    std::string label;
    std::vector<VideoRequest> requests;
    std::vector<std::uint64_t> seeds;
};

// Scores requests, appends per-video CSV rows, returns the aggregate.
ScoreReport score_rows(StudyContext& ctx, const ModeRows& rows, std::ostringstream& csv) {
    const auto videos = ctx.generate(rows.requests);
    const auto scores = ctx.score(rows.requests, videos);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& rq = rows.requests[i];
        csv << score_csv_row(ctx.prompts()[rq.prompt].id, rows.seeds[i], rows.label, rq.steps, scores[i]) << '\n';
    }
    return aggregate_scores(scores);
}

nlohmann::json report_json(const ScoreReport& r) {
    return {{"composition", r.composition},   {"dynamic_attribute", r.dynamic_attribute},
            {"motion_binding", r.motion_binding}, {"motion_order", r.motion_order},
            {"numeracy", r.numeracy},         {"overall", r.overall},
            {"samples", r.samples}};
}

std::vector<std::pair<std::string, double>> report_categories(const ScoreReport& r) {
    return {{"composition", r.composition},       {"dynamic_attribute", r.dynamic_attribute},
            {"motion_binding", r.motion_binding}, {"motion_order", r.motion_order},
            {"numeracy", r.numeracy},             {"overall", r.overall}};
}

ModeRows compbench_rows(StudyContext& ctx, SampleMode mode, int steps) {
    ModeRows rows;
    rows.label = std::string(to_string(mode));
    for (std::size_t p = 0; p < ctx.prompts().size(); ++p)
        for (std::uint64_t s : ctx.spec().seeds) {
            const auto ss = ctx.sampler_seed(p, s);
            rows.requests.push_back(mode == SampleMode::t2v
                                        ? ctx.t2v(p, ss, steps)
                                        : ctx.anchored(mode, p, ss, ctx.anchor_seed(p, s), steps));
            rows.seeds.push_back(s);
        }
    return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------
std::vector<EvalPrompt> eval_prompt_set(const Dataset& dataset, int count) {
    std::vector<EvalPrompt> out;
    for (const auto& e : dataset.index.entries) {
        if (e.split != "eval") continue;
        if (static_cast<int>(out.size()) >= count) break;
        out.push_back({e.id, e.prompt, parse_prompt(e.prompt)});
    }
    if (static_cast<int>(out.size()) < count)
        throw ConfigError("dataset holds " + std::to_string(out.size()) + " held-out prompts, study needs " +
                          std::to_string(count));
    return out;
}

std::string VideoRequest::key() const {
    std::ostringstream k;
    const bool text_anchored = mode == SampleMode::i2v_text || mode == SampleMode::factorized;
    k << (mode == SampleMode::t2v ? "t2v" : mode == SampleMode::i2v ? "i2v" : "anchored_text") << '|' << prompt << '|'
      << (mode == SampleMode::i2v ? std::string() : token_key(tokens)) << '|' << sampler_seed << '|'
      << static_cast<int>(anchor) << '|' << (anchor == AnchorSource::none ? 0 : anchor_seed) << '|' << steps << '|'
      << (text_anchored || mode == SampleMode::t2v ? cfg_scale : 1.0);
    return k.str();
}

std::string score_csv_row(int prompt_id, std::uint64_t seed, std::string_view mode, int steps, const CategoryScores& s) {
    std::ostringstream row;
    row << prompt_id << ',' << seed << ',' << mode << ',' << steps << ',' << opt(s.composition) << ','
        << opt(s.dynamic_attribute) << ',' << opt(s.motion_binding) << ',' << opt(s.motion_order) << ','
        << opt(s.numeracy) << ',' << fmt(s.overall());
    return row.str();
}

double population_std(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

double mean_category_std(const std::vector<CategoryScores>& runs) {
    using Field = std::optional<double> CategoryScores::*;
    static constexpr std::array<Field, 5> fields = {&CategoryScores::composition, &CategoryScores::dynamic_attribute,
                                                    &CategoryScores::motion_binding, &CategoryScores::motion_order,
                                                    &CategoryScores::numeracy};
    std::vector<double> stds;
    for (Field f : fields) {
        std::vector<double> vals;
        for (const auto& r : runs)
            if (r.*f) vals.push_back(*(r.*f));
        if (!vals.empty() && vals.size() == runs.size()) stds.push_back(population_std(vals));
    }
    return mean(stds);
}

std::string percent_change(double from, double to) {
    if (from == 0.0) return to == 0.0 ? "+0.00%" : "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.2f%%", 100.0 * (to - from) / std::abs(from));
    return buf;
}

// ---------------------------------------------------------------------------
// StudyContext
// ---------------------------------------------------------------------------
StudyContext::StudyContext(const Generator& gen, std::vector<EvalPrompt> prompts, StudySpec spec, SampleConfig sample,
                           int jobs, ProgressLog log)
    : gen_(gen),
      prompts_(std::move(prompts)),
      spec_(std::move(spec)),
      sample_(sample),
      jobs_(std::max(1, jobs)),
      log_(std::move(log)) {
    spec_.validate();
    sample_.validate();
}

std::uint64_t StudyContext::sampler_seed(std::size_t prompt, std::uint64_t s) const {
    return derive_seed(spec_.seed, {kSamplerStream, static_cast<std::uint64_t>(prompts_.at(prompt).id), s});
}

std::uint64_t StudyContext::anchor_seed(std::size_t prompt, std::uint64_t s) const {
    const auto& p = prompts_.at(prompt);
    for (int attempt = 0; attempt < kAnchorAttempts; ++attempt) {
        const auto seed = derive_seed(spec_.seed, {kAnchorStream, static_cast<std::uint64_t>(p.id), s,
                                                   static_cast<std::uint64_t>(attempt)});
        try {
            (void)simulate_scenes(p.ast, seed);
            return seed;
        } catch (const GeometryError&) {
        }
    }
    throw GeometryError("no valid jitter found for prompt " + std::to_string(p.id));
}

Frame StudyContext::anchor_frame(std::size_t prompt, AnchorSource source, std::uint64_t anchor_seed) const {
    const auto& ast = prompts_.at(prompt).ast;
    switch (source) {
        case AnchorSource::reduced:
            return render_frame(scene_from_ast(reduce_to_first_frame(ast), anchor_seed));
        case AnchorSource::final_state:
            return render_frame(final_state_scene(ast, anchor_seed));
        case AnchorSource::none:
            break;
    }
    throw Error("request has no anchor");
}

VideoTensor StudyContext::ground_truth(std::size_t prompt, std::uint64_t anchor_seed) const {
    return simulate(prompts_.at(prompt).ast, anchor_seed);
}

VideoRequest StudyContext::t2v(std::size_t prompt, std::uint64_t sampler_seed, int steps) const {
    VideoRequest r;
    r.mode = SampleMode::t2v;
    r.prompt = prompt;
    r.tokens = tokenize(prompts_.at(prompt).ast);
    r.sampler_seed = sampler_seed;
    r.steps = steps;
    r.cfg_scale = sample_.cfg_scale;
    return r;
}

VideoRequest StudyContext::anchored(SampleMode mode, std::size_t prompt, std::uint64_t sampler_seed,
                                    std::uint64_t anchor_seed, int steps, AnchorSource source) const {
    if (!is_anchored(mode)) throw ConfigError("mode t2v takes no anchor");
    VideoRequest r;
    r.mode = mode;
    r.prompt = prompt;
    r.tokens = mode == SampleMode::i2v ? unconditional_tokens() : tokenize(prompts_.at(prompt).ast);
    r.sampler_seed = sampler_seed;
    r.anchor = source;
    r.anchor_seed = anchor_seed;
    r.steps = steps;
    r.cfg_scale = sample_.cfg_scale;
    return r;
}

std::vector<std::shared_ptr<const GeneratedVideo>> StudyContext::generate(const std::vector<VideoRequest>& requests) {
    std::vector<std::string> keys;
    keys.reserve(requests.size());
    std::vector<std::size_t> todo;
    std::map<std::string, std::size_t> pending;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        keys.push_back(requests[i].key());
        if (!cache_.count(keys.back()) && !pending.count(keys.back())) {
            pending[keys.back()] = i;
            todo.push_back(i);
        }
    }
    if (!todo.empty()) {
        log("generating " + std::to_string(todo.size()) + " videos (" + std::to_string(requests.size() - todo.size()) +
            " cached)");
        std::vector<std::shared_ptr<GeneratedVideo>> made(todo.size());
        std::atomic<std::size_t> done{0};
        std::mutex log_mu;
        parallel_for(todo.size(), jobs_, [&](std::size_t j) {
            const auto& rq = requests[todo[j]];
            auto out = std::make_shared<GeneratedVideo>();
            SampleConfig cfg;
            cfg.steps = rq.steps;
            cfg.cfg_scale = rq.cfg_scale;
            cfg.mode = rq.mode;
            cfg.seed = rq.sampler_seed;
            const auto t0 = Clock::now();
            if (rq.mode == SampleMode::t2v) {
                out->video = gen_.sample_t2v(rq.tokens, cfg);
            } else {
                out->anchor = anchor_frame(rq.prompt, rq.anchor, rq.anchor_seed);
                out->video = gen_.sample_anchored(*out->anchor, rq.tokens, cfg);
            }
            out->seconds = std::chrono::duration<double>(Clock::now() - t0).count();
            made[j] = std::move(out);
            const std::size_t n = ++done;
            if (log_ && (n % 64 == 0 || n == todo.size())) {
                std::lock_guard lock(log_mu);
                log("  " + std::to_string(n) + "/" + std::to_string(todo.size()));
            }
        });
        for (std::size_t j = 0; j < todo.size(); ++j) cache_[keys[todo[j]]] = std::move(made[j]);
    }
    std::vector<std::shared_ptr<const GeneratedVideo>> out;
    out.reserve(requests.size());
    for (const auto& k : keys) out.push_back(cache_.at(k));
    return out;
}

std::vector<CategoryScores> StudyContext::score(const std::vector<VideoRequest>& requests,
                                                const std::vector<std::shared_ptr<const GeneratedVideo>>& videos) const {
    std::vector<CategoryScores> out(requests.size());
    parallel_for(requests.size(), jobs_, [&](std::size_t i) {
        out[i] = score_video(videos[i]->video, prompts_[requests[i].prompt].ast);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------
StudyOutput run_diagnostic(StudyContext& ctx) {
    StudyOutput out{"diagnostic", {}, {}, {}, {}};
    const int steps = ctx.sample().steps;
    const auto n_seeds = static_cast<std::size_t>(ctx.spec().diagnostic_seeds);

    std::vector<VideoTensor> reference;
    std::vector<VideoRequest> t2v, i2v, i2v_text;
    for (std::size_t p = 0; p < ctx.prompts().size(); ++p)
        for (std::size_t si = 0; si < n_seeds; ++si) {
            const auto s = ctx.spec().seeds[si];
            const auto as = ctx.anchor_seed(p, s);
            const auto ss = ctx.sampler_seed(p, s);
            reference.push_back(ctx.ground_truth(p, as));
            t2v.push_back(ctx.t2v(p, ss, steps));
            i2v.push_back(ctx.anchored(SampleMode::i2v, p, ss, as, steps));
            i2v_text.push_back(ctx.anchored(SampleMode::i2v_text, p, ss, as, steps));
        }
    const auto ref_frame0 = frame0_features(reference);
    const auto ref_video = video_features(reference);

    std::ostringstream csv;
    csv << "mode,fid_frame0,fvd_video,n\n";
    for (const auto& [mode, reqs] : {std::pair{SampleMode::t2v, &t2v}, std::pair{SampleMode::i2v, &i2v},
                                     std::pair{SampleMode::i2v_text, &i2v_text}}) {
        const auto made = ctx.generate(*reqs);
        const auto videos = collect(made, 0, made.size());
        const double fid = frechet_distance(frame0_features(videos), ref_frame0);
        const double fvd = frechet_distance(video_features(videos), ref_video);
        csv << to_string(mode) << ',' << fmt(fid) << ',' << fmt(fvd) << ',' << videos.size() << '\n';
        out.summary[std::string(to_string(mode))] = {{"fid_frame0", fid}, {"fvd_video", fvd}, {"n", videos.size()}};
    }
    out.files["diagnostic.csv"] = csv.str();
    return out;
}

StudyOutput run_compbench(StudyContext& ctx) {
    StudyOutput out{"compbench", {}, {}, {}, {}};
    const int steps = ctx.sample().steps;
    std::ostringstream rows;
    rows << kScoreCsvHeader << '\n';

    // Ground-truth videos through the same probe: the sanity mode.
    std::vector<CategoryScores> gt_scores;
    for (std::size_t p = 0; p < ctx.prompts().size(); ++p)
        for (std::uint64_t s : ctx.spec().seeds) {
            const auto sc = score_video(ctx.ground_truth(p, ctx.anchor_seed(p, s)), ctx.prompts()[p].ast);
            rows << score_csv_row(ctx.prompts()[p].id, s, "ground_truth", 0, sc) << '\n';
            gt_scores.push_back(sc);
        }
    const ScoreReport gt = aggregate_scores(gt_scores);
    const ScoreReport t2v = score_rows(ctx, compbench_rows(ctx, SampleMode::t2v, steps), rows);
    const ScoreReport fac = score_rows(ctx, compbench_rows(ctx, SampleMode::factorized, steps), rows);

    std::ostringstream summary;
    summary << "category,ground_truth,t2v,factorized,change\n";
    const auto g = report_categories(gt), a = report_categories(t2v), b = report_categories(fac);
    for (std::size_t i = 0; i < a.size(); ++i)
        summary << a[i].first << ',' << fmt(g[i].second) << ',' << fmt(a[i].second) << ',' << fmt(b[i].second) << ','
                << percent_change(a[i].second, b[i].second) << '\n';
    out.files["compbench_scores.csv"] = rows.str();
    out.files["compbench.csv"] = summary.str();
    out.summary = {{"ground_truth", report_json(gt)}, {"t2v", report_json(t2v)}, {"factorized", report_json(fac)}};
    return out;
}

StudyOutput run_steps_study(StudyContext& ctx) {
    StudyOutput out{"steps", {}, {}, {}, {}};
    std::ostringstream rows, summary, timing;
    rows << kScoreCsvHeader << '\n';
    summary << "mode,steps,composition,dynamic_attribute,motion_binding,motion_order,numeracy,overall,change_vs_"
            << ctx.spec().steps.front() << "\n";
    timing << "mode,steps,seconds_per_video\n";
    for (SampleMode mode : {SampleMode::t2v, SampleMode::factorized}) {
        const std::string label(to_string(mode));
        double baseline = 0.0;
        for (std::size_t i = 0; i < ctx.spec().steps.size(); ++i) {
            const int steps = ctx.spec().steps[i];
            const ModeRows mr = compbench_rows(ctx, mode, steps);
            const ScoreReport r = score_rows(ctx, mr, rows);
            if (i == 0) baseline = r.overall;
            summary << label << ',' << steps;
            for (const auto& [name, v] : report_categories(r)) summary << ',' << fmt(v);
            summary << ',' << percent_change(baseline, r.overall) << '\n';

            std::vector<double> secs;
            for (const auto& v : ctx.generate(mr.requests)) secs.push_back(v->seconds);
            timing << label << ',' << steps << ',' << fmt(mean(secs)) << '\n';
            out.summary[label][std::to_string(steps)] = report_json(r);
            out.timing[label + "." + std::to_string(steps) + ".seconds_per_video"] = mean(secs);
        }
    }
    out.files["steps_scores.csv"] = rows.str();
    out.files["steps.csv"] = summary.str();
    out.timing_files["steps_timing.csv"] = timing.str();
    return out;
}

StudyOutput run_diversity_study(StudyContext& ctx) {
    StudyOutput out{"diversity", {}, {}, {}, {}};
    const int steps = ctx.sample().steps;
    const auto n_prompts = static_cast<std::size_t>(ctx.spec().diversity_prompts);
    const auto n_videos = static_cast<std::uint64_t>(ctx.spec().diversity_videos);
    static const std::array<std::string, 3> settings = {"seeds", "single_image", "rephrasing"};

    std::array<std::vector<VideoRequest>, 3> reqs;
    for (std::size_t p = 0; p < n_prompts; ++p) {
        const auto fixed_anchor = ctx.anchor_seed(p, 0);
        for (std::uint64_t i = 0; i < n_videos; ++i) {
            const auto ss = ctx.sampler_seed(p, i);
            reqs[0].push_back(ctx.anchored(SampleMode::factorized, p, ss, ctx.anchor_seed(p, i), steps));
            reqs[1].push_back(ctx.anchored(SampleMode::factorized, p, ss, fixed_anchor, steps));
            VideoRequest r = ctx.t2v(p, ss, steps);
            const auto text = rephrase(ctx.prompts()[p].ast,
                                       derive_seed(ctx.spec().seed, {kRephraseStream,
                                                                     static_cast<std::uint64_t>(ctx.prompts()[p].id), i}));
            r.tokens = tokenize(text);
            reqs[2].push_back(r);
        }
    }
    std::array<std::vector<double>, 3> per_prompt;
    for (std::size_t k = 0; k < settings.size(); ++k) {
        const auto made = ctx.generate(reqs[k]);
        for (std::size_t p = 0; p < n_prompts; ++p)
            per_prompt[k].push_back(diversity(collect(made, p * n_videos, (p + 1) * n_videos)));
    }
    std::ostringstream csv;
    csv << "prompt_id,setting,diversity\n";
    for (std::size_t p = 0; p < n_prompts; ++p)
        for (std::size_t k = 0; k < settings.size(); ++k)
            csv << ctx.prompts()[p].id << ',' << settings[k] << ',' << fmt(per_prompt[k][p]) << '\n';
    for (std::size_t k = 0; k < settings.size(); ++k) {
        csv << "mean," << settings[k] << ',' << fmt(mean(per_prompt[k])) << '\n';
        out.summary[settings[k]] = mean(per_prompt[k]);
    }
    out.files["diversity.csv"] = csv.str();
    return out;
}

StudyOutput run_anchor_sensitivity(StudyContext& ctx) {
    StudyOutput out{"anchor_sensitivity", {}, {}, {}, {}};
    const int steps = ctx.sample().steps;
    const auto n_prompts = static_cast<std::size_t>(ctx.spec().sensitivity_prompts);
    const auto runs = static_cast<std::size_t>(ctx.spec().sensitivity_anchors);
    if (runs > ctx.spec().seeds.size())
        throw ConfigError("study field 'sensitivity_anchors' exceeds the number of seeds");

    std::vector<VideoRequest> anchors, seeds;
    for (std::size_t p = 0; p < n_prompts; ++p) {
        const auto fixed_sampler = ctx.sampler_seed(p, ctx.spec().seeds[0]);
        for (std::size_t i = 0; i < runs; ++i) {
            const auto s = ctx.spec().seeds[i];
            anchors.push_back(ctx.anchored(SampleMode::factorized, p, fixed_sampler, ctx.anchor_seed(p, s), steps));
            seeds.push_back(ctx.t2v(p, ctx.sampler_seed(p, s), steps));
        }
    }
    const auto a_scores = ctx.score(anchors, ctx.generate(anchors));
    const auto s_scores = ctx.score(seeds, ctx.generate(seeds));

    std::ostringstream csv;
    csv << "prompt_id,anchors_std,seeds_std,ratio\n";
    std::vector<double> a_all, s_all;
    for (std::size_t p = 0; p < n_prompts; ++p) {
        const auto slice = [&](const std::vector<CategoryScores>& v) {
            return std::vector<CategoryScores>(v.begin() + static_cast<std::ptrdiff_t>(p * runs),
                                               v.begin() + static_cast<std::ptrdiff_t>((p + 1) * runs));
        };
        const double a = mean_category_std(slice(a_scores));
        const double s = mean_category_std(slice(s_scores));
        a_all.push_back(a);
        s_all.push_back(s);
        csv << ctx.prompts()[p].id << ',' << fmt(a) << ',' << fmt(s) << ',' << fmt(s / std::max(a, 1e-9)) << '\n';
    }
    const double a = mean(a_all), s = mean(s_all);
    csv << "mean," << fmt(a) << ',' << fmt(s) << ',' << fmt(s / std::max(a, 1e-9)) << '\n';
    out.files["anchor_sensitivity.csv"] = csv.str();
    out.summary = {{"anchors_std", a}, {"seeds_std", s}, {"ratio", s / std::max(a, 1e-9)}};
    return out;
}

StudyOutput run_naive_anchor(StudyContext& ctx) {
    StudyOutput out{"naive_anchor", {}, {}, {}, {}};
    const int steps = ctx.sample().steps;
    const auto n_prompts = static_cast<std::size_t>(ctx.spec().naive_prompts);

    std::ostringstream rows, csv;
    rows << kScoreCsvHeader << '\n';
    csv << "setting,composition,dynamic_attribute,turn_color_match,n\n";
    for (const auto& [label, source] :
         {std::pair{std::string("reduced"), AnchorSource::reduced}, std::pair{std::string("naive"), AnchorSource::final_state}}) {
        ModeRows mr;
        mr.label = label;
        for (std::size_t p = 0; p < n_prompts; ++p)
            for (std::uint64_t s : ctx.spec().seeds) {
                mr.requests.push_back(ctx.anchored(SampleMode::factorized, p, ctx.sampler_seed(p, s),
                                                   ctx.anchor_seed(p, s), steps, source));
                mr.seeds.push_back(s);
            }
        const ScoreReport r = score_rows(ctx, mr, rows);
        std::vector<double> matches;
        const auto made = ctx.generate(mr.requests);
        for (std::size_t i = 0; i < made.size(); ++i)
            if (auto m = turn_color_match(*made[i]->anchor, ctx.prompts()[mr.requests[i].prompt].ast)) matches.push_back(*m);
        csv << label << ',' << fmt(r.composition) << ',' << fmt(r.dynamic_attribute) << ',' << fmt(mean(matches)) << ','
            << r.samples << '\n';
        out.summary[label] = {{"composition", r.composition},
                              {"dynamic_attribute", r.dynamic_attribute},
                              {"turn_color_match", mean(matches)},
                              {"turn_samples", matches.size()},
                              {"samples", r.samples}};
    }
    out.files["naive_anchor_scores.csv"] = rows.str();
    out.files["naive_anchor.csv"] = csv.str();
    return out;
}

StudyOutput run_study(const std::string& name, StudyContext& ctx) {
    if (name == "diagnostic") return run_diagnostic(ctx);
    if (name == "compbench") return run_compbench(ctx);
    if (name == "steps") return run_steps_study(ctx);
    if (name == "diversity") return run_diversity_study(ctx);
    if (name == "anchor_sensitivity") return run_anchor_sensitivity(ctx);
    if (name == "naive_anchor") return run_naive_anchor(ctx);
    throw ConfigError("unknown study '" + name + "'");
}

}  // namespace fvg
