// SPDX-License-Identifier: Apache-2.0
#pragma once

// The six evaluation studies. Every generated video is a pure function of its
// request, so requests are deduplicated through a cache shared by all studies
// of one context and generated in parallel in any order.

#include "fvg/harness.hpp"
#include "fvg/metrics.hpp"

#include <memory>
#include <mutex>

namespace fvg {

struct EvalPrompt {
    int id = 0;  // dataset id
    std::string text;
    PromptAst ast;
};

/// The first `count` held-out prompts in dataset order.
std::vector<EvalPrompt> eval_prompt_set(const Dataset& dataset, int count);

enum class AnchorSource { none, reduced, final_state };

struct VideoRequest {
    SampleMode mode = SampleMode::t2v;
    std::size_t prompt = 0;  // index into the context's prompt list
    TokenSequence tokens;    // conditioning text (ignored by i2v)
    std::uint64_t sampler_seed = 0;
    AnchorSource anchor = AnchorSource::none;
    std::uint64_t anchor_seed = 0;
    int steps = 50;
    double cfg_scale = 2.0;

    /// i2v_text and factorized with a reduced anchor are the same computation and share a key.
    std::string key() const;
};

struct GeneratedVideo {
    VideoTensor video;
    std::optional<Frame> anchor;
    double seconds = 0.0;
};

using ProgressLog = std::function<void(const std::string&)>;

class StudyContext {
public:
    StudyContext(const Generator& gen, std::vector<EvalPrompt> prompts, StudySpec spec, SampleConfig sample, int jobs,
                 ProgressLog log = {});

    const std::vector<EvalPrompt>& prompts() const { return prompts_; }
    const StudySpec& spec() const { return spec_; }
    const SampleConfig& sample() const { return sample_; }
    int jobs() const { return jobs_; }

    std::uint64_t sampler_seed(std::size_t prompt, std::uint64_t s) const;
    /// First jitter seed on the stream (prompt, s) whose full dynamics stay valid.
    std::uint64_t anchor_seed(std::size_t prompt, std::uint64_t s) const;

    Frame anchor_frame(std::size_t prompt, AnchorSource source, std::uint64_t anchor_seed) const;
    VideoTensor ground_truth(std::size_t prompt, std::uint64_t anchor_seed) const;

    VideoRequest t2v(std::size_t prompt, std::uint64_t sampler_seed, int steps) const;
    VideoRequest anchored(SampleMode mode, std::size_t prompt, std::uint64_t sampler_seed, std::uint64_t anchor_seed,
                          int steps, AnchorSource source = AnchorSource::reduced) const;

    /// Generates what is not cached yet; results line up with requests.
    std::vector<std::shared_ptr<const GeneratedVideo>> generate(const std::vector<VideoRequest>& requests);

    /// Scores in parallel; rows line up with requests.
    std::vector<CategoryScores> score(const std::vector<VideoRequest>& requests,
                                      const std::vector<std::shared_ptr<const GeneratedVideo>>& videos) const;

    std::size_t cache_size() const { return cache_.size(); }
    void log(const std::string& message) const {
        if (log_) log_(message);
    }

private:
    const Generator& gen_;
    std::vector<EvalPrompt> prompts_;
    StudySpec spec_;
    SampleConfig sample_;
    int jobs_;
    ProgressLog log_;
    std::map<std::string, std::shared_ptr<const GeneratedVideo>> cache_;
};

/// CSV bodies (without the run-id trailer) keyed by file name, plus a summary
/// of the headline numbers. Timing files hold wall-clock data and are kept out
/// of determinism comparisons.
struct StudyOutput {
    std::string name;
    std::map<std::string, std::string> files;
    std::map<std::string, std::string> timing_files;
    nlohmann::json summary = nlohmann::json::object();
    std::map<std::string, double> timing;  // wall-clock figures, never hashed
};

inline const std::vector<std::string>& study_names() {
    static const std::vector<std::string> names = {"diagnostic", "compbench", "steps",
                                                   "diversity",  "anchor_sensitivity", "naive_anchor"};
    return names;
}

StudyOutput run_diagnostic(StudyContext& ctx);
StudyOutput run_compbench(StudyContext& ctx);
StudyOutput run_steps_study(StudyContext& ctx);
StudyOutput run_diversity_study(StudyContext& ctx);
StudyOutput run_anchor_sensitivity(StudyContext& ctx);
StudyOutput run_naive_anchor(StudyContext& ctx);

/// Dispatches by name; throws ConfigError for unknown names.
StudyOutput run_study(const std::string& name, StudyContext& ctx);

/// Header row of the per-video score CSV.
inline constexpr const char* kScoreCsvHeader =
    "prompt_id,seed,mode,steps,composition,dynamic_attribute,motion_binding,motion_order,numeracy,overall";

/// One per-video row; absent categories are left empty.
std::string score_csv_row(int prompt_id, std::uint64_t seed, std::string_view mode, int steps, const CategoryScores& s);

/// Population standard deviation.
double population_std(const std::vector<double>& values);

/// Mean over the categories that apply of the per-category std across runs.
double mean_category_std(const std::vector<CategoryScores>& runs);

/// Signed percent change formatted like "+41.98%".
std::string percent_change(double from, double to);

}  // namespace fvg
