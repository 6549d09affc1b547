// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flow-matching pretraining and anchor-grounding adapter finetuning.
//
// Time runs in the diffusion direction: t = 0 is clean data, t = 1 is noise.
// z_t = (1 - t) * data + t * eps and the regression target is data - eps.

#include "fvg/model.hpp"
#include "fvg/scene.hpp"

#include <functional>
#include <optional>

namespace fvg {

struct TrainConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double pretrain_lr = 3e-4;
    double finetune_lr = 1e-4;
    int batch = 16;
    int pretrain_steps = 20000;
    int finetune_steps = 6000;
    double grad_clip = 1.0;
    double cond_drop = 0.1;
    std::string anchor_loss = "full";  // "full" | "masked"
    int lora_rank = 8;
    double lora_alpha = 8.0;
    int log_every = 100;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

template <class S>
struct TrainingExample {
    std::vector<S> data;  // clean latent, kept for inspection
    std::vector<S> z_t;
    std::vector<double> t_vec;
    std::vector<S> target;
    std::vector<std::uint8_t> loss_mask;  // one entry per frame
    TokenSequence tokens;
    std::optional<int> anchor_index;
};

/// Draw order: t, eps, conditioning drop. `t` overrides the draw when given.
template <class S>
TrainingExample<S> make_pretrain_example(const VideoTensor& video, const TokenSequence& tokens, Rng& rng, double cond_drop,
                                         std::optional<double> t = std::nullopt);

/// Draw order: k, t, eps, conditioning drop.
template <class S>
TrainingExample<S> make_anchor_example(const VideoTensor& video, const TokenSequence& tokens, Rng& rng, double cond_drop,
                                       bool mask_anchor = false, std::optional<double> t = std::nullopt,
                                       std::optional<int> k = std::nullopt);

/// Mean squared error over the frames whose mask bit is set.
template <class S>
double flow_loss(std::span<const S> v_hat, std::span<const S> target, std::span<const std::uint8_t> loss_mask);

/// d(flow_loss)/d(v_hat).
template <class S>
std::vector<S> flow_loss_grad(std::span<const S> v_hat, std::span<const S> target, std::span<const std::uint8_t> loss_mask);

struct LogRow {
    int step = 0;
    double loss = 0.0;  // mean over the logging interval
    double lr = 0.0;
    double wallclock_s = 0.0;
};

struct TrainResult {
    std::vector<LogRow> log;
    double initial_smoothed_loss = 0.0;  // mean of the first logging interval
    double final_smoothed_loss = 0.0;    // mean of the last logging interval
    int steps = 0;
};

using ProgressFn = std::function<void(const LogRow&)>;

/// Fresh parameters trained with the flow loss on the training split.
template <class S>
ModelParams<S> pretrain_t2v(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg, std::uint64_t seed,
                            int jobs, TrainResult* result = nullptr, const ProgressFn& progress = {});

/// Adapters trained on anchor-injected examples; `base` is never modified.
template <class S>
LoraAdapters<S> finetune_anchor(const ModelParams<S>& base, const Dataset& dataset, const TrainConfig& cfg,
                                std::uint64_t seed, int jobs, TrainResult* result = nullptr, const ProgressFn& progress = {});

/// step,loss,lr. Deterministic for a fixed seed and config.
void write_train_log(const std::filesystem::path& path, const std::vector<LogRow>& log);
/// step,wallclock_s, kept apart so the loss log compares byte-equal across reruns.
void write_train_timing(const std::filesystem::path& path, const std::vector<LogRow>& log);

// ---------------------------------------------------------------------------
// Gradient verification.
// ---------------------------------------------------------------------------
struct GradCheckOptions {
    int max_coords = 2048;
    double step = 1e-5;
    /// Multiplies the analytic gradient of this coordinate index (within the
    /// sampled list) by `fault_factor`; used to test the checker itself.
    std::optional<int> fault_coord;
    double fault_factor = 2.0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<std::size_t> coords;
    std::vector<double> analytic;
    std::vector<double> numeric;
    std::vector<double> rel_error;
};

/// Compares the analytic gradient of the flow loss on one random anchor example
/// against central differences on a random subset of coordinates.
GradCheckResult grad_check(const ModelParams<double>& params, std::uint64_t probe_seed, const GradCheckOptions& opts = {});

}  // namespace fvg
