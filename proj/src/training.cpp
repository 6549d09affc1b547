// SPDX-License-Identifier: Apache-2.0
#include "fvg/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace fvg {

namespace {
constexpr std::uint64_t kInitStream = 0x696E6974;
constexpr std::uint64_t kLoraStream = 0x6C6F7261;
constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kPretrainStream = 0x70726574;
constexpr std::uint64_t kFinetuneStream = 0x66696E65;
constexpr std::uint64_t kProbeStream = 0x70726F62;
}  // namespace

void TrainConfig::validate() const {
    auto positive = [](double v, const char* field) {
        if (!(v > 0)) throw ConfigError(std::string("train field '") + field + "' must be positive");
    };
    positive(pretrain_lr, "pretrain_lr");
    positive(finetune_lr, "finetune_lr");
    positive(batch, "batch");
    positive(adam_eps, "adam_eps");
    positive(grad_clip, "grad_clip");
    positive(lora_rank, "lora_rank");
    positive(lora_alpha, "lora_alpha");
    positive(log_every, "log_every");
    if (pretrain_steps < 0) throw ConfigError("train field 'pretrain_steps' must be non-negative");
    if (finetune_steps < 0) throw ConfigError("train field 'finetune_steps' must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("train field 'beta1' must be in [0,1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("train field 'beta2' must be in [0,1)");
    if (!(cond_drop >= 0 && cond_drop < 1)) throw ConfigError("train field 'cond_drop' must be in [0,1)");
    if (anchor_loss != "full" && anchor_loss != "masked") throw ConfigError("train field 'anchor_loss' must be full or masked");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"beta1", c.beta1},
         {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},
         {"pretrain_lr", c.pretrain_lr},
         {"finetune_lr", c.finetune_lr},
         {"batch", c.batch},
         {"pretrain_steps", c.pretrain_steps},
         {"finetune_steps", c.finetune_steps},
         {"grad_clip", c.grad_clip},
         {"cond_drop", c.cond_drop},
         {"anchor_loss", c.anchor_loss},
         {"lora_rank", c.lora_rank},
         {"lora_alpha", c.lora_alpha},
         {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.pretrain_lr = j.value("pretrain_lr", d.pretrain_lr);
    c.finetune_lr = j.value("finetune_lr", d.finetune_lr);
    c.batch = j.value("batch", d.batch);
    c.pretrain_steps = j.value("pretrain_steps", d.pretrain_steps);
    c.finetune_steps = j.value("finetune_steps", d.finetune_steps);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.cond_drop = j.value("cond_drop", d.cond_drop);
    c.anchor_loss = j.value("anchor_loss", d.anchor_loss);
    c.lora_rank = j.value("lora_rank", d.lora_rank);
    c.lora_alpha = j.value("lora_alpha", d.lora_alpha);
    c.log_every = j.value("log_every", d.log_every);
}

// ---------------------------------------------------------------------------
// Examples and loss
// ---------------------------------------------------------------------------
namespace {

template <class S>
TrainingExample<S> noised_example(const VideoTensor& video, const TokenSequence& tokens, Rng& rng, double cond_drop,
                                  std::optional<double> t_override, std::optional<int> anchor) {
    const std::size_t n = video.data.size();
    const std::size_t per_frame = n / static_cast<std::size_t>(video.frames);
    TrainingExample<S> ex;
    const double t = t_override ? *t_override : rng.uniform();
    ex.data.resize(n);
    ex.z_t.resize(n);
    ex.target.resize(n);
    for (std::size_t i = 0; i < n; ++i) ex.data[i] = static_cast<S>(2 * static_cast<S>(video.data[i]) - 1);
    const S ts = static_cast<S>(t);
    for (std::size_t i = 0; i < n; ++i) {
        const S eps = static_cast<S>(rng.normal());
        ex.z_t[i] = (1 - ts) * ex.data[i] + ts * eps;
        ex.target[i] = ex.data[i] - eps;
    }
    ex.t_vec.assign(static_cast<std::size_t>(video.frames), t);
    ex.loss_mask.assign(static_cast<std::size_t>(video.frames), 1);
    if (anchor) {
        const auto k = static_cast<std::size_t>(*anchor);
        std::copy_n(ex.data.begin() + static_cast<std::ptrdiff_t>(k * per_frame), per_frame,
                    ex.z_t.begin() + static_cast<std::ptrdiff_t>(k * per_frame));
        ex.t_vec[k] = 0.0;
        ex.anchor_index = *anchor;
    }
    const double u = rng.uniform();
    ex.tokens = u < cond_drop ? unconditional_tokens() : tokens;
    return ex;
}

}  // namespace

template <class S>
TrainingExample<S> make_pretrain_example(const VideoTensor& video, const TokenSequence& tokens, Rng& rng, double cond_drop,
                                         std::optional<double> t) {
    return noised_example<S>(video, tokens, rng, cond_drop, t, std::nullopt);
}

template <class S>
TrainingExample<S> make_anchor_example(const VideoTensor& video, const TokenSequence& tokens, Rng& rng, double cond_drop,
                                       bool mask_anchor, std::optional<double> t, std::optional<int> k) {
    int anchor = k ? *k : static_cast<int>(rng.below(static_cast<std::uint64_t>(video.frames)));
    if (anchor < 0 || anchor >= video.frames) throw ShapeError("anchor index out of range");
    auto ex = noised_example<S>(video, tokens, rng, cond_drop, t, anchor);
    if (mask_anchor) ex.loss_mask[static_cast<std::size_t>(anchor)] = 0;
    return ex;
}

template <class S>
double flow_loss(std::span<const S> v_hat, std::span<const S> target, std::span<const std::uint8_t> loss_mask) {
    if (v_hat.size() != target.size() || loss_mask.empty() || v_hat.size() % loss_mask.size() != 0)
        throw ShapeError("flow_loss operands have mismatched shapes");
    const std::size_t per_frame = v_hat.size() / loss_mask.size();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < loss_mask.size(); ++f) {
        if (!loss_mask[f]) continue;
        for (std::size_t i = f * per_frame; i < (f + 1) * per_frame; ++i) {
            const double d = static_cast<double>(v_hat[i]) - static_cast<double>(target[i]);
            sum += d * d;
        }
        count += per_frame;
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

template <class S>
std::vector<S> flow_loss_grad(std::span<const S> v_hat, std::span<const S> target, std::span<const std::uint8_t> loss_mask) {
    if (v_hat.size() != target.size() || loss_mask.empty() || v_hat.size() % loss_mask.size() != 0)
        throw ShapeError("flow_loss operands have mismatched shapes");
    const std::size_t per_frame = v_hat.size() / loss_mask.size();
    std::size_t count = 0;
    for (auto m : loss_mask) count += m ? per_frame : 0;
    std::vector<S> g(v_hat.size(), S(0));
    if (!count) return g;
    const S scale = static_cast<S>(2.0 / static_cast<double>(count));
    for (std::size_t f = 0; f < loss_mask.size(); ++f)
        if (loss_mask[f])
            for (std::size_t i = f * per_frame; i < (f + 1) * per_frame; ++i) g[i] = scale * (v_hat[i] - target[i]);
    return g;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------
namespace {

struct BatchPlan {
    std::vector<int> train_ids;
    std::uint64_t seed;
    std::uint64_t cached_epoch = ~0ULL;
    std::vector<int> perm;

    int sample(std::uint64_t position) {
        const std::uint64_t n = train_ids.size();
        const std::uint64_t epoch = position / n;
        if (epoch != cached_epoch) {
            perm = train_ids;
            Rng rng(derive_seed(seed, {kShuffleStream, epoch}));
            for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
            cached_epoch = epoch;
        }
        return perm[position % n];
    }
};

template <class S>
struct LoopSpec {
    int steps = 0;
    double lr = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    int jobs = 1;
    std::size_t base_size = 0;
    std::function<VelocityModel<S>()> make_model;
    std::function<TrainingExample<S>(int sample, Rng&)> make_example;
    /// Maps a summed base-layout gradient onto the trainable vector's gradient.
    std::function<std::vector<S>(const std::vector<S>&)> to_trainable;
    std::vector<S>* trainable = nullptr;
};

template <class S>
TrainResult run_loop(LoopSpec<S>& spec, const Dataset& dataset, const TrainConfig& cfg, const ProgressFn& progress) {
    BatchPlan plan{dataset.split_ids("train"), derive_seed(spec.seed, {kShuffleStream}), ~0ULL, {}};
    if (plan.train_ids.empty()) throw ConfigError("dataset has no training samples");
    const auto B = static_cast<std::size_t>(cfg.batch);
    const std::size_t P = spec.trainable->size();
    std::vector<double> m(P, 0.0), v(P, 0.0);
    std::vector<std::vector<S>> slot_grads(B, std::vector<S>(spec.base_size));
    std::vector<double> slot_loss(B, 0.0);
    const int jobs = std::max(1, spec.jobs);
    std::vector<ActivationCache<S>> caches(static_cast<std::size_t>(jobs));
    TrainResult result;
    result.steps = spec.steps;
    const auto start = std::chrono::steady_clock::now();
    double interval_sum = 0.0;
    int interval_count = 0;
    std::vector<double> summed(spec.base_size);
    std::vector<S> grad_base(spec.base_size);

    for (int step = 1; step <= spec.steps; ++step) {
        const VelocityModel<S> model = spec.make_model();
        std::vector<int> samples(B);
        for (std::size_t s = 0; s < B; ++s) samples[s] = plan.sample(static_cast<std::uint64_t>(step - 1) * B + s);

        // Slots are distributed over worker threads; each thread owns one cache.
        const auto per_worker = (B + static_cast<std::size_t>(jobs) - 1) / static_cast<std::size_t>(jobs);
        parallel_for(static_cast<std::size_t>(jobs), jobs, [&](std::size_t w) {
            for (std::size_t s = w * per_worker; s < std::min(B, (w + 1) * per_worker); ++s) {
                Rng rng(derive_seed(spec.seed, {spec.stream, static_cast<std::uint64_t>(step), s}));
                const auto ex = spec.make_example(samples[s], rng);
                auto& cache = caches[w];
                const auto out = model.forward(ex.z_t, ex.t_vec, ex.tokens, &cache);
                slot_loss[s] = flow_loss<S>(out, ex.target, ex.loss_mask);
                const auto d_out = flow_loss_grad<S>(out, ex.target, ex.loss_mask);
                std::fill(slot_grads[s].begin(), slot_grads[s].end(), S(0));
                model.backward(cache, d_out, slot_grads[s]);
            }
        });

        double loss = 0.0;
        std::fill(summed.begin(), summed.end(), 0.0);
        for (std::size_t s = 0; s < B; ++s) {
            loss += slot_loss[s];
            const auto& g = slot_grads[s];
            for (std::size_t i = 0; i < spec.base_size; ++i) summed[i] += static_cast<double>(g[i]);
        }
        loss /= static_cast<double>(B);
        if (!std::isfinite(loss)) throw DivergenceError("loss became non-finite at step " + std::to_string(step));
        for (std::size_t i = 0; i < spec.base_size; ++i) grad_base[i] = static_cast<S>(summed[i] / static_cast<double>(B));
        const std::vector<S> grad = spec.to_trainable(grad_base);

        double norm2 = 0.0;
        for (const S g : grad) norm2 += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(norm2);
        if (!std::isfinite(norm)) throw DivergenceError("gradient became non-finite at step " + std::to_string(step));
        const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

        const double bc1 = 1.0 - std::pow(cfg.beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.beta2, step);
        auto& w = *spec.trainable;
        for (std::size_t i = 0; i < P; ++i) {
            const double g = static_cast<double>(grad[i]) * clip;
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
            const double upd = spec.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
            w[i] = static_cast<S>(static_cast<double>(w[i]) - upd);
        }

        interval_sum += loss;
        ++interval_count;
        if (step % cfg.log_every == 0 || step == spec.steps) {
            LogRow row{step, interval_sum / interval_count, spec.lr,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
            result.log.push_back(row);
            if (progress) progress(row);
            interval_sum = 0.0;
            interval_count = 0;
        }
    }
    if (!result.log.empty()) {
        result.initial_smoothed_loss = result.log.front().loss;
        result.final_smoothed_loss = result.log.back().loss;
    }
    return result;
}

std::vector<TokenSequence> dataset_tokens(const Dataset& ds) {
    std::vector<TokenSequence> out;
    out.reserve(ds.index.entries.size());
    for (const auto& e : ds.index.entries) out.push_back(tokenize(e.prompt));
    return out;
}

}  // namespace

template <class S>
ModelParams<S> pretrain_t2v(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg, std::uint64_t seed,
                            int jobs, TrainResult* result, const ProgressFn& progress) {
    cfg.validate();
    ModelParams<S> params = init_params<S>(model_cfg, derive_seed(seed, {kInitStream}));
    const auto tokens = dataset_tokens(dataset);
    LoopSpec<S> spec;
    spec.steps = cfg.pretrain_steps;
    spec.lr = cfg.pretrain_lr;
    spec.seed = seed;
    spec.stream = kPretrainStream;
    spec.jobs = jobs;
    spec.base_size = params.count();
    spec.make_model = [&] { return VelocityModel<S>(params); };
    spec.make_example = [&](int sample, Rng& rng) {
        return make_pretrain_example<S>(dataset.videos[static_cast<std::size_t>(sample)],
                                        tokens[static_cast<std::size_t>(sample)], rng, cfg.cond_drop);
    };
    spec.to_trainable = [](const std::vector<S>& g) { return g; };
    spec.trainable = &params.values;
    TrainResult r = run_loop(spec, dataset, cfg, progress);
    if (result) *result = std::move(r);
    return params;
}

template <class S>
LoraAdapters<S> finetune_anchor(const ModelParams<S>& base, const Dataset& dataset, const TrainConfig& cfg,
                                std::uint64_t seed, int jobs, TrainResult* result, const ProgressFn& progress) {
    cfg.validate();
    LoraAdapters<S> adapters = init_lora<S>(base.layout, cfg.lora_rank, cfg.lora_alpha, derive_seed(seed, {kLoraStream}));
    const auto tokens = dataset_tokens(dataset);
    const bool masked = cfg.anchor_loss == "masked";
    LoopSpec<S> spec;
    spec.steps = cfg.finetune_steps;
    spec.lr = cfg.finetune_lr;
    spec.seed = seed;
    spec.stream = kFinetuneStream;
    spec.jobs = jobs;
    spec.base_size = base.count();
    spec.make_model = [&] { return VelocityModel<S>(base, &adapters); };
    spec.make_example = [&](int sample, Rng& rng) {
        return make_anchor_example<S>(dataset.videos[static_cast<std::size_t>(sample)],
                                      tokens[static_cast<std::size_t>(sample)], rng, cfg.cond_drop, masked);
    };
    spec.to_trainable = [&](const std::vector<S>& g) {
        std::vector<S> out(adapters.values.size(), S(0));
        lora_grad_from_effective<S>(base.layout, adapters, g, out);
        return out;
    };
    spec.trainable = &adapters.values;
    TrainResult r = run_loop(spec, dataset, cfg, progress);
    if (result) *result = std::move(r);
    return adapters;
}

void write_train_log(const std::filesystem::path& path, const std::vector<LogRow>& log) {
    std::ostringstream out;
    out << "step,loss,lr\n" << std::setprecision(9);
    for (const auto& r : log) out << r.step << ',' << r.loss << ',' << r.lr << '\n';
    write_text_file(path, out.str());
}

void write_train_timing(const std::filesystem::path& path, const std::vector<LogRow>& log) {
    std::ostringstream out;
    out << "step,wallclock_s\n" << std::fixed << std::setprecision(3);
    for (const auto& r : log) out << r.step << ',' << r.wallclock_s << '\n';
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------
GradCheckResult grad_check(const ModelParams<double>& params, std::uint64_t probe_seed, const GradCheckOptions& opts) {
    Rng rng(derive_seed(probe_seed, {kProbeStream}));
    PromptAst ast;
    VideoTensor video;
    for (;;) {
        ast = random_prompt(rng);
        try {
            video = simulate(ast, rng.next_u64());
            break;
        } catch (const GeometryError&) {
        }
    }
    const auto ex = make_anchor_example<double>(video, tokenize(ast), rng, 0.0);

    auto output_at = [&](const ModelParams<double>& p) {
        const VelocityModel<double> model(p);
        return model.forward(ex.z_t, ex.t_vec, ex.tokens);
    };
    // L(+) - L(-) summed as (a+ - a-)(a+ + a- - 2 target) per element, which
    // avoids cancelling two nearly equal loss totals.
    const std::size_t per_frame = ex.target.size() / ex.loss_mask.size();
    std::size_t counted = 0;
    for (auto m : ex.loss_mask) counted += m ? per_frame : 0;
    auto loss_difference = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (ex.loss_mask[i / per_frame]) sum += (a[i] - b[i]) * (a[i] + b[i] - 2 * ex.target[i]);
        return sum / static_cast<double>(counted);
    };

    std::vector<double> grad(params.count(), 0.0);
    {
        const VelocityModel<double> model(params);
        ActivationCache<double> cache;
        const auto out = model.forward(ex.z_t, ex.t_vec, ex.tokens, &cache);
        model.backward(cache, flow_loss_grad<double>(out, ex.target, ex.loss_mask), grad);
    }

    // One coordinate per tensor first, then uniform picks over everything.
    std::vector<std::size_t> coords;
    std::set<std::size_t> seen;
    const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(std::max(opts.max_coords, 1)), params.count());
    for (const auto& t : params.layout.tensors()) {
        if (coords.size() >= limit) break;
        const std::size_t c = t.offset + rng.below(t.size());
        if (seen.insert(c).second) coords.push_back(c);
    }
    while (coords.size() < limit) {
        const std::size_t c = rng.below(params.count());
        if (seen.insert(c).second) coords.push_back(c);
    }

    GradCheckResult res;
    ModelParams<double> probe = params;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const std::size_t c = coords[i];
        const double orig = probe.values[c];
        probe.values[c] = orig + opts.step;
        const auto plus = output_at(probe);
        probe.values[c] = orig - opts.step;
        const auto minus = output_at(probe);
        probe.values[c] = orig;
        const double gn = loss_difference(plus, minus) / (2 * opts.step);
        double ga = grad[c];
        if (opts.fault_coord && static_cast<std::size_t>(*opts.fault_coord) == i) ga *= opts.fault_factor;
        const double rel = std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), 1e-8});
        res.coords.push_back(c);
        res.analytic.push_back(ga);
        res.numeric.push_back(gn);
        res.rel_error.push_back(rel);
        res.max_rel_error = std::max(res.max_rel_error, rel);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------
template TrainingExample<float> make_pretrain_example<float>(const VideoTensor&, const TokenSequence&, Rng&, double,
                                                             std::optional<double>);
template TrainingExample<double> make_pretrain_example<double>(const VideoTensor&, const TokenSequence&, Rng&, double,
                                                               std::optional<double>);
template TrainingExample<float> make_anchor_example<float>(const VideoTensor&, const TokenSequence&, Rng&, double, bool,
                                                           std::optional<double>, std::optional<int>);
template TrainingExample<double> make_anchor_example<double>(const VideoTensor&, const TokenSequence&, Rng&, double, bool,
                                                             std::optional<double>, std::optional<int>);
template double flow_loss<float>(std::span<const float>, std::span<const float>, std::span<const std::uint8_t>);
template double flow_loss<double>(std::span<const double>, std::span<const double>, std::span<const std::uint8_t>);
template std::vector<float> flow_loss_grad<float>(std::span<const float>, std::span<const float>, std::span<const std::uint8_t>);
template std::vector<double> flow_loss_grad<double>(std::span<const double>, std::span<const double>,
                                                    std::span<const std::uint8_t>);
template ModelParams<float> pretrain_t2v<float>(const Dataset&, const ModelConfig&, const TrainConfig&, std::uint64_t, int,
                                                TrainResult*, const ProgressFn&);
template ModelParams<double> pretrain_t2v<double>(const Dataset&, const ModelConfig&, const TrainConfig&, std::uint64_t, int,
                                                  TrainResult*, const ProgressFn&);
template LoraAdapters<float> finetune_anchor<float>(const ModelParams<float>&, const Dataset&, const TrainConfig&,
                                                    std::uint64_t, int, TrainResult*, const ProgressFn&);
template LoraAdapters<double> finetune_anchor<double>(const ModelParams<double>&, const Dataset&, const TrainConfig&,
                                                      std::uint64_t, int, TrainResult*, const ProgressFn&);

}  // namespace fvg
