// SPDX-License-Identifier: Apache-2.0
#include "fvg/sampling.hpp"

#include "fvg/tensor_io.hpp"

#include <algorithm>
#include <array>

namespace fvg {

namespace {
constexpr std::uint64_t kNoiseStream = 0x6E6F6973;
constexpr std::array<std::string_view, 4> kModeNames = {"t2v", "i2v", "i2v_text", "factorized"};
}  // namespace

std::string_view to_string(SampleMode m) { return kModeNames[static_cast<std::size_t>(m)]; }

SampleMode parse_sample_mode(std::string_view name) {
    for (std::size_t i = 0; i < kModeNames.size(); ++i)
        if (kModeNames[i] == name) return static_cast<SampleMode>(i);
    throw ConfigError("unknown sample mode '" + std::string(name) + "'");
}

void SampleConfig::validate() const {
    if (steps < 1) throw ConfigError("sample field 'steps' must be >= 1");
    if (!(cfg_scale >= 0)) throw ConfigError("sample field 'cfg_scale' must be >= 0");
}

void to_json(nlohmann::json& j, const SampleConfig& c) {
    j = {{"steps", c.steps}, {"cfg_scale", c.cfg_scale}, {"mode", std::string(to_string(c.mode))}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SampleConfig& c) {
    const SampleConfig d;
    c.steps = j.value("steps", d.steps);
    c.cfg_scale = j.value("cfg_scale", d.cfg_scale);
    c.mode = parse_sample_mode(j.value("mode", std::string(to_string(d.mode))));
    c.seed = j.value("seed", d.seed);
}

std::vector<ScheduleStep> make_schedule(int steps) {
    if (steps < 1) throw ConfigError("sample field 'steps' must be >= 1");
    std::vector<ScheduleStep> out;
    out.reserve(static_cast<std::size_t>(steps));
    double elapsed = 0.0;  // running sum of dt in step order
    for (int i = 0; i < steps; ++i) {
        const double t = 1.0 - static_cast<double>(i) / steps;
        const double dt = i + 1 == steps ? 1.0 - elapsed : 1.0 / steps;
        elapsed += dt;
        out.push_back({t, dt});
    }
    return out;
}

std::vector<double> cfg_velocity(std::span<const double> v_cond, std::span<const double> v_uncond, double s) {
    if (v_cond.size() != v_uncond.size()) throw ShapeError("cfg_velocity operands have different sizes");
    if (s == 1.0) return {v_cond.begin(), v_cond.end()};
    if (s == 0.0) return {v_uncond.begin(), v_uncond.end()};
    std::vector<double> out(v_cond.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i] + s * (v_cond[i] - v_uncond[i]);
    return out;
}

VelocityFn network_field(const VelocityModel<float>& model) {
    return [&model](std::span<const double> z, std::span<const double> t_vec, const TokenSequence& tokens) {
        std::vector<float> zf(z.size());
        std::transform(z.begin(), z.end(), zf.begin(), [](double v) { return static_cast<float>(v); });
        const auto out = model.forward(zf, t_vec, tokens);
        return std::vector<double>(out.begin(), out.end());
    };
}

std::vector<double> euler_integrate(const VelocityFn& field, std::vector<double> z, const TokenSequence& tokens, int steps,
                                    double cfg_scale, const std::vector<double>* anchor_latent) {
    const auto schedule = make_schedule(steps);
    const std::size_t frame_size = anchor_latent ? anchor_latent->size() : 0;
    if (anchor_latent && (frame_size == 0 || z.size() % frame_size != 0))
        throw ShapeError("anchor latent does not divide the video latent");
    const std::size_t frames = anchor_latent ? z.size() / frame_size : 0;
    const bool unconditional = tokens.all_pad();
    const TokenSequence pad = unconditional_tokens();
    auto inject = [&] {
        if (anchor_latent) std::copy(anchor_latent->begin(), anchor_latent->end(), z.begin());
    };
    for (const auto& st : schedule) {
        inject();
        std::vector<double> t_vec(anchor_latent ? frames : z.size() / static_cast<std::size_t>(kFramePixels), st.t);
        if (anchor_latent) t_vec[0] = 0.0;
        std::vector<double> v;
        if (unconditional || cfg_scale == 1.0) {
            v = field(z, t_vec, unconditional ? pad : tokens);
        } else if (cfg_scale == 0.0) {
            v = field(z, t_vec, pad);
        } else {
            const auto vc = field(z, t_vec, tokens);
            const auto vu = field(z, t_vec, pad);
            v = cfg_velocity(vc, vu, cfg_scale);
        }
        if (v.size() != z.size()) throw ShapeError("velocity field returned the wrong size");
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += st.dt * v[i];
    }
    inject();
    return z;
}

std::vector<double> initial_noise(std::uint64_t seed, std::size_t size) {
    Rng rng(derive_seed(seed, {kNoiseStream}));
    std::vector<double> z(size);
    for (auto& v : z) v = rng.normal();
    return z;
}

VideoTensor decode_latent(std::span<const double> z, int frames) {
    VideoTensor out(frames);
    if (z.size() != out.data.size()) throw ShapeError("latent size does not match frame count");
    for (std::size_t i = 0; i < z.size(); ++i) out.data[i] = static_cast<float>(std::clamp((z[i] + 1.0) / 2.0, 0.0, 1.0));
    return out;
}

VideoTensor sample_t2v(const VelocityModel<float>& model, const TokenSequence& tokens, const SampleConfig& cfg) {
    cfg.validate();
    const auto& mc = model.config();
    auto z = euler_integrate(network_field(model), initial_noise(cfg.seed, mc.video_size()), tokens, cfg.steps, cfg.cfg_scale);
    return decode_latent(z, mc.frames);
}

VideoTensor sample_anchored(const VelocityModel<float>& model, const Frame& anchor, const TokenSequence& tokens,
                            const SampleConfig& cfg) {
    cfg.validate();
    if (!is_anchored(cfg.mode)) throw ConfigError("sample_anchored needs an anchored mode, got t2v");
    const auto& mc = model.config();
    std::vector<double> z_a(anchor.pixels.size());
    for (std::size_t i = 0; i < z_a.size(); ++i) z_a[i] = 2.0 * static_cast<double>(anchor.pixels[i]) - 1.0;
    const TokenSequence cond = cfg.mode == SampleMode::i2v ? unconditional_tokens() : tokens;
    auto z = euler_integrate(network_field(model), initial_noise(cfg.seed, mc.video_size()), cond, cfg.steps, cfg.cfg_scale,
                             &z_a);
    return decode_latent(z, mc.frames);
}

Generator::Generator(const std::filesystem::path& base_path, const std::filesystem::path& lora_path) {
    if (!std::filesystem::exists(base_path)) throw MissingArtifactError("base checkpoint not found: " + base_path.string());
    const auto base = load_base_checkpoint<float>(base_path);
    base_hash_ = file_sha256(base_path);
    base_model_ = std::make_unique<VelocityModel<float>>(base);
    if (!lora_path.empty()) {
        if (!std::filesystem::exists(lora_path)) throw MissingArtifactError("adapter checkpoint not found: " + lora_path.string());
        const auto ad = load_lora_checkpoint<float>(lora_path, base, base_hash_);
        lora_hash_ = file_sha256(lora_path);
        adapted_model_ = std::make_unique<VelocityModel<float>>(base, &ad);
    }
}

const VelocityModel<float>& Generator::adapted() const {
    if (!adapted_model_) throw MissingArtifactError("anchored sampling needs an adapter checkpoint");
    return *adapted_model_;
}

VideoTensor Generator::sample_t2v(const TokenSequence& tokens, const SampleConfig& cfg) const {
    return fvg::sample_t2v(*base_model_, tokens, cfg);
}

VideoTensor Generator::sample_anchored(const Frame& anchor, const TokenSequence& tokens, const SampleConfig& cfg) const {
    return fvg::sample_anchored(adapted(), anchor, tokens, cfg);
}

FactorizedResult run_factorized_pipeline(const Generator& gen, std::string_view prompt_text, std::uint64_t anchor_seed,
                                         const SampleConfig& cfg) {
    FactorizedResult r;
    r.ast = parse_prompt(prompt_text);
    r.anchor = render_frame(scene_from_ast(reduce_to_first_frame(r.ast), anchor_seed));
    SampleConfig c = cfg;
    c.mode = SampleMode::factorized;
    r.video = gen.sample_anchored(r.anchor, tokenize(r.ast), c);
    return r;
}

void write_sample_outputs(const std::filesystem::path& dir, const VideoTensor& video, const Frame* anchor,
                          const nlohmann::json& meta) {
    const std::array<std::int64_t, 4> shape = {video.frames, kImageSize, kImageSize, kChannels};
    write_fvt(dir / "video.fvt", shape, video.data);
    for (int f = 0; f < video.frames; ++f) write_ppm(video.frame_copy(f), dir / ("frame_" + std::to_string(f) + ".ppm"));
    if (anchor) write_ppm(*anchor, dir / "anchor.ppm");
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");
}

}  // namespace fvg
