// SPDX-License-Identifier: Apache-2.0
#pragma once

// Euler integration of the learned velocity field from noise (t = 1) to data
// (t = 0), with optional first-frame anchor injection and classifier-free
// guidance. The integration state is held in double precision.

#include "fvg/checkpoint.hpp"
#include "fvg/scene.hpp"

#include <functional>
#include <optional>

namespace fvg {

enum class SampleMode { t2v, i2v, i2v_text, factorized };

std::string_view to_string(SampleMode m);
/// Throws ConfigError for unknown names.
SampleMode parse_sample_mode(std::string_view name);
inline bool is_anchored(SampleMode m) { return m != SampleMode::t2v; }

struct SampleConfig {
    int steps = 50;
    double cfg_scale = 2.0;
    SampleMode mode = SampleMode::factorized;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SampleConfig& c);
void from_json(const nlohmann::json& j, SampleConfig& c);

struct ScheduleStep {
    double t;
    double dt;
};

/// t_i = 1 - i/N for i < N, dt = 1/N; the last dt absorbs rounding so sum(dt) == 1.
std::vector<ScheduleStep> make_schedule(int steps);

/// v_u + s (v_c - v_u); s == 1 returns v_c and s == 0 returns v_u exactly.
std::vector<double> cfg_velocity(std::span<const double> v_cond, std::span<const double> v_uncond, double s);

using VelocityFn =
    std::function<std::vector<double>(std::span<const double> z, std::span<const double> t_vec, const TokenSequence& tokens)>;

/// Adapts a network to the double-precision integrator.
VelocityFn network_field(const VelocityModel<float>& model);

/// Runs the Euler loop from z_init. When anchor_latent is set, frame 0 is
/// overwritten with it before every evaluation and after the last step, and
/// its timestep entry is 0. Returns the final latent.
std::vector<double> euler_integrate(const VelocityFn& field, std::vector<double> z_init, const TokenSequence& tokens,
                                    int steps, double cfg_scale, const std::vector<double>* anchor_latent = nullptr);

/// Standard normal draws for the sampler's starting point.
std::vector<double> initial_noise(std::uint64_t seed, std::size_t size);

VideoTensor decode_latent(std::span<const double> z, int frames);

VideoTensor sample_t2v(const VelocityModel<float>& model, const TokenSequence& tokens, const SampleConfig& cfg);

/// Mode i2v ignores `tokens` and conditions on the all-PAD sequence.
VideoTensor sample_anchored(const VelocityModel<float>& model, const Frame& anchor, const TokenSequence& tokens,
                            const SampleConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoint-level entry points.
// ---------------------------------------------------------------------------
class Generator {
public:
    /// lora_path may be empty when only t2v sampling is needed. Throws
    /// MissingArtifactError for absent files and HashMismatchError when the
    /// adapters belong to a different base.
    Generator(const std::filesystem::path& base_path, const std::filesystem::path& lora_path);

    const VelocityModel<float>& base() const { return *base_model_; }
    const VelocityModel<float>& adapted() const;
    bool has_adapters() const { return adapted_model_ != nullptr; }
    const std::string& base_hash() const { return base_hash_; }
    const std::string& lora_hash() const { return lora_hash_; }

    VideoTensor sample_t2v(const TokenSequence& tokens, const SampleConfig& cfg) const;
    VideoTensor sample_anchored(const Frame& anchor, const TokenSequence& tokens, const SampleConfig& cfg) const;

private:
    std::unique_ptr<VelocityModel<float>> base_model_;
    std::unique_ptr<VelocityModel<float>> adapted_model_;
    std::string base_hash_;
    std::string lora_hash_;
};

struct FactorizedResult {
    VideoTensor video;
    Frame anchor;
    PromptAst ast;
};

/// parse -> reduce -> render anchor -> anchored sampling conditioned on the full prompt.
FactorizedResult run_factorized_pipeline(const Generator& gen, std::string_view prompt_text, std::uint64_t anchor_seed,
                                         const SampleConfig& cfg);

/// Writes video.fvt, frame_<i>.ppm, anchor.ppm (when given) and meta.json.
void write_sample_outputs(const std::filesystem::path& dir, const VideoTensor& video, const Frame* anchor,
                          const nlohmann::json& meta);

}  // namespace fvg
