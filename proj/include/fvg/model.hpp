// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conditional velocity field v(z_t, t_vec, y) over 8-frame 32x32 videos.
//
// Every frame is cut into 4x4 patches (64 tokens per frame, 512 in total).
// Each token receives a fixed spatiotemporal position code plus a sinusoidal
// code of its own frame's noise level, so frames can sit at different
// timesteps. Blocks are pre-norm: full self-attention over all 512 tokens,
// cross-attention into the encoded prompt, and a GELU MLP. Gradients are
// hand-derived; grad_check() is the gate that keeps them honest.

#include "fvg/common.hpp"
#include "fvg/prompt.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fvg {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
    int embed_dim = 64;
    int blocks = 2;
    int patch = 4;
    int heads = 4;
    int vocab_size = 23;
    int text_len = kTextLen;
    int frames = 8;
    int image_size = 32;
    int channels = 3;
    int mlp_ratio = 4;
    std::string precision = "f32";  // "f32" | "f64"

    int tokens_per_frame() const { return (image_size / patch) * (image_size / patch); }
    int tokens() const { return frames * tokens_per_frame(); }
    int patch_dim() const { return patch * patch * channels; }
    int head_dim() const { return embed_dim / heads; }
    int mlp_dim() const { return mlp_ratio * embed_dim; }
    std::size_t video_size() const {
        return static_cast<std::size_t>(frames) * image_size * image_size * channels;
    }

    /// Throws ConfigError naming the offending field.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// ---------------------------------------------------------------------------
// Flat parameter storage with named 2-D views.
// ---------------------------------------------------------------------------
struct TensorSpec {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
    bool adaptable = false;  // receives a LoRA pair
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

class ParamLayout {
public:
    int add(std::string name, int rows, int cols, bool adaptable = false);
    const std::vector<TensorSpec>& tensors() const { return tensors_; }
    const TensorSpec& at(int id) const { return tensors_[static_cast<std::size_t>(id)]; }
    int find(const std::string& name) const;  // -1 if absent
    std::size_t size() const { return total_; }
    bool operator==(const ParamLayout& o) const;

private:
    std::vector<TensorSpec> tensors_;
    std::size_t total_ = 0;
};

struct LinearIds {
    int w = -1, b = -1;
};
struct NormIds {
    int g = -1, b = -1;
};
struct AttnIds {
    LinearIds q, k, v, o;
};
struct BlockIds {
    NormIds ln_self;
    AttnIds self;
    NormIds ln_cross;
    AttnIds cross;
    NormIds ln_mlp;
    LinearIds fc1, fc2;
};
struct TextEncoderIds {
    NormIds ln_attn;
    AttnIds attn;
    NormIds ln_mlp;
    LinearIds fc1, fc2;
};
struct ModelIds {
    LinearIds patch_embed;
    int token_embed = -1;
    TextEncoderIds text;
    std::vector<BlockIds> blocks;
    NormIds ln_out;
    LinearIds out;
};

/// Builds the tensor layout for a configuration; the order is the checkpoint order.
ParamLayout build_layout(const ModelConfig& cfg, ModelIds* ids = nullptr);

template <class S>
struct ModelParams {
    ModelConfig config;
    ParamLayout layout;
    ModelIds ids;
    std::vector<S> values;

    explicit ModelParams(const ModelConfig& cfg = {});

    S* data(int id) { return values.data() + layout.at(id).offset; }
    const S* data(int id) const { return values.data() + layout.at(id).offset; }
    Eigen::Map<Mat<S>> mat(int id) {
        const auto& t = layout.at(id);
        return {data(id), t.rows, t.cols};
    }
    Eigen::Map<const Mat<S>> mat(int id) const {
        const auto& t = layout.at(id);
        return {data(id), t.rows, t.cols};
    }
    std::size_t count() const { return values.size(); }
};

/// Truncated normal (sigma 0.02, cut at 2 sigma) weights, zero biases, unit norm scales.
template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p);

// ---------------------------------------------------------------------------
// Low-rank adapters: W_eff = W + (alpha / rank) * B * A for every adaptable W.
// ---------------------------------------------------------------------------
template <class S>
struct LoraAdapters {
    int rank = 8;
    double alpha = 8.0;
    ParamLayout layout;
    struct Pair {
        int weight;  // id in the base layout
        int a;       // rank x in
        int b;       // out x rank
    };
    std::vector<Pair> pairs;
    std::vector<S> values;

    double scale() const { return alpha / rank; }
    S* data(int id) { return values.data() + layout.at(id).offset; }
    const S* data(int id) const { return values.data() + layout.at(id).offset; }
};

/// A ~ N(0, 0.02^2), B = 0, so the adapted model starts equal to the base.
template <class S>
LoraAdapters<S> init_lora(const ParamLayout& base, int rank, double alpha, std::uint64_t seed);

/// Layout-only adapters (all zeros) used when loading.
template <class S>
LoraAdapters<S> empty_lora(const ParamLayout& base, int rank, double alpha);

/// W + (alpha/rank) * B * A. Throws ShapeError on incompatible shapes.
template <class S>
Mat<S> apply_lora(const Mat<S>& w, const Mat<S>& a, const Mat<S>& b, int rank, double alpha);

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------
template <class S>
struct Activations;  // opaque cache for backward, defined in model.cpp

template <class S>
class ActivationCache {
public:
    ActivationCache();
    ~ActivationCache();
    ActivationCache(ActivationCache&&) noexcept;
    ActivationCache& operator=(ActivationCache&&) noexcept;
    Activations<S>& get() { return *impl_; }
    const Activations<S>& get() const { return *impl_; }

private:
    std::unique_ptr<Activations<S>> impl_;
};

template <class S>
class VelocityModel {
public:
    /// Snapshots effective weights (base plus optional adapters).
    VelocityModel(const ModelParams<S>& params, const LoraAdapters<S>* adapters = nullptr);

    const ModelConfig& config() const { return config_; }

    /// z is F*H*W*C latent data in (f, y, x, c) order; t_vec has F entries.
    /// Throws ShapeError on any size mismatch.
    std::vector<S> forward(std::span<const S> z, std::span<const double> t_vec, const TokenSequence& tokens,
                           ActivationCache<S>* cache = nullptr) const;

    /// Accumulates d(loss)/d(effective parameter) into grad (base layout).
    void backward(const ActivationCache<S>& cache, std::span<const S> d_out, std::span<S> grad) const;

private:
    ModelConfig config_;
    ParamLayout layout_;
    ModelIds ids_;
    std::vector<S> eff_;
    Mat<S> pos_code_;       // tokens x D
    Mat<S> text_pos_code_;  // text_len x D, indexed by position within clause
};

/// Maps gradients of effective weights onto the adapter pair (dA, dB).
template <class S>
void lora_grad_from_effective(const ParamLayout& base, const LoraAdapters<S>& adapters, std::span<const S> grad_eff,
                              std::span<S> grad_lora);

/// Sinusoidal code of a noise level, dimension dim.
template <class S>
RowVec<S> timestep_code(double t, int dim);

}  // namespace fvg
