// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fvg/common.hpp"
#include "fvg/prompt.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fvg {

inline constexpr int kImageSize = 32;
inline constexpr int kChannels = 3;
inline constexpr int kFrames = 8;
inline constexpr int kFramePixels = kImageSize * kImageSize * kChannels;

inline constexpr float kDefaultHalfSize = 4.0F;
inline constexpr float kMinHalfSize = 2.0F;
inline constexpr float kMaxHalfSize = 8.0F;
inline constexpr float kMoveStep = 2.0F;       // px per frame
inline constexpr float kSizeStep = 0.5F;       // half-size px per frame
inline constexpr int kTurnFrame = 4;           // first frame showing the new colour
inline constexpr int kSecondMotionFrame = 4;   // first frame driven by motion 2 of a "then" script
inline constexpr std::array<int, 3> kGridCenters = {6, 16, 26};

struct Rgb {
    float r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

Rgb color_rgb(Color c);

struct SceneObject {
    Rgb color;
    Shape shape = Shape::square;
    float cx = 16, cy = 16;
    float half_size = kDefaultHalfSize;
    bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
    std::vector<SceneObject> objects;
    float background_shade = 1.0F;
    bool operator==(const SceneSpec&) const = default;
};

/// One 32x32 RGB image, row-major (y, x, c).
struct Frame {
    std::vector<float> pixels = std::vector<float>(kFramePixels, 0.0F);

    float& at(int y, int x, int c) { return pixels[static_cast<std::size_t>((y * kImageSize + x) * kChannels + c)]; }
    float at(int y, int x, int c) const {
        return pixels[static_cast<std::size_t>((y * kImageSize + x) * kChannels + c)];
    }
    bool operator==(const Frame&) const = default;
};

/// F frames of (y, x, c) data. Pixel space holds [0,1]; latent space 2*pixel-1.
struct VideoTensor {
    int frames = kFrames;
    std::vector<float> data = std::vector<float>(static_cast<std::size_t>(kFrames) * kFramePixels, 0.0F);

    VideoTensor() = default;
    explicit VideoTensor(int f) : frames(f), data(static_cast<std::size_t>(f) * kFramePixels, 0.0F) {}

    std::span<float> frame(int f) {
        return {data.data() + static_cast<std::size_t>(f) * kFramePixels, static_cast<std::size_t>(kFramePixels)};
    }
    std::span<const float> frame(int f) const {
        return {data.data() + static_cast<std::size_t>(f) * kFramePixels, static_cast<std::size_t>(kFramePixels)};
    }
    Frame frame_copy(int f) const;
    void set_frame(int f, const Frame& fr);
    bool operator==(const VideoTensor&) const = default;
};

/// Anchor-image stand-in: grid placement with seeded +-1 px jitter and background shade.
SceneSpec scene_from_ast(const PromptAst& ast, std::uint64_t jitter_seed);

/// Rasterization rule: square cx-h <= x < cx+h (same in y); circle dx^2+dy^2 <= h^2;
/// triangle apex up, filled between the box's top and bottom rows.
bool object_covers(const SceneObject& o, int px, int py);

Frame render_frame(const SceneSpec& scene);

/// Ground-truth dynamics. Throws GeometryError if an object leaves the valid
/// region or two objects come into contact on any frame.
VideoTensor simulate(const PromptAst& ast, std::uint64_t jitter_seed);

/// Scene of the last simulated frame (all motions applied to completion).
SceneSpec final_state_scene(const PromptAst& ast, std::uint64_t jitter_seed);

/// Per-frame scene states of the ground-truth dynamics.
std::vector<SceneSpec> simulate_scenes(const PromptAst& ast, std::uint64_t jitter_seed);

/// Pixel <-> latent maps (identity "autoencoder").
VideoTensor to_latent(const VideoTensor& pixels);
VideoTensor to_pixels(const VideoTensor& latent);

/// Binary P6, 8-bit, value = round(255 * pixel).
void write_ppm(const Frame& frame, const std::filesystem::path& path);
std::string encode_ppm(const Frame& frame);

// ---------------------------------------------------------------------------
// Synthetic dataset.
// ---------------------------------------------------------------------------
inline constexpr int kEvalPrompts = 64;

struct DatasetEntry {
    int id = 0;
    std::string prompt;
    std::uint64_t jitter_seed = 0;
    std::string split;  // "train" | "eval"
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;
    std::uint64_t seed = 0;
    int n_train = 0;
    int n_eval = 0;
};

struct Dataset {
    DatasetIndex index;
    std::vector<VideoTensor> videos;  // pixel space, parallel to index.entries

    std::vector<int> split_ids(const std::string& split) const;
};

/// Uniform random prompt from the grammar; motions may still violate geometry.
PromptAst random_prompt(Rng& rng);

/// True when the prompt's string hash puts it in the held-out class.
bool is_eval_prompt(const std::string& canonical_prompt);

/// Builds n training samples plus kEvalPrompts held-out samples in memory.
Dataset build_dataset(int n, std::uint64_t seed);

/// Writes videos.fvt, prompts.jsonl and manifest.json under out_dir.
DatasetIndex gen_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir);

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace fvg
