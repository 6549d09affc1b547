// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed-world probes for generated videos plus Frechet and diversity statistics
// on fixed random-projection features.

#include "fvg/scene.hpp"

#include <Eigen/Core>
#include <optional>

namespace fvg {

inline constexpr double kDecodeThreshold = 0.5;
inline constexpr double kColorRadius = 0.35;
inline constexpr int kFeatureDim = 128;
inline constexpr std::uint64_t kDefaultProjSeed = 42;
inline constexpr double kMinDisplacement = 6.0;   // px
inline constexpr double kAreaRatio = 1.15;        // grow/shrink detection
inline constexpr double kMaxTrackJump = 6.0;      // px between consecutive frames
inline constexpr double kMaxStartOffset = 8.0;    // px from the prompted grid centre

struct DecodedObject {
    Color color;
    Shape shape;
    Cell cell;
    double score;
};

struct SceneDecodeResult {
    std::vector<DecodedObject> objects;
    double residual = 0.0;  // RMS of the residual image around the background estimate
};

SceneDecodeResult decode_scene(const Frame& frame);

/// Fraction of prompted objects found in frame 0 with matching colour, shape and cell.
double composition_score(const VideoTensor& video, const PromptAst& ast);

struct CategoryScores {
    std::optional<double> composition;
    std::optional<double> dynamic_attribute;
    std::optional<double> motion_binding;
    std::optional<double> motion_order;
    std::optional<double> numeracy;

    /// Mean of the categories that apply.
    double overall() const;
};

/// Motion probes only (dynamic_attribute, motion_binding, motion_order) plus numeracy.
CategoryScores motion_scores(const VideoTensor& video, const PromptAst& ast);

/// All five categories.
CategoryScores score_video(const VideoTensor& video, const PromptAst& ast);

struct ScoreReport {
    double composition = 0, dynamic_attribute = 0, motion_binding = 0, motion_order = 0, numeracy = 0;
    int n_composition = 0, n_dynamic_attribute = 0, n_motion_binding = 0, n_motion_order = 0, n_numeracy = 0;
    double overall = 0;  // unweighted mean of the five category means
    int samples = 0;
};

ScoreReport aggregate_scores(const std::vector<CategoryScores>& rows);

// ---------------------------------------------------------------------------
// Distribution statistics.
// ---------------------------------------------------------------------------
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Projects each flattened item through a fixed N(0, 1/dim) matrix drawn from proj_seed.
FeatureMatrix extract_features(const std::vector<std::span<const float>>& items, std::uint64_t proj_seed = kDefaultProjSeed);

FeatureMatrix video_features(const std::vector<VideoTensor>& videos, std::uint64_t proj_seed = kDefaultProjSeed);
FeatureMatrix frame0_features(const std::vector<VideoTensor>& videos, std::uint64_t proj_seed = kDefaultProjSeed);

/// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), covariances shrunk by 1e-6 I.
double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b);

/// Mean pairwise feature distance divided by sqrt(feature dim). Throws CountError below 2 videos.
double diversity(const std::vector<VideoTensor>& videos, std::uint64_t proj_seed = kDefaultProjSeed);

}  // namespace fvg
