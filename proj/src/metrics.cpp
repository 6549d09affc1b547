// SPDX-License-Identifier: Apache-2.0
#include "fvg/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>

namespace fvg {

// ---------------------------------------------------------------------------
// Scene decoding
// ---------------------------------------------------------------------------
namespace {

struct Template {
    Color color;
    Shape shape;
    Cell cell;
    int x0, y0, x1, y1;          // window, inclusive
    std::vector<std::uint8_t> inside;  // window-sized mask
};

const std::vector<Template>& templates() {
    static const std::vector<Template> all = [] {
        std::vector<Template> out;
        for (int c = 0; c < kNumColors; ++c)
            for (int s = 0; s < kNumShapes; ++s)
                for (int cell = 0; cell < kNumCells; ++cell)
                    for (int jy = -1; jy <= 1; ++jy)
                        for (int jx = -1; jx <= 1; ++jx) {
                            SceneObject o;
                            o.color = color_rgb(static_cast<Color>(c));
                            o.shape = static_cast<Shape>(s);
                            o.cx = static_cast<float>(kGridCenters[static_cast<std::size_t>(cell_col(static_cast<Cell>(cell)))] + jx);
                            o.cy = static_cast<float>(kGridCenters[static_cast<std::size_t>(cell_row(static_cast<Cell>(cell)))] + jy);
                            Template t{static_cast<Color>(c), static_cast<Shape>(s), static_cast<Cell>(cell), 0, 0, 0, 0, {}};
                            const int h = static_cast<int>(kDefaultHalfSize);
                            t.x0 = std::max(0, static_cast<int>(o.cx) - h - 1);
                            t.x1 = std::min(kImageSize - 1, static_cast<int>(o.cx) + h + 1);
                            t.y0 = std::max(0, static_cast<int>(o.cy) - h - 1);
                            t.y1 = std::min(kImageSize - 1, static_cast<int>(o.cy) + h + 1);
                            for (int y = t.y0; y <= t.y1; ++y)
                                for (int x = t.x0; x <= t.x1; ++x) t.inside.push_back(object_covers(o, x, y) ? 1 : 0);
                            out.push_back(std::move(t));
                        }
        return out;
    }();
    return all;
}

double median(std::vector<float> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

double ncc(const Frame& img, const Template& t, double background) {
    const Rgb col = color_rgb(t.color);
    const std::array<double, 3> cv = {col.r, col.g, col.b};
    double so = 0, st = 0, soo = 0, stt = 0, sot = 0;
    int n = 0;
    std::size_t k = 0;
    for (int y = t.y0; y <= t.y1; ++y)
        for (int x = t.x0; x <= t.x1; ++x, ++k)
            for (int c = 0; c < kChannels; ++c) {
                const double o = img.at(y, x, c);
                const double tv = t.inside[k] ? cv[static_cast<std::size_t>(c)] : background;
                so += o;
                st += tv;
                soo += o * o;
                stt += tv * tv;
                sot += o * tv;
                ++n;
            }
    const double vo = soo - so * so / n;
    const double vt = stt - st * st / n;
    if (vo <= 1e-9 || vt <= 1e-9) return 0.0;
    return (sot - so * st / n) / std::sqrt(vo * vt);
}

}  // namespace

SceneDecodeResult decode_scene(const Frame& frame) {
    Frame residual = frame;
    const double bg = median(frame.pixels);
    SceneDecodeResult res;
    const auto& all = templates();
    while (res.objects.size() < static_cast<std::size_t>(kMaxObjects)) {
        double best = -2.0;
        const Template* best_t = nullptr;
        for (const auto& t : all) {
            const double s = ncc(residual, t, bg);
            if (s > best) {
                best = s;
                best_t = &t;
            }
        }
        if (!best_t || best < kDecodeThreshold) break;
        res.objects.push_back({best_t->color, best_t->shape, best_t->cell, std::min(1.0, best)});
        std::size_t k = 0;
        for (int y = best_t->y0; y <= best_t->y1; ++y)
            for (int x = best_t->x0; x <= best_t->x1; ++x, ++k)
                if (best_t->inside[k])
                    for (int c = 0; c < kChannels; ++c) residual.at(y, x, c) = static_cast<float>(bg);
    }
    double ss = 0;
    for (float v : residual.pixels) ss += (v - bg) * (v - bg);
    res.residual = std::sqrt(ss / static_cast<double>(residual.pixels.size()));
    return res;
}

namespace {

double composition_from_decode(const SceneDecodeResult& dec, const PromptAst& ast) {
    const PromptAst first = reduce_to_first_frame(ast);
    std::vector<bool> used(dec.objects.size(), false);
    int matched = 0;
    for (const auto& obj : first.objects)
        for (std::size_t i = 0; i < dec.objects.size(); ++i) {
            const auto& d = dec.objects[i];
            if (!used[i] && d.color == obj.color && d.shape == obj.shape && d.cell == obj.cell) {
                used[i] = true;
                ++matched;
                break;
            }
        }
    return static_cast<double>(matched) / static_cast<double>(first.objects.size());
}

}  // namespace

double composition_score(const VideoTensor& video, const PromptAst& ast) {
    return composition_from_decode(decode_scene(video.frame_copy(0)), ast);
}

// ---------------------------------------------------------------------------
// Motion probes
// ---------------------------------------------------------------------------
namespace {

struct Component {
    double cx, cy;
    int area;
};

std::vector<Component> color_components(const Frame& f, const Rgb& col) {
    const int N = kImageSize;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(N * N), 0);
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x) {
            const double dr = f.at(y, x, 0) - col.r, dg = f.at(y, x, 1) - col.g, db = f.at(y, x, 2) - col.b;
            mask[static_cast<std::size_t>(y * N + x)] = dr * dr + dg * dg + db * db <= kColorRadius * kColorRadius;
        }
    std::vector<Component> out;
    std::vector<int> stack;
    for (int start = 0; start < N * N; ++start) {
        if (!mask[static_cast<std::size_t>(start)]) continue;
        mask[static_cast<std::size_t>(start)] = 0;
        stack.assign(1, start);
        double sx = 0, sy = 0;
        int area = 0;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int x = p % N, y = p / N;
            sx += x;
            sy += y;
            ++area;
            const std::array<std::pair<int, int>, 4> nb = {{{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}}};
            for (auto [nx, ny] : nb) {
                if (nx < 0 || ny < 0 || nx >= N || ny >= N) continue;
                const auto q = static_cast<std::size_t>(ny * N + nx);
                if (mask[q]) {
                    mask[q] = 0;
                    stack.push_back(ny * N + nx);
                }
            }
        }
        out.push_back({sx / area, sy / area, area});
    }
    return out;
}

struct Track {
    std::vector<std::optional<Component>> frames;
};

std::optional<Color> turn_target(const ObjectClause& obj) {
    for (const auto& m : obj.motions)
        if (const auto* t = std::get_if<Turn>(&m)) return t->to;
    return std::nullopt;
}

Color color_at(const ObjectClause& obj, int frame) {
    const auto to = turn_target(obj);
    return to && frame >= kTurnFrame ? *to : obj.color;
}

Track track_object(const VideoTensor& video, const ObjectClause& obj) {
    Track tr;
    double px = kGridCenters[static_cast<std::size_t>(cell_col(obj.cell))];
    double py = kGridCenters[static_cast<std::size_t>(cell_row(obj.cell))];
    double limit = kMaxStartOffset;
    bool lost = false;
    for (int f = 0; f < video.frames; ++f) {
        if (lost) {
            tr.frames.emplace_back();
            continue;
        }
        const auto comps = color_components(video.frame_copy(f), color_rgb(color_at(obj, f)));
        std::optional<Component> best;
        double best_d = limit;
        for (const auto& c : comps) {
            const double d = std::hypot(c.cx - px, c.cy - py);
            if (d <= best_d) {
                best_d = d;
                best = c;
            }
        }
        tr.frames.push_back(best);
        if (!best) {
            lost = true;
            continue;
        }
        px = best->cx;
        py = best->cy;
        limit = kMaxTrackJump;
    }
    return tr;
}

// Frame ranges driven by each motion slot.
std::pair<int, int> slot_range(const ObjectClause& obj, std::size_t slot) {
    if (obj.motions.size() == 1) return {0, kFrames - 1};
    return slot == 0 ? std::pair{0, kSecondMotionFrame - 1} : std::pair{kSecondMotionFrame - 1, kFrames - 1};
}

bool turn_matches(const VideoTensor& video, const ObjectClause& obj, const Track& tr) {
    const auto to = turn_target(obj);
    if (!to) return false;
    const Rgb pre = color_rgb(obj.color), post = color_rgb(*to);
    double cx = kGridCenters[static_cast<std::size_t>(cell_col(obj.cell))];
    double cy = kGridCenters[static_cast<std::size_t>(cell_row(obj.cell))];
    const int r = static_cast<int>(kDefaultHalfSize) + 2;
    for (int f = 0; f < video.frames; ++f) {
        if (tr.frames[static_cast<std::size_t>(f)]) {
            cx = tr.frames[static_cast<std::size_t>(f)]->cx;
            cy = tr.frames[static_cast<std::size_t>(f)]->cy;
        }
        const Frame fr = video.frame_copy(f);
        int n_pre = 0, n_post = 0;
        const int x0 = static_cast<int>(std::lround(cx)), y0 = static_cast<int>(std::lround(cy));
        for (int y = std::max(0, y0 - r); y <= std::min(kImageSize - 1, y0 + r); ++y)
            for (int x = std::max(0, x0 - r); x <= std::min(kImageSize - 1, x0 + r); ++x) {
                auto near = [&](const Rgb& c) {
                    const double dr = fr.at(y, x, 0) - c.r, dg = fr.at(y, x, 1) - c.g, db = fr.at(y, x, 2) - c.b;
                    return dr * dr + dg * dg + db * db <= kColorRadius * kColorRadius;
                };
                n_pre += near(pre);
                n_post += near(post);
            }
        const bool ok = f < kTurnFrame ? n_pre > n_post : n_post > n_pre;
        if (!ok) return false;
    }
    return true;
}

std::optional<bool> motion_matches(const ObjectClause& obj, std::size_t slot, const Track& tr) {
    const auto [a, b] = slot_range(obj, slot);
    const auto& ca = tr.frames[static_cast<std::size_t>(a)];
    const auto& cb = tr.frames[static_cast<std::size_t>(b)];
    return std::visit(
        [&](const auto& m) -> std::optional<bool> {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Turn>) {
                return std::nullopt;
            } else {
                if (!ca || !cb) return false;
                if constexpr (std::is_same_v<M, Move>) {
                    double ux = 0, uy = 0;
                    switch (m.dir) {
                        case Direction::left: ux = -1; break;
                        case Direction::right: ux = 1; break;
                        case Direction::up: uy = -1; break;
                        case Direction::down: uy = 1; break;
                    }
                    const double dx = cb->cx - ca->cx, dy = cb->cy - ca->cy;
                    return dx * ux + dy * uy > 0 && std::hypot(dx, dy) >= kMinDisplacement - 1e-9;
                } else if constexpr (std::is_same_v<M, Grow>) {
                    return cb->area >= kAreaRatio * ca->area;
                } else {
                    return cb->area * kAreaRatio <= ca->area;
                }
            }
        },
        obj.motions[slot]);
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

CategoryScores motion_scores_with(const VideoTensor& video, const PromptAst& ast, const SceneDecodeResult& dec) {
    CategoryScores out;
    std::vector<double> binding, dynamic, order;
    for (const auto& obj : ast.objects) {
        if (obj.motions.empty()) continue;
        const Track tr = track_object(video, obj);
        std::vector<bool> slot_ok;
        for (std::size_t s = 0; s < obj.motions.size(); ++s) {
            if (std::holds_alternative<Turn>(obj.motions[s])) {
                const bool ok = turn_matches(video, obj, tr);
                dynamic.push_back(ok ? 1.0 : 0.0);
                slot_ok.push_back(ok);
            } else {
                const bool ok = *motion_matches(obj, s, tr);
                binding.push_back(ok ? 1.0 : 0.0);
                slot_ok.push_back(ok);
            }
        }
        if (obj.motions.size() == 2) order.push_back(slot_ok[0] && slot_ok[1] ? 1.0 : 0.0);
    }
    if (!binding.empty()) out.motion_binding = mean(binding);
    if (!dynamic.empty()) out.dynamic_attribute = mean(dynamic);
    if (!order.empty()) out.motion_order = mean(order);
    out.numeracy = dec.objects.size() == ast.objects.size() ? 1.0 : 0.0;
    return out;
}

}  // namespace

double CategoryScores::overall() const {
    double s = 0;
    int n = 0;
    for (const auto& c : {composition, dynamic_attribute, motion_binding, motion_order, numeracy})
        if (c) {
            s += *c;
            ++n;
        }
    return n ? s / n : 0.0;
}

CategoryScores motion_scores(const VideoTensor& video, const PromptAst& ast) {
    return motion_scores_with(video, ast, decode_scene(video.frame_copy(0)));
}

CategoryScores score_video(const VideoTensor& video, const PromptAst& ast) {
    const auto dec = decode_scene(video.frame_copy(0));
    CategoryScores out = motion_scores_with(video, ast, dec);
    out.composition = composition_from_decode(dec, ast);
    return out;
}

ScoreReport aggregate_scores(const std::vector<CategoryScores>& rows) {
    ScoreReport r;
    r.samples = static_cast<int>(rows.size());
    auto add = [](const std::optional<double>& v, double& sum, int& n) {
        if (v) {
            sum += *v;
            ++n;
        }
    };
    for (const auto& row : rows) {
        add(row.composition, r.composition, r.n_composition);
        add(row.dynamic_attribute, r.dynamic_attribute, r.n_dynamic_attribute);
        add(row.motion_binding, r.motion_binding, r.n_motion_binding);
        add(row.motion_order, r.motion_order, r.n_motion_order);
        add(row.numeracy, r.numeracy, r.n_numeracy);
    }
    auto finish = [](double& sum, int n) { sum = n ? sum / n : 0.0; };
    finish(r.composition, r.n_composition);
    finish(r.dynamic_attribute, r.n_dynamic_attribute);
    finish(r.motion_binding, r.n_motion_binding);
    finish(r.motion_order, r.n_motion_order);
    finish(r.numeracy, r.n_numeracy);
    r.overall = (r.composition + r.dynamic_attribute + r.motion_binding + r.motion_order + r.numeracy) / 5.0;
    return r;
}

// ---------------------------------------------------------------------------
// Features and distances
// ---------------------------------------------------------------------------
namespace {

const FeatureMatrix& projection(std::uint64_t seed, std::size_t dim) {
    static std::mutex mu;
    static std::map<std::pair<std::uint64_t, std::size_t>, FeatureMatrix> cache;
    std::lock_guard lock(mu);
    auto it = cache.find({seed, dim});
    if (it != cache.end()) return it->second;
    Rng rng(seed);
    FeatureMatrix p(kFeatureDim, static_cast<Eigen::Index>(dim));
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = sd * rng.normal();
    return cache.emplace(std::pair{seed, dim}, std::move(p)).first->second;
}

}  // namespace

FeatureMatrix extract_features(const std::vector<std::span<const float>>& items, std::uint64_t proj_seed) {
    if (items.empty()) return FeatureMatrix(0, kFeatureDim);
    const std::size_t dim = items.front().size();
    for (const auto& it : items)
        if (it.size() != dim) throw DimensionError("feature items have different sizes");
    const FeatureMatrix& p = projection(proj_seed, dim);
    // One matrix-vector product per item, so equal items give bit-equal rows
    // (a blocked matrix product may round rows differently by position).
    FeatureMatrix out(static_cast<Eigen::Index>(items.size()), kFeatureDim);
    Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(j)) = items[i][j];
        out.row(static_cast<Eigen::Index>(i)) = (p * x).transpose();
    }
    return out;
}

FeatureMatrix video_features(const std::vector<VideoTensor>& videos, std::uint64_t proj_seed) {
    std::vector<std::span<const float>> items;
    for (const auto& v : videos) items.emplace_back(v.data);
    return extract_features(items, proj_seed);
}

FeatureMatrix frame0_features(const std::vector<VideoTensor>& videos, std::uint64_t proj_seed) {
    std::vector<std::span<const float>> items;
    for (const auto& v : videos) items.push_back(v.frame(0));
    return extract_features(items, proj_seed);
}

double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.cols() != b.cols()) throw DimensionError("feature widths differ: " + std::to_string(a.cols()) + " vs " +
                                                   std::to_string(b.cols()));
    if (a.rows() < 2 || b.rows() < 2) throw DimensionError("need at least 2 rows per side");
    using Mat = Eigen::MatrixXd;
    auto fit = [](const FeatureMatrix& x, Eigen::VectorXd& mu, Mat& cov) {
        mu = x.colwise().mean().transpose();
        const Mat c = x.rowwise() - mu.transpose();
        cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
        cov += 1e-6 * Mat::Identity(x.cols(), x.cols());
    };
    Eigen::VectorXd mu_a, mu_b;
    Mat sa, sb;
    fit(a, mu_a, sa);
    fit(b, mu_b, sb);
    Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
    const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Mat sa_half = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
    Mat m = sa_half * sb * sa_half;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> em(m, Eigen::EigenvaluesOnly);
    const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d);
}

double diversity(const std::vector<VideoTensor>& videos, std::uint64_t proj_seed) {
    if (videos.size() < 2) throw CountError("diversity needs at least 2 videos, got " + std::to_string(videos.size()));
    const FeatureMatrix f = video_features(videos, proj_seed);
    double sum = 0;
    std::size_t pairs = 0;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = i + 1; j < f.rows(); ++j) {
            sum += (f.row(i) - f.row(j)).norm();
            ++pairs;
        }
    return sum / static_cast<double>(pairs) / std::sqrt(static_cast<double>(kFeatureDim));
}

}  // namespace fvg
