// SPDX-License-Identifier: Apache-2.0
#include "fvg/metrics.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <tuple>

using namespace fvg;

namespace {

Frame single_object(Color c, Shape s, Cell cell) {
    SceneSpec scene;
    SceneObject o;
    o.color = color_rgb(c);
    o.shape = s;
    o.cx = static_cast<float>(kGridCenters[static_cast<std::size_t>(cell_col(cell))]);
    o.cy = static_cast<float>(kGridCenters[static_cast<std::size_t>(cell_row(cell))]);
    scene.objects.push_back(o);
    return render_frame(scene);
}

VideoTensor repeat_frame(const Frame& f) {
    VideoTensor v;
    for (int i = 0; i < kFrames; ++i) v.set_frame(i, f);
    return v;
}

VideoTensor simulated(const std::string& prompt, std::uint64_t seed = 1) { return simulate(parse_prompt(prompt), seed); }

// Mean pairwise Euclidean distance of feature rows divided by sqrt(dim), computed directly.
double diversity_oracle(const FeatureMatrix& f) {
    double sum = 0;
    int pairs = 0;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = i + 1; j < f.rows(); ++j) {
            sum += (f.row(i) - f.row(j)).norm();
            ++pairs;
        }
    return sum / pairs / std::sqrt(static_cast<double>(f.cols()));
}

std::vector<VideoTensor> random_videos(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<VideoTensor> out(static_cast<std::size_t>(n));
    for (auto& v : out)
        for (auto& x : v.data) x = static_cast<float>(rng.uniform());
    return out;
}

}  // namespace

TEST_CASE("decoder: every clean single-object render") {
    int checked = 0;
    for (int c = 0; c < kNumColors; ++c)
        for (int s = 0; s < kNumShapes; ++s)
            for (int cell = 0; cell < kNumCells; ++cell) {
                const auto r = decode_scene(single_object(static_cast<Color>(c), static_cast<Shape>(s), static_cast<Cell>(cell)));
                REQUIRE(r.objects.size() == 1);
                CHECK(r.objects[0].color == static_cast<Color>(c));
                CHECK(r.objects[0].shape == static_cast<Shape>(s));
                CHECK(r.objects[0].cell == static_cast<Cell>(cell));
                CHECK(r.objects[0].score >= 0.5);
                CHECK(r.objects[0].score <= 1.0);
                ++checked;
            }
    CHECK(checked == 108);
}

TEST_CASE("decoder: blank and multi-object frames") {
    const auto blank = decode_scene(Frame{std::vector<float>(kFramePixels, 1.0F)});
    CHECK(blank.objects.empty());
    CHECK(blank.residual < 1e-6);

    const auto two = parse_prompt("red square at top-left; blue circle at bottom-right");
    const auto r = decode_scene(simulate(two, 4).frame_copy(0));
    REQUIRE(r.objects.size() == 2);
    for (const auto& o : r.objects) CHECK(o.score > 0.95);
    std::set<std::tuple<Color, Shape, Cell>> got, want;
    for (const auto& o : r.objects) got.insert({o.color, o.shape, o.cell});
    for (const auto& o : two.objects) want.insert({o.color, o.shape, o.cell});
    CHECK(got == want);
}

TEST_CASE("decoder: never more than three objects, scores bounded") {
    Rng rng(17);
    for (int i = 0; i < 10; ++i) {
        Frame f;
        for (auto& x : f.pixels) x = static_cast<float>(rng.uniform());
        const auto r = decode_scene(f);
        CHECK(r.objects.size() <= 3);
        for (const auto& o : r.objects) {
            CHECK(o.score >= 0.0);
            CHECK(o.score <= 1.0);
        }
    }
}

TEST_CASE("composition score") {
    const auto ast = parse_prompt("red square at top-left moves right; blue circle at bottom-right");
    CHECK(composition_score(simulate(ast, 2), ast) == 1.0);
    CHECK(composition_score(VideoTensor(kFrames), ast) == 0.0);
    VideoTensor white;
    std::fill(white.data.begin(), white.data.end(), 1.0F);
    CHECK(composition_score(white, ast) == 0.0);
    auto wrong = ast;
    wrong.objects[1].color = Color::green;
    CHECK(composition_score(simulate(wrong, 2), ast) == 0.5);
    auto reshaped = ast;
    reshaped.objects[0].shape = Shape::circle;
    CHECK(composition_score(simulate(reshaped, 2), ast) == 0.5);
}

TEST_CASE("probes: ground truth scores 1 on random valid prompts") {
    Rng rng(101);
    int scored = 0;
    std::array<int, 4> seen{};
    while (scored < 300) {
        const PromptAst ast = random_prompt(rng);
        VideoTensor v;
        try {
            v = simulate(ast, rng.next_u64());
        } catch (const GeometryError&) {
            continue;
        }
        const auto s = score_video(v, ast);
        REQUIRE(s.composition.has_value());
        REQUIRE(s.numeracy.has_value());
        CHECK(*s.composition == 1.0);
        CHECK(*s.numeracy == 1.0);
        if (s.dynamic_attribute) {
            CHECK(*s.dynamic_attribute == 1.0);
            ++seen[0];
        }
        if (s.motion_binding) {
            CHECK(*s.motion_binding == 1.0);
            ++seen[1];
        }
        if (s.motion_order) {
            CHECK(*s.motion_order == 1.0);
            ++seen[2];
        }
        CHECK(s.overall() == 1.0);
        ++scored;
    }
    for (int i = 0; i < 3; ++i) CHECK(seen[static_cast<std::size_t>(i)] > 10);
}

TEST_CASE("probes: applicable categories") {
    const auto s = score_video(simulated("red square at center"), parse_prompt("red square at center"));
    CHECK_FALSE(s.dynamic_attribute);
    CHECK_FALSE(s.motion_binding);
    CHECK_FALSE(s.motion_order);
    const auto turn = score_video(simulated("red square at center turns blue"), parse_prompt("red square at center turns blue"));
    CHECK(turn.dynamic_attribute);
    CHECK_FALSE(turn.motion_binding);
    const auto then = parse_prompt("blue circle at top-left moves right then moves down");
    const auto t = score_video(simulate(then, 1), then);
    CHECK(t.motion_binding);
    CHECK(t.motion_order);
}

TEST_CASE("probes: frozen, reversed and wrong-colour videos fail") {
    const auto move = parse_prompt("yellow triangle at middle-left moves right");
    const auto gt = simulate(move, 1);
    const auto frozen = repeat_frame(gt.frame_copy(0));
    CHECK(*motion_scores(frozen, move).motion_binding == 0.0);
    CHECK(*motion_scores(frozen, move).numeracy == 1.0);

    const auto then = parse_prompt("blue circle at top-left moves right then moves down");
    const auto v = simulate(then, 1);
    VideoTensor swapped;
    // Second half first: each half now shows the other motion.
    for (int f = 0; f < 4; ++f) {
        swapped.set_frame(f, v.frame_copy(f + 4));
        swapped.set_frame(f + 4, v.frame_copy(f));
    }
    CHECK(*motion_scores(swapped, then).motion_order == 0.0);

    const auto turn = parse_prompt("green square at center turns red");
    const auto no_turn = repeat_frame(simulate(turn, 1).frame_copy(0));
    CHECK(*motion_scores(no_turn, turn).dynamic_attribute == 0.0);
    CHECK(*motion_scores(simulate(turn, 1), turn).dynamic_attribute == 1.0);

    const auto left = parse_prompt("yellow triangle at middle-right moves left");
    CHECK(*motion_scores(gt, left).motion_binding == 0.0);
}

TEST_CASE("probes: uniform noise videos score near zero composition") {
    Rng prompts(7);
    const auto noise = random_videos(64, 8);
    double total = 0;
    for (const auto& v : noise) total += composition_score(v, random_prompt(prompts));
    CHECK(total / 64.0 < 0.05);
}

TEST_CASE("score aggregation") {
    CategoryScores a, b;
    a.composition = 1.0;
    a.numeracy = 1.0;
    a.motion_binding = 0.0;
    b.composition = 0.5;
    b.numeracy = 0.0;
    b.dynamic_attribute = 1.0;
    CHECK(a.overall() == doctest::Approx(2.0 / 3.0));
    const auto r = aggregate_scores({a, b});
    CHECK(r.samples == 2);
    CHECK(r.composition == 0.75);
    CHECK(r.numeracy == 0.5);
    CHECK(r.motion_binding == 0.0);
    CHECK(r.n_motion_binding == 1);
    CHECK(r.dynamic_attribute == 1.0);
    CHECK(r.n_motion_order == 0);
    CHECK(r.overall == doctest::Approx((0.75 + 1.0 + 0.0 + 0.0 + 0.5) / 5.0));
}

TEST_CASE("features: fixed projection") {
    const auto vids = random_videos(4, 1);
    auto dup = vids;
    dup.push_back(vids[2]);
    const auto f = video_features(dup);
    CHECK(f.rows() == 5);
    CHECK(f.cols() == kFeatureDim);
    CHECK(f.row(4) == f.row(2));
    CHECK(f.row(0) != f.row(1));
    CHECK(video_features(dup) == f);
    CHECK(video_features(dup, 43) != f);
    const auto f0 = frame0_features(vids);
    CHECK(f0.cols() == kFeatureDim);
    // Projection entries are N(0, 1/input_dim): a unit input vector maps to
    // squared feature norm feature_dim / input_dim on average.
    std::vector<float> e(static_cast<std::size_t>(kFramePixels), 0.0F);
    double sq = 0;
    for (int i = 0; i < 200; ++i) {
        std::fill(e.begin(), e.end(), 0.0F);
        e[static_cast<std::size_t>(i * 13)] = 1.0F;
        sq += extract_features({std::span<const float>(e)}).squaredNorm();
    }
    CHECK(sq / 200.0 == doctest::Approx(double(kFeatureDim) / kFramePixels).epsilon(0.1));
}

TEST_CASE("features: dataset videos map to distinct rows") {
    const auto ds = build_dataset(128, 3);
    const auto f = video_features(ds.videos);
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = i + 1; j < f.rows(); ++j)
            if (ds.videos[static_cast<std::size_t>(i)] != ds.videos[static_cast<std::size_t>(j)]) REQUIRE(f.row(i) != f.row(j));
}

TEST_CASE("frechet distance") {
    Rng rng(5);
    auto gaussian = [&](int n, int d, const std::vector<double>& mu) {
        FeatureMatrix m(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = mu[static_cast<std::size_t>(j)] + rng.normal();
        return m;
    };
    const auto x = gaussian(500, 6, std::vector<double>(6, 0.0));
    const auto y = gaussian(400, 6, {0.5, 0, 0, 0, 0, 0});
    CHECK(std::abs(frechet_distance(x, x)) < 1e-6);
    CHECK(frechet_distance(x, y) >= 0.0);
    CHECK(std::abs(frechet_distance(x, y) - frechet_distance(y, x)) < 1e-8);

    const auto a = gaussian(40000, 4, {0, 0, 0, 0});
    const auto b = gaussian(40000, 4, {1, 2, 0, 0});
    CHECK(frechet_distance(a, b) == doctest::Approx(5.0).epsilon(0.05));

    // Covariance term: N(0, I) vs N(0, 4I) in d dims has trace term d (1 + 4 - 2*2) = d.
    FeatureMatrix c = gaussian(40000, 3, std::vector<double>(3, 0.0));
    FeatureMatrix d2 = 2.0 * gaussian(40000, 3, std::vector<double>(3, 0.0));
    CHECK(frechet_distance(c, d2) == doctest::Approx(3.0).epsilon(0.05));

    CHECK_THROWS_AS(frechet_distance(x, gaussian(10, 5, std::vector<double>(5, 0.0))), DimensionError);
}

TEST_CASE("diversity metric") {
    const auto vids = random_videos(6, 2);
    CHECK(diversity(vids) == doctest::Approx(diversity_oracle(video_features(vids))).epsilon(1e-12));
    CHECK(diversity(std::vector<VideoTensor>(25, vids[0])) == 0.0);
    CHECK_THROWS_AS(diversity({vids[0]}), CountError);
    CHECK_THROWS_AS(diversity({}), CountError);
    auto reversed = vids;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(diversity(reversed) == doctest::Approx(diversity(vids)).epsilon(1e-12));
    auto two = std::vector<VideoTensor>{vids[0], vids[1]};
    CHECK(diversity(two) > 0.0);
}

TEST_CASE("diversity: effect of adding a duplicate") {
    // With pairwise distances d and S = sum over pairs, duplicating item x in a
    // set of n changes the mean from S / C(n,2) to (S + D_x) / C(n+1,2), where
    // D_x = sum_j d(x, j). It does not increase iff D_x (n - 1) <= 2 S.
    Rng rng(9);
    int increases = 0, checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(5));
        std::vector<VideoTensor> set;
        // Mix near-duplicates with outliers so both outcomes occur.
        const auto base = random_videos(1, rng.next_u64())[0];
        for (int i = 0; i < n; ++i) {
            VideoTensor v = base;
            const double amp = rng.uniform() < 0.3 ? 1.0 : 0.05;
            for (auto& x : v.data) x = static_cast<float>(std::clamp(x + amp * (rng.uniform() - 0.5), 0.0, 1.0));
            set.push_back(v);
        }
        const auto f = video_features(set);
        double S = 0;
        std::vector<double> D(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) {
                    const double d = (f.row(i) - f.row(j)).norm();
                    D[static_cast<std::size_t>(i)] += d;
                    if (i < j) S += d;
                }
        const double before = diversity(set);
        for (int x = 0; x < n; ++x) {
            auto bigger = set;
            bigger.push_back(set[static_cast<std::size_t>(x)]);
            const double after = diversity(bigger);
            const double margin = D[static_cast<std::size_t>(x)] * (n - 1) - 2 * S;
            if (std::abs(margin) < 1e-9 * S) continue;
            CHECK((after <= before) == (margin <= 0));
            increases += after > before;
            ++checked;
        }
        // Duplicating every item once always lowers the mean by 2(n-1)/(2n-1).
        auto doubled = set;
        doubled.insert(doubled.end(), set.begin(), set.end());
        CHECK(diversity(doubled) == doctest::Approx(before * 2.0 * (n - 1) / (2.0 * n - 1)).epsilon(1e-9));
    }
    CHECK(checked > 100);
    // The blanket "a duplicate never increases diversity" does not hold for
    // mean pairwise distance; outliers make it increase.
    CHECK(increases > 0);
}
