// SPDX-License-Identifier: Apache-2.0
#include "fvg/metrics.hpp"
#include "fvg/sampling.hpp"
#include "fvg/tensor_io.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace fvg;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.embed_dim = 16;
    c.blocks = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    return c;
}

// Random (untrained) base and adapters with nonzero B, saved as checkpoints.
struct TinyCheckpoints {
    test::TempDir dir{"sampling_ckpt"};
    std::filesystem::path base, lora;
    TinyCheckpoints() {
        base = dir.path / "base.fvgc";
        lora = dir.path / "lora.fvgc";
        const auto p = init_params<float>(tiny_model(), 3);
        save_base_checkpoint(base, p);
        auto ad = init_lora<float>(p.layout, 4, 4.0, 4);
        Rng rng(5);
        for (const auto& pr : ad.pairs) {
            const auto& b = ad.layout.at(pr.b);
            for (std::size_t i = 0; i < b.size(); ++i) ad.data(pr.b)[i] = static_cast<float>(0.05 * rng.normal());
        }
        save_lora_checkpoint(lora, ad, p.config, file_sha256(base));
    }
};

const TinyCheckpoints& checkpoints() {
    static const TinyCheckpoints c;
    return c;
}

SampleConfig config(SampleMode mode, int steps, std::uint64_t seed, double s = 2.0) {
    SampleConfig c;
    c.mode = mode;
    c.steps = steps;
    c.seed = seed;
    c.cfg_scale = s;
    return c;
}

}  // namespace

TEST_CASE("schedule") {
    const auto one = make_schedule(1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].t == 1.0);
    CHECK(one[0].dt == 1.0);
    const auto four = make_schedule(4);
    REQUIRE(four.size() == 4);
    const double ts[] = {1.0, 0.75, 0.5, 0.25};
    for (int i = 0; i < 4; ++i) {
        CHECK(four[static_cast<std::size_t>(i)].t == ts[i]);
        CHECK(four[static_cast<std::size_t>(i)].dt == 0.25);
    }
    for (int n : {3, 7, 15, 30, 50}) {
        const auto s = make_schedule(n);
        CHECK(s.size() == static_cast<std::size_t>(n));
        double sum = 0;
        for (const auto& st : s) sum += st.dt;
        CHECK(sum == 1.0);
        for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i].t < s[i - 1].t);
    }
    CHECK_THROWS_AS(make_schedule(0), ConfigError);
}

TEST_CASE("classifier-free guidance") {
    const std::vector<double> vc = {0.1, -2.0, 3.3}, vu = {1.7, 0.4, -0.9};
    CHECK(cfg_velocity(vc, vu, 1.0) == vc);
    CHECK(cfg_velocity(vc, vu, 0.0) == vu);
    const std::vector<double> zero(3, 0.0);
    const auto doubled = cfg_velocity(vc, zero, 2.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(doubled[i] == 2.0 * vc[i]);
    const auto mid = cfg_velocity(vc, vu, 0.5);
    for (std::size_t i = 0; i < 3; ++i) CHECK(mid[i] == doctest::Approx(0.5 * (vc[i] + vu[i])));
    CHECK_THROWS_AS(cfg_velocity(vc, std::vector<double>(2), 1.0), ShapeError);
}

TEST_CASE("sample config") {
    SampleConfig c;
    CHECK(c.steps == 50);
    CHECK(c.cfg_scale == 2.0);
    CHECK_NOTHROW(c.validate());
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.steps = 5;
    c.cfg_scale = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_sample_mode("i2v_text") == SampleMode::i2v_text);
    CHECK(to_string(SampleMode::factorized) == "factorized");
    CHECK_THROWS_AS(parse_sample_mode("v2v"), ConfigError);
}

TEST_CASE("Euler with the exact constant field lands on the data") {
    const auto video = simulate(parse_prompt("red square at top-left moves right"), 1);
    std::vector<double> data(video.data.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = 2.0 * video.data[i] - 1.0;
    const auto eps = initial_noise(9, data.size());
    std::vector<double> velocity(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) velocity[i] = data[i] - eps[i];
    const VelocityFn oracle = [&](std::span<const double>, std::span<const double>, const TokenSequence&) { return velocity; };
    for (int n : {1, 2, 7, 15, 30, 50}) {
        const auto z = euler_integrate(oracle, eps, tokenize("red square at top-left moves right"), n, 2.0);
        double err = 0;
        for (std::size_t i = 0; i < z.size(); ++i) err = std::max(err, std::abs(z[i] - data[i]));
        CHECK(err < 1e-12);
        const auto decoded = decode_latent(z, kFrames);
        double pixel_err = 0;
        for (std::size_t i = 0; i < z.size(); ++i) pixel_err = std::max(pixel_err, std::abs(double(decoded.data[i]) - video.data[i]));
        CHECK(pixel_err < 1e-6);
    }
}

TEST_CASE("integrator calls and timestep vectors") {
    std::vector<std::vector<double>> seen_t;
    std::vector<bool> seen_pad;
    const std::size_t size = static_cast<std::size_t>(kFrames) * kFramePixels;
    const VelocityFn field = [&](std::span<const double> z, std::span<const double> t, const TokenSequence& tok) {
        seen_t.emplace_back(t.begin(), t.end());
        seen_pad.push_back(tok.all_pad());
        return std::vector<double>(z.size(), 0.0);
    };
    const auto tok = tokenize("blue circle at center");
    euler_integrate(field, std::vector<double>(size, 0.0), tok, 5, 2.0);
    CHECK(seen_t.size() == 10);  // conditional plus unconditional per step
    CHECK(std::count(seen_pad.begin(), seen_pad.end(), true) == 5);
    CHECK(seen_t[0] == std::vector<double>(8, 1.0));
    CHECK(seen_t[2] == std::vector<double>(8, 0.8));

    seen_t.clear();
    euler_integrate(field, std::vector<double>(size, 0.0), tok, 5, 1.0);
    CHECK(seen_t.size() == 5);  // s = 1 needs only the conditional branch

    seen_t.clear();
    seen_pad.clear();
    const std::vector<double> anchor(static_cast<std::size_t>(kFramePixels), 0.25);
    euler_integrate(field, std::vector<double>(size, 0.0), tok, 4, 3.0, &anchor);
    REQUIRE(seen_t.size() == 8);
    for (const auto& t : seen_t) {
        CHECK(t[0] == 0.0);
        for (std::size_t f = 1; f < 8; ++f) CHECK(t[f] == t[1]);
    }
    CHECK(seen_t[6][1] == 0.25);
}

TEST_CASE("anchor is re-injected before every evaluation and after the last step") {
    const std::size_t size = static_cast<std::size_t>(kFrames) * kFramePixels;
    std::vector<double> anchor(static_cast<std::size_t>(kFramePixels));
    Rng rng(3);
    for (auto& a : anchor) a = rng.uniform() * 2 - 1;
    int calls = 0;
    const VelocityFn field = [&](std::span<const double> z, std::span<const double>, const TokenSequence&) {
        ++calls;
        for (std::size_t i = 0; i < anchor.size(); ++i) REQUIRE(z[i] == anchor[i]);
        return std::vector<double>(z.size(), 1.0);  // would push frame 0 away if not re-injected
    };
    const auto z = euler_integrate(field, initial_noise(1, size), tokenize("red square at center"), 6, 2.0, &anchor);
    CHECK(calls == 12);
    for (std::size_t i = 0; i < anchor.size(); ++i) REQUIRE(z[i] == anchor[i]);
}

TEST_CASE("initial noise is seeded and standard normal") {
    const auto a = initial_noise(1, 20000), b = initial_noise(1, 20000), c = initial_noise(2, 20000);
    CHECK(a == b);
    CHECK(a != c);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / 20000.0;
    double var = 0;
    for (double v : a) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 4.0 / std::sqrt(20000.0));
    CHECK(var / 20000.0 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("decode clamps into the pixel range") {
    std::vector<double> z(static_cast<std::size_t>(kFrames) * kFramePixels, 0.0);
    z[0] = -3.0;
    z[1] = 3.0;
    z[2] = 0.5;
    const auto v = decode_latent(z, kFrames);
    CHECK(v.data[0] == 0.0F);
    CHECK(v.data[1] == 1.0F);
    CHECK(v.data[2] == 0.75F);
    CHECK(v.data[3] == 0.5F);
    CHECK_THROWS_AS(decode_latent(std::vector<double>(10), kFrames), ShapeError);
}

TEST_CASE("t2v sampling with a network") {
    const Generator gen(checkpoints().base, {});
    CHECK_FALSE(gen.has_adapters());
    CHECK_THROWS_AS(gen.adapted(), MissingArtifactError);
    const auto tok = tokenize("green triangle at bottom-right");
    const auto v1 = gen.sample_t2v(tok, config(SampleMode::t2v, 3, 7));
    CHECK(v1 == gen.sample_t2v(tok, config(SampleMode::t2v, 3, 7)));
    CHECK(v1 != gen.sample_t2v(tok, config(SampleMode::t2v, 3, 8)));
    for (float x : v1.data) REQUIRE((x >= 0.0F && x <= 1.0F));
    // s = 0 ignores the prompt entirely.
    const auto u1 = gen.sample_t2v(tok, config(SampleMode::t2v, 3, 7, 0.0));
    const auto u2 = gen.sample_t2v(tokenize("red square at top-left"), config(SampleMode::t2v, 3, 7, 0.0));
    const auto u3 = gen.sample_t2v(unconditional_tokens(), config(SampleMode::t2v, 3, 7, 2.0));
    CHECK(u1 == u2);
    CHECK(u1 == u3);
}

TEST_CASE("anchored sampling: frame 0 is the anchor bit for bit") {
    const Generator gen(checkpoints().base, checkpoints().lora);
    REQUIRE(gen.has_adapters());
    const auto ast = parse_prompt("yellow square at top-right moves left; blue circle at bottom-left turns red");
    const Frame anchor = render_frame(scene_from_ast(reduce_to_first_frame(ast), 12));
    for (auto mode : {SampleMode::i2v, SampleMode::i2v_text, SampleMode::factorized})
        for (int steps : {1, 4, 15})
            for (std::uint64_t seed : {0ULL, 5ULL}) {
                const auto v = gen.sample_anchored(anchor, tokenize(ast), config(mode, steps, seed));
                CHECK(v.frame_copy(0) == anchor);
            }
    const auto a15 = gen.sample_anchored(anchor, tokenize(ast), config(SampleMode::factorized, 15, 1));
    const auto a4 = gen.sample_anchored(anchor, tokenize(ast), config(SampleMode::factorized, 4, 1));
    CHECK(a15.frame_copy(0) == a4.frame_copy(0));
    CHECK(a15 != a4);
    CHECK_THROWS_AS(gen.sample_anchored(anchor, tokenize(ast), config(SampleMode::t2v, 4, 1)), ConfigError);
}

TEST_CASE("anchored modes differ only in the text input") {
    const Generator gen(checkpoints().base, checkpoints().lora);
    const Frame anchor = render_frame(scene_from_ast(parse_prompt("red circle at center"), 1));
    const auto tok = tokenize("red circle at center grows");
    const auto i2v = gen.sample_anchored(anchor, tok, config(SampleMode::i2v, 3, 2));
    CHECK(i2v == gen.sample_anchored(anchor, tokenize("blue square at top-left"), config(SampleMode::i2v, 3, 2)));
    CHECK(i2v == gen.sample_anchored(anchor, unconditional_tokens(), config(SampleMode::i2v_text, 3, 2)));
    const auto with_text = gen.sample_anchored(anchor, tok, config(SampleMode::i2v_text, 3, 2));
    CHECK(with_text != i2v);
    CHECK(with_text == gen.sample_anchored(anchor, tok, config(SampleMode::factorized, 3, 2)));
}

TEST_CASE("factorized pipeline") {
    const Generator gen(checkpoints().base, checkpoints().lora);
    const std::string prompt = "green square at middle-left turns blue then moves right";
    const auto r1 = run_factorized_pipeline(gen, prompt, 3, config(SampleMode::t2v, 2, 1));
    CHECK(r1.ast == parse_prompt(prompt));
    CHECK(r1.video.frame_copy(0) == r1.anchor);
    // The anchor shows the pre-transition colour at the prompted cell.
    const auto decoded = decode_scene(r1.anchor);
    REQUIRE(decoded.objects.size() == 1);
    CHECK(decoded.objects[0].color == Color::green);
    CHECK(decoded.objects[0].shape == Shape::square);
    CHECK(decoded.objects[0].cell == r1.ast.objects[0].cell);
    // Another anchor seed: same decoded semantics, different jitter or background.
    const auto r2 = run_factorized_pipeline(gen, prompt, 4, config(SampleMode::t2v, 2, 1));
    const auto d2 = decode_scene(r2.anchor);
    REQUIRE(d2.objects.size() == 1);
    CHECK(d2.objects[0].color == decoded.objects[0].color);
    CHECK(d2.objects[0].cell == decoded.objects[0].cell);
    CHECK_FALSE(r2.anchor == r1.anchor);
    CHECK_THROWS_AS(run_factorized_pipeline(gen, "green square at nowhere", 3, config(SampleMode::t2v, 2, 1)), SyntaxError);
}

TEST_CASE("generator artifact errors") {
    const auto& ck = checkpoints();
    CHECK_THROWS_AS(Generator(ck.dir.path / "absent.fvgc", {}), MissingArtifactError);
    CHECK_THROWS_AS(Generator(ck.base, ck.dir.path / "absent.fvgc"), MissingArtifactError);
    test::TempDir other("sampling_other");
    save_base_checkpoint(other.path / "base.fvgc", init_params<float>(tiny_model(), 99));
    CHECK_THROWS_AS(Generator(other.path / "base.fvgc", ck.lora), HashMismatchError);
}

TEST_CASE("sample outputs on disk") {
    const Generator gen(checkpoints().base, checkpoints().lora);
    const auto r = run_factorized_pipeline(gen, "red square at top-left", 1, config(SampleMode::t2v, 2, 1));
    test::TempDir dir("sampling_out");
    write_sample_outputs(dir.path, r.video, &r.anchor, {{"mode", "factorized"}});
    for (int f = 0; f < 8; ++f) CHECK(std::filesystem::exists(dir.path / ("frame_" + std::to_string(f) + ".ppm")));
    CHECK(read_file_bytes(dir.path / "anchor.ppm") == read_file_bytes(dir.path / "frame_0.ppm"));
    CHECK(nlohmann::json::parse(read_text_file(dir.path / "meta.json"))["mode"] == "factorized");
    const auto back = read_fvt(dir.path / "video.fvt");
    CHECK(back.shape == std::vector<std::int64_t>{8, 32, 32, 3});
    CHECK(back.values == r.video.data);
}
