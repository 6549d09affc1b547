// SPDX-License-Identifier: Apache-2.0
#include "fvg/checkpoint.hpp"
#include "fvg/training.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace fvg;

namespace {

VideoTensor sample_video() { return simulate(parse_prompt("red square at top-left moves right; blue circle at bottom-right"), 3); }

ModelConfig tiny_model() {
    ModelConfig c;
    c.embed_dim = 16;
    c.blocks = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    return c;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.batch = 4;
    t.pretrain_steps = 6;
    t.finetune_steps = 6;
    t.log_every = 2;
    return t;
}

const Dataset& tiny_dataset() {
    static const Dataset ds = build_dataset(24, 11);
    return ds;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.cond_drop = 1.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("cond_drop"), ConfigError);
    c = TrainConfig{};
    c.pretrain_lr = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("pretrain_lr"), ConfigError);
    c = TrainConfig{};
    c.anchor_loss = "partial";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch = 3;
    c.anchor_loss = "masked";
    const nlohmann::json j = c;
    CHECK(j.get<TrainConfig>() == c);
}

TEST_CASE("pretrain example: endpoints and target") {
    const auto video = sample_video();
    const auto tok = tokenize("red square at top-left moves right; blue circle at bottom-right");
    Rng r0(1), r1(1);
    const auto at0 = make_pretrain_example<double>(video, tok, r0, 0.0, 0.0);
    const auto at1 = make_pretrain_example<double>(video, tok, r1, 0.0, 1.0);
    for (std::size_t i = 0; i < video.data.size(); ++i) {
        const double data = 2.0 * video.data[i] - 1.0;
        REQUIRE(at0.data[i] == data);
        REQUIRE(at0.z_t[i] == data);
        // Same RNG stream, so eps agrees: at t = 1 z_t is eps and target = data - eps.
        REQUIRE(at1.z_t[i] == doctest::Approx(data - at0.target[i]).epsilon(1e-15));
        REQUIRE(at1.target[i] == at0.target[i]);
    }
    CHECK(at0.t_vec == std::vector<double>(8, 0.0));
    CHECK(at1.t_vec == std::vector<double>(8, 1.0));
    CHECK(at0.loss_mask == std::vector<std::uint8_t>(8, 1));
    CHECK_FALSE(at0.anchor_index.has_value());
    CHECK(at0.tokens == tok);
}

TEST_CASE("pretrain example: interpolant and noise statistics") {
    const auto video = sample_video();
    Rng rng(9);
    const auto ex = make_pretrain_example<double>(video, unconditional_tokens(), rng, 0.0);
    const double t = ex.t_vec[0];
    CHECK(t > 0.0);
    CHECK(t < 1.0);
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < ex.data.size(); ++i) {
        const double eps = ex.data[i] - ex.target[i];
        REQUIRE(ex.z_t[i] == doctest::Approx((1 - t) * ex.data[i] + t * eps).epsilon(1e-12));
        sum += eps;
        sq += eps * eps;
    }
    const double n = static_cast<double>(ex.data.size());
    CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("conditioning dropout rate") {
    const auto video = sample_video();
    const auto tok = tokenize("red square at top-left");
    Rng rng(4);
    int dropped = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) dropped += make_pretrain_example<float>(video, tok, rng, 0.1, 0.5).tokens.all_pad();
    // Binomial(2000, 0.1): mean 200, sd 13.4.
    CHECK(dropped > 200 - 4 * 14);
    CHECK(dropped < 200 + 4 * 14);
}

TEST_CASE("anchor example: injected frame") {
    const auto video = sample_video();
    const auto tok = tokenize("red square at top-left moves right; blue circle at bottom-right");
    const std::size_t per = static_cast<std::size_t>(kFramePixels);
    for (int k = 0; k < 8; ++k) {
        Rng rng(static_cast<std::uint64_t>(k));
        const auto ex = make_anchor_example<float>(video, tok, rng, 0.0, false, std::nullopt, k);
        REQUIRE(ex.anchor_index == k);
        int zero_t = 0;
        for (int f = 0; f < 8; ++f) {
            if (ex.t_vec[static_cast<std::size_t>(f)] == 0.0) ++zero_t;
            else CHECK(ex.t_vec[static_cast<std::size_t>(f)] == ex.t_vec[static_cast<std::size_t>(k == 0 ? 1 : 0)]);
        }
        CHECK(zero_t == 1);
        CHECK(ex.t_vec[static_cast<std::size_t>(k)] == 0.0);
        for (std::size_t i = k * per; i < (k + 1) * per; ++i) REQUIRE(ex.z_t[i] == ex.data[i]);
        CHECK(ex.loss_mask == std::vector<std::uint8_t>(8, 1));
    }
    Rng rng(3);
    const auto masked = make_anchor_example<float>(video, tok, rng, 0.0, true, std::nullopt, 5);
    for (int f = 0; f < 8; ++f) CHECK(masked.loss_mask[static_cast<std::size_t>(f)] == (f == 5 ? 0 : 1));
    Rng bad(1);
    CHECK_THROWS_AS(make_anchor_example<float>(video, tok, bad, 0.0, false, std::nullopt, 8), ShapeError);
}

TEST_CASE("anchor example: t = 0 gives a fully clean input") {
    const auto video = sample_video();
    Rng rng(5);
    const auto ex = make_anchor_example<double>(video, unconditional_tokens(), rng, 0.0, false, 0.0);
    CHECK(ex.z_t == ex.data);
    CHECK(ex.t_vec == std::vector<double>(8, 0.0));
    CHECK(flow_loss<double>(ex.target, ex.target, ex.loss_mask) == 0.0);
}

TEST_CASE("anchor index is uniform over frames") {
    const VideoTensor video;
    Rng rng(2024);
    std::array<int, 8> counts{};
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(*make_anchor_example<float>(video, {}, rng, 0.0).anchor_index)];
    const double mean = n / 8.0, sd = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
    for (int c : counts) {
        CHECK(c > mean - 3 * sd);
        CHECK(c < mean + 3 * sd);
    }
}

TEST_CASE("flow loss") {
    std::vector<double> target(16), v(16);
    Rng rng(1);
    for (auto& x : target) x = rng.normal();
    const std::vector<std::uint8_t> full(4, 1);
    CHECK(flow_loss<double>(target, target, full) == 0.0);
    for (std::size_t i = 0; i < 16; ++i) v[i] = target[i] + 1.0;
    CHECK(flow_loss<double>(v, target, full) == 1.0);
    std::vector<std::uint8_t> m = {1, 0, 1, 1};
    const double before = flow_loss<double>(v, target, m);
    for (std::size_t i = 4; i < 8; ++i) v[i] = 1e6;
    CHECK(flow_loss<double>(v, target, m) == before);
    CHECK(before == 1.0);
    for (const auto& mask : {std::vector<std::uint8_t>{0, 0, 0, 0}, std::vector<std::uint8_t>{0, 1, 0, 1}})
        CHECK(flow_loss<double>(target, target, mask) == 0.0);
    CHECK_THROWS_AS(flow_loss<double>(std::vector<double>(15), target, full), ShapeError);

    // Gradient of the loss against a central difference.
    std::vector<double> w(16);
    for (auto& x : w) x = rng.normal();
    const auto g = flow_loss_grad<double>(w, target, m);
    for (std::size_t i = 0; i < 16; ++i) {
        auto p = w, q = w;
        p[i] += 1e-6;
        q[i] -= 1e-6;
        CHECK(g[i] == doctest::Approx((flow_loss<double>(p, target, m) - flow_loss<double>(q, target, m)) / 2e-6).epsilon(1e-6));
    }
}

TEST_CASE("pretraining is deterministic across worker counts") {
    const auto& ds = tiny_dataset();
    TrainResult r1, r3;
    const auto p1 = pretrain_t2v<float>(ds, tiny_model(), tiny_train(), 5, 1, &r1);
    const auto p3 = pretrain_t2v<float>(ds, tiny_model(), tiny_train(), 5, 3, &r3);
    CHECK(p1.values == p3.values);
    REQUIRE(r1.log.size() == 3);
    for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r3.log[i].loss);
    CHECK(r1.steps == 6);
    CHECK(r1.log[0].step == 2);
    CHECK(r1.log[0].lr == doctest::Approx(3e-4));
    CHECK(r1.initial_smoothed_loss == r1.log.front().loss);
    CHECK(r1.final_smoothed_loss == r1.log.back().loss);

    const auto other = pretrain_t2v<float>(ds, tiny_model(), tiny_train(), 6, 1);
    CHECK(other.values != p1.values);

    test::TempDir dir("pretrain_det");
    save_base_checkpoint(dir.path / "a.fvgc", p1);
    save_base_checkpoint(dir.path / "b.fvgc", p3);
    CHECK(read_file_bytes(dir.path / "a.fvgc") == read_file_bytes(dir.path / "b.fvgc"));

    write_train_log(dir.path / "log.csv", r1.log);
    const std::string log = read_text_file(dir.path / "log.csv");
    CHECK(log.rfind("step,loss,lr\n2,", 0) == 0);
    write_train_timing(dir.path / "timing.csv", r1.log);
    CHECK(read_text_file(dir.path / "timing.csv").rfind("step,wallclock_s\n", 0) == 0);
}

TEST_CASE("pretraining reduces the loss on a tiny problem") {
    const auto& ds = tiny_dataset();
    auto cfg = tiny_train();
    cfg.pretrain_steps = 60;
    cfg.log_every = 10;
    cfg.pretrain_lr = 3e-3;
    TrainResult r;
    pretrain_t2v<float>(ds, tiny_model(), cfg, 1, 1, &r);
    for (const auto& row : r.log) CHECK(std::isfinite(row.loss));
    CHECK(r.final_smoothed_loss < r.initial_smoothed_loss);
}

TEST_CASE("finetuning freezes the base and is deterministic") {
    const auto& ds = tiny_dataset();
    const auto base = pretrain_t2v<float>(ds, tiny_model(), tiny_train(), 5, 1);
    const auto snapshot = base.values;
    TrainResult r1, r2;
    const auto a1 = finetune_anchor<float>(base, ds, tiny_train(), 8, 1, &r1);
    const auto a2 = finetune_anchor<float>(base, ds, tiny_train(), 8, 2, &r2);
    CHECK(base.values == snapshot);
    CHECK(a1.values == a2.values);
    CHECK(a1.rank == 8);
    CHECK(r1.log.size() == 3);
    const auto fresh = init_lora<float>(base.layout, 8, 8.0, 0);
    CHECK(a1.values.size() == fresh.values.size());
    bool b_moved = false;
    for (const auto& pr : a1.pairs) {
        const auto& b = a1.layout.at(pr.b);
        for (std::size_t i = 0; i < b.size(); ++i) b_moved = b_moved || a1.data(pr.b)[i] != 0.0F;
    }
    CHECK(b_moved);

    test::TempDir dir("finetune_frozen");
    save_base_checkpoint(dir.path / "base.fvgc", base);
    const auto before = read_file_bytes(dir.path / "base.fvgc");
    const auto loaded = load_base_checkpoint<float>(dir.path / "base.fvgc");
    finetune_anchor<float>(loaded, ds, tiny_train(), 8, 1);
    CHECK(read_file_bytes(dir.path / "base.fvgc") == before);
}

TEST_CASE("non-finite loss raises DivergenceError") {
    const auto& ds = tiny_dataset();
    auto cfg = tiny_train();
    cfg.pretrain_lr = 1e30;
    cfg.grad_clip = 1e30;
    cfg.pretrain_steps = 40;
    CHECK_THROWS_AS(pretrain_t2v<float>(ds, tiny_model(), cfg, 1, 1), DivergenceError);
}
