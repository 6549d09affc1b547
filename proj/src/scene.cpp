// SPDX-License-Identifier: Apache-2.0
#include "fvg/scene.hpp"

#include "fvg/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace fvg {

namespace {

constexpr std::uint64_t kSceneStream = 0x5343454E45ULL;  // "SCENE"
constexpr std::uint64_t kPromptStream = 0x50524F4D5054ULL;
constexpr std::uint64_t kJitterStream = 0x4A4954544552ULL;
constexpr int kMaxAttempts = 10000;

}  // namespace

bool object_covers(const SceneObject& o, int px, int py) {
    const float h = o.half_size;
    switch (o.shape) {
        case Shape::square:
            return px >= o.cx - h && px < o.cx + h && py >= o.cy - h && py < o.cy + h;
        case Shape::circle: {
            const float dx = static_cast<float>(px) - o.cx;
            const float dy = static_cast<float>(py) - o.cy;
            return dx * dx + dy * dy <= h * h;
        }
        case Shape::triangle: {
            if (!(py >= o.cy - h && py < o.cy + h)) return false;
            // Apex at the top row, base on the bottom row of the box.
            const float frac = (static_cast<float>(py) - (o.cy - h) + 0.5F) / (2.0F * h);
            return std::abs(static_cast<float>(px) + 0.5F - o.cx) <= frac * h;
        }
    }
    return false;
}

namespace {

void check_geometry(const SceneSpec& s, int frame) {
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        const auto& o = s.objects[i];
        const float lim = static_cast<float>(kImageSize) - o.half_size;
        if (o.cx < o.half_size || o.cx >= lim || o.cy < o.half_size || o.cy >= lim) {
            std::ostringstream msg;
            msg << "object " << i << " leaves the valid region at frame " << frame << " (center " << o.cx << ","
                << o.cy << ", half size " << o.half_size << ")";
            throw GeometryError(msg.str());
        }
    }
    // Pixel extents [c-h, c+h] must keep at least one background pixel between objects.
    for (std::size_t i = 0; i < s.objects.size(); ++i)
        for (std::size_t j = i + 1; j < s.objects.size(); ++j) {
            const auto& a = s.objects[i];
            const auto& b = s.objects[j];
            auto separated = [](float ca, float ha, float cb, float hb) {
                const float a_lo = std::floor(ca - ha), a_hi = std::floor(ca + ha);
                const float b_lo = std::floor(cb - hb), b_hi = std::floor(cb + hb);
                return b_lo > a_hi + 1 || a_lo > b_hi + 1;
            };
            if (!separated(a.cx, a.half_size, b.cx, b.half_size) && !separated(a.cy, a.half_size, b.cy, b.half_size))
                throw GeometryError("objects " + std::to_string(i) + " and " + std::to_string(j) +
                                    " touch at frame " + std::to_string(frame));
        }
}

std::string json_line(const DatasetEntry& e) {
    nlohmann::json j = {{"id", e.id}, {"prompt", e.prompt}, {"jitter_seed", e.jitter_seed}, {"split", e.split}};
    return j.dump();
}

}  // namespace

Rgb color_rgb(Color c) {
    switch (c) {
        case Color::red: return {1.0F, 0.0F, 0.0F};
        case Color::green: return {0.0F, 1.0F, 0.0F};
        case Color::blue: return {0.0F, 0.0F, 1.0F};
        case Color::yellow: return {1.0F, 1.0F, 0.0F};
    }
    return {};
}

Frame VideoTensor::frame_copy(int f) const {
    Frame out;
    auto src = frame(f);
    std::copy(src.begin(), src.end(), out.pixels.begin());
    return out;
}

void VideoTensor::set_frame(int f, const Frame& fr) { std::copy(fr.pixels.begin(), fr.pixels.end(), frame(f).begin()); }

SceneSpec scene_from_ast(const PromptAst& ast, std::uint64_t jitter_seed) {
    Rng rng(derive_seed(jitter_seed, {kSceneStream}));
    SceneSpec scene;
    scene.background_shade = static_cast<float>(0.85 + 0.15 * rng.uniform());
    for (const auto& obj : ast.objects) {
        SceneObject o;
        o.color = color_rgb(obj.color);
        o.shape = obj.shape;
        const int jx = static_cast<int>(rng.below(3)) - 1;
        const int jy = static_cast<int>(rng.below(3)) - 1;
        o.cx = static_cast<float>(kGridCenters[static_cast<std::size_t>(cell_col(obj.cell))] + jx);
        o.cy = static_cast<float>(kGridCenters[static_cast<std::size_t>(cell_row(obj.cell))] + jy);
        o.half_size = kDefaultHalfSize;
        scene.objects.push_back(o);
    }
    return scene;
}

Frame render_frame(const SceneSpec& scene) {
    Frame f;
    std::fill(f.pixels.begin(), f.pixels.end(), scene.background_shade);
    for (const auto& o : scene.objects) {
        const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.half_size)));
        const int x1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(o.cx + o.half_size)));
        const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.half_size)));
        const int y1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(o.cy + o.half_size)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (object_covers(o, x, y)) {
                    f.at(y, x, 0) = o.color.r;
                    f.at(y, x, 1) = o.color.g;
                    f.at(y, x, 2) = o.color.b;
                }
    }
    return f;
}

std::vector<SceneSpec> simulate_scenes(const PromptAst& ast, std::uint64_t jitter_seed) {
    SceneSpec state = scene_from_ast(reduce_to_first_frame(ast), jitter_seed);
    std::vector<SceneSpec> frames;
    frames.reserve(kFrames);
    check_geometry(state, 0);
    frames.push_back(state);
    for (int f = 1; f < kFrames; ++f) {
        for (std::size_t i = 0; i < ast.objects.size(); ++i) {
            const auto& clause = ast.objects[i];
            auto& o = state.objects[i];
            if (clause.motions.empty()) continue;
            const std::size_t slot = clause.motions.size() == 1 || f < kSecondMotionFrame ? 0 : 1;
            std::visit(
                [&](const auto& m) {
                    using M = std::decay_t<decltype(m)>;
                    if constexpr (std::is_same_v<M, Move>) {
                        switch (m.dir) {
                            case Direction::left: o.cx -= kMoveStep; break;
                            case Direction::right: o.cx += kMoveStep; break;
                            case Direction::up: o.cy -= kMoveStep; break;
                            case Direction::down: o.cy += kMoveStep; break;
                        }
                    } else if constexpr (std::is_same_v<M, Grow>) {
                        o.half_size = std::min(o.half_size + kSizeStep, kMaxHalfSize);
                    } else if constexpr (std::is_same_v<M, Shrink>) {
                        o.half_size = std::max(o.half_size - kSizeStep, kMinHalfSize);
                    }
                },
                clause.motions[slot]);
            // Colour changes land on the turn frame whichever slot holds them.
            for (const auto& m : clause.motions)
                if (const auto* t = std::get_if<Turn>(&m); t && f == kTurnFrame) o.color = color_rgb(t->to);
        }
        check_geometry(state, f);
        frames.push_back(state);
    }
    return frames;
}

VideoTensor simulate(const PromptAst& ast, std::uint64_t jitter_seed) {
    const auto scenes = simulate_scenes(ast, jitter_seed);
    VideoTensor video(kFrames);
    for (int f = 0; f < kFrames; ++f) video.set_frame(f, render_frame(scenes[static_cast<std::size_t>(f)]));
    return video;
}

SceneSpec final_state_scene(const PromptAst& ast, std::uint64_t jitter_seed) {
    return simulate_scenes(ast, jitter_seed).back();
}

VideoTensor to_latent(const VideoTensor& pixels) {
    VideoTensor out = pixels;
    for (auto& v : out.data) v = 2.0F * v - 1.0F;
    return out;
}

VideoTensor to_pixels(const VideoTensor& latent) {
    VideoTensor out = latent;
    for (auto& v : out.data) v = std::clamp((v + 1.0F) / 2.0F, 0.0F, 1.0F);
    return out;
}

std::string encode_ppm(const Frame& frame) {
    std::string out = "P6\n" + std::to_string(kImageSize) + " " + std::to_string(kImageSize) + "\n255\n";
    out.reserve(out.size() + kFramePixels);
    for (float v : frame.pixels) {
        const float c = std::clamp(v, 0.0F, 1.0F);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0F * c))));
    }
    return out;
}

void write_ppm(const Frame& frame, const std::filesystem::path& path) { write_text_file(path, encode_ppm(frame)); }

std::vector<int> Dataset::split_ids(const std::string& split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < index.entries.size(); ++i)
        if (index.entries[i].split == split) out.push_back(static_cast<int>(i));
    return out;
}

PromptAst random_prompt(Rng& rng) {
    PromptAst ast;
    const int n_obj = 1 + static_cast<int>(rng.below(kMaxObjects));
    std::vector<int> cells(kNumCells);
    for (int i = 0; i < kNumCells; ++i) cells[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < n_obj; ++i) {
        // Partial Fisher-Yates draws distinct cells.
        const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(kNumCells - i));
        std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
        ObjectClause obj;
        obj.color = static_cast<Color>(rng.below(kNumColors));
        obj.shape = static_cast<Shape>(rng.below(kNumShapes));
        obj.cell = static_cast<Cell>(cells[static_cast<std::size_t>(i)]);
        const int n_mot = static_cast<int>(rng.below(kMaxMotions + 1));
        bool turned = false;
        while (static_cast<int>(obj.motions.size()) < n_mot) {
            switch (rng.below(4)) {
                case 0: obj.motions.emplace_back(Move{static_cast<Direction>(rng.below(4))}); break;
                case 1: {
                    if (turned) continue;
                    auto to = static_cast<Color>(rng.below(kNumColors - 1));
                    if (to >= obj.color) to = static_cast<Color>(static_cast<int>(to) + 1);
                    obj.motions.emplace_back(Turn{to});
                    turned = true;
                    break;
                }
                case 2: obj.motions.emplace_back(Grow{}); break;
                default: obj.motions.emplace_back(Shrink{}); break;
            }
        }
        ast.objects.push_back(std::move(obj));
    }
    return ast;
}

bool is_eval_prompt(const std::string& canonical_prompt) { return stable_hash64(canonical_prompt) % 8 == 0; }

Dataset build_dataset(int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("dataset size must be >= 1");
    Dataset ds;
    ds.index.seed = seed;
    std::vector<DatasetEntry> train, eval;
    std::vector<VideoTensor> train_v, eval_v;
    std::set<std::string> eval_seen;
    for (std::uint64_t sample = 0; static_cast<int>(train.size()) < n || eval.size() < kEvalPrompts; ++sample) {
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
            Rng rng(derive_seed(seed, {kPromptStream, sample, static_cast<std::uint64_t>(attempt)}));
            PromptAst ast = random_prompt(rng);
            const std::string text = serialize_prompt(ast);
            const bool eval_class = is_eval_prompt(text);
            if (eval_class && (eval.size() >= kEvalPrompts || eval_seen.count(text))) continue;
            if (!eval_class && static_cast<int>(train.size()) >= n) continue;
            const std::uint64_t jitter = derive_seed(seed, {kJitterStream, sample, static_cast<std::uint64_t>(attempt)});
            VideoTensor video;
            try {
                video = simulate(ast, jitter);
            } catch (const GeometryError&) {
                continue;
            }
            DatasetEntry e{0, text, jitter, eval_class ? "eval" : "train"};
            if (eval_class) {
                eval_seen.insert(text);
                eval.push_back(std::move(e));
                eval_v.push_back(std::move(video));
            } else {
                train.push_back(std::move(e));
                train_v.push_back(std::move(video));
            }
            accepted = true;
        }
        if (!accepted) throw Error("dataset generator could not find a valid prompt");
    }
    ds.index.n_train = static_cast<int>(train.size());
    ds.index.n_eval = static_cast<int>(eval.size());
    for (auto& e : train) ds.index.entries.push_back(std::move(e));
    for (auto& e : eval) ds.index.entries.push_back(std::move(e));
    for (std::size_t i = 0; i < ds.index.entries.size(); ++i) ds.index.entries[i].id = static_cast<int>(i);
    ds.videos = std::move(train_v);
    for (auto& v : eval_v) ds.videos.push_back(std::move(v));
    return ds;
}

DatasetIndex gen_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir) {
    Dataset ds = build_dataset(n, seed);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    std::vector<float> flat;
    flat.reserve(ds.videos.size() * static_cast<std::size_t>(kFrames) * kFramePixels);
    for (const auto& v : ds.videos) flat.insert(flat.end(), v.data.begin(), v.data.end());
    const std::vector<std::int64_t> shape = {static_cast<std::int64_t>(ds.videos.size()), kFrames, kImageSize,
                                             kImageSize, kChannels};
    const auto bytes = encode_fvt(shape, flat);
    write_file_bytes(out_dir / "videos.fvt", bytes);

    std::string jsonl;
    for (const auto& e : ds.index.entries) jsonl += json_line(e) + "\n";
    write_text_file(out_dir / "prompts.jsonl", jsonl);

    nlohmann::json manifest = {{"seed", seed},
                               {"n_train", ds.index.n_train},
                               {"n_eval", ds.index.n_eval},
                               {"frames", kFrames},
                               {"image_size", kImageSize},
                               {"videos_sha256", sha256_hex(bytes)},
                               {"prompts_sha256", sha256_hex(jsonl)}};
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return ds.index;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "videos.fvt") || !std::filesystem::exists(dir / "prompts.jsonl"))
        throw MissingArtifactError("no dataset at " + dir.string());
    Dataset ds;
    const std::string jsonl = read_text_file(dir / "prompts.jsonl");
    std::istringstream in(jsonl);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        DatasetEntry e{j.at("id").get<int>(), j.at("prompt").get<std::string>(), j.at("jitter_seed").get<std::uint64_t>(),
                       j.at("split").get<std::string>()};
        (e.split == "eval" ? ds.index.n_eval : ds.index.n_train)++;
        ds.index.entries.push_back(std::move(e));
    }
    if (std::filesystem::exists(dir / "manifest.json"))
        ds.index.seed = nlohmann::json::parse(read_text_file(dir / "manifest.json")).value("seed", std::uint64_t{0});
    const TensorFile tf = read_fvt(dir / "videos.fvt");
    if (tf.shape.size() != 5 || tf.shape[0] != static_cast<std::int64_t>(ds.index.entries.size()) ||
        tf.shape[1] != kFrames || tf.shape[2] != kImageSize || tf.shape[3] != kImageSize || tf.shape[4] != kChannels)
        throw FormatError("videos.fvt shape does not match prompts.jsonl");
    ds.videos.resize(ds.index.entries.size());
    const std::size_t per = static_cast<std::size_t>(kFrames) * kFramePixels;
    for (std::size_t i = 0; i < ds.videos.size(); ++i)
        ds.videos[i].data.assign(tf.values.begin() + static_cast<std::ptrdiff_t>(i * per),
                                 tf.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    return ds;
}

}  // namespace fvg
