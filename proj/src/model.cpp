// SPDX-License-Identifier: Apache-2.0
#include "fvg/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace fvg {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------
void ModelConfig::validate() const {
    auto positive = [](int v, const char* field) {
        if (v <= 0) throw ConfigError(std::string("model field '") + field + "' must be positive");
    };
    positive(embed_dim, "embed_dim");
    positive(blocks, "blocks");
    positive(patch, "patch");
    positive(heads, "heads");
    positive(vocab_size, "vocab_size");
    positive(text_len, "text_len");
    positive(frames, "frames");
    positive(image_size, "image_size");
    positive(channels, "channels");
    positive(mlp_ratio, "mlp_ratio");
    if (embed_dim % heads != 0) throw ConfigError("model field 'embed_dim' must be divisible by 'heads'");
    if (image_size % patch != 0) throw ConfigError("model field 'patch' must divide 'image_size'");
    if (embed_dim % 8 != 0) throw ConfigError("model field 'embed_dim' must be a multiple of 8");
    if (vocab_size < vocabulary_size())
        throw ConfigError("model field 'vocab_size' must be at least " + std::to_string(vocabulary_size()));
    if (precision != "f32" && precision != "f64") throw ConfigError("model field 'precision' must be f32 or f64");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"embed_dim", c.embed_dim}, {"blocks", c.blocks},         {"patch", c.patch},
         {"heads", c.heads},         {"vocab_size", c.vocab_size}, {"text_len", c.text_len},
         {"frames", c.frames},       {"image_size", c.image_size}, {"channels", c.channels},
         {"mlp_ratio", c.mlp_ratio}, {"precision", c.precision}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.blocks = j.value("blocks", d.blocks);
    c.patch = j.value("patch", d.patch);
    c.heads = j.value("heads", d.heads);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.text_len = j.value("text_len", d.text_len);
    c.frames = j.value("frames", d.frames);
    c.image_size = j.value("image_size", d.image_size);
    c.channels = j.value("channels", d.channels);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.precision = j.value("precision", d.precision);
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------
int ParamLayout::add(std::string name, int rows, int cols, bool adaptable) {
    TensorSpec t{std::move(name), rows, cols, total_, adaptable};
    total_ += t.size();
    tensors_.push_back(std::move(t));
    return static_cast<int>(tensors_.size()) - 1;
}

int ParamLayout::find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
        if (tensors_[i].name == name) return static_cast<int>(i);
    return -1;
}

bool ParamLayout::operator==(const ParamLayout& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const auto &a = tensors_[i], &b = o.tensors_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
}

ParamLayout build_layout(const ModelConfig& cfg, ModelIds* ids_out) {
    cfg.validate();
    ParamLayout L;
    ModelIds ids;
    const int D = cfg.embed_dim;
    auto linear = [&](const std::string& name, int out, int in, bool adaptable) {
        return LinearIds{L.add(name + ".weight", out, in, adaptable), L.add(name + ".bias", 1, out)};
    };
    auto norm = [&](const std::string& name) { return NormIds{L.add(name + ".scale", 1, D), L.add(name + ".offset", 1, D)}; };
    auto attn = [&](const std::string& name) {
        return AttnIds{linear(name + ".q", D, D, true), linear(name + ".k", D, D, true), linear(name + ".v", D, D, true),
                       linear(name + ".o", D, D, true)};
    };
    ids.patch_embed = linear("patch_embed", D, cfg.patch_dim(), false);
    ids.token_embed = L.add("token_embed", cfg.vocab_size, D);
    ids.text.ln_attn = norm("text.ln_attn");
    ids.text.attn = attn("text.attn");
    ids.text.ln_mlp = norm("text.ln_mlp");
    ids.text.fc1 = linear("text.fc1", cfg.mlp_dim(), D, true);
    ids.text.fc2 = linear("text.fc2", D, cfg.mlp_dim(), true);
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        BlockIds bi;
        bi.ln_self = norm(p + ".ln_self");
        bi.self = attn(p + ".self");
        bi.ln_cross = norm(p + ".ln_cross");
        bi.cross = attn(p + ".cross");
        bi.ln_mlp = norm(p + ".ln_mlp");
        bi.fc1 = linear(p + ".fc1", cfg.mlp_dim(), D, true);
        bi.fc2 = linear(p + ".fc2", D, cfg.mlp_dim(), true);
        ids.blocks.push_back(bi);
    }
    ids.ln_out = norm("ln_out");
    ids.out = linear("out", cfg.patch_dim(), D, false);
    if (ids_out) *ids_out = ids;
    return L;
}

template <class S>
ModelParams<S>::ModelParams(const ModelConfig& cfg) : config(cfg) {
    layout = build_layout(cfg, &ids);
    values.assign(layout.size(), S(0));
}

namespace {

double truncated_normal(Rng& rng, double sigma) {
    for (;;) {
        const double x = rng.normal();
        if (std::abs(x) <= 2.0) return sigma * x;
    }
}

bool is_norm_scale(const std::string& name) { return name.size() > 6 && name.ends_with(".scale"); }
bool is_bias_like(const std::string& name) { return name.ends_with(".bias") || name.ends_with(".offset"); }

}  // namespace

template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams<S> p(cfg);
    for (std::size_t t = 0; t < p.layout.tensors().size(); ++t) {
        const auto& spec = p.layout.tensors()[t];
        Rng rng(derive_seed(seed, {0x494E4954ULL, t}));
        S* v = p.values.data() + spec.offset;
        for (std::size_t i = 0; i < spec.size(); ++i) {
            if (is_norm_scale(spec.name))
                v[i] = S(1);
            else if (is_bias_like(spec.name))
                v[i] = S(0);
            else
                v[i] = static_cast<S>(truncated_normal(rng, 0.02));
        }
    }
    return p;
}

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
    ModelParams<To> out(p.config);
    for (std::size_t i = 0; i < p.values.size(); ++i) out.values[i] = static_cast<To>(p.values[i]);
    return out;
}

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------
template <class S>
LoraAdapters<S> empty_lora(const ParamLayout& base, int rank, double alpha) {
    if (rank <= 0) throw ConfigError("LoRA rank must be positive");
    LoraAdapters<S> ad;
    ad.rank = rank;
    ad.alpha = alpha;
    for (std::size_t i = 0; i < base.tensors().size(); ++i) {
        const auto& t = base.tensors()[i];
        if (!t.adaptable) continue;
        const int a = ad.layout.add(t.name + ".lora_a", rank, t.cols);
        const int b = ad.layout.add(t.name + ".lora_b", t.rows, rank);
        ad.pairs.push_back({static_cast<int>(i), a, b});
    }
    ad.values.assign(ad.layout.size(), S(0));
    return ad;
}

template <class S>
LoraAdapters<S> init_lora(const ParamLayout& base, int rank, double alpha, std::uint64_t seed) {
    LoraAdapters<S> ad = empty_lora<S>(base, rank, alpha);
    for (std::size_t k = 0; k < ad.pairs.size(); ++k) {
        Rng rng(derive_seed(seed, {0x4C4F5241ULL, k}));
        const auto& spec = ad.layout.at(ad.pairs[k].a);
        S* a = ad.data(ad.pairs[k].a);
        for (std::size_t i = 0; i < spec.size(); ++i) a[i] = static_cast<S>(0.02 * rng.normal());
    }
    return ad;
}

template <class S>
Mat<S> apply_lora(const Mat<S>& w, const Mat<S>& a, const Mat<S>& b, int rank, double alpha) {
    if (rank <= 0 || a.rows() != rank || b.cols() != rank || a.cols() != w.cols() || b.rows() != w.rows())
        throw ShapeError("LoRA shapes incompatible: W " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         ", A " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + ", B " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ", rank " + std::to_string(rank));
    const S s = static_cast<S>(alpha / rank);
    return w + s * (b * a);
}

template <class S>
void lora_grad_from_effective(const ParamLayout& base, const LoraAdapters<S>& ad, std::span<const S> grad_eff,
                              std::span<S> grad_lora) {
    if (grad_eff.size() != base.size() || grad_lora.size() != ad.layout.size())
        throw ShapeError("LoRA gradient buffers do not match their layouts");
    const S s = static_cast<S>(ad.scale());
    for (const auto& pr : ad.pairs) {
        const auto& w = base.at(pr.weight);
        const auto& a = ad.layout.at(pr.a);
        const auto& b = ad.layout.at(pr.b);
        Eigen::Map<const Mat<S>> G(grad_eff.data() + w.offset, w.rows, w.cols);
        Eigen::Map<const Mat<S>> A(ad.data(pr.a), a.rows, a.cols);
        Eigen::Map<const Mat<S>> B(ad.data(pr.b), b.rows, b.cols);
        Eigen::Map<Mat<S>> dA(grad_lora.data() + a.offset, a.rows, a.cols);
        Eigen::Map<Mat<S>> dB(grad_lora.data() + b.offset, b.rows, b.cols);
        dA.noalias() += s * (B.transpose() * G);
        dB.noalias() += s * (G * A.transpose());
    }
}

// ---------------------------------------------------------------------------
// Numerical building blocks
// ---------------------------------------------------------------------------
namespace {

template <class S>
using MapC = Eigen::Map<const Mat<S>>;
template <class S>
using MapM = Eigen::Map<Mat<S>>;

constexpr double kLnEps = 1e-5;

template <class S>
struct LnCache {
    Mat<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const S* g, const S* b, LnCache<S>& c) {
    const Eigen::Index n = x.rows(), d = x.cols();
    const auto mean = x.rowwise().mean();
    c.xhat = x.colwise() - mean;
    c.rstd = ((c.xhat.array().square().rowwise().sum() / S(d)) + S(kLnEps)).rsqrt();
    c.xhat = c.rstd.asDiagonal() * c.xhat;
    Eigen::Map<const RowVec<S>> gv(g, d), bv(b, d);
    Mat<S> y = (c.xhat.array().rowwise() * gv.array()).rowwise() + bv.array();
    (void)n;
    return y;
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const S* g, const LnCache<S>& c, S* dg, S* db) {
    const Eigen::Index d = dy.cols();
    Eigen::Map<const RowVec<S>> gv(g, d);
    Eigen::Map<RowVec<S>> dgv(dg, d), dbv(db, d);
    // Reduce into aligned temporaries: evaluating a reduction straight into a
    // Map of the gradient buffer makes the summation order depend on its address.
    const RowVec<S> dg_sum = (dy.array() * c.xhat.array()).colwise().sum().matrix();
    const RowVec<S> db_sum = dy.colwise().sum();
    dgv += dg_sum;
    dbv += db_sum;
    Mat<S> dxh = dy.array().rowwise() * gv.array();
    const auto m1 = dxh.rowwise().mean();
    const auto m2 = (dxh.array() * c.xhat.array()).rowwise().mean().matrix();
    Mat<S> dx = dxh.colwise() - m1;
    dx -= (c.xhat.array().colwise() * m2.array()).matrix();
    return c.rstd.asDiagonal() * dx;
}

// y = x W^T + b
template <class S>
Mat<S> linear(const Mat<S>& x, const ParamLayout& L, const std::vector<S>& p, LinearIds id) {
    const auto& w = L.at(id.w);
    MapC<S> W(p.data() + w.offset, w.rows, w.cols);
    Eigen::Map<const RowVec<S>> b(p.data() + L.at(id.b).offset, w.rows);
    Mat<S> y = x * W.transpose();
    y.rowwise() += b;
    return y;
}

// Returns dx; accumulates dW, db.
template <class S>
Mat<S> linear_backward(const Mat<S>& dy, const Mat<S>& x, const ParamLayout& L, const std::vector<S>& p, LinearIds id,
                       std::span<S> grad, bool need_dx = true) {
    const auto& w = L.at(id.w);
    MapC<S> W(p.data() + w.offset, w.rows, w.cols);
    MapM<S> dW(grad.data() + w.offset, w.rows, w.cols);
    Eigen::Map<RowVec<S>> db(grad.data() + L.at(id.b).offset, w.rows);
    dW.noalias() += dy.transpose() * x;
    const RowVec<S> db_sum = dy.colwise().sum();
    db += db_sum;
    if (!need_dx) return {};
    return dy * W;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <class S>
Mat<S> gelu(const Mat<S>& u) {
    const auto a = u.array();
    return (S(0.5) * a * (S(1) + (S(kGeluC) * (a + S(0.044715) * a.cube())).tanh())).matrix();
}

template <class S>
Mat<S> gelu_backward(const Mat<S>& dy, const Mat<S>& u) {
    const auto a = u.array();
    const auto th = (S(kGeluC) * (a + S(0.044715) * a.cube())).tanh();
    const auto d = S(0.5) * (S(1) + th) + S(0.5) * a * (S(1) - th.square()) * S(kGeluC) * (S(1) + S(3 * 0.044715) * a.square());
    return (dy.array() * d).matrix();
}

template <class S>
struct AttnCache {
    Mat<S> q, k, v, o;
    std::vector<Mat<S>> p;  // per head, nq x nk
};

// Optional group mask: query i may attend key j iff groups match (both >= 0).
struct GroupMask {
    const std::vector<int>* q_group = nullptr;
    const std::vector<int>* k_group = nullptr;
};

template <class S>
Mat<S> attention(const Mat<S>& q_in, const Mat<S>& kv_in, const ParamLayout& L, const std::vector<S>& p, const AttnIds& id,
                 int heads, const GroupMask& mask, AttnCache<S>& c) {
    c.q = linear(q_in, L, p, id.q);
    c.k = linear(kv_in, L, p, id.k);
    c.v = linear(kv_in, L, p, id.v);
    const Eigen::Index nq = c.q.rows(), nk = c.k.rows(), D = c.q.cols(), dh = D / heads;
    const S scale = S(1) / std::sqrt(S(dh));
    c.o.resize(nq, D);
    c.p.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Mat<S>& P = c.p[static_cast<std::size_t>(h)];
        P.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
        P *= scale;
        if (mask.q_group) {
            for (Eigen::Index i = 0; i < nq; ++i) {
                const int gi = (*mask.q_group)[static_cast<std::size_t>(i)];
                for (Eigen::Index j = 0; j < nk; ++j) {
                    const int gj = (*mask.k_group)[static_cast<std::size_t>(j)];
                    if (gi < 0 || gj != gi) P(i, j) = -std::numeric_limits<S>::infinity();
                }
            }
        }
        for (Eigen::Index i = 0; i < nq; ++i) {
            auto row = P.row(i);
            const S m = row.maxCoeff();
            if (!std::isfinite(m)) {
                row.setZero();
                continue;
            }
            row = (row.array() - m).exp();
            row /= row.sum();
        }
        c.o.middleCols(h * dh, dh).noalias() = P * c.v.middleCols(h * dh, dh);
    }
    return linear(c.o, L, p, id.o);
}

// Returns (d q_in, d kv_in).
template <class S>
std::pair<Mat<S>, Mat<S>> attention_backward(const Mat<S>& dout, const Mat<S>& q_in, const Mat<S>& kv_in,
                                             const ParamLayout& L, const std::vector<S>& p, const AttnIds& id, int heads,
                                             const AttnCache<S>& c, std::span<S> grad) {
    const Mat<S> dO = linear_backward(dout, c.o, L, p, id.o, grad);
    const Eigen::Index D = c.q.cols(), dh = D / heads;
    const S scale = S(1) / std::sqrt(S(dh));
    Mat<S> dQ(c.q.rows(), D), dK(c.k.rows(), D), dV(c.v.rows(), D);
    thread_local Mat<S> dP, dS;
    for (int h = 0; h < heads; ++h) {
        const Mat<S>& P = c.p[static_cast<std::size_t>(h)];
        const auto dOh = dO.middleCols(h * dh, dh);
        dV.middleCols(h * dh, dh).noalias() = P.transpose() * dOh;
        dP.noalias() = dOh * c.v.middleCols(h * dh, dh).transpose();
        const auto rs = (dP.array() * P.array()).rowwise().sum().eval();
        dS.noalias() = (P.array() * (dP.array().colwise() - rs)).matrix();
        dQ.middleCols(h * dh, dh).noalias() = (dS * c.k.middleCols(h * dh, dh)) * scale;
        dK.middleCols(h * dh, dh).noalias() = (dS.transpose() * c.q.middleCols(h * dh, dh)) * scale;
    }
    Mat<S> dq_in = linear_backward(dQ, q_in, L, p, id.q, grad);
    Mat<S> dkv_in = linear_backward(dK, kv_in, L, p, id.k, grad);
    dkv_in += linear_backward(dV, kv_in, L, p, id.v, grad);
    return {std::move(dq_in), std::move(dkv_in)};
}

template <class S>
Mat<S> sinusoid_table(int positions, int dim, double base) {
    Mat<S> t(positions, dim);
    for (int pos = 0; pos < positions; ++pos)
        for (int k = 0; k < dim / 2; ++k) {
            const double w = std::pow(base, -2.0 * k / dim);
            t(pos, 2 * k) = static_cast<S>(std::sin(pos * w));
            t(pos, 2 * k + 1) = static_cast<S>(std::cos(pos * w));
        }
    return t;
}

}  // namespace

template <class S>
RowVec<S> timestep_code(double t, int dim) {
    RowVec<S> e(dim);
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        const double arg = 1000.0 * t * freq;
        e(k) = static_cast<S>(std::sin(arg));
        e(k + half) = static_cast<S>(std::cos(arg));
    }
    return e;
}

// ---------------------------------------------------------------------------
// Activation cache
// ---------------------------------------------------------------------------
template <class S>
struct BlockCache {
    Mat<S> x_in, h_self, x_after_self, h_cross, x_after_cross, h_mlp, u, g;
    LnCache<S> ln_self, ln_cross, ln_mlp;
    AttnCache<S> self, cross;
};

template <class S>
struct Activations {
    Mat<S> patches;
    bool has_text = false;
    std::vector<int> text_ids;     // valid token ids in order
    std::vector<int> text_groups;  // clause index per valid token
    Mat<S> h0, a1, h1, a2, tu, tg, text;
    LnCache<S> tln1, tln2;
    AttnCache<S> tattn;
    std::vector<BlockCache<S>> blocks;
    Mat<S> x_final, h_out;
    LnCache<S> ln_out;
};

template <class S>
ActivationCache<S>::ActivationCache() : impl_(std::make_unique<Activations<S>>()) {}
template <class S>
ActivationCache<S>::~ActivationCache() = default;
template <class S>
ActivationCache<S>::ActivationCache(ActivationCache&&) noexcept = default;
template <class S>
ActivationCache<S>& ActivationCache<S>::operator=(ActivationCache&&) noexcept = default;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------
template <class S>
VelocityModel<S>::VelocityModel(const ModelParams<S>& params, const LoraAdapters<S>* adapters)
    : config_(params.config), layout_(params.layout), ids_(params.ids), eff_(params.values) {
    if (adapters) {
        for (const auto& pr : adapters->pairs) {
            const auto& w = layout_.at(pr.weight);
            const auto& a = adapters->layout.at(pr.a);
            const auto& b = adapters->layout.at(pr.b);
            if (adapters->layout.at(pr.a).name != w.name + ".lora_a")
                throw ShapeError("adapter " + a.name + " does not match weight " + w.name);
            MapM<S> W(eff_.data() + w.offset, w.rows, w.cols);
            const Mat<S> A = MapC<S>(adapters->data(pr.a), a.rows, a.cols);
            const Mat<S> B = MapC<S>(adapters->data(pr.b), b.rows, b.cols);
            W = apply_lora<S>(Mat<S>(W), A, B, adapters->rank, adapters->alpha);
        }
    }
    const int D = config_.embed_dim;
    const int side = config_.image_size / config_.patch;
    const int d_frame = D / 4;
    const int d_row = (D - d_frame) / 2;
    const int d_col = D - d_frame - d_row;
    const Mat<S> tf = sinusoid_table<S>(config_.frames, d_frame, 100.0);
    const Mat<S> tr = sinusoid_table<S>(side, d_row, 100.0);
    const Mat<S> tc = sinusoid_table<S>(side, d_col, 100.0);
    pos_code_.resize(config_.tokens(), D);
    for (int f = 0; f < config_.frames; ++f)
        for (int gy = 0; gy < side; ++gy)
            for (int gx = 0; gx < side; ++gx) {
                const int n = (f * side + gy) * side + gx;
                pos_code_.row(n) << tf.row(f), tr.row(gy), tc.row(gx);
            }
    text_pos_code_ = sinusoid_table<S>(config_.text_len, D, 100.0);
}

namespace {

template <class S>
void patchify(std::span<const S> z, const ModelConfig& cfg, Mat<S>& out) {
    const int P = cfg.patch, C = cfg.channels, H = cfg.image_size, side = H / P;
    out.resize(cfg.tokens(), cfg.patch_dim());
    for (int f = 0; f < cfg.frames; ++f)
        for (int gy = 0; gy < side; ++gy)
            for (int gx = 0; gx < side; ++gx) {
                const int n = (f * side + gy) * side + gx;
                for (int dy = 0; dy < P; ++dy)
                    for (int dx = 0; dx < P; ++dx)
                        for (int c = 0; c < C; ++c) {
                            const std::size_t src =
                                ((static_cast<std::size_t>(f) * H + gy * P + dy) * H + gx * P + dx) * C + c;
                            out(n, (dy * P + dx) * C + c) = z[src];
                        }
            }
}

template <class S>
void unpatchify(const Mat<S>& tokens, const ModelConfig& cfg, std::span<S> z) {
    const int P = cfg.patch, C = cfg.channels, H = cfg.image_size, side = H / P;
    for (int f = 0; f < cfg.frames; ++f)
        for (int gy = 0; gy < side; ++gy)
            for (int gx = 0; gx < side; ++gx) {
                const int n = (f * side + gy) * side + gx;
                for (int dy = 0; dy < P; ++dy)
                    for (int dx = 0; dx < P; ++dx)
                        for (int c = 0; c < C; ++c) {
                            const std::size_t dst =
                                ((static_cast<std::size_t>(f) * H + gy * P + dy) * H + gx * P + dx) * C + c;
                            z[dst] = tokens(n, (dy * P + dx) * C + c);
                        }
            }
}

}  // namespace

template <class S>
std::vector<S> VelocityModel<S>::forward(std::span<const S> z, std::span<const double> t_vec, const TokenSequence& tokens,
                                         ActivationCache<S>* cache) const {
    const ModelConfig& cfg = config_;
    if (z.size() != cfg.video_size())
        throw ShapeError("latent has " + std::to_string(z.size()) + " values, expected " + std::to_string(cfg.video_size()));
    if (t_vec.size() != static_cast<std::size_t>(cfg.frames))
        throw ShapeError("t_vec has " + std::to_string(t_vec.size()) + " entries, expected " + std::to_string(cfg.frames));
    if (static_cast<int>(tokens.ids.size()) != cfg.text_len) throw ShapeError("token sequence length mismatch");
    for (std::size_t i = 0; i < tokens.ids.size(); ++i)
        if (tokens.mask[i] && (tokens.ids[i] < 0 || tokens.ids[i] >= cfg.vocab_size))
            throw ShapeError("token id " + std::to_string(tokens.ids[i]) + " outside vocabulary");

    // Reusing buffers avoids page-faulting fresh attention matrices on every call.
    thread_local ActivationCache<S> scratch;
    Activations<S>& a = cache ? cache->get() : scratch.get();
    const int D = cfg.embed_dim, tpf = cfg.tokens_per_frame();
    const auto& L = layout_;
    const auto& p = eff_;

    patchify(z, cfg, a.patches);
    Mat<S> x = linear(a.patches, L, p, ids_.patch_embed);
    x += pos_code_;
    for (int f = 0; f < cfg.frames; ++f) {
        const RowVec<S> te = timestep_code<S>(t_vec[static_cast<std::size_t>(f)], D);
        x.middleRows(f * tpf, tpf).rowwise() += te;
    }

    // Prompt encoder: token + within-clause position codes, one clause-local
    // attention layer and an MLP. PAD positions are dropped entirely.
    a.text_ids.clear();
    a.text_groups.clear();
    {
        int group = 0;
        for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
            if (!tokens.mask[i]) continue;
            a.text_ids.push_back(tokens.ids[i]);
            a.text_groups.push_back(group);
            if (tokens.ids[i] == kSepId) ++group;
        }
    }
    a.has_text = !a.text_ids.empty();
    if (a.has_text) {
        const auto nt = static_cast<Eigen::Index>(a.text_ids.size());
        a.h0.resize(nt, D);
        MapC<S> E(p.data() + L.at(ids_.token_embed).offset, cfg.vocab_size, D);
        int rel = 0;
        for (Eigen::Index i = 0; i < nt; ++i) {
            if (i > 0 && a.text_groups[static_cast<std::size_t>(i)] != a.text_groups[static_cast<std::size_t>(i - 1)]) rel = 0;
            a.h0.row(i) = E.row(a.text_ids[static_cast<std::size_t>(i)]) + text_pos_code_.row(std::min(rel, cfg.text_len - 1));
            ++rel;
        }
        const auto& T = ids_.text;
        a.a1 = layer_norm(a.h0, p.data() + L.at(T.ln_attn.g).offset, p.data() + L.at(T.ln_attn.b).offset, a.tln1);
        const GroupMask gm{&a.text_groups, &a.text_groups};
        a.h1 = a.h0 + attention(a.a1, a.a1, L, p, T.attn, cfg.heads, gm, a.tattn);
        a.a2 = layer_norm(a.h1, p.data() + L.at(T.ln_mlp.g).offset, p.data() + L.at(T.ln_mlp.b).offset, a.tln2);
        a.tu = linear(a.a2, L, p, T.fc1);
        a.tg = gelu(a.tu);
        a.text = a.h1 + linear(a.tg, L, p, T.fc2);
    }

    a.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (int b = 0; b < cfg.blocks; ++b) {
        auto& c = a.blocks[static_cast<std::size_t>(b)];
        const auto& B = ids_.blocks[static_cast<std::size_t>(b)];
        c.x_in = x;
        c.h_self = layer_norm(x, p.data() + L.at(B.ln_self.g).offset, p.data() + L.at(B.ln_self.b).offset, c.ln_self);
        x += attention(c.h_self, c.h_self, L, p, B.self, cfg.heads, GroupMask{}, c.self);
        c.x_after_self = x;
        if (a.has_text) {
            c.h_cross = layer_norm(x, p.data() + L.at(B.ln_cross.g).offset, p.data() + L.at(B.ln_cross.b).offset, c.ln_cross);
            x += attention(c.h_cross, a.text, L, p, B.cross, cfg.heads, GroupMask{}, c.cross);
        }
        c.x_after_cross = x;
        c.h_mlp = layer_norm(x, p.data() + L.at(B.ln_mlp.g).offset, p.data() + L.at(B.ln_mlp.b).offset, c.ln_mlp);
        c.u = linear(c.h_mlp, L, p, B.fc1);
        c.g = gelu(c.u);
        x += linear(c.g, L, p, B.fc2);
    }
    a.x_final = x;
    a.h_out = layer_norm(x, p.data() + L.at(ids_.ln_out.g).offset, p.data() + L.at(ids_.ln_out.b).offset, a.ln_out);
    const Mat<S> y = linear(a.h_out, L, p, ids_.out);
    std::vector<S> out(cfg.video_size());
    unpatchify<S>(y, cfg, out);
    return out;
}

template <class S>
void VelocityModel<S>::backward(const ActivationCache<S>& cache, std::span<const S> d_out, std::span<S> grad) const {
    const ModelConfig& cfg = config_;
    if (d_out.size() != cfg.video_size()) throw ShapeError("output gradient size mismatch");
    if (grad.size() != layout_.size()) throw ShapeError("gradient buffer does not match parameter layout");
    const Activations<S>& a = cache.get();
    const auto& L = layout_;
    const auto& p = eff_;
    auto ptr = [&](int id) { return p.data() + L.at(id).offset; };
    auto gptr = [&](int id) { return grad.data() + L.at(id).offset; };

    Mat<S> dy;
    patchify(d_out, cfg, dy);
    Mat<S> dx = linear_backward(dy, a.h_out, L, p, ids_.out, grad);
    dx = layer_norm_backward(dx, ptr(ids_.ln_out.g), a.ln_out, gptr(ids_.ln_out.g), gptr(ids_.ln_out.b));

    Mat<S> d_text;
    if (a.has_text) d_text = Mat<S>::Zero(a.text.rows(), a.text.cols());

    for (int b = cfg.blocks - 1; b >= 0; --b) {
        const auto& c = a.blocks[static_cast<std::size_t>(b)];
        const auto& B = ids_.blocks[static_cast<std::size_t>(b)];
        // MLP
        {
            Mat<S> dg = linear_backward(dx, c.g, L, p, B.fc2, grad);
            Mat<S> du = gelu_backward(dg, c.u);
            Mat<S> dh = linear_backward(du, c.h_mlp, L, p, B.fc1, grad);
            dx += layer_norm_backward(dh, ptr(B.ln_mlp.g), c.ln_mlp, gptr(B.ln_mlp.g), gptr(B.ln_mlp.b));
        }
        if (a.has_text) {
            auto [dq, dkv] = attention_backward(dx, c.h_cross, a.text, L, p, B.cross, cfg.heads, c.cross, grad);
            d_text += dkv;
            dx += layer_norm_backward(dq, ptr(B.ln_cross.g), c.ln_cross, gptr(B.ln_cross.g), gptr(B.ln_cross.b));
        }
        {
            auto [dq, dkv] = attention_backward(dx, c.h_self, c.h_self, L, p, B.self, cfg.heads, c.self, grad);
            dq += dkv;
            dx += layer_norm_backward(dq, ptr(B.ln_self.g), c.ln_self, gptr(B.ln_self.g), gptr(B.ln_self.b));
        }
    }
    linear_backward(dx, a.patches, L, p, ids_.patch_embed, grad, false);

    if (a.has_text) {
        const auto& T = ids_.text;
        Mat<S> dh1 = d_text;
        Mat<S> dtg = linear_backward(d_text, a.tg, L, p, T.fc2, grad);
        Mat<S> dtu = gelu_backward(dtg, a.tu);
        Mat<S> da2 = linear_backward(dtu, a.a2, L, p, T.fc1, grad);
        dh1 += layer_norm_backward(da2, ptr(T.ln_mlp.g), a.tln2, gptr(T.ln_mlp.g), gptr(T.ln_mlp.b));
        Mat<S> dh0 = dh1;
        auto [dq, dkv] = attention_backward(dh1, a.a1, a.a1, L, p, T.attn, cfg.heads, a.tattn, grad);
        dq += dkv;
        dh0 += layer_norm_backward(dq, ptr(T.ln_attn.g), a.tln1, gptr(T.ln_attn.g), gptr(T.ln_attn.b));
        MapM<S> dE(gptr(ids_.token_embed), cfg.vocab_size, cfg.embed_dim);
        for (std::size_t i = 0; i < a.text_ids.size(); ++i) dE.row(a.text_ids[i]) += dh0.row(static_cast<Eigen::Index>(i));
    }
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------
template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);
template LoraAdapters<float> init_lora<float>(const ParamLayout&, int, double, std::uint64_t);
template LoraAdapters<double> init_lora<double>(const ParamLayout&, int, double, std::uint64_t);
template LoraAdapters<float> empty_lora<float>(const ParamLayout&, int, double);
template LoraAdapters<double> empty_lora<double>(const ParamLayout&, int, double);
template Mat<float> apply_lora<float>(const Mat<float>&, const Mat<float>&, const Mat<float>&, int, double);
template Mat<double> apply_lora<double>(const Mat<double>&, const Mat<double>&, const Mat<double>&, int, double);
template void lora_grad_from_effective<float>(const ParamLayout&, const LoraAdapters<float>&, std::span<const float>,
                                              std::span<float>);
template void lora_grad_from_effective<double>(const ParamLayout&, const LoraAdapters<double>&, std::span<const double>,
                                               std::span<double>);
template RowVec<float> timestep_code<float>(double, int);
template RowVec<double> timestep_code<double>(double, int);
template class ActivationCache<float>;
template class ActivationCache<double>;
template class VelocityModel<float>;
template class VelocityModel<double>;

}  // namespace fvg
