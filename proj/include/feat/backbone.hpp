#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "feat/attention_baseline.hpp"
#include "feat/autograd.hpp"
#include "feat/channel_attention.hpp"
#include "feat/resvgm.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"
#include "feat/wkv.hpp"

namespace feat {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class StAttention { Wkv, Quadratic };

struct ModelConfig {
    int64_t d = 64;            // hidden width, even, >= 8
    int64_t n_triplets = 2;    // block triplets (spatial, temporal[, channel])
    int64_t patch = 4;         // spatial patch size
    int64_t frames = 8;
    int64_t channels = 1;
    int64_t height = 32;
    int64_t width = 32;
    int64_t ffn_mult = 4;
    int64_t t_max = 50;        // diffusion steps covered by the timestep embedding

    StAttention st_attention = StAttention::Wkv;
    bool use_channel_block = true;
    bool use_resvgm = true;

    int64_t hp() const { return height / patch; }
    int64_t wp() const { return width / patch; }
    int64_t sites() const { return hp() * wp(); }
    int64_t tokens() const { return frames * sites(); }
    int64_t patch_dim() const { return channels * patch * patch; }

    void validate() const {
        if (d < 8 || d % 2 != 0) throw ConfigError("model: d must be even and >= 8");
        if (n_triplets < 0) throw ConfigError("model: n_triplets must be >= 0");
        if (patch < 1 || height % patch != 0 || width % patch != 0)
            throw ConfigError("model: height/width must be divisible by patch");
        if (frames < 1 || channels < 1) throw ConfigError("model: frames/channels must be >= 1");
        if (ffn_mult < 1) throw ConfigError("model: ffn_mult must be >= 1");
        if (t_max < 1) throw ConfigError("model: t_max must be >= 1");
    }
};

inline ModelConfig feat_s_config() {
    ModelConfig c;
    c.d = 512;
    c.n_triplets = 9;
    c.patch = 2;
    c.frames = 16;
    c.channels = 3;
    c.height = 128;
    c.width = 128;
    c.ffn_mult = 4;
    c.t_max = 1000;
    return c;
}

inline ModelConfig feat_l_config() {
    ModelConfig c = feat_s_config();
    c.d = 1024;
    return c;
}

// ---------------------------------------------------------------------------
// Parameter registry: one declaration drives allocation, counting,
// checkpoints and the optimizer.
// ---------------------------------------------------------------------------

enum class ParamInit {
    Zero,
    One,
    XavierNormal,
    ShiftIdentity,    // centered identity depthwise kernel
    DecaySpan,        // softplus(w) spans [0.3, 3] linearly across channels
    AdalnBias,        // (gamma1, beta1, alpha1, gamma2, beta2, alpha2) = (1,0,0,1,0,0)
};

struct ParamDesc {
    std::string name;
    Shape shape;
    ParamInit init;
    bool is_matrix;  // weight decay applies to matrices only
};

enum class BlockKind { SpatialWkv, TemporalWkv, Channel, SpatialQuadratic, TemporalQuadratic };

inline std::vector<BlockKind> block_plan(const ModelConfig& cfg) {
    std::vector<BlockKind> plan;
    for (int64_t i = 0; i < cfg.n_triplets; ++i) {
        if (cfg.st_attention == StAttention::Wkv) {
            plan.push_back(BlockKind::SpatialWkv);
            plan.push_back(BlockKind::TemporalWkv);
        } else {
            plan.push_back(BlockKind::SpatialQuadratic);
            plan.push_back(BlockKind::TemporalQuadratic);
        }
        if (cfg.use_channel_block) plan.push_back(BlockKind::Channel);
    }
    return plan;
}

inline std::vector<ParamDesc> param_layout(const ModelConfig& cfg) {
    cfg.validate();
    int64_t d = cfg.d;
    std::vector<ParamDesc> out;
    auto add = [&](std::string name, Shape shape, ParamInit init, bool is_matrix) {
        out.push_back({std::move(name), std::move(shape), init, is_matrix});
    };

    add("patch_embed.weight", {cfg.patch_dim(), d}, ParamInit::XavierNormal, true);
    add("patch_embed.bias", {d}, ParamInit::Zero, false);
    add("pos.spatial", {cfg.sites(), d}, ParamInit::Zero, false);
    add("pos.temporal", {cfg.frames, d}, ParamInit::Zero, false);
    add("time_embed.fc1.weight", {d, d}, ParamInit::XavierNormal, true);
    add("time_embed.fc1.bias", {d}, ParamInit::Zero, false);
    add("time_embed.fc2.weight", {d, d}, ParamInit::XavierNormal, true);
    add("time_embed.fc2.bias", {d}, ParamInit::Zero, false);

    const auto plan = block_plan(cfg);
    for (size_t b = 0; b < plan.size(); ++b) {
        std::string p = "blocks." + std::to_string(b) + ".";
        add(p + "ln1.gamma", {d}, ParamInit::One, false);
        add(p + "ln1.beta", {d}, ParamInit::Zero, false);
        add(p + "ln2.gamma", {d}, ParamInit::One, false);
        add(p + "ln2.beta", {d}, ParamInit::Zero, false);
        add(p + "adaln.weight", {d, 6 * d}, ParamInit::Zero, true);
        add(p + "adaln.bias", {6 * d}, ParamInit::AdalnBias, false);
        switch (plan[b]) {
            case BlockKind::SpatialWkv:
                add(p + "attn.shift", {d, 9}, ParamInit::ShiftIdentity, false);
                break;
            case BlockKind::TemporalWkv:
                add(p + "attn.shift", {d, 3}, ParamInit::ShiftIdentity, false);
                break;
            default:
                break;
        }
        if (plan[b] == BlockKind::SpatialWkv || plan[b] == BlockKind::TemporalWkv) {
            add(p + "attn.w_r", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.w_k", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.w_v", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.w_o", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.decay", {d}, ParamInit::DecaySpan, false);
            add(p + "attn.bonus", {d}, ParamInit::Zero, false);
        } else {
            add(p + "attn.w_q", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.w_k", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.w_v", {d, d}, ParamInit::XavierNormal, true);
            add(p + "attn.w_o", {d, d}, ParamInit::XavierNormal, true);
            if (plan[b] == BlockKind::Channel)
                add(p + "attn.temperature", {1}, ParamInit::Zero, false);
        }
        if (cfg.use_resvgm) {
            add(p + "resvgm.lambda1", {d}, ParamInit::Zero, false);
            add(p + "resvgm.lambda2", {d}, ParamInit::Zero, false);
        }
        add(p + "ffn.fc1.weight", {d, cfg.ffn_mult * d}, ParamInit::XavierNormal, true);
        add(p + "ffn.fc1.bias", {cfg.ffn_mult * d}, ParamInit::Zero, false);
        add(p + "ffn.fc2.weight", {cfg.ffn_mult * d, d}, ParamInit::XavierNormal, true);
        add(p + "ffn.fc2.bias", {d}, ParamInit::Zero, false);
    }

    add("final_ln.gamma", {d}, ParamInit::One, false);
    add("final_ln.beta", {d}, ParamInit::Zero, false);
    add("head.weight", {d, cfg.patch_dim()}, ParamInit::Zero, true);
    add("head.bias", {cfg.patch_dim()}, ParamInit::Zero, false);
    return out;
}

// Exact parameter count by traversal of the declared layout.
inline int64_t count_params(const ModelConfig& cfg) {
    int64_t total = 0;
    for (const auto& desc : param_layout(cfg)) total += shape_numel(desc.shape);
    return total;
}

// Ratio of residual-value-guidance parameters to all parameters.
inline double resvgm_param_overhead(const ModelConfig& cfg) {
    int64_t lambdas = 0, total = 0;
    for (const auto& desc : param_layout(cfg)) {
        int64_t n = shape_numel(desc.shape);
        total += n;
        if (desc.name.find("resvgm.") != std::string::npos) lambdas += n;
    }
    return total == 0 ? 0.0 : static_cast<double>(lambdas) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Timestep features: d/2 sine then d/2 cosine features, angular frequencies
// 1/divisor with divisors geometric from 1 to 1e4.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> timestep_features(int64_t t, int64_t d) {
    if (d < 2 || d % 2 != 0) throw ConfigError("timestep_features: d must be even >= 2");
    int64_t half = d / 2;
    Tensor<T> out({1, d});
    for (int64_t j = 0; j < half; ++j) {
        double divisor =
            half > 1 ? std::pow(10000.0, static_cast<double>(j) / static_cast<double>(half - 1))
                     : 1.0;
        double angle = static_cast<double>(t) / divisor;
        out[j] = static_cast<T>(std::sin(angle));
        out[half + j] = static_cast<T>(std::cos(angle));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct Model {
    struct Block {
        BlockKind kind;
        Var<T> ln1_g, ln1_b, ln2_g, ln2_b;
        Var<T> adaln_w, adaln_b;
        WkvParams<T> wkv;           // SpatialWkv / TemporalWkv
        ChannelAttnParams<T> chan;  // Channel
        Var<T> q_wq, q_wk, q_wv, q_wo;  // quadratic variants
        ResVgmParams<T> resvgm;
        Var<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    ModelConfig cfg;
    std::vector<ParamDesc> layout;
    std::vector<Var<T>> params;  // aligned with layout

    Var<T> patch_w, patch_b, pos_spatial, pos_temporal;
    Var<T> time_w1, time_b1, time_w2, time_b2;
    std::vector<Block> blocks;
    Var<T> final_ln_g, final_ln_b, head_w, head_b;

    // cached index maps
    std::shared_ptr<std::vector<int64_t>> patch_index, unpatch_index;
    std::shared_ptr<std::vector<int64_t>> to_temporal, to_canonical;  // (f,s) <-> (s,f)
    std::shared_ptr<std::vector<int64_t>> site_of_token, frame_of_token;

    static Model init(const ModelConfig& cfg, RngStream rng) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        m.layout = param_layout(cfg);
        m.params.reserve(m.layout.size());
        for (const auto& desc : m.layout) m.params.push_back(materialize(desc, cfg, rng));
        m.bind();
        m.build_indices();
        return m;
    }

    Var<T> find(const std::string& name) const {
        for (size_t i = 0; i < layout.size(); ++i)
            if (layout[i].name == name) return params[i];
        throw ConfigError("model: no parameter named " + name);
    }

    void set_requires_grad(bool enabled) {
        for (auto& p : params) p->requires_grad = enabled;
    }

    void zero_grad() {
        for (auto& p : params) p->zero_grad();
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& p : params) n += p->numel();
        return n;
    }

    // Noise prediction: x_t is [F, C, H, W], t the timestep; returns a tape
    // node of the same shape.
    Var<T> forward(const Tensor<T>& x_t, int64_t t) const {
        return forward(constant(x_t), t);
    }

    Var<T> forward(const Var<T>& x_t, int64_t t) const {
        check_input(x_t->value);
        int64_t n = cfg.tokens();

        Var<T> flat = reshape(x_t, {x_t->numel()});
        Var<T> patches = gather(flat, patch_index, Shape{n, cfg.patch_dim()});
        Var<T> tokens = add_rowvec(matmul(patches, patch_w), patch_b);
        Var<T> z = tokens;  // guidance embedding: pre-positional token grid
        tokens = add(tokens, permute_rows(pos_spatial, site_of_token));
        tokens = add(tokens, permute_rows(pos_temporal, frame_of_token));

        Var<T> cond = condition_vector(t);

        const Var<T>* zp = cfg.use_resvgm ? &z : nullptr;
        Var<T> z_temporal;
        if (cfg.use_resvgm && has_temporal_block()) z_temporal = permute_rows(z, to_temporal);

        Var<T> h = tokens;
        for (const auto& blk : blocks) h = block_forward(h, cond, zp, z_temporal, blk);

        h = layer_norm(h, final_ln_g, final_ln_b);
        Var<T> out_patches = add_rowvec(matmul(h, head_w), head_b);
        Var<T> out_flat =
            gather(reshape(out_patches, {n * cfg.patch_dim()}), unpatch_index, Shape{x_t->numel()});
        return reshape(out_flat, x_t->value.shape());
    }

    static Var<T> materialize(const ParamDesc& desc, const ModelConfig& cfg, RngStream& rng) {
        Tensor<T> t(desc.shape);
        switch (desc.init) {
            case ParamInit::Zero:
                break;
            case ParamInit::One:
                t.fill(T(1));
                break;
            case ParamInit::XavierNormal: {
                double fan_in = static_cast<double>(desc.shape[0]);
                double fan_out =
                    static_cast<double>(desc.shape.size() > 1 ? desc.shape[1] : desc.shape[0]);
                rng.fill_gaussian(t, std::sqrt(2.0 / (fan_in + fan_out)));
                break;
            }
            case ParamInit::ShiftIdentity: {
                int64_t taps = desc.shape[1];
                for (int64_t c = 0; c < desc.shape[0]; ++c) t[c * taps + taps / 2] = T(1);
                break;
            }
            case ParamInit::DecaySpan: {
                int64_t d = desc.shape[0];
                for (int64_t c = 0; c < d; ++c) {
                    double target =
                        0.3 + 2.7 * (d > 1 ? static_cast<double>(c) / static_cast<double>(d - 1)
                                           : 0.5);
                    t[c] = static_cast<T>(std::log(std::expm1(target)));  // softplus inverse
                }
                break;
            }
            case ParamInit::AdalnBias: {
                int64_t d = cfg.d;
                for (int64_t j = 0; j < d; ++j) {
                    t[0 * d + j] = T(1);  // gamma1
                    t[3 * d + j] = T(1);  // gamma2
                }
                break;
            }
        }
        return leaf(std::move(t), true);
    }

    void bind() {
        patch_w = find("patch_embed.weight");
        patch_b = find("patch_embed.bias");
        pos_spatial = find("pos.spatial");
        pos_temporal = find("pos.temporal");
        time_w1 = find("time_embed.fc1.weight");
        time_b1 = find("time_embed.fc1.bias");
        time_w2 = find("time_embed.fc2.weight");
        time_b2 = find("time_embed.fc2.bias");
        final_ln_g = find("final_ln.gamma");
        final_ln_b = find("final_ln.beta");
        head_w = find("head.weight");
        head_b = find("head.bias");

        const auto plan = block_plan(cfg);
        blocks.clear();
        for (size_t i = 0; i < plan.size(); ++i) {
            std::string p = "blocks." + std::to_string(i) + ".";
            Block b;
            b.kind = plan[i];
            b.ln1_g = find(p + "ln1.gamma");
            b.ln1_b = find(p + "ln1.beta");
            b.ln2_g = find(p + "ln2.gamma");
            b.ln2_b = find(p + "ln2.beta");
            b.adaln_w = find(p + "adaln.weight");
            b.adaln_b = find(p + "adaln.bias");
            if (plan[i] == BlockKind::SpatialWkv || plan[i] == BlockKind::TemporalWkv) {
                b.wkv.shift_kernel = find(p + "attn.shift");
                b.wkv.w_r = find(p + "attn.w_r");
                b.wkv.w_k = find(p + "attn.w_k");
                b.wkv.w_v = find(p + "attn.w_v");
                b.wkv.w_o = find(p + "attn.w_o");
                b.wkv.decay = find(p + "attn.decay");
                b.wkv.bonus = find(p + "attn.bonus");
            } else if (plan[i] == BlockKind::Channel) {
                b.chan.w_q = find(p + "attn.w_q");
                b.chan.w_k = find(p + "attn.w_k");
                b.chan.w_v = find(p + "attn.w_v");
                b.chan.w_o = find(p + "attn.w_o");
                b.chan.temperature = find(p + "attn.temperature");
            } else {
                b.q_wq = find(p + "attn.w_q");
                b.q_wk = find(p + "attn.w_k");
                b.q_wv = find(p + "attn.w_v");
                b.q_wo = find(p + "attn.w_o");
            }
            if (cfg.use_resvgm) {
                b.resvgm.lambda1 = find(p + "resvgm.lambda1");
                b.resvgm.lambda2 = find(p + "resvgm.lambda2");
            }
            b.ffn_w1 = find(p + "ffn.fc1.weight");
            b.ffn_b1 = find(p + "ffn.fc1.bias");
            b.ffn_w2 = find(p + "ffn.fc2.weight");
            b.ffn_b2 = find(p + "ffn.fc2.bias");
            blocks.push_back(std::move(b));
        }
    }

    void build_indices() {
        int64_t f = cfg.frames, c = cfg.channels, hh = cfg.height, ww = cfg.width;
        int64_t p = cfg.patch, hp = cfg.hp(), wp = cfg.wp(), s = cfg.sites(), n = cfg.tokens();
        int64_t pd = cfg.patch_dim();

        patch_index = std::make_shared<std::vector<int64_t>>(n * pd);
        unpatch_index = std::make_shared<std::vector<int64_t>>(f * c * hh * ww);
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t gy = 0; gy < hp; ++gy)
                for (int64_t gx = 0; gx < wp; ++gx) {
                    int64_t tok = fi * s + gy * wp + gx;
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t py = 0; py < p; ++py)
                            for (int64_t px = 0; px < p; ++px) {
                                int64_t col = (ci * p + py) * p + px;
                                int64_t pix = ((fi * c + ci) * hh + gy * p + py) * ww + gx * p + px;
                                (*patch_index)[tok * pd + col] = pix;
                                (*unpatch_index)[pix] = tok * pd + col;
                            }
                }

        to_temporal = std::make_shared<std::vector<int64_t>>(n);
        to_canonical = std::make_shared<std::vector<int64_t>>(n);
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t si = 0; si < s; ++si) {
                (*to_temporal)[si * f + fi] = fi * s + si;
                (*to_canonical)[fi * s + si] = si * f + fi;
            }

        site_of_token = std::make_shared<std::vector<int64_t>>(n);
        frame_of_token = std::make_shared<std::vector<int64_t>>(n);
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t si = 0; si < s; ++si) {
                (*site_of_token)[fi * s + si] = si;
                (*frame_of_token)[fi * s + si] = fi;
            }
    }

    bool has_temporal_block() const {
        for (const auto& b : blocks)
            if (b.kind == BlockKind::TemporalWkv || b.kind == BlockKind::TemporalQuadratic)
                return true;
        return false;
    }

    void check_input(const Tensor<T>& x) const {
        Shape want{cfg.frames, cfg.channels, cfg.height, cfg.width};
        if (x.shape() != want)
            throw ShapeError("model: input " + shape_str(x.shape()) + ", config wants " +
                             shape_str(want));
    }

    Var<T> condition_vector(int64_t t) const {
        if (t < 0 || t > cfg.t_max) throw ConfigError("model: timestep out of range");
        Var<T> feats = constant(timestep_features<T>(t, cfg.d));  // [1, d]
        Var<T> hidden = silu(add_rowvec(matmul(feats, time_w1), time_b1));
        return add_rowvec(matmul(hidden, time_w2), time_b2);  // [1, d]
    }

    // h + alpha (.) sub(gamma (.) LN(h) + beta), both sub-layers; alpha rows
    // of the adaLN projection start at zero so fresh blocks are identities.
    Var<T> block_forward(const Var<T>& h, const Var<T>& cond, const Var<T>* z,
                         const Var<T>& z_temporal, const Block& blk) const {
        int64_t d = cfg.d;
        Var<T> mod = reshape(add_rowvec(matmul(silu(cond), blk.adaln_w), blk.adaln_b), {6 * d});
        Var<T> g1 = slice(mod, 0 * d, d), b1 = slice(mod, 1 * d, d), a1 = slice(mod, 2 * d, d);
        Var<T> g2 = slice(mod, 3 * d, d), b2 = slice(mod, 4 * d, d), a2 = slice(mod, 5 * d, d);

        Var<T> a_in = add_rowvec(mul_rowvec(layer_norm(h, blk.ln1_g, blk.ln1_b), g1), b1);
        Var<T> attn_out = attention(a_in, z, z_temporal, blk);
        Var<T> mid = add(h, mul_rowvec(attn_out, a1));

        Var<T> f_in = add_rowvec(mul_rowvec(layer_norm(mid, blk.ln2_g, blk.ln2_b), g2), b2);
        Var<T> f_hidden = gelu(add_rowvec(matmul(f_in, blk.ffn_w1), blk.ffn_b1));
        Var<T> f_out = add_rowvec(matmul(f_hidden, blk.ffn_w2), blk.ffn_b2);
        return add(mid, mul_rowvec(f_out, a2));
    }

    Var<T> attention(const Var<T>& x, const Var<T>* z, const Var<T>& z_temporal,
                     const Block& blk) const {
        const Var<T>* l1 = z ? &blk.resvgm.lambda1 : nullptr;
        const Var<T>* l2 = z ? &blk.resvgm.lambda2 : nullptr;
        switch (blk.kind) {
            case BlockKind::SpatialWkv:
                return wkv_sublayer(x, blk.wkv, ShiftKind::Spatial, cfg.frames, cfg.hp(), cfg.wp(),
                                    z, l1, l2);
            case BlockKind::TemporalWkv: {
                Var<T> xt = permute_rows(x, to_temporal);
                const Var<T>* zt = z ? &z_temporal : nullptr;
                Var<T> yt = wkv_sublayer(xt, blk.wkv, ShiftKind::Temporal, cfg.frames, cfg.hp(),
                                         cfg.wp(), zt, l1, l2);
                return permute_rows(yt, to_canonical);
            }
            case BlockKind::Channel:
                return channel_attention(x, blk.chan, z, l1, l2);
            case BlockKind::SpatialQuadratic: {
                Var<T> att = softmax_attention(matmul(x, blk.q_wq), matmul(x, blk.q_wk),
                                               matmul(x, blk.q_wv), cfg.sites());
                return matmul(att, blk.q_wo);
            }
            case BlockKind::TemporalQuadratic: {
                Var<T> xt = permute_rows(x, to_temporal);
                Var<T> att = softmax_attention(matmul(xt, blk.q_wq), matmul(xt, blk.q_wk),
                                               matmul(xt, blk.q_wv), cfg.frames);
                return permute_rows(matmul(att, blk.q_wo), to_canonical);
            }
        }
        throw ConfigError("model: unknown block kind");
    }
};

// ---------------------------------------------------------------------------
// Analytic FLOP accounting. Multiply-accumulate pairs count as 2 flops;
// exp/tanh and friends count as 1. Shapes may override the config's clip
// geometry so one trained configuration can be costed at several input sizes.
// ---------------------------------------------------------------------------

namespace detail {

inline int64_t gemm_flops(int64_t n, int64_t k, int64_t m) { return 2 * n * k * m; }

inline int64_t softmax_attention_flops(int64_t t, int64_t d) {
    return 4 * t * t * d + 5 * t * t;  // scores + mix + row softmax
}

// Two directional scans plus the three-way combine, per element.
constexpr int64_t kWkvScanFlopsPerElem = 32;

}  // namespace detail

inline int64_t count_flops(const ModelConfig& cfg, int64_t frames, int64_t height, int64_t width) {
    if (height % cfg.patch != 0 || width % cfg.patch != 0 || frames < 1)
        throw ConfigError("count_flops: shape incompatible with patch size");
    int64_t d = cfg.d;
    int64_t s = (height / cfg.patch) * (width / cfg.patch);
    int64_t n = frames * s;
    int64_t pd = cfg.patch_dim();

    int64_t total = 0;
    total += detail::gemm_flops(n, pd, d) + n * d;  // patch embed + bias
    total += 2 * n * d;                              // positional adds
    total += 2 * detail::gemm_flops(1, d, d) + 2 * d;  // timestep MLP

    for (BlockKind kind : block_plan(cfg)) {
        total += 2 * 8 * n * d;                      // two layer norms
        total += detail::gemm_flops(1, d, 6 * d) + d;  // adaLN projection + silu
        total += 2 * (3 * n * d);                    // modulate (scale+shift), both sub-layers
        total += 2 * (2 * n * d);                    // gated residual adds
        switch (kind) {
            case BlockKind::SpatialWkv:
                total += 2 * 9 * n * d;  // shift S
                total += 4 * detail::gemm_flops(n, d, d);
                total += detail::kWkvScanFlopsPerElem * n * d + 2 * n * d;  // scan + gate
                break;
            case BlockKind::TemporalWkv:
                total += 2 * 3 * n * d;  // shift T
                total += 4 * detail::gemm_flops(n, d, d);
                total += detail::kWkvScanFlopsPerElem * n * d + 2 * n * d;
                break;
            case BlockKind::Channel:
                total += 4 * detail::gemm_flops(n, d, d);
                total += 2 * (3 * n * d);            // q/k channel normalization
                total += 2 * detail::gemm_flops(d, n, d) + 6 * d * d;  // scores + mix + softmax
                break;
            case BlockKind::SpatialQuadratic:
                total += 4 * detail::gemm_flops(n, d, d);
                total += frames * detail::softmax_attention_flops(s, d);
                break;
            case BlockKind::TemporalQuadratic:
                total += 4 * detail::gemm_flops(n, d, d);
                total += s * detail::softmax_attention_flops(frames, d);
                break;
        }
        if (cfg.use_resvgm) total += 5 * n * d;
        total += detail::gemm_flops(n, d, cfg.ffn_mult * d) * 2;  // two FFN matmuls
        total += 10 * n * cfg.ffn_mult * d;                       // gelu
    }

    total += 8 * n * d;                       // final layer norm
    total += detail::gemm_flops(n, d, pd) + n * pd;  // head
    return total;
}

inline int64_t count_flops(const ModelConfig& cfg) {
    return count_flops(cfg, cfg.frames, cfg.height, cfg.width);
}

// Same trunk with every attention replaced by quadratic softmax
// self-attention over the same sequences.
inline int64_t count_flops_quadratic_twin(const ModelConfig& cfg, int64_t frames, int64_t height,
                                          int64_t width) {
    ModelConfig twin = cfg;
    twin.st_attention = StAttention::Quadratic;
    twin.use_resvgm = false;
    twin.use_channel_block = false;
    int64_t total = count_flops(twin, frames, height, width);
    if (cfg.use_channel_block) {
        // channel blocks become full self-attention over all clip tokens
        int64_t d = cfg.d;
        int64_t s = (height / cfg.patch) * (width / cfg.patch);
        int64_t n = frames * s;
        int64_t per_block = 2 * 8 * n * d + detail::gemm_flops(1, d, 6 * d) + d + 2 * (3 * n * d) +
                            2 * (2 * n * d) + 4 * detail::gemm_flops(n, d, d) +
                            detail::softmax_attention_flops(n, d) +
                            detail::gemm_flops(n, d, cfg.ffn_mult * d) * 2 +
                            10 * n * cfg.ffn_mult * d;
        total += cfg.n_triplets * per_block;
    }
    return total;
}

inline int64_t count_flops_quadratic_twin(const ModelConfig& cfg) {
    return count_flops_quadratic_twin(cfg, cfg.frames, cfg.height, cfg.width);
}

}  // namespace feat
