#pragma once

// DiT-lite velocity predictor.
//
// Input tokens are latent pixels of z_t concatenated along channels with the
// condition latent and the binary temporal mask (2C + 1 features). Each
// block applies, in order:
//   adaLN(shift1, scale1) -> self-attention with 3D RoPE -> gate1
//   LayerNorm -> text cross-attention
//   LayerNorm -> audio cross-attention with 1D RoPE (optional per block)
//   adaLN(shift2, scale2) -> MLP -> gate2
// The six modulation vectors come from a per-block linear head on the
// sinusoidal timestep embedding. A final adaLN + linear maps to C channels.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipflow/audio_encoder.hpp"
#include "lipflow/codec.hpp"
#include "lipflow/nn.hpp"
#include "lipflow/rope.hpp"
#include "lipflow/tensor.hpp"

namespace lipflow::dit {

struct DenoiserConfig {
    int width = 64;
    int depth = 4;
    int heads = 4;
    int mlp_ratio = 4;
    std::vector<int> audio_layers;  // block indices with audio cross-attention; empty = all
    int text_vocab = 4;
    int text_tokens = 4;
    int patch = 4;
    int tokens_per_frame = 2;
    int audio_dim = 16;
    double rope_base_video = 100.0;
    double rope_base_audio = 100.0;

    int latent_channels() const { return 3 * patch * patch; }
    int input_channels() const { return 2 * latent_channels() + 1; }
    int head_dim() const { return width / heads; }

    bool has_audio(int block) const {
        if (audio_layers.empty()) return true;
        for (int b : audio_layers)
            if (b == block) return true;
        return false;
    }

    void validate() const {
        require(depth >= 1, "DenoiserConfig: depth must be >= 1");
        require(heads >= 1 && width % (2 * heads) == 0, "DenoiserConfig: width must be divisible by 2*heads");
        require(head_dim() >= 6, "DenoiserConfig: head dimension too small for 3-axis RoPE");
        require(mlp_ratio >= 1 && text_vocab >= 1 && text_tokens >= 1, "DenoiserConfig: invalid sizes");
        require(patch >= 1 && tokens_per_frame >= 1 && audio_dim >= 1, "DenoiserConfig: invalid codec/audio sizes");
        for (int b : audio_layers) require(b >= 0 && b < depth, "DenoiserConfig: audio layer index out of range");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = {{"width", c.width},
         {"depth", c.depth},
         {"heads", c.heads},
         {"mlp_ratio", c.mlp_ratio},
         {"audio_layers", c.audio_layers},
         {"text_vocab", c.text_vocab},
         {"text_tokens", c.text_tokens},
         {"patch", c.patch},
         {"tokens_per_frame", c.tokens_per_frame},
         {"audio_dim", c.audio_dim},
         {"rope_base_video", c.rope_base_video},
         {"rope_base_audio", c.rope_base_audio}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    j.at("width").get_to(c.width);
    j.at("depth").get_to(c.depth);
    j.at("heads").get_to(c.heads);
    j.at("mlp_ratio").get_to(c.mlp_ratio);
    j.at("audio_layers").get_to(c.audio_layers);
    j.at("text_vocab").get_to(c.text_vocab);
    j.at("text_tokens").get_to(c.text_tokens);
    j.at("patch").get_to(c.patch);
    j.at("tokens_per_frame").get_to(c.tokens_per_frame);
    j.at("audio_dim").get_to(c.audio_dim);
    j.at("rope_base_video").get_to(c.rope_base_video);
    j.at("rope_base_audio").get_to(c.rope_base_audio);
}

template <class T>
struct BlockParams {
    nn::AttentionParams<T> self_attn, text_attn, audio_attn;
    nn::Linear<T> mlp_in, mlp_out, modulation;
};

template <class T>
struct ModelParams {
    DenoiserConfig config;
    nn::Linear<T> in_proj, time_in, time_out, audio_proj, final_modulation, out_proj;
    Mat<T> text_table;  // [(text_vocab + 1) * text_tokens, width]; last tag is the null prompt
    Mat<T> null_audio;  // [1, width]
    std::vector<BlockParams<T>> blocks;
};

/// Visit every tensor in serialization order.
template <class P, class F>
void for_each_tensor(P& p, F&& f) {
    auto lin = [&](const std::string& name, auto& l) {
        f(name + ".W", l.W);
        f(name + ".b", l.b);
    };
    auto attn = [&](const std::string& name, auto& a) {
        lin(name + ".q", a.q);
        lin(name + ".k", a.k);
        lin(name + ".v", a.v);
        lin(name + ".o", a.o);
    };
    lin("in_proj", p.in_proj);
    lin("time_in", p.time_in);
    lin("time_out", p.time_out);
    lin("audio_proj", p.audio_proj);
    f(std::string("text_table"), p.text_table);
    f(std::string("null_audio"), p.null_audio);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        const std::string b = "blocks." + std::to_string(i);
        attn(b + ".self_attn", p.blocks[i].self_attn);
        attn(b + ".text_attn", p.blocks[i].text_attn);
        if (p.config.has_audio(static_cast<int>(i))) attn(b + ".audio_attn", p.blocks[i].audio_attn);
        lin(b + ".mlp_in", p.blocks[i].mlp_in);
        lin(b + ".mlp_out", p.blocks[i].mlp_out);
        lin(b + ".modulation", p.blocks[i].modulation);
    }
    lin("final_modulation", p.final_modulation);
    lin("out_proj", p.out_proj);
}

template <class T>
std::size_t parameter_count(const ModelParams<T>& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

/// Parameters with all tensors allocated and zero.
template <class T>
ModelParams<T> zero_params(const DenoiserConfig& c) {
    c.validate();
    const int d = c.width, C = c.latent_channels();
    ModelParams<T> p;
    p.config = c;
    p.in_proj = nn::Linear<T>(c.input_channels(), d);
    p.time_in = nn::Linear<T>(d, d);
    p.time_out = nn::Linear<T>(d, d);
    p.audio_proj = nn::Linear<T>(c.audio_dim, d);
    p.text_table = Mat<T>::Zero((c.text_vocab + 1) * c.text_tokens, d);
    p.null_audio = Mat<T>::Zero(1, d);
    p.blocks.resize(c.depth);
    for (int i = 0; i < c.depth; ++i) {
        auto& b = p.blocks[i];
        b.self_attn = nn::AttentionParams<T>(d, d, d);
        b.text_attn = nn::AttentionParams<T>(d, d, d);
        if (c.has_audio(i)) b.audio_attn = nn::AttentionParams<T>(d, d, d);
        b.mlp_in = nn::Linear<T>(d, d * c.mlp_ratio);
        b.mlp_out = nn::Linear<T>(d * c.mlp_ratio, d);
        b.modulation = nn::Linear<T>(d, 6 * d);
    }
    p.final_modulation = nn::Linear<T>(d, 2 * d);
    p.out_proj = nn::Linear<T>(d, C);
    return p;
}

/// Xavier-uniform weights, zero biases. With `zero_heads` the modulation
/// heads and the output projection start at zero (adaLN-Zero), otherwise
/// every tensor is random (used for gradient checks).
template <class T>
ModelParams<T> init_params(const DenoiserConfig& c, std::uint64_t seed, bool zero_heads = true) {
    ModelParams<T> p = zero_params<T>(c);
    std::mt19937_64 rng(seed);
    auto xavier = [&](nn::Linear<T>& l) {
        const double lim = std::sqrt(6.0 / (l.in() + l.out()));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (Eigen::Index i = 0; i < l.W.size(); ++i) l.W.data()[i] = static_cast<T>(u(rng));
        if (!zero_heads) {
            std::uniform_real_distribution<double> ub(-0.1, 0.1);
            for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b.data()[i] = static_cast<T>(ub(rng));
        }
    };
    auto attn = [&](nn::AttentionParams<T>& a) {
        xavier(a.q);
        xavier(a.k);
        xavier(a.v);
        xavier(a.o);
    };
    xavier(p.in_proj);
    xavier(p.time_in);
    xavier(p.time_out);
    xavier(p.audio_proj);
    std::normal_distribution<double> n(0.0, zero_heads ? 0.02 : 0.5);
    for (Eigen::Index i = 0; i < p.text_table.size(); ++i) p.text_table.data()[i] = static_cast<T>(n(rng));
    for (Eigen::Index i = 0; i < p.null_audio.size(); ++i) p.null_audio.data()[i] = static_cast<T>(n(rng));
    for (int i = 0; i < c.depth; ++i) {
        auto& b = p.blocks[i];
        attn(b.self_attn);
        attn(b.text_attn);
        if (c.has_audio(i)) attn(b.audio_attn);
        xavier(b.mlp_in);
        xavier(b.mlp_out);
        if (!zero_heads) xavier(b.modulation);
    }
    if (!zero_heads) {
        xavier(p.final_modulation);
        xavier(p.out_proj);
    }
    return p;
}

template <class T>
struct DenoiseInput {
    LatentVideo<T> z;
    double t = 0.0;
    std::optional<int> text;                            // nullopt = null prompt
    const codec::ConditionInputs<T>* cond = nullptr;    // null = zero latent + zero mask
    const audio::AudioTokens* audio = nullptr;          // null = learned null tokens
};

template <class T>
struct ForwardOptions {
    bool self_attention = true;
    bool text_attention = true;
    /// When set, receives per-block, per-head audio attention logits.
    std::vector<std::vector<Mat<T>>>* audio_logits = nullptr;
};

/// Everything derived from the input before the transformer blocks.
template <class T>
struct Prepared {
    int frames = 0, height = 0, width = 0, tokens = 0, audio_len = 0;
    Mat<T> x_in;        // [N, 2C+1]
    Mat<T> text_ctx;    // [Lt, d]
    int text_row = 0;   // first table row used
    Mat<T> audio_feat;  // [La, Da]; empty when audio is null
    Mat<T> audio_ctx;   // [La, d]
    Mat<T> t_freq, t_pre, t_hidden, t_emb, t_act;
    std::vector<Mat<T>> mods;  // per block [1, 6d]
    Mat<T> final_mod;          // [1, 2d]
    RopeTable<T> rope_video, rope_audio_q, rope_audio_k;
};

template <class T>
Mat<T> timestep_frequencies(double t, int dim) {
    const int half = dim / 2;
    Mat<T> f(1, dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f(0, i) = static_cast<T>(std::cos(1000.0 * t * freq));
        f(0, half + i) = static_cast<T>(std::sin(1000.0 * t * freq));
    }
    return f;
}

template <class T>
Prepared<T> prepare(const ModelParams<T>& p, const DenoiseInput<T>& in) {
    const DenoiserConfig& c = p.config;
    const int C = c.latent_channels(), d = c.width, r = c.tokens_per_frame;
    require(in.z.channels == C, "denoiser: latent channel count does not match config");
    require(in.z.frames >= 1, "denoiser: empty latent");
    require(std::isfinite(in.t) && all_finite(in.z.data), "denoiser: non-finite input");
    Prepared<T> pr;
    pr.frames = in.z.frames;
    pr.height = in.z.height;
    pr.width = in.z.width;
    const int hw = pr.height * pr.width;
    pr.tokens = pr.frames * hw;
    pr.audio_len = r * pr.frames;

    if (in.cond) {
        require(in.cond->cond_latent.same_shape(in.z), "denoiser: condition latent shape mismatch");
        require(in.cond->cond_mask.frames == pr.frames && in.cond->cond_mask.height == pr.height &&
                    in.cond->cond_mask.width == pr.width && in.cond->cond_mask.channels == 1,
                "denoiser: condition mask shape mismatch");
    }
    pr.x_in = Mat<T>::Zero(pr.tokens, c.input_channels());
    for (int t = 0; t < pr.frames; ++t)
        for (int ch = 0; ch < C; ++ch) {
            const T* zs = in.z.data.data() + in.z.index(t, ch, 0, 0);
            const T* cs = in.cond ? in.cond->cond_latent.data.data() + in.z.index(t, ch, 0, 0) : nullptr;
            for (int i = 0; i < hw; ++i) {
                pr.x_in(t * hw + i, ch) = zs[i];
                if (cs) pr.x_in(t * hw + i, C + ch) = cs[i];
            }
        }
    if (in.cond)
        for (int t = 0; t < pr.frames; ++t)
            for (int i = 0; i < hw; ++i)
                pr.x_in(t * hw + i, 2 * C) = in.cond->cond_mask.data[static_cast<std::size_t>(t) * hw + i];

    const int tag = in.text ? *in.text : c.text_vocab;
    require(tag >= 0 && tag <= c.text_vocab, "denoiser: text tag out of range");
    pr.text_row = tag * c.text_tokens;
    pr.text_ctx = p.text_table.middleRows(pr.text_row, c.text_tokens);

    if (in.audio) {
        require(in.audio->dim == c.audio_dim, "denoiser: audio feature dimension mismatch");
        require(in.audio->length == pr.audio_len, "denoiser: audio token count must equal r * frames");
        require(all_finite(in.audio->data), "denoiser: non-finite audio tokens");
        pr.audio_feat.resize(pr.audio_len, c.audio_dim);
        for (int i = 0; i < pr.audio_len; ++i)
            for (int j = 0; j < c.audio_dim; ++j) pr.audio_feat(i, j) = static_cast<T>(in.audio->at(i, j));
        pr.audio_ctx = nn::linear(pr.audio_feat, p.audio_proj);
    } else {
        pr.audio_ctx = p.null_audio.replicate(pr.audio_len, 1);
    }

    pr.t_freq = timestep_frequencies<T>(in.t, d);
    pr.t_pre = nn::linear(pr.t_freq, p.time_in);
    pr.t_hidden = nn::silu(pr.t_pre);
    pr.t_emb = nn::linear(pr.t_hidden, p.time_out);
    pr.t_act = nn::silu(pr.t_emb);
    pr.mods.resize(c.depth);
    for (int b = 0; b < c.depth; ++b) pr.mods[b] = nn::linear(pr.t_act, p.blocks[b].modulation);
    pr.final_mod = nn::linear(pr.t_act, p.final_modulation);

    const int dh = c.head_dim();
    pr.rope_video = rope_table_3d<T>(pr.frames, pr.height, pr.width, dh, c.rope_base_video);
    std::vector<int> qpos(pr.tokens), kpos(pr.audio_len);
    for (int n = 0; n < pr.tokens; ++n) qpos[n] = r * (n / hw);
    for (int i = 0; i < pr.audio_len; ++i) kpos[i] = i;
    pr.rope_audio_q = rope_table_1d<T>(qpos, dh, c.rope_base_audio);
    pr.rope_audio_k = rope_table_1d<T>(kpos, dh, c.rope_base_audio);
    return pr;
}

template <class T>
Mat<T> embed(const ModelParams<T>& p, const Prepared<T>& pr) {
    return nn::linear(pr.x_in, p.in_proj);
}

/// Chunk k (0..5) of a [1, 6d] modulation row.
template <class T>
Mat<T> mod_chunk(const Mat<T>& mods, int k, int d) {
    return mods.middleCols(k * d, d);
}

/// adaLN input of the first block: the timestep-modulated hidden state.
template <class T>
Mat<T> modulated_input(const ModelParams<T>& p, const Prepared<T>& pr, const Mat<T>& h0) {
    const int d = p.config.width;
    std::vector<T> rstd;
    return nn::modulate(nn::layer_norm(h0, rstd), mod_chunk(pr.mods[0], 0, d), mod_chunk(pr.mods[0], 1, d));
}

template <class T>
struct BlockCache {
    Mat<T> n1, a1, sa, n2, n3, n4, a4, m_pre, m_act, m_out;
    std::vector<T> r1, r2, r3, r4;
    nn::AttentionCache<T> self_c, text_c, audio_c;
};

template <class T>
Mat<T> block_forward(const ModelParams<T>& p, int bi, const Prepared<T>& pr, const Mat<T>& x0,
                     std::type_identity_t<BlockCache<T>>* cache, const std::type_identity_t<ForwardOptions<T>>& opts) {
    const DenoiserConfig& c = p.config;
    const BlockParams<T>& b = p.blocks[bi];
    const int d = c.width;
    const Mat<T>& mods = pr.mods[bi];
    BlockCache<T> local;
    BlockCache<T>& k = cache ? *cache : local;
    const bool keep = cache != nullptr;

    Mat<T> x = x0;
    if (opts.self_attention) {
        k.n1 = nn::layer_norm(x, k.r1);
        k.a1 = nn::modulate(k.n1, mod_chunk(mods, 0, d), mod_chunk(mods, 1, d));
        k.sa = nn::attention(k.a1, k.a1, b.self_attn, c.heads, &pr.rope_video, &pr.rope_video,
                             keep ? &k.self_c : nullptr);
        x += (k.sa.array().rowwise() * mod_chunk(mods, 2, d).row(0).array()).matrix();
    }
    if (opts.text_attention) {
        k.n2 = nn::layer_norm(x, k.r2);
        x += nn::attention(k.n2, pr.text_ctx, b.text_attn, c.heads, static_cast<const RopeTable<T>*>(nullptr),
                           static_cast<const RopeTable<T>*>(nullptr), keep ? &k.text_c : nullptr);
    }
    if (c.has_audio(bi)) {
        k.n3 = nn::layer_norm(x, k.r3);
        std::vector<Mat<T>>* logits = nullptr;
        if (opts.audio_logits) {
            opts.audio_logits->resize(c.depth);
            logits = &(*opts.audio_logits)[bi];
        }
        x += nn::attention(k.n3, pr.audio_ctx, b.audio_attn, c.heads, &pr.rope_audio_q, &pr.rope_audio_k,
                           keep ? &k.audio_c : nullptr, logits);
    }
    k.n4 = nn::layer_norm(x, k.r4);
    k.a4 = nn::modulate(k.n4, mod_chunk(mods, 3, d), mod_chunk(mods, 4, d));
    k.m_pre = nn::linear(k.a4, b.mlp_in);
    k.m_act = nn::silu(k.m_pre);
    k.m_out = nn::linear(k.m_act, b.mlp_out);
    x += (k.m_out.array().rowwise() * mod_chunk(mods, 5, d).row(0).array()).matrix();
    return x;
}

template <class T>
struct HeadCache {
    Mat<T> nf, af;
    std::vector<T> rf;
};

template <class T>
Mat<T> head_forward(const ModelParams<T>& p, const Prepared<T>& pr, const Mat<T>& h,
                    std::type_identity_t<HeadCache<T>>* cache) {
    const int d = p.config.width;
    HeadCache<T> local;
    HeadCache<T>& k = cache ? *cache : local;
    k.nf = nn::layer_norm(h, k.rf);
    k.af = nn::modulate(k.nf, Mat<T>(pr.final_mod.middleCols(0, d)), Mat<T>(pr.final_mod.middleCols(d, d)));
    return nn::linear(k.af, p.out_proj);
}

template <class T>
LatentVideo<T> tokens_to_latent(const Mat<T>& tok, int frames, int channels, int h, int w, int patch) {
    LatentVideo<T> out(frames, channels, h, w, patch);
    const int hw = h * w;
    for (int t = 0; t < frames; ++t)
        for (int ch = 0; ch < channels; ++ch) {
            T* dst = out.data.data() + out.index(t, ch, 0, 0);
            for (int i = 0; i < hw; ++i) dst[i] = tok(t * hw + i, ch);
        }
    return out;
}

template <class T>
Mat<T> latent_to_tokens(const LatentVideo<T>& z) {
    const int hw = z.height * z.width;
    Mat<T> tok(z.frames * hw, z.channels);
    for (int t = 0; t < z.frames; ++t)
        for (int ch = 0; ch < z.channels; ++ch) {
            const T* src = z.data.data() + z.index(t, ch, 0, 0);
            for (int i = 0; i < hw; ++i) tok(t * hw + i, ch) = src[i];
        }
    return tok;
}

/// Activations kept for the backward pass.
template <class T>
struct ForwardCache {
    Prepared<T> prep;
    std::vector<Mat<T>> block_inputs;
    std::vector<BlockCache<T>> blocks;
    Mat<T> final_hidden;
    HeadCache<T> head;
    ForwardOptions<T> opts;
};

/// Predicted velocity, same shape as z_t.
template <class T>
LatentVideo<T> forward(const ModelParams<T>& p, const DenoiseInput<T>& in,
                       std::type_identity_t<ForwardCache<T>>* cache = nullptr,
                       const std::type_identity_t<ForwardOptions<T>>& opts = {}) {
    Prepared<T> pr = prepare(p, in);
    Mat<T> h = embed(p, pr);
    if (cache) {
        cache->blocks.assign(p.config.depth, {});
        cache->block_inputs.assign(p.config.depth, {});
        cache->opts = opts;
    }
    for (int b = 0; b < p.config.depth; ++b) {
        if (cache) cache->block_inputs[b] = h;
        h = block_forward(p, b, pr, h, cache ? &cache->blocks[b] : nullptr, opts);
    }
    const Mat<T> out = head_forward(p, pr, h, cache ? &cache->head : nullptr);
    LatentVideo<T> v = tokens_to_latent(out, pr.frames, p.config.latent_channels(), pr.height, pr.width, in.z.patch);
    if (cache) {
        cache->final_hidden = std::move(h);
        cache->prep = std::move(pr);
    }
    return v;
}

namespace detail {

/// Gradient of y = x*(1+scale)+shift w.r.t. shift, scale and x.
template <class T>
void modulate_backward(const Mat<T>& x, const Mat<T>& dy, const Mat<T>& scale, Mat<T>& dshift, Mat<T>& dscale,
                       Mat<T>& dx) {
    dshift = dy.colwise().sum();
    dscale = dy.cwiseProduct(x).colwise().sum();
    dx = (dy.array().rowwise() * (scale.row(0).array() + T(1))).matrix();
}

}  // namespace detail

/// Accumulate parameter gradients of <dL/dv, v> given dL/dv in latent
/// layout. `grads` must come from zero_params with the same config.
template <class T>
void backward(const ModelParams<T>& p, const ForwardCache<T>& cache, const LatentVideo<T>& dv, ModelParams<T>& grads) {
    const DenoiserConfig& c = p.config;
    const int d = c.width;
    const Prepared<T>& pr = cache.prep;
    const Mat<T> dout = latent_to_tokens(dv);

    Mat<T> dt_act = Mat<T>::Zero(1, d);
    Mat<T> daudio_ctx = Mat<T>::Zero(pr.audio_len, d);
    Mat<T> dtext_ctx = Mat<T>::Zero(c.text_tokens, d);

    // Head.
    Mat<T> daf = nn::linear_backward(cache.head.af, dout, p.out_proj, grads.out_proj);
    Mat<T> dshift, dscale, dn;
    detail::modulate_backward(cache.head.nf, daf, Mat<T>(pr.final_mod.middleCols(d, d)), dshift, dscale, dn);
    Mat<T> dh = nn::layer_norm_backward(cache.head.nf, cache.head.rf, dn);
    Mat<T> dfinal(1, 2 * d);
    dfinal << dshift, dscale;
    dt_act += nn::linear_backward(pr.t_act, dfinal, p.final_modulation, grads.final_modulation);

    for (int bi = c.depth - 1; bi >= 0; --bi) {
        const BlockParams<T>& b = p.blocks[bi];
        BlockParams<T>& g = grads.blocks[bi];
        const BlockCache<T>& k = cache.blocks[bi];
        const Mat<T>& mods = pr.mods[bi];
        Mat<T> dmods = Mat<T>::Zero(1, 6 * d);

        // MLP branch: x4 = x3 + gate2 * m_out.
        dmods.middleCols(5 * d, d) = dh.cwiseProduct(k.m_out).colwise().sum();
        const Mat<T> dm_out = (dh.array().rowwise() * mod_chunk(mods, 5, d).row(0).array()).matrix();
        const Mat<T> dm_act = nn::linear_backward(k.m_act, dm_out, b.mlp_out, g.mlp_out);
        const Mat<T> dm_pre = nn::silu_backward(k.m_pre, dm_act);
        const Mat<T> da4 = nn::linear_backward(k.a4, dm_pre, b.mlp_in, g.mlp_in);
        Mat<T> ds, dsc, dn4;
        detail::modulate_backward(k.n4, da4, mod_chunk(mods, 4, d), ds, dsc, dn4);
        dmods.middleCols(3 * d, d) = ds;
        dmods.middleCols(4 * d, d) = dsc;
        dh += nn::layer_norm_backward(k.n4, k.r4, dn4);

        if (c.has_audio(bi)) {
            Mat<T> dq, dkv;
            nn::attention_backward(k.audio_c, dh, b.audio_attn, c.heads, &pr.rope_audio_q, &pr.rope_audio_k,
                                   g.audio_attn, dq, dkv);
            daudio_ctx += dkv;
            dh += nn::layer_norm_backward(k.n3, k.r3, dq);
        }
        if (cache.opts.text_attention) {
            Mat<T> dq, dkv;
            nn::attention_backward(k.text_c, dh, b.text_attn, c.heads, static_cast<const RopeTable<T>*>(nullptr),
                                   static_cast<const RopeTable<T>*>(nullptr), g.text_attn, dq, dkv);
            dtext_ctx += dkv;
            dh += nn::layer_norm_backward(k.n2, k.r2, dq);
        }
        if (cache.opts.self_attention) {
            dmods.middleCols(2 * d, d) = dh.cwiseProduct(k.sa).colwise().sum();
            const Mat<T> dsa = (dh.array().rowwise() * mod_chunk(mods, 2, d).row(0).array()).matrix();
            Mat<T> dq, dkv;
            nn::attention_backward(k.self_c, dsa, b.self_attn, c.heads, &pr.rope_video, &pr.rope_video, g.self_attn,
                                   dq, dkv);
            const Mat<T> da1 = dq + dkv;
            Mat<T> ds1, dsc1, dn1;
            detail::modulate_backward(k.n1, da1, mod_chunk(mods, 1, d), ds1, dsc1, dn1);
            dmods.middleCols(0, d) = ds1;
            dmods.middleCols(d, d) = dsc1;
            dh += nn::layer_norm_backward(k.n1, k.r1, dn1);
        }
        dt_act += nn::linear_backward(pr.t_act, dmods, b.modulation, g.modulation);
    }

    nn::linear_backward(pr.x_in, dh, p.in_proj, grads.in_proj);
    if (pr.audio_feat.size() > 0)
        nn::linear_backward(pr.audio_feat, daudio_ctx, p.audio_proj, grads.audio_proj);
    else
        grads.null_audio += daudio_ctx.colwise().sum();
    grads.text_table.middleRows(pr.text_row, c.text_tokens) += dtext_ctx;

    const Mat<T> dt_emb = nn::silu_backward(pr.t_emb, dt_act);
    const Mat<T> dt_hidden = nn::linear_backward(pr.t_hidden, dt_emb, p.time_out, grads.time_out);
    const Mat<T> dt_pre = nn::silu_backward(pr.t_pre, dt_hidden);
    nn::linear_backward(pr.t_freq, dt_pre, p.time_in, grads.time_in);
}

}  // namespace lipflow::dit
