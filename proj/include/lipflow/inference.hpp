#pragma once

// Sampling: Euler integration of the learned velocity field from noise
// (t = 0) to data (t = 1), dual classifier-free guidance, sliding windows
// with bidirectional latent fusion, the hybrid condition switch, a residual
// cache for the transformer blocks, and color unification.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lipflow/audio_encoder.hpp"
#include "lipflow/codec.hpp"
#include "lipflow/denoiser.hpp"
#include "lipflow/random.hpp"
#include "lipflow/tensor.hpp"

namespace lipflow::infer {

enum class CfgMode { literal, normalized };

struct CfgSchedule {
    enum class Kind { constant, linear_ramp };
    Kind kind = Kind::constant;
    double start_frac = 1.0;
    double end_frac = 1.0;
};

struct SamplerConfig {
    int steps = 50;
    double cfg_audio = 4.5;
    double cfg_text = 1.0;
    CfgMode cfg_mode = CfgMode::normalized;
    CfgSchedule schedule;
    int window = 16;  // f, latent frames
    int overlap = 4;  // o, latent frames
    int hybrid_switch = 0;
    double cache_threshold = 0.0;
    bool literal_fusion = false;  // debug: the sign-flipped blend
    std::uint64_t seed = 0;

    void validate() const {
        require(steps >= 1, "SamplerConfig: steps must be >= 1");
        require(std::isfinite(cfg_audio) && std::isfinite(cfg_text), "SamplerConfig: guidance weights must be finite");
        require(std::isfinite(schedule.start_frac) && std::isfinite(schedule.end_frac),
                "SamplerConfig: schedule fractions must be finite");
        require(window >= 1, "SamplerConfig: window must be >= 1");
        require(overlap >= 0 && overlap < window, "SamplerConfig: overlap must satisfy 0 <= o < f");
        require(overlap != 1, "SamplerConfig: overlap 1 is not allowed (fusion weights need o >= 2)");
        require(hybrid_switch >= 0 && hybrid_switch <= steps, "SamplerConfig: hybrid switch must lie in [0, steps]");
        require(cache_threshold >= 0.0, "SamplerConfig: cache threshold must be >= 0");
    }
};

/// Guided velocity from the three branches: (text, audio), (text, no audio)
/// and fully unconditional.
template <class T>
LatentVideo<T> cfg_combine(CfgMode mode, const LatentVideo<T>& u_ta, const LatentVideo<T>& u_t0,
                           const LatentVideo<T>& u_null, double w_audio, double w_text) {
    require_same_shape(u_ta, u_t0, "cfg_combine");
    require_same_shape(u_ta, u_null, "cfg_combine");
    LatentVideo<T> out = u_ta;
    const T wa = static_cast<T>(w_audio), wt = static_cast<T>(w_text);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T a = u_ta.data[i], b = u_t0.data[i], n = u_null.data[i];
        if (mode == CfgMode::literal)
            out.data[i] = (T(1) + wa) * a - wa * b + (T(1) + wt) * b - wt * n;
        else
            // n + (1+wt)(b-n) + (1+wa)(a-b) regrouped so zero weights return a exactly
            out.data[i] = a + wt * (b - n) + wa * (a - b);
    }
    return out;
}

/// Effective weight at flow time t (0 = noise, 1 = data).
inline double cfg_schedule_eval(const CfgSchedule& s, double t, double w) {
    require(t >= 0.0 && t <= 1.0, "cfg_schedule_eval: t must lie in [0, 1]");
    if (s.kind == CfgSchedule::Kind::constant) return w;
    return (s.start_frac + (s.end_frac - s.start_frac) * t) * w;
}

struct Window {
    int start = 0, end = 0;  // half-open latent frame range

    int length() const { return end - start; }
    bool operator==(const Window&) const = default;
};

using WindowPlan = std::vector<Window>;

/// Windows of length f whose starts advance by f - o; the last window is
/// clamped to end at l.
inline WindowPlan plan_windows(int l, int f, int o) {
    require(f >= 1 && f <= l, "plan_windows: window must satisfy 1 <= f <= l");
    require(o >= 0 && o < f, "plan_windows: overlap must satisfy 0 <= o < f");
    WindowPlan plan;
    int s = 0, e = f;
    while (e <= l) {
        plan.push_back({s, e});
        if (e == l) break;
        s += f - o;
        e = s + f < l ? s + f : l;
    }
    return plan;
}

/// Frame indices j where frames j-1 and j come from different windows'
/// ownership boundaries (window starts and previous window ends).
inline std::vector<int> seam_indices(const WindowPlan& plan, int l) {
    std::vector<int> out;
    for (std::size_t i = 1; i < plan.size(); ++i) {
        for (int j : {plan[i].start, plan[i - 1].end})
            if (j > 0 && j < l) out.push_back(j);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Blend weight of 0-based overlap frame i: i / (o - 1).
inline double fusion_weight(int i, int o) { return static_cast<double>(i) / (o - 1); }

/// Fuse the current window's first o frames with the previous window's last
/// o frames: w cur + (1 - w) prev, from all-prev to all-cur. `literal`
/// switches to w cur + (w - 1) prev.
template <class T>
LatentVideo<T> fuse_overlap(const LatentVideo<T>& cur_head, const LatentVideo<T>& prev_tail, int o,
                            bool literal = false) {
    require(o >= 2, "fuse_overlap: overlap must be >= 2");
    require_same_shape(cur_head, prev_tail, "fuse_overlap");
    require(cur_head.frames == o, "fuse_overlap: inputs must hold exactly o frames");
    LatentVideo<T> out = cur_head;
    const std::size_t fs = out.frame_size();
    for (int i = 0; i < o; ++i) {
        const T w = static_cast<T>(fusion_weight(i, o));
        const T* c = cur_head.frame(i);
        const T* p = prev_tail.frame(i);
        T* dst = out.frame(i);
        for (std::size_t k = 0; k < fs; ++k)
            dst[k] = literal ? w * c[k] + (w - T(1)) * p[k] : std::lerp(p[k], c[k], w);
    }
    return out;
}

enum class Branch { full = 0, no_audio = 1, unconditional = 2 };

inline constexpr int kBranches = 3;

struct CallSite {
    int step = 0;   // 0 = noisiest
    int steps = 1;
    int window = 0;
    Branch branch = Branch::full;
};

/// Velocity predictor seen by the samplers.
template <class T>
class VelocityModel {
public:
    virtual ~VelocityModel() = default;
    virtual LatentVideo<T> predict(const dit::DenoiseInput<T>& in, const CallSite& site) = 0;
};

/// Conditions for one window.
template <class T>
struct Conditions {
    std::optional<int> text;
    std::optional<codec::ConditionInputs<T>> cond;
};

/// Conditions for `window` at denoising step `step`.
template <class T>
using ConditionProvider = std::function<Conditions<T>(const Window& window, int step)>;

/// Animation: every window gets (reference, empty, ...) with the reference
/// in its first frame.
template <class T>
ConditionProvider<T> animation_provider(const VideoClip& reference, std::optional<int> text, int patch) {
    const VideoClip ref = reference.slice(0, 1);
    return [ref, text, patch](const Window& w, int) {
        return Conditions<T>{text,
                             codec::build_condition_inputs<T>(codec::Task::animation, ref, {}, w.length(), patch)};
    };
}

/// Editing: each window is built from its slice of the source video, with
/// the window's first frame kept whole and the mouth box blanked elsewhere.
template <class T>
ConditionProvider<T> editing_provider(const VideoClip& source, const world::PixelBox& box, std::optional<int> text,
                                      int patch) {
    return [source, box, text, patch](const Window& w, int) {
        const std::array<world::PixelBox, 1> boxes{box};
        return Conditions<T>{text, codec::build_condition_inputs<T>(codec::Task::editing,
                                                                    source.slice(w.start, w.end), boxes, w.length(),
                                                                    patch)};
    };
}

/// Fixed conditions sliced to each window.
template <class T>
ConditionProvider<T> sliced_provider(Conditions<T> full) {
    return [full = std::move(full)](const Window& w, int) {
        Conditions<T> c{full.text, std::nullopt};
        if (full.cond) c.cond = codec::slice_condition(*full.cond, w.start, w.end);
        return c;
    };
}

struct LatentShape {
    int channels = 48, height = 8, width = 8, patch = 4;
};

template <class T>
LatentVideo<T> initial_noise(int frames, const LatentShape& s, std::uint64_t seed) {
    Rng rng(seed);
    LatentVideo<T> z(frames, s.channels, s.height, s.width, s.patch);
    for (T& v : z.data) v = static_cast<T>(standard_normal(rng));
    return z;
}

/// Three model calls combined by dual CFG.
template <class T>
LatentVideo<T> guided_velocity(VelocityModel<T>& model, const LatentVideo<T>& z, double t, const Conditions<T>& c,
                               const audio::AudioTokens* audio, const SamplerConfig& cfg, int step, int window) {
    const codec::ConditionInputs<T>* cond = c.cond ? &*c.cond : nullptr;
    CallSite site{step, cfg.steps, window, Branch::full};
    const LatentVideo<T> u_ta = model.predict({z, t, c.text, cond, audio}, site);
    site.branch = Branch::no_audio;
    const LatentVideo<T> u_t0 = model.predict({z, t, c.text, cond, nullptr}, site);
    site.branch = Branch::unconditional;
    const LatentVideo<T> u_null = model.predict({z, t, std::nullopt, nullptr, nullptr}, site);
    return cfg_combine(cfg.cfg_mode, u_ta, u_t0, u_null, cfg_schedule_eval(cfg.schedule, t, cfg.cfg_audio),
                       cfg_schedule_eval(cfg.schedule, t, cfg.cfg_text));
}

template <class T>
void euler_step(LatentVideo<T>& z, const LatentVideo<T>& v, T dt) {
    for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] += v.data[i] * dt;
}

namespace detail {

inline void check_audio(const audio::AudioTokens& audio, int l) {
    require(audio.tokens_per_frame >= 1 && audio.length >= audio.tokens_per_frame * l,
            "sampler: audio tokens do not cover the requested frames");
}

}  // namespace detail

/// Whole-sequence sampler without windows.
template <class T>
LatentVideo<T> sample_full(VelocityModel<T>& model, const ConditionProvider<T>& conds, const audio::AudioTokens& audio,
                           int l, const LatentShape& shape, const SamplerConfig& cfg,
                           const LatentVideo<T>* z_init = nullptr) {
    cfg.validate();
    detail::check_audio(audio, l);
    LatentVideo<T> z = z_init ? *z_init : initial_noise<T>(l, shape, cfg.seed);
    require(z.frames == l, "sample_full: initial latent length mismatch");
    const audio::AudioTokens a = audio.slice_frames(0, l);
    const T dt = static_cast<T>(1.0 / cfg.steps);
    for (int j = 0; j < cfg.steps; ++j) {
        const double t = static_cast<double>(j) / cfg.steps;
        euler_step(z, guided_velocity(model, z, t, conds(Window{0, l}, j), &a, cfg, j, 0), dt);
    }
    return z;
}

/// Sliding-window sampler with bidirectional latent fusion. Each window
/// keeps its own latent; after a window's Euler step (from the second step
/// on) its first o frames are fused with the previous window's last o
/// frames and the result is written into both. o = 0 disables fusion.
template <class T>
LatentVideo<T> blf_sample(VelocityModel<T>& model, const ConditionProvider<T>& conds, const audio::AudioTokens& audio,
                          int l, const LatentShape& shape, const SamplerConfig& cfg,
                          const LatentVideo<T>* z_init = nullptr) {
    cfg.validate();
    detail::check_audio(audio, l);
    const WindowPlan plan = plan_windows(l, cfg.window, cfg.overlap);
    const LatentVideo<T> z0 = z_init ? *z_init : initial_noise<T>(l, shape, cfg.seed);
    require(z0.frames == l, "blf_sample: initial latent length mismatch");
    const int o = cfg.overlap;

    std::vector<LatentVideo<T>> win(plan.size());
    std::vector<audio::AudioTokens> win_audio(plan.size());
    for (std::size_t i = 0; i < plan.size(); ++i) {
        win[i] = z0.slice(plan[i].start, plan[i].end);
        win_audio[i] = audio.slice_frames(plan[i].start, plan[i].end);
    }
    const T dt = static_cast<T>(1.0 / cfg.steps);
    for (int j = 0; j < cfg.steps; ++j) {
        const double t = static_cast<double>(j) / cfg.steps;
        for (std::size_t i = 0; i < plan.size(); ++i) {
            const int wi = static_cast<int>(i);
            euler_step(win[i], guided_velocity(model, win[i], t, conds(plan[i], j), &win_audio[i], cfg, j, wi), dt);
            if (i > 0 && j > 0 && o > 0) {
                LatentVideo<T>& prev = win[i - 1];
                const LatentVideo<T> fused =
                    fuse_overlap(win[i].slice(0, o), prev.slice(prev.frames - o, prev.frames), o, cfg.literal_fusion);
                win[i].assign_frames(0, fused);
                prev.assign_frames(prev.frames - o, fused);
            }
        }
    }
    LatentVideo<T> out(l, shape.channels, shape.height, shape.width, shape.patch);
    out.patch = z0.patch;
    for (std::size_t i = 0; i < plan.size(); ++i) out.assign_frames(plan[i].start, win[i]);
    return out;
}

/// The first N (noisiest) steps use the video (editing) conditions, the
/// rest the image (animation) conditions.
template <class T>
LatentVideo<T> hybrid_sample(VelocityModel<T>& model, const ConditionProvider<T>& video_conds,
                             const ConditionProvider<T>& image_conds, const audio::AudioTokens& audio, int l,
                             const LatentShape& shape, const SamplerConfig& cfg,
                             const LatentVideo<T>* z_init = nullptr) {
    require(cfg.hybrid_switch >= 0 && cfg.hybrid_switch <= cfg.steps, "hybrid_sample: N must lie in [0, steps]");
    const int n = cfg.hybrid_switch;
    const ConditionProvider<T> switched = [&](const Window& w, int step) {
        return step < n ? video_conds(w, step) : image_conds(w, step);
    };
    return blf_sample(model, switched, audio, l, shape, cfg, z_init);
}

// ---------------------------------------------------------------------------
// Residual cache.

template <class T>
struct CacheState {
    Mat<T> last_summary;     // timestep-modulated block-0 input of the previous call
    Mat<T> residual;         // block stack output - input of the last computed call
    double accumulated = 0.0;
    long skips = 0;
    bool has_residual = false;
};

/// Relative mean absolute change of `cur` against `last`.
template <class T>
double relative_change(const Mat<T>& cur, const Mat<T>& last) {
    const double denom = last.template cast<double>().cwiseAbs().mean();
    const double num = (cur - last).template cast<double>().cwiseAbs().mean();
    if (denom == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / denom;
}

/// Denoiser call that may reuse the cached block residual. `boundary`
/// marks the first or last denoising step, which always compute.
template <class T>
LatentVideo<T> cached_forward(CacheState<T>& cache, const dit::ModelParams<T>& p, const dit::DenoiseInput<T>& in,
                              double alpha, bool boundary, bool* skipped = nullptr) {
    require(alpha >= 0.0, "cached_forward: alpha must be >= 0");
    if (skipped) *skipped = false;
    if (alpha == 0.0) return dit::forward(p, in);
    const dit::Prepared<T> pr = dit::prepare(p, in);
    const Mat<T> h0 = dit::embed(p, pr);
    Mat<T> summary = dit::modulated_input(p, pr, h0);
    const double rel = cache.last_summary.size() == summary.size() ? relative_change(summary, cache.last_summary)
                                                                   : std::numeric_limits<double>::infinity();
    cache.last_summary = std::move(summary);
    Mat<T> h;
    if (!boundary && cache.has_residual && cache.residual.rows() == h0.rows() && cache.accumulated + rel < alpha) {
        cache.accumulated += rel;
        ++cache.skips;
        h = h0 + cache.residual;
        if (skipped) *skipped = true;
    } else {
        h = h0;
        for (int b = 0; b < p.config.depth; ++b) h = dit::block_forward(p, b, pr, h, nullptr, {});
        cache.residual = h - h0;
        cache.has_residual = true;
        cache.accumulated = 0.0;
    }
    const Mat<T> out = dit::head_forward(p, pr, h, nullptr);
    return dit::tokens_to_latent(out, pr.frames, p.config.latent_channels(), pr.height, pr.width, in.z.patch);
}

struct CacheStats {
    long calls = 0;
    long skipped = 0;
    std::vector<long> calls_per_step, skipped_per_step;

    double skip_rate() const { return calls ? static_cast<double>(skipped) / calls : 0.0; }
};

/// The transformer as a VelocityModel, with one cache per (window, branch).
template <class T>
class DiTVelocity : public VelocityModel<T> {
public:
    explicit DiTVelocity(const dit::ModelParams<T>& p, double alpha = 0.0) : p_(p), alpha_(alpha) {
        require(alpha >= 0.0, "DiTVelocity: cache threshold must be >= 0");
    }

    LatentVideo<T> predict(const dit::DenoiseInput<T>& in, const CallSite& site) override {
        CacheState<T>& st = states_[{site.window, static_cast<int>(site.branch)}];
        const bool boundary = site.step == 0 || site.step == site.steps - 1;
        bool skipped = false;
        LatentVideo<T> v = cached_forward(st, p_, in, alpha_, boundary, &skipped);
        if (static_cast<int>(stats_.calls_per_step.size()) < site.steps) {
            stats_.calls_per_step.resize(site.steps, 0);
            stats_.skipped_per_step.resize(site.steps, 0);
        }
        ++stats_.calls;
        ++stats_.calls_per_step[site.step];
        if (skipped) {
            ++stats_.skipped;
            ++stats_.skipped_per_step[site.step];
        }
        return v;
    }

    const CacheStats& stats() const { return stats_; }
    void reset() {
        states_.clear();
        stats_ = {};
    }

private:
    const dit::ModelParams<T>& p_;
    double alpha_;
    std::map<std::pair<int, int>, CacheState<T>> states_;
    CacheStats stats_;
};

// ---------------------------------------------------------------------------
// Color unification.

/// Match every frame's per-channel mean and standard deviation to the
/// average statistics of the first f frames, then clamp to [0, 1]. Frames
/// with a zero-variance channel are left unchanged.
inline VideoClip color_unify(const VideoClip& video, int f) {
    require(video.frames >= 1, "color_unify: empty video");
    require(f >= 1, "color_unify: reference frame count must be >= 1");
    const std::size_t n = static_cast<std::size_t>(video.height) * video.width;
    std::vector<std::array<double, 3>> mean(video.frames), sd(video.frames);
    for (int t = 0; t < video.frames; ++t) {
        const float* px = video.frame(t);
        for (int c = 0; c < 3; ++c) {
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += px[3 * i + c];
            m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) v += (px[3 * i + c] - m) * (px[3 * i + c] - m);
            mean[t][c] = m;
            sd[t][c] = std::sqrt(v / static_cast<double>(n));
        }
    }
    const int k = std::min(f, video.frames);
    std::array<double, 3> tm{}, ts{};
    for (int t = 0; t < k; ++t)
        for (int c = 0; c < 3; ++c) {
            tm[c] += mean[t][c] / k;
            ts[c] += sd[t][c] / k;
        }
    VideoClip out = video;
    for (int t = 0; t < video.frames; ++t) {
        if (sd[t][0] == 0.0 || sd[t][1] == 0.0 || sd[t][2] == 0.0) continue;
        float* px = out.frame(t);
        for (int c = 0; c < 3; ++c) {
            if (mean[t][c] == tm[c] && sd[t][c] == ts[c]) continue;
            const double gain = ts[c] / sd[t][c];
            for (std::size_t i = 0; i < n; ++i)
                px[3 * i + c] = static_cast<float>(std::clamp((px[3 * i + c] - mean[t][c]) * gain + tm[c], 0.0, 1.0));
        }
    }
    return out;
}

}  // namespace lipflow::infer
