#pragma once

// Synthetic "talking blob" world: syllable-modulated audio, an analytic
// renderer whose mouth aperture follows the audio envelope, a measurement
// inverse of the renderer, lagged-correlation sync scores and the
// progressive sample filter built on them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lipflow/tensor.hpp"

namespace lipflow::world {

struct Rgb {
    float r, g, b;
};

inline constexpr std::array<std::string_view, 4> kTextTags = {"studio", "sky", "meadow", "sand"};

// Every background keeps green >= skin green so the mouth-contrast channel
// never reads background as an open mouth.
inline constexpr std::array<Rgb, 4> kBackgrounds = {{
    {0.80f, 0.80f, 0.82f},
    {0.45f, 0.72f, 0.95f},
    {0.40f, 0.78f, 0.40f},
    {0.95f, 0.85f, 0.55f},
}};

inline constexpr Rgb kSkin{0.92f, 0.70f, 0.55f};
inline constexpr Rgb kMouth{0.35f, 0.05f, 0.10f};

// Mouth geometry relative to the blob radius.
inline constexpr double kMouthOffset = 0.45;
inline constexpr double kMouthHalfWidth = 0.45;
inline constexpr double kMouthMaxHalfHeight = 0.22;

inline int tag_index(std::string_view tag) {
    for (std::size_t i = 0; i < kTextTags.size(); ++i)
        if (kTextTags[i] == tag) return static_cast<int>(i);
    throw std::invalid_argument("unknown text tag: " + std::string(tag));
}

struct SceneSpec {
    int text_tag = 0;
    double center_row = 0.5;  // fraction of height
    double center_col = 0.5;  // fraction of width
    double radius = 0.3;      // fraction of min(H, W)
    double mouth_gain = 1.0;
    double head_bob_gain = 0.0;  // fraction of height at full envelope
    std::uint64_t seed = 0;

    bool valid() const {
        const double margin = 0.02;
        return text_tag >= 0 && text_tag < static_cast<int>(kTextTags.size()) && radius > 0.0 &&
               mouth_gain > 0.0 && mouth_gain <= 1.0 && head_bob_gain >= 0.0 &&
               center_row - radius >= margin && center_row + radius + head_bob_gain <= 1.0 - margin &&
               center_col - radius >= margin && center_col + radius <= 1.0 - margin;
    }
};

struct TripletSample {
    AudioSignal audio;
    VideoClip video;
    SceneSpec scene;
    std::vector<float> envelope;
};

/// Random in-bounds scene for a seed.
inline SceneSpec random_scene(std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5CE9E5u);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneSpec s;
    s.seed = seed;
    s.text_tag = static_cast<int>(rng() % kTextTags.size());
    s.radius = 0.25 + 0.07 * u(rng);
    s.mouth_gain = 0.7 + 0.3 * u(rng);
    s.head_bob_gain = 0.03 * u(rng);
    const double m = 0.03;
    const double row_lo = s.radius + m, row_hi = 1.0 - s.radius - s.head_bob_gain - m;
    const double col_lo = s.radius + m, col_hi = 1.0 - s.radius - m;
    s.center_row = row_lo + (row_hi - row_lo) * u(rng);
    s.center_col = col_lo + (col_hi - col_lo) * u(rng);
    return s;
}

/// Per-sample syllable envelope: alternating on/off segments of 100-400 ms,
/// random on-level, raised-cosine 20 ms transitions.
inline std::vector<double> syllable_envelope(std::uint64_t seed, double duration_s, int sample_rate) {
    require(duration_s > 0.0, "gen_audio: duration must be positive");
    require(sample_rate > 0, "gen_audio: sample rate must be positive");
    const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    require(n >= 1, "gen_audio: duration shorter than one sample");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> seg_len(0.1, 0.4);
    std::uniform_real_distribution<double> level(0.4, 1.0);

    // Piecewise-constant levels with boundary positions.
    std::vector<std::size_t> bounds{0};
    std::vector<double> levels;
    bool on = (rng() & 1u) != 0;
    bool any_on = false;
    for (std::size_t i = 0; i < n;) {
        const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(seg_len(rng) * sample_rate));
        const double lv = level(rng);
        levels.push_back(on ? lv : 0.0);
        any_on = any_on || on;
        i = std::min(n, i + len);
        bounds.push_back(i);
        on = !on;
    }
    if (!any_on) levels[levels.size() / 2] = 1.0;

    std::vector<double> env(n);
    for (std::size_t s = 0; s < levels.size(); ++s)
        for (std::size_t i = bounds[s]; i < bounds[s + 1]; ++i) env[i] = levels[s];

    const auto ramp = static_cast<std::size_t>(0.02 * sample_rate);
    if (ramp > 1) {
        for (std::size_t s = 1; s < levels.size(); ++s) {
            const double a0 = levels[s - 1], a1 = levels[s];
            const std::size_t b = bounds[s];
            for (std::size_t j = 0; j < ramp && b + j < n && b + j < bounds[s + 1]; ++j) {
                const double u = static_cast<double>(j) / static_cast<double>(ramp);
                env[b + j] = a0 + (a1 - a0) * 0.5 * (1.0 - std::cos(std::numbers::pi * u));
            }
        }
    }
    return env;
}

/// Carrier sinusoid amplitude-modulated by the syllable envelope and
/// peak-normalized to 0.95.
inline AudioSignal gen_audio(std::uint64_t seed, double duration_s, int sample_rate = 16000) {
    const std::vector<double> env = syllable_envelope(seed, duration_s, sample_rate);
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 1);
    std::uniform_real_distribution<double> freq(120.0, 300.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double f0 = freq(rng), ph = phase(rng);

    std::vector<double> x(env.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < env.size(); ++i) {
        x[i] = env[i] * std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(i) / sample_rate + ph);
        peak = std::max(peak, std::abs(x[i]));
    }
    AudioSignal out;
    out.sample_rate = sample_rate;
    out.samples.resize(x.size());
    const double scale = peak > 0.0 ? 0.95 / peak : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) out.samples[i] = static_cast<float>(x[i] * scale);
    return out;
}

/// Number of whole video frames covered by the audio.
inline int frames_covered(const AudioSignal& audio, double fps) {
    return static_cast<int>(std::floor(static_cast<double>(audio.samples.size()) * fps / audio.sample_rate + 1e-9));
}

/// Per-frame RMS, 3-frame centered moving average, max-normalized.
inline std::vector<float> frame_envelope(const AudioSignal& audio, double fps, int frames) {
    require(frames >= 1, "frame_envelope: need at least one frame");
    require(frames <= frames_covered(audio, fps), "frame_envelope: audio shorter than the requested frames");
    const double spf = audio.sample_rate / fps;
    std::vector<double> rms(frames);
    for (int k = 0; k < frames; ++k) {
        const auto b = static_cast<std::size_t>(std::floor(k * spf + 1e-9));
        const auto e = std::max(b + 1, static_cast<std::size_t>(std::floor((k + 1) * spf + 1e-9)));
        double acc = 0.0;
        for (std::size_t i = b; i < e; ++i) acc += static_cast<double>(audio.samples[i]) * audio.samples[i];
        rms[k] = std::sqrt(acc / static_cast<double>(e - b));
    }
    std::vector<double> smooth(frames);
    for (int k = 0; k < frames; ++k) {
        double acc = 0.0;
        int cnt = 0;
        for (int j = std::max(0, k - 1); j <= std::min(frames - 1, k + 1); ++j, ++cnt) acc += rms[j];
        smooth[k] = acc / cnt;
    }
    const double mx = *std::max_element(smooth.begin(), smooth.end());
    std::vector<float> env(frames, 0.0f);
    if (mx > 0.0)
        for (int k = 0; k < frames; ++k) env[k] = static_cast<float>(smooth[k] / mx);
    return env;
}

/// Trailing moving average over `window` frames (shorter at the start).
inline std::vector<double> trailing_average(const std::vector<float>& x, int window) {
    std::vector<double> out(x.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        acc += x[k];
        if (k >= static_cast<std::size_t>(window)) acc -= x[k - window];
        out[k] = acc / static_cast<double>(std::min<std::size_t>(k + 1, window));
    }
    return out;
}

struct PixelBox {
    int y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open

    bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
    int area() const { return std::max(0, y1 - y0) * std::max(0, x1 - x0); }
};

namespace detail {

inline double radius_px(const SceneSpec& s, int h, int w) { return s.radius * std::min(h, w); }

}  // namespace detail

/// Region that contains the mouth at every head-bob offset and aperture.
inline PixelBox mouth_box(const SceneSpec& s, int h, int w) {
    const double r = detail::radius_px(s, h, w);
    const double cy = s.center_row * h + kMouthOffset * r;
    const double cx = s.center_col * w;
    PixelBox b;
    b.y0 = std::clamp(static_cast<int>(std::floor(cy - kMouthMaxHalfHeight * r)) - 1, 0, h);
    b.y1 = std::clamp(static_cast<int>(std::ceil(cy + s.head_bob_gain * h + kMouthMaxHalfHeight * r)) + 1, 0, h);
    b.x0 = std::clamp(static_cast<int>(std::floor(cx - kMouthHalfWidth * r)) - 1, 0, w);
    b.x1 = std::clamp(static_cast<int>(std::ceil(cx + kMouthHalfWidth * r)) + 1, 0, w);
    return b;
}

/// Rasterize one frame (antialiased with 4x4 supersampling).
inline void render_frame(float* rgb, int h, int w, const SceneSpec& s, double aperture, double bob) {
    constexpr int kSS = 4;
    const Rgb bg = kBackgrounds[s.text_tag];
    const double r = detail::radius_px(s, h, w);
    const double cy = (s.center_row + bob) * h, cx = s.center_col * w;
    const double my = cy + kMouthOffset * r, mx = cx;
    const double ma = kMouthHalfWidth * r, mb = kMouthMaxHalfHeight * r * aperture;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int sy = 0; sy < kSS; ++sy) {
                for (int sx = 0; sx < kSS; ++sx) {
                    const double py = y + (sy + 0.5) / kSS, px = x + (sx + 0.5) / kSS;
                    Rgb c = bg;
                    const double dy = py - cy, dx = px - cx;
                    if (dy * dy + dx * dx <= r * r) {
                        c = kSkin;
                        if (mb > 0.0) {
                            const double ey = (py - my) / mb, ex = (px - mx) / ma;
                            if (ey * ey + ex * ex <= 1.0) c = kMouth;
                        }
                    }
                    acc[0] += c.r;
                    acc[1] += c.g;
                    acc[2] += c.b;
                }
            }
            float* p = rgb + (static_cast<std::size_t>(y) * w + x) * 3;
            for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(acc[k] / (kSS * kSS));
        }
    }
}

/// Render the clip driven by `audio`. Mouth aperture follows the envelope,
/// the head bobs with its 8-frame trailing average.
inline TripletSample render_video(const AudioSignal& audio, const SceneSpec& scene, double fps, int h, int w,
                                  int patch = 4) {
    require(patch > 0 && h % patch == 0 && w % patch == 0, "render_video: frame size not divisible by patch size");
    require(scene.valid(), "render_video: scene out of bounds");
    const int frames = frames_covered(audio, fps);
    require(frames >= 1, "render_video: audio shorter than one frame");

    TripletSample out;
    out.audio = audio;
    out.scene = scene;
    out.envelope = frame_envelope(audio, fps, frames);
    out.video = VideoClip(frames, h, w, fps);
    const std::vector<double> bob = trailing_average(out.envelope, 8);
    for (int k = 0; k < frames; ++k)
        render_frame(out.video.frame(k), h, w, scene, scene.mouth_gain * out.envelope[k], scene.head_bob_gain * bob[k]);
    return out;
}

/// Open-mouth area inside the mouth box, normalized so aperture a renders
/// to a measurement of about a.
inline double mouth_aperture(const float* rgb, int h, int w, const SceneSpec& scene) {
    const PixelBox b = mouth_box(scene, h, w);
    const double r = detail::radius_px(scene, h, w);
    const double full_area = std::numbers::pi * kMouthHalfWidth * r * kMouthMaxHalfHeight * r;
    double open = 0.0;
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
            const float g = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + 1];
            open += std::clamp((kSkin.g - g) / (kSkin.g - kMouth.g), 0.0f, 1.0f);
        }
    return open / full_area;
}

inline std::vector<double> measure_apertures(const VideoClip& v, const SceneSpec& scene) {
    std::vector<double> a(v.frames);
    for (int k = 0; k < v.frames; ++k) a[k] = mouth_aperture(v.frame(k), v.height, v.width, scene);
    return a;
}

/// Pearson correlation; 0 when either side has zero variance.
inline double pearson(const double* a, const double* b, std::size_t n) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 1e-18 || sbb <= 1e-18) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

struct SyncScore {
    double sync_c = 0.0;
    int sync_d = 0;
};

inline constexpr int kMaxSyncLag = 4;

/// Max lagged correlation between two per-frame sequences. Positive lag
/// means `motion` trails `envelope`.
inline SyncScore lagged_sync(const std::vector<double>& motion, const std::vector<double>& envelope) {
    require(motion.size() == envelope.size(), "lagged_sync: length mismatch");
    const int n = static_cast<int>(motion.size());
    require(n >= 8, "sync_confidence: need at least 8 frames");
    auto variance_zero = [](const std::vector<double>& v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return *hi - *lo <= 1e-12;
    };
    if (variance_zero(motion) || variance_zero(envelope)) return {};

    SyncScore best{-std::numeric_limits<double>::infinity(), 0};
    for (int lag = -kMaxSyncLag; lag <= kMaxSyncLag; ++lag) {
        const int len = n - std::abs(lag);
        const double* m = motion.data() + std::max(lag, 0);
        const double* e = envelope.data() + std::max(-lag, 0);
        const double c = pearson(m, e, static_cast<std::size_t>(len));
        // Ties resolve toward the smallest |lag|.
        if (c > best.sync_c + 1e-12 || (std::abs(c - best.sync_c) <= 1e-12 && std::abs(lag) < std::abs(best.sync_d))) {
            best = {c, lag};
        }
    }
    return best;
}

inline SyncScore sync_confidence(const VideoClip& video, const AudioSignal& audio, const SceneSpec& scene) {
    require(video.frames >= 8, "sync_confidence: need at least 8 frames");
    const std::vector<float> envf = frame_envelope(audio, video.fps, video.frames);
    const std::vector<double> env(envf.begin(), envf.end());
    return lagged_sync(measure_apertures(video, scene), env);
}

struct FunnelReport {
    std::size_t input = 0;
    std::size_t after_sync_c = 0;
    std::size_t after_sync_d = 0;
};

struct FilterResult {
    std::vector<TripletSample> kept;
    std::vector<SyncScore> scores;  // score of every input sample, input order
    FunnelReport report;
};

/// Two-stage funnel: confidence threshold, then offset threshold.
inline FilterResult filter_pool(const std::vector<TripletSample>& samples, double min_sync_c, double max_abs_sync_d) {
    require(!std::isnan(min_sync_c) && !std::isnan(max_abs_sync_d), "filter_pool: NaN threshold");
    FilterResult out;
    out.report.input = samples.size();
    for (const TripletSample& s : samples) {
        const SyncScore sc = sync_confidence(s.video, s.audio, s.scene);
        out.scores.push_back(sc);
        if (!(sc.sync_c >= min_sync_c)) continue;
        ++out.report.after_sync_c;
        if (!(std::abs(sc.sync_d) <= max_abs_sync_d)) continue;
        ++out.report.after_sync_d;
        out.kept.push_back(s);
    }
    return out;
}

}  // namespace lipflow::world
