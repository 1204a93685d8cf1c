#pragma once

// Lossless patch codec standing in for a video VAE. A p x p x 3 pixel patch
// becomes one latent pixel with 3p^2 channels, raster order channel-major,
// then patch row, then patch column. There is no temporal compression, so
// latent frame k is pixel frame k.

#include <optional>
#include <span>
#include <vector>

#include "lipflow/synthetic_world.hpp"
#include "lipflow/tensor.hpp"

namespace lipflow::codec {

inline constexpr int kDefaultPatch = 4;

/// Binary pixel-space mask [T, H, W].
struct PixelMask {
    int frames = 0, height = 0, width = 0;
    std::vector<float> data;

    PixelMask() = default;
    PixelMask(int t, int h, int w, float fill = 0.0f)
        : frames(t), height(h), width(w), data(static_cast<std::size_t>(t) * h * w, fill) {}
    float& at(int t, int y, int x) { return data[(static_cast<std::size_t>(t) * height + y) * width + x]; }
    float at(int t, int y, int x) const { return data[(static_cast<std::size_t>(t) * height + y) * width + x]; }
};

enum class Task { animation, editing };

template <class T>
struct ConditionInputs {
    LatentVideo<T> cond_latent;
    LatentMask<T> cond_mask;
    Task task = Task::animation;
};

template <class T = float>
LatentVideo<T> encode(const VideoClip& clip, int p = kDefaultPatch) {
    require(p > 0 && clip.height % p == 0 && clip.width % p == 0, "encode: frame size not divisible by patch size");
    const int h = clip.height / p, w = clip.width / p;
    LatentVideo<T> z(clip.frames, 3 * p * p, h, w, p);
    for (int t = 0; t < clip.frames; ++t)
        for (int ch = 0; ch < 3; ++ch)
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px) {
                    const int c = (ch * p + py) * p + px;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            z.at(t, c, y, x) = static_cast<T>(clip.at(t, y * p + py, x * p + px, ch));
                }
    return z;
}

/// Exact inverse of encode; values are not clamped.
template <class T>
VideoClip decode(const LatentVideo<T>& z, int p, double fps = 16.0) {
    require(p > 0 && z.channels == 3 * p * p, "decode: channel count does not match patch size");
    VideoClip clip(z.frames, z.height * p, z.width * p, fps);
    for (int t = 0; t < z.frames; ++t)
        for (int ch = 0; ch < 3; ++ch)
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px) {
                    const int c = (ch * p + py) * p + px;
                    for (int y = 0; y < z.height; ++y)
                        for (int x = 0; x < z.width; ++x)
                            clip.at(t, y * p + py, x * p + px, ch) = static_cast<float>(z.at(t, c, y, x));
                }
    return clip;
}

template <class T>
VideoClip decode(const LatentVideo<T>& z, double fps = 16.0) {
    return decode(z, z.patch, fps);
}

/// Clamp to [0,1] for final rendered output.
inline VideoClip clamp_frames(VideoClip clip) {
    for (float& v : clip.pixels) v = std::clamp(v, 0.0f, 1.0f);
    return clip;
}

/// Per-frame max pooling with a p x p block.
template <class T = float>
LatentMask<T> pool_mask(const PixelMask& m, int p = kDefaultPatch) {
    require(p > 0 && m.height % p == 0 && m.width % p == 0, "pool_mask: mask size not divisible by patch size");
    for (float v : m.data) require(v == 0.0f || v == 1.0f, "pool_mask: mask must be binary");
    const int h = m.height / p, w = m.width / p;
    LatentMask<T> out(m.frames, 1, h, w, p);
    for (int t = 0; t < m.frames; ++t)
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                if (m.at(t, y, x) != 0.0f) out.at(t, 0, y / p, x / p) = T(1);
    return out;
}

/// Mask with `box` set on every frame in [first, frames).
inline PixelMask box_mask(int frames, int h, int w, const world::PixelBox& box, int first = 0) {
    PixelMask m(frames, h, w);
    for (int t = first; t < frames; ++t)
        for (int y = box.y0; y < box.y1; ++y)
            for (int x = box.x0; x < box.x1; ++x) m.at(t, y, x) = 1.0f;
    return m;
}

/// Build the conditioning video and temporal mask for one task.
///
/// animation: (I_s, 0, ..., 0) with mask (ones, zeros, ..., zeros); only
/// the first frame of `source` is used.
/// editing: frame 0 kept, frames 1..T-1 have the mouth box zeroed, mask is
/// (ones, box, ..., box). `boxes` holds one box for every frame (index 0 is
/// ignored) or a single box applied to all frames.
template <class T = float>
ConditionInputs<T> build_condition_inputs(Task task, const VideoClip& source, std::span<const world::PixelBox> boxes,
                                          int target_frames, int p = kDefaultPatch) {
    require(target_frames >= 1, "build_condition_inputs: target length must be positive");
    require(source.frames >= 1, "build_condition_inputs: source needs at least one frame");
    const int h = source.height, w = source.width;
    VideoClip cond(target_frames, h, w, source.fps);
    PixelMask mask(target_frames, h, w);
    std::copy(source.frame(0), source.frame(0) + source.frame_size(), cond.frame(0));
    std::fill(mask.data.begin(), mask.data.begin() + static_cast<std::size_t>(h) * w, 1.0f);

    if (task == Task::editing) {
        require(source.frames == target_frames, "build_condition_inputs: editing needs a source of the target length");
        require(!boxes.empty(), "build_condition_inputs: editing needs mouth boxes");
        require(boxes.size() == 1 || boxes.size() == static_cast<std::size_t>(target_frames),
                "build_condition_inputs: need one box per frame");
        for (int t = 1; t < target_frames; ++t) {
            const world::PixelBox& b = boxes.size() == 1 ? boxes[0] : boxes[t];
            std::copy(source.frame(t), source.frame(t) + source.frame_size(), cond.frame(t));
            for (int y = std::max(0, b.y0); y < std::min(h, b.y1); ++y)
                for (int x = std::max(0, b.x0); x < std::min(w, b.x1); ++x) {
                    for (int c = 0; c < 3; ++c) cond.at(t, y, x, c) = 0.0f;
                    mask.at(t, y, x) = 1.0f;
                }
        }
    }
    return {encode<T>(cond, p), pool_mask<T>(mask, p), task};
}

/// Zero latent and zero mask used when the visual condition is dropped.
template <class T>
ConditionInputs<T> null_condition(int frames, int channels, int h, int w, int p) {
    return {LatentVideo<T>(frames, channels, h, w, p), LatentMask<T>(frames, 1, h, w, p), Task::animation};
}

template <class T>
ConditionInputs<T> slice_condition(const ConditionInputs<T>& c, int begin, int end) {
    return {c.cond_latent.slice(begin, end), c.cond_mask.slice(begin, end), c.task};
}

}  // namespace lipflow::codec
