#pragma once

// Core value types shared by every lipflow module: pixel clips, audio,
// latent tensors and masks. All tensors are dense, row-major and own their
// storage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lipflow {

/// Raised when a serialized artifact cannot be decoded. `offset` is the byte
/// position where decoding failed.
class DecodeError : public std::runtime_error {
public:
    DecodeError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

struct AudioSignal {
    std::vector<float> samples;
    int sample_rate = 16000;

    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Pixel-space clip, layout [T, H, W, 3], values nominally in [0, 1].
struct VideoClip {
    int frames = 0;
    int height = 0;
    int width = 0;
    double fps = 16.0;
    std::vector<float> pixels;

    VideoClip() = default;
    VideoClip(int t, int h, int w, double rate = 16.0)
        : frames(t), height(h), width(w), fps(rate),
          pixels(static_cast<std::size_t>(t) * h * w * 3, 0.0f) {}

    std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
    std::size_t index(int t, int y, int x, int c) const {
        return ((static_cast<std::size_t>(t) * height + y) * width + x) * 3 + c;
    }
    float& at(int t, int y, int x, int c) { return pixels[index(t, y, x, c)]; }
    float at(int t, int y, int x, int c) const { return pixels[index(t, y, x, c)]; }

    float* frame(int t) { return pixels.data() + t * frame_size(); }
    const float* frame(int t) const { return pixels.data() + t * frame_size(); }

    VideoClip slice(int begin, int end) const {
        VideoClip out(end - begin, height, width, fps);
        std::copy(frame(begin), frame(begin) + out.pixels.size(), out.pixels.begin());
        return out;
    }
};

/// Latent tensor [T, C, h, w]. `patch` records the codec patch size that
/// produced it so decode can check channel arithmetic.
template <class T>
struct LatentVideo {
    int frames = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int patch = 0;
    std::vector<T> data;

    LatentVideo() = default;
    LatentVideo(int t, int c, int h, int w, int p = 0)
        : frames(t), channels(c), height(h), width(w), patch(p),
          data(static_cast<std::size_t>(t) * c * h * w, T(0)) {}

    std::size_t frame_size() const { return static_cast<std::size_t>(channels) * height * width; }
    std::size_t size() const { return data.size(); }
    std::size_t index(int t, int c, int y, int x) const {
        return ((static_cast<std::size_t>(t) * channels + c) * height + y) * width + x;
    }
    T& at(int t, int c, int y, int x) { return data[index(t, c, y, x)]; }
    T at(int t, int c, int y, int x) const { return data[index(t, c, y, x)]; }

    T* frame(int t) { return data.data() + t * frame_size(); }
    const T* frame(int t) const { return data.data() + t * frame_size(); }

    bool same_shape(const LatentVideo& o) const {
        return frames == o.frames && channels == o.channels && height == o.height && width == o.width;
    }

    LatentVideo slice(int begin, int end) const {
        LatentVideo out(end - begin, channels, height, width, patch);
        std::copy(frame(begin), frame(begin) + out.size(), out.data.begin());
        return out;
    }

    void assign_frames(int begin, const LatentVideo& src) {
        std::copy(src.data.begin(), src.data.end(), frame(begin));
    }

    template <class U>
    LatentVideo<U> cast() const {
        LatentVideo<U> out(frames, channels, height, width, patch);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

/// Binary latent-resolution mask [T, 1, h, w].
template <class T>
using LatentMask = LatentVideo<T>;

template <class T>
bool all_finite(const std::vector<T>& v) {
    for (const T& x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
    require(a.same_shape(b), std::string(what) + ": shape mismatch");
}

}  // namespace lipflow
