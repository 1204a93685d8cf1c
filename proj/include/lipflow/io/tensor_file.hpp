#pragma once

// Latent and pixel tensors as float32 containers with a JSON shape header.

#include <string>

#include "lipflow/io/container.hpp"
#include "lipflow/tensor.hpp"

namespace lipflow::io {

inline constexpr std::string_view kLatentMagic = "LIPFLOWL";
inline constexpr std::string_view kVideoMagic = "LIPFLOWV";

inline void write_latent(const std::string& path, const LatentVideo<float>& z) {
    nlohmann::json h = {{"kind", "latent"},
                        {"shape", {z.frames, z.channels, z.height, z.width}},
                        {"patch", z.patch},
                        {"payload_floats", z.data.size()}};
    write_file(path, encode_container(kLatentMagic, h, z.data));
}

inline LatentVideo<float> read_latent(const std::string& path) {
    Container c = decode_container(read_file(path), kLatentMagic);
    std::vector<int> s;
    int patch = 0;
    try {
        s = c.header.at("shape").get<std::vector<int>>();
        patch = c.header.value("patch", 0);
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("latent: bad header: ") + e.what(), 12);
    }
    if (s.size() != 4 || s[0] < 0 || s[1] < 0 || s[2] < 0 || s[3] < 0)
        throw DecodeError("latent: shape must have 4 non-negative entries", 12);
    LatentVideo<float> z(s[0], s[1], s[2], s[3], patch);
    if (z.size() != c.payload.size()) throw DecodeError("latent: payload does not match shape", c.payload_offset);
    z.data = std::move(c.payload);
    return z;
}

inline void write_video(const std::string& path, const VideoClip& v) {
    nlohmann::json h = {{"kind", "video"},
                        {"shape", {v.frames, v.height, v.width, 3}},
                        {"fps", v.fps},
                        {"payload_floats", v.pixels.size()}};
    write_file(path, encode_container(kVideoMagic, h, v.pixels));
}

inline VideoClip read_video(const std::string& path) {
    Container c = decode_container(read_file(path), kVideoMagic);
    std::vector<int> s;
    double fps = 16.0;
    try {
        s = c.header.at("shape").get<std::vector<int>>();
        fps = c.header.at("fps").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("video: bad header: ") + e.what(), 12);
    }
    if (s.size() != 4 || s[3] != 3 || s[0] < 0 || s[1] < 0 || s[2] < 0)
        throw DecodeError("video: shape must be [T, H, W, 3]", 12);
    VideoClip v(s[0], s[1], s[2], fps);
    if (v.pixels.size() != c.payload.size()) throw DecodeError("video: payload does not match shape", c.payload_offset);
    v.pixels = std::move(c.payload);
    return v;
}

}  // namespace lipflow::io
