#pragma once

// 16-bit PCM WAV reading and writing. Multi-channel input is averaged to
// mono.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "lipflow/io/container.hpp"
#include "lipflow/tensor.hpp"

namespace lipflow::io {

namespace detail {

inline std::uint16_t get_u16(std::string_view in, std::size_t pos) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(in[pos]) |
                                      (static_cast<unsigned char>(in[pos + 1]) << 8));
}

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

inline std::string encode_wav(const AudioSignal& a) {
    require(a.sample_rate > 0, "encode_wav: invalid sample rate");
    const auto data_bytes = static_cast<std::uint32_t>(2 * a.samples.size());
    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    put_u32(out, 36 + data_bytes);
    out.append("WAVEfmt ");
    put_u32(out, 16);
    detail::put_u16(out, 1);  // PCM
    detail::put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(a.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(2 * a.sample_rate));
    detail::put_u16(out, 2);
    detail::put_u16(out, 16);
    out.append("data");
    put_u32(out, data_bytes);
    for (float s : a.samples) {
        const long q = std::lround(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0);
        detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    return out;
}

inline AudioSignal decode_wav(std::string_view in) {
    if (in.size() < 12 || in.substr(0, 4) != "RIFF" || in.substr(8, 4) != "WAVE")
        throw DecodeError("wav: not a RIFF/WAVE file", 0);
    std::size_t pos = 12;
    int channels = 0, bits = 0, rate = 0;
    bool have_fmt = false;
    while (pos + 8 <= in.size()) {
        const std::string_view id = in.substr(pos, 4);
        const std::size_t len = get_u32(in, pos + 4);
        const std::size_t body = pos + 8;
        if (body + len > in.size()) throw DecodeError("wav: chunk exceeds file", pos);
        if (id == "fmt ") {
            if (len < 16) throw DecodeError("wav: short fmt chunk", pos);
            const int format = detail::get_u16(in, body);
            channels = detail::get_u16(in, body + 2);
            rate = static_cast<int>(get_u32(in, body + 4));
            bits = detail::get_u16(in, body + 14);
            if (format != 1 || bits != 16) throw DecodeError("wav: only 16-bit PCM is supported", body);
            if (channels < 1 || rate < 1) throw DecodeError("wav: invalid channel count or rate", body);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw DecodeError("wav: data chunk before fmt chunk", pos);
            const std::size_t frames = len / (2 * static_cast<std::size_t>(channels));
            AudioSignal a;
            a.sample_rate = rate;
            a.samples.resize(frames);
            for (std::size_t i = 0; i < frames; ++i) {
                double acc = 0.0;
                for (int c = 0; c < channels; ++c)
                    acc += static_cast<std::int16_t>(detail::get_u16(in, body + 2 * (i * channels + c)));
                a.samples[i] = static_cast<float>(acc / channels / 32767.0);
            }
            return a;
        }
        pos = body + len + (len & 1);
    }
    throw DecodeError("wav: no data chunk", pos);
}

inline void write_wav(const std::string& path, const AudioSignal& a) { write_file(path, encode_wav(a)); }
inline AudioSignal read_wav(const std::string& path) { return decode_wav(read_file(path)); }

}  // namespace lipflow::io
