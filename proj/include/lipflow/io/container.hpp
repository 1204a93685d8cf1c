#pragma once

// Binary container shared by checkpoints, training state and tensor dumps:
//
//   magic (8 bytes) | u32 header length | UTF-8 JSON header
//   | float32 payload | u32 CRC-32 of everything before it
//
// Integers and floats are little-endian regardless of host order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "lipflow/tensor.hpp"

namespace lipflow::io {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
}

inline float get_f32(std::string_view in, std::size_t pos) {
    const std::uint32_t u = get_u32(in, pos);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

inline std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for large payloads.
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

struct Container {
    nlohmann::json header;
    std::vector<float> payload;
    std::size_t payload_offset = 0;  // byte offset of payload[0] in the file
};

inline std::string encode_container(std::string_view magic, const nlohmann::json& header,
                                    const std::vector<float>& payload) {
    require(magic.size() == 8, "container: magic must be 8 bytes");
    const std::string h = header.dump();
    std::string out;
    out.reserve(16 + h.size() + 4 * payload.size());
    out.append(magic);
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out.append(h);
    for (float v : payload) put_f32(out, v);
    put_u32(out, crc32_of(out));
    return out;
}

/// Decode and verify. Errors carry the byte offset where decoding failed.
/// `payload_floats` is read from the header key "payload_floats".
inline Container decode_container(std::string_view bytes, std::string_view magic) {
    if (bytes.size() < 16) throw DecodeError("container: file too short", bytes.size());
    if (bytes.substr(0, 8) != magic) throw DecodeError("container: bad magic", 0);
    const std::size_t hlen = get_u32(bytes, 8);
    if (12 + hlen + 4 > bytes.size()) throw DecodeError("container: header length exceeds file", 8);
    Container c;
    try {
        c.header = nlohmann::json::parse(bytes.substr(12, hlen));
    } catch (const nlohmann::json::parse_error& e) {
        throw DecodeError(std::string("container: malformed header: ") + e.what(), 12 + e.byte);
    }
    c.payload_offset = 12 + hlen;
    if (!c.header.contains("payload_floats") || !c.header["payload_floats"].is_number_unsigned())
        throw DecodeError("container: header lacks payload_floats", 12);
    const std::size_t n = c.header["payload_floats"].get<std::size_t>();
    const std::size_t expected = c.payload_offset + 4 * n + 4;
    if (bytes.size() != expected)
        throw DecodeError("container: payload size mismatch (expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(bytes.size()) + ")",
                          std::min(bytes.size(), expected));
    const std::size_t crc_pos = bytes.size() - 4;
    if (crc32_of(bytes.substr(0, crc_pos)) != get_u32(bytes, crc_pos))
        throw DecodeError("container: checksum mismatch", crc_pos);
    c.payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.payload[i] = get_f32(bytes, c.payload_offset + 4 * i);
    return c;
}

}  // namespace lipflow::io
