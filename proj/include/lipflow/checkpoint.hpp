#pragma once

// Model checkpoints: container magic "LIPFLOWP", JSON header with the
// denoiser config and tensor table, float32 tensors in for_each_tensor
// order. Double-precision parameters are narrowed to float on save.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipflow/denoiser.hpp"
#include "lipflow/io/container.hpp"

namespace lipflow {

inline constexpr std::string_view kParamsMagic = "LIPFLOWP";

namespace detail {

template <class T>
nlohmann::json tensor_table(const dit::ModelParams<T>& p) {
    nlohmann::json table = nlohmann::json::array();
    dit::for_each_tensor(p, [&](const std::string& name, const Mat<T>& m) {
        table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
    return table;
}

template <class T>
std::vector<float> flatten(const dit::ModelParams<T>& p) {
    std::vector<float> out;
    out.reserve(dit::parameter_count(p));
    dit::for_each_tensor(p, [&](const std::string&, const Mat<T>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(static_cast<float>(m.data()[i]));
    });
    return out;
}

/// Fill every tensor of `p` from `flat`, which must have parameter_count
/// entries.
template <class T>
void unflatten(dit::ModelParams<T>& p, const std::vector<float>& flat) {
    std::size_t pos = 0;
    dit::for_each_tensor(p, [&](const std::string&, Mat<T>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(flat[pos++]);
    });
}

}  // namespace detail

template <class T>
std::string encode_params(const dit::ModelParams<T>& p) {
    nlohmann::json h;
    h["format"] = "lipflow-params";
    h["version"] = 1;
    h["config"] = p.config;
    h["tensors"] = detail::tensor_table(p);
    const std::vector<float> flat = detail::flatten(p);
    h["payload_floats"] = flat.size();
    return io::encode_container(kParamsMagic, h, flat);
}

/// Decode a checkpoint. When `expected` is given, a different stored config
/// is rejected with std::invalid_argument.
template <class T = float>
dit::ModelParams<T> decode_params(std::string_view bytes, const dit::DenoiserConfig* expected = nullptr) {
    const io::Container c = io::decode_container(bytes, kParamsMagic);
    dit::DenoiserConfig cfg;
    try {
        if (c.header.value("format", "") != "lipflow-params") throw DecodeError("checkpoint: wrong format tag", 12);
        cfg = c.header.at("config").get<dit::DenoiserConfig>();
        cfg.validate();
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("checkpoint: bad config header: ") + e.what(), 12);
    } catch (const std::invalid_argument& e) {
        throw DecodeError(std::string("checkpoint: invalid config: ") + e.what(), 12);
    }
    if (expected && !(cfg == *expected))
        throw std::invalid_argument("checkpoint: stored config " + nlohmann::json(cfg).dump() +
                                    " does not match expected " + nlohmann::json(*expected).dump());
    dit::ModelParams<T> p = dit::zero_params<T>(cfg);
    if (c.header.at("tensors") != detail::tensor_table(p))
        throw DecodeError("checkpoint: tensor table does not match config", 12);
    if (c.payload.size() != dit::parameter_count(p))
        throw DecodeError("checkpoint: payload size does not match config", c.payload_offset);
    for (std::size_t i = 0; i < c.payload.size(); ++i)
        if (!std::isfinite(c.payload[i]))
            throw DecodeError("checkpoint: non-finite parameter", c.payload_offset + 4 * i);
    detail::unflatten(p, c.payload);
    return p;
}

template <class T>
void save_params(const std::string& path, const dit::ModelParams<T>& p) {
    io::write_file(path, encode_params(p));
}

template <class T = float>
dit::ModelParams<T> load_params(const std::string& path, const dit::DenoiserConfig* expected = nullptr) {
    return decode_params<T>(io::read_file(path), expected);
}

}  // namespace lipflow
