#pragma once

#include <cstdint>
#include <random>

#include "lipflow/audio_encoder.hpp"
#include "lipflow/codec.hpp"
#include "lipflow/denoiser.hpp"
#include "lipflow/tensor.hpp"

namespace testutil {

template <class T>
lipflow::LatentVideo<T> random_latent(int frames, int channels, int h, int w, std::uint64_t seed, int patch = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    lipflow::LatentVideo<T> z(frames, channels, h, w, patch);
    for (T& v : z.data) v = static_cast<T>(n(rng));
    return z;
}

template <class T>
lipflow::LatentMask<T> random_mask(int frames, int h, int w, std::uint64_t seed, double p_one = 0.5) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p_one);
    lipflow::LatentMask<T> m(frames, 1, h, w);
    for (T& v : m.data) v = b(rng) ? T(1) : T(0);
    return m;
}

inline lipflow::audio::AudioTokens random_tokens(int length, int dim, int r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    lipflow::audio::AudioTokens a(length, dim, r);
    for (float& v : a.data) v = static_cast<float>(n(rng));
    return a;
}

inline lipflow::VideoClip random_clip(int frames, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    lipflow::VideoClip c(frames, h, w);
    for (float& v : c.pixels) v = u(rng);
    return c;
}

/// Small config for fast tests.
inline lipflow::dit::DenoiserConfig tiny_config(int width = 16, int depth = 2, int heads = 2, int patch = 2) {
    lipflow::dit::DenoiserConfig c;
    c.width = width;
    c.depth = depth;
    c.heads = heads;
    c.mlp_ratio = 2;
    c.patch = patch;
    c.tokens_per_frame = 2;
    c.audio_dim = 4;
    c.text_vocab = 4;
    c.text_tokens = 2;
    return c;
}

}  // namespace testutil
