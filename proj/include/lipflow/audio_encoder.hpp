#pragma once

// Fixed spectral audio features aligned to video frames: r half-overlapping
// Hann windows per frame, log triangular (mel-spaced) filterbank energies,
// then dataset-level mean/variance normalization.

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "lipflow/tensor.hpp"

namespace lipflow::audio {

inline constexpr double kLogEps = 1e-8;
inline constexpr double kMinFrequency = 60.0;

/// Audio feature tokens [length, dim]; token i has 1D position i.
struct AudioTokens {
    int length = 0;
    int dim = 0;
    int tokens_per_frame = 2;
    std::vector<float> data;

    AudioTokens() = default;
    AudioTokens(int l, int d, int r) : length(l), dim(d), tokens_per_frame(r), data(static_cast<std::size_t>(l) * d) {}

    float& at(int i, int j) { return data[static_cast<std::size_t>(i) * dim + j]; }
    float at(int i, int j) const { return data[static_cast<std::size_t>(i) * dim + j]; }
    std::vector<int> positions() const {
        std::vector<int> p(length);
        for (int i = 0; i < length; ++i) p[i] = i;
        return p;
    }

    /// Tokens belonging to video frames [frame_begin, frame_end).
    AudioTokens slice_frames(int frame_begin, int frame_end) const {
        const int r = tokens_per_frame;
        require(frame_begin >= 0 && frame_end >= frame_begin && r * frame_end <= length,
                "AudioTokens: frame range outside token sequence");
        AudioTokens out(r * (frame_end - frame_begin), dim, r);
        std::copy(data.begin() + static_cast<std::ptrdiff_t>(r) * frame_begin * dim,
                  data.begin() + static_cast<std::ptrdiff_t>(r) * frame_end * dim, out.data.begin());
        return out;
    }
};

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Band center frequencies (Hz) of the D-band filterbank, plus the two
/// outer edges: D + 2 values.
inline std::vector<double> band_edges(int dim, int sample_rate) {
    const double lo = hz_to_mel(kMinFrequency), hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(dim + 2);
    for (int i = 0; i < dim + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (dim + 1));
    return edges;
}

inline double band_center(int band, int dim, int sample_rate) { return band_edges(dim, sample_rate)[band + 1]; }

class Featurizer {
public:
    Featurizer(int dim, int sample_rate, int window_length)
        : dim_(dim), sample_rate_(sample_rate), window_length_(window_length) {
        require(dim >= 1 && window_length >= 2, "Featurizer: invalid dimensions");
        nfft_ = 1;
        while (nfft_ < window_length) nfft_ *= 2;
        hann_.resize(window_length);
        for (int i = 0; i < window_length; ++i)
            hann_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (window_length - 1));
        const std::vector<double> edges = band_edges(dim, sample_rate);
        const int bins = nfft_ / 2 + 1;
        weights_.assign(static_cast<std::size_t>(dim) * bins, 0.0);
        for (int b = 0; b < dim; ++b) {
            const double lo = edges[b], c = edges[b + 1], hi = edges[b + 2];
            for (int k = 0; k < bins; ++k) {
                const double f = static_cast<double>(k) * sample_rate / nfft_;
                const double w = std::min((f - lo) / (c - lo), (hi - f) / (hi - c));
                weights_[static_cast<std::size_t>(b) * bins + k] = std::max(0.0, w);
            }
        }
    }

    /// Log band energies for samples[start, start + window_length).
    void window_features(const float* samples, std::size_t available, float* out) {
        std::vector<double> buf(nfft_, 0.0);
        for (int i = 0; i < window_length_ && static_cast<std::size_t>(i) < available; ++i)
            buf[i] = samples[i] * hann_[i];
        std::vector<std::complex<double>> spec;
        fft_.fwd(spec, buf);
        const int bins = nfft_ / 2 + 1;
        for (int b = 0; b < dim_; ++b) {
            double e = 0.0;
            const double* w = weights_.data() + static_cast<std::size_t>(b) * bins;
            for (int k = 0; k < bins; ++k)
                if (w[k] > 0.0) e += w[k] * std::norm(spec[k]);
            out[b] = static_cast<float>(std::log(kLogEps + e));
        }
    }

private:
    int dim_, sample_rate_, window_length_, nfft_ = 0;
    std::vector<double> hann_, weights_;
    Eigen::FFT<double> fft_;
};

/// Raw (unnormalized) features: r*T half-overlapping windows spanning the
/// first T/fps seconds of `signal`.
inline AudioTokens featurize_raw(const AudioSignal& signal, double fps, int frames, int r = 2, int dim = 16) {
    require(frames >= 1 && r >= 1 && dim >= 1, "featurize: invalid shape arguments");
    const double clip_samples = frames * signal.sample_rate / fps;
    require(static_cast<double>(signal.samples.size()) + 1e-6 >= std::floor(clip_samples + 1e-9),
            "featurize: audio shorter than the clip");
    const int length = r * frames;
    const double hop = std::floor(clip_samples + 1e-9) / (length + 1);
    const int win = std::max(2, static_cast<int>(std::floor(2.0 * hop)));

    Featurizer fz(dim, signal.sample_rate, win);
    AudioTokens out(length, dim, r);
    for (int j = 0; j < length; ++j) {
        const auto start = static_cast<std::size_t>(std::floor(j * hop));
        const std::size_t avail = signal.samples.size() > start ? signal.samples.size() - start : 0;
        fz.window_features(signal.samples.data() + start, avail, &out.at(j, 0));
    }
    return out;
}

inline FeatureStats compute_stats(const std::vector<AudioTokens>& sets) {
    require(!sets.empty(), "compute_stats: no feature sets");
    const int d = sets.front().dim;
    FeatureStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    double count = 0;
    for (const AudioTokens& a : sets) {
        require(a.dim == d, "compute_stats: dimension mismatch");
        for (int i = 0; i < a.length; ++i)
            for (int j = 0; j < d; ++j) st.mean[j] += a.at(i, j);
        count += a.length;
    }
    for (double& m : st.mean) m /= count;
    for (const AudioTokens& a : sets)
        for (int i = 0; i < a.length; ++i)
            for (int j = 0; j < d; ++j) st.stddev[j] += std::pow(a.at(i, j) - st.mean[j], 2);
    for (double& s : st.stddev) s = std::max(1e-6, std::sqrt(s / count));
    return st;
}

inline void normalize(AudioTokens& a, const FeatureStats& st) {
    require(static_cast<int>(st.mean.size()) == a.dim && static_cast<int>(st.stddev.size()) == a.dim,
            "normalize: stats dimension mismatch");
    for (int i = 0; i < a.length; ++i)
        for (int j = 0; j < a.dim; ++j) a.at(i, j) = static_cast<float>((a.at(i, j) - st.mean[j]) / st.stddev[j]);
}

/// Featurize and, when stats are given, normalize.
inline AudioTokens featurize(const AudioSignal& signal, double fps, int frames, int r = 2, int dim = 16,
                             const FeatureStats* stats = nullptr) {
    AudioTokens a = featurize_raw(signal, fps, frames, r, dim);
    if (stats) normalize(a, *stats);
    return a;
}

}  // namespace lipflow::audio
