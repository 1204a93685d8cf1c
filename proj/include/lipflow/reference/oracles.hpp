#pragma once

// Straightforward reference computations used to cross-check the library.
// They deliberately share no code with the modules they check: plain
// nested loops over std::vector<double>, no Eigen and no lipflow helpers
// beyond the value types.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "lipflow/tensor.hpp"

namespace lipflow::reference {

/// Window index trace: start at (0, f); advance the start by f - o; the end
/// is start + f unless that reaches l, in which case it is l; stop after a
/// window ending at l.
inline std::vector<std::pair<int, int>> window_trace(int l, int f, int o) {
    std::vector<std::pair<int, int>> out;
    int s = 0;
    int e = f;
    for (;;) {
        out.emplace_back(s, e);
        if (e >= l) break;
        s = s + (f - o);
        if (s + f < l)
            e = s + f;
        else
            e = l;
    }
    return out;
}

/// Fusion weights (i - 1) / (o - 1) for i = 1..o.
inline std::vector<double> fuse_weights(int o) {
    std::vector<double> w;
    for (int i = 1; i <= o; ++i) w.push_back(double(i - 1) / double(o - 1));
    return w;
}

/// Sum over all elements of weight * (p - q)^2 divided by the element count;
/// `mask` has one value per (t, y, x).
inline double weighted_mse(const std::vector<double>& p, const std::vector<double>& q, const std::vector<double>& mask,
                           int frames, int channels, int hw, double w1, double w2) {
    double total = 0.0;
    for (int t = 0; t < frames; t++)
        for (int c = 0; c < channels; c++)
            for (int i = 0; i < hw; i++) {
                const std::size_t idx = (std::size_t(t) * channels + c) * hw + i;
                const double m = mask[std::size_t(t) * hw + i];
                const double wt = m == 1.0 ? w1 : w2;
                total += wt * (p[idx] - q[idx]) * (p[idx] - q[idx]);
            }
    return total / double(frames * channels * hw);
}

/// Mean of (p - q)^2 over elements whose (t, y, x) mask entry is 1.
inline double masked_mean(const std::vector<double>& p, const std::vector<double>& q, const std::vector<double>& mask,
                          int frames, int channels, int hw) {
    double total = 0.0;
    long n = 0;
    for (int t = 0; t < frames; t++)
        for (int c = 0; c < channels; c++)
            for (int i = 0; i < hw; i++) {
                if (mask[std::size_t(t) * hw + i] != 1.0) continue;
                const std::size_t idx = (std::size_t(t) * channels + c) * hw + i;
                total += (p[idx] - q[idx]) * (p[idx] - q[idx]);
                n++;
            }
    return n == 0 ? 0.0 : total / double(n);
}

/// Latent cell (t, Y, X) is 1 iff any pixel of its p x p block is 1.
inline std::vector<double> pool_any(const std::vector<float>& mask, int frames, int h, int w, int p) {
    const int hl = h / p, wl = w / p;
    std::vector<double> out(std::size_t(frames) * hl * wl, 0.0);
    for (int t = 0; t < frames; t++)
        for (int Y = 0; Y < hl; Y++)
            for (int X = 0; X < wl; X++) {
                bool any = false;
                for (int dy = 0; dy < p && !any; dy++)
                    for (int dx = 0; dx < p && !any; dx++)
                        any = mask[(std::size_t(t) * h + Y * p + dy) * w + X * p + dx] != 0.0f;
                out[(std::size_t(t) * hl + Y) * wl + X] = any ? 1.0 : 0.0;
            }
    return out;
}

/// Per-frame affine field v(frame) = A frame + b with A of size D x D.
struct AffineField {
    int dim = 0;
    std::vector<double> A;  // row-major D x D
    std::vector<double> b;

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(dim);
        for (int r = 0; r < dim; r++) {
            double acc = b[r];
            for (int c = 0; c < dim; c++) acc += A[std::size_t(r) * dim + c] * x[c];
            y[r] = acc;
        }
        return y;
    }
};

/// Random affine field with a contracting spectrum scale.
inline AffineField random_affine(int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    AffineField f;
    f.dim = dim;
    f.A.resize(std::size_t(dim) * dim);
    f.b.resize(dim);
    for (double& a : f.A) a = u(rng) / std::sqrt(double(dim));
    for (double& v : f.b) v = u(rng);
    return f;
}

/// Sliding-window Euler sampling of the affine field with overlap fusion,
/// written from the schedule description: every window keeps its own copy
/// of its frames; per step, windows left to right take one Euler step; from
/// the second step on, window i > 0 blends its first o frames with window
/// i-1's last o frames (weight q/(o-1) on the current window) and both
/// copies receive the blend. The result takes each frame from the last
/// window that contains it.
///
/// `z` holds l frames of `field.dim` values each.
inline std::vector<std::vector<double>> blf_affine(const std::vector<std::vector<double>>& z, int f, int o, int steps,
                                                   const AffineField& field) {
    const int l = int(z.size());
    const auto win = window_trace(l, f, o);
    std::vector<std::vector<std::vector<double>>> state;
    for (auto [s, e] : win) state.emplace_back(z.begin() + s, z.begin() + e);
    const double dt = 1.0 / steps;
    for (int step = 0; step < steps; step++) {
        for (std::size_t i = 0; i < win.size(); i++) {
            auto& cur = state[i];
            for (auto& frame : cur) {
                const std::vector<double> v = field.apply(frame);
                for (int k = 0; k < field.dim; k++) frame[k] = frame[k] + v[k] * dt;
            }
            if (i == 0 || step == 0 || o == 0) continue;
            auto& prev = state[i - 1];
            const int plen = int(prev.size());
            for (int q = 0; q < o; q++) {
                const double w = double(q) / double(o - 1);
                for (int k = 0; k < field.dim; k++) {
                    const double x = w * cur[q][k] + (1.0 - w) * prev[plen - o + q][k];
                    cur[q][k] = x;
                    prev[plen - o + q][k] = x;
                }
            }
        }
    }
    std::vector<std::vector<double>> out(l);
    for (std::size_t i = 0; i < win.size(); i++)
        for (int k = 0; k < int(state[i].size()); k++) out[win[i].first + k] = state[i][k];
    return out;
}

}  // namespace lipflow::reference
