#pragma once

// Rotary position embeddings. Dimensions are rotated in adjacent pairs
// (2i, 2i+1). 1D: pair i turns by pos * base^(-2i/d). 3D video: the pairs
// are split into three near-equal groups for the (t, y, x) axes and each
// group uses its own 1D schedule.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "lipflow/tensor.hpp"

namespace lipflow {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pair counts of the (t, y, x) groups for a head of size `head_dim`.
inline std::array<int, 3> rope_axis_pairs(int head_dim) {
    const int pairs = head_dim / 2;
    std::array<int, 3> g{pairs / 3, pairs / 3, pairs / 3};
    for (int i = 0; i < pairs % 3; ++i) ++g[i];
    return g;
}

/// Precomputed cos/sin per (row, pair).
template <class T>
struct RopeTable {
    int rows = 0;
    int pairs = 0;
    std::vector<T> cos, sin;

    RopeTable() = default;
    RopeTable(int n, int p)
        : rows(n), pairs(p), cos(static_cast<std::size_t>(n) * p), sin(static_cast<std::size_t>(n) * p) {}

    void set(int row, int pair, double angle) {
        cos[static_cast<std::size_t>(row) * pairs + pair] = static_cast<T>(std::cos(angle));
        sin[static_cast<std::size_t>(row) * pairs + pair] = static_cast<T>(std::sin(angle));
    }

    /// Rotate columns [col, col + 2*pairs) of every row; sign = -1 applies
    /// the inverse (transpose) rotation.
    template <class Derived>
    void apply(Eigen::MatrixBase<Derived>& x, int col, int sign = 1) const {
        for (int r = 0; r < rows; ++r) {
            const T* c = cos.data() + static_cast<std::size_t>(r) * pairs;
            const T* s = sin.data() + static_cast<std::size_t>(r) * pairs;
            for (int i = 0; i < pairs; ++i) {
                const T a = x(r, col + 2 * i), b = x(r, col + 2 * i + 1);
                const T si = sign > 0 ? s[i] : -s[i];
                x(r, col + 2 * i) = a * c[i] - b * si;
                x(r, col + 2 * i + 1) = a * si + b * c[i];
            }
        }
    }
};

template <class T>
RopeTable<T> rope_table_1d(std::span<const int> positions, int head_dim, double base) {
    require(head_dim % 2 == 0, "rope: head dimension must be even");
    RopeTable<T> tab(static_cast<int>(positions.size()), head_dim / 2);
    for (int r = 0; r < tab.rows; ++r)
        for (int i = 0; i < tab.pairs; ++i)
            tab.set(r, i, positions[r] * std::pow(base, -2.0 * i / head_dim));
    return tab;
}

/// Video table for tokens laid out (t, y, x) raster; `t_offset` shifts the
/// temporal coordinate.
template <class T>
RopeTable<T> rope_table_3d(int frames, int h, int w, int head_dim, double base, int t_offset = 0) {
    require(head_dim % 2 == 0, "rope: head dimension must be even");
    const std::array<int, 3> g = rope_axis_pairs(head_dim);
    RopeTable<T> tab(frames * h * w, head_dim / 2);
    int row = 0;
    for (int t = 0; t < frames; ++t)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x, ++row) {
                const std::array<int, 3> pos{t + t_offset, y, x};
                int pair = 0;
                for (int axis = 0; axis < 3; ++axis)
                    for (int i = 0; i < g[axis]; ++i, ++pair)
                        tab.set(row, pair, pos[axis] * std::pow(base, -2.0 * i / (2 * g[axis])));
            }
    return tab;
}

/// Rotate every row of x ([L, d_head]) by its position.
template <class T>
Mat<T> rope_rotate(const Mat<T>& x, std::span<const int> positions, double base) {
    require(x.cols() % 2 == 0, "rope_rotate: head dimension must be even");
    require(static_cast<std::size_t>(x.rows()) == positions.size(), "rope_rotate: one position per row required");
    Mat<T> out = x;
    rope_table_1d<T>(positions, static_cast<int>(x.cols()), base).apply(out, 0);
    return out;
}

}  // namespace lipflow
