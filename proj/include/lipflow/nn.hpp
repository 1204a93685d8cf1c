#pragma once

// Dense layers with explicit backward passes. Activations are row-major
// [tokens, features] matrices; a linear layer computes y = x W + b with W
// stored [in, out].

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "lipflow/rope.hpp"

namespace lipflow::nn {

template <class T>
struct Linear {
    Mat<T> W;  // [in, out]
    Mat<T> b;  // [1, out]

    Linear() = default;
    Linear(int in, int out) : W(Mat<T>::Zero(in, out)), b(Mat<T>::Zero(1, out)) {}
    int in() const { return static_cast<int>(W.rows()); }
    int out() const { return static_cast<int>(W.cols()); }
};

template <class T>
Mat<T> linear(const Mat<T>& x, const Linear<T>& l) {
    Mat<T> y = x * l.W;
    y.rowwise() += l.b.row(0);
    return y;
}

/// Accumulates weight gradients into `g`; returns dL/dx.
template <class T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& dy, const Linear<T>& l, Linear<T>& g) {
    g.W.noalias() += x.transpose() * dy;
    g.b += dy.colwise().sum();
    return dy * l.W.transpose();
}

template <class T>
inline T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <class T>
inline T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

template <class T>
Mat<T> silu(const Mat<T>& x) {
    return x.unaryExpr([](T v) { return silu(v); });
}

template <class T>
Mat<T> silu_backward(const Mat<T>& x, const Mat<T>& dy) {
    return dy.cwiseProduct(x.unaryExpr([](T v) { return silu_grad(v); }));
}

inline constexpr double kLayerNormEps = 1e-6;

/// Affine-free layer norm over each row. `rstd` receives 1/sigma per row.
template <class T>
Mat<T> layer_norm(const Mat<T>& x, std::vector<T>& rstd) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Mat<T> y(n, d);
    rstd.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const T mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).eval();
        const T var = centered.square().mean();
        const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
        rstd[r] = rs;
        y.row(r) = (centered * rs).matrix();
    }
    return y;
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& y, const std::vector<T>& rstd, const Mat<T>& dy) {
    Mat<T> dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const T mdy = dy.row(r).mean();
        const T mdyy = dy.row(r).cwiseProduct(y.row(r)).mean();
        dx.row(r) = (rstd[r] * (dy.row(r).array() - mdy - y.row(r).array() * mdyy)).matrix();
    }
    return dx;
}

/// y = x * (1 + scale) + shift with row vectors scale/shift.
template <class T>
Mat<T> modulate(const Mat<T>& x, const Mat<T>& shift, const Mat<T>& scale) {
    Mat<T> y = x;
    const auto s = (scale.array() + T(1)).matrix().eval();
    for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) = y.row(r).cwiseProduct(s) + shift;
    return y;
}

template <class T>
struct AttentionParams {
    Linear<T> q, k, v, o;

    AttentionParams() = default;
    AttentionParams(int d_query, int d_context, int d) : q(d_query, d), k(d_context, d), v(d_context, d), o(d, d) {}
};

template <class T>
struct AttentionCache {
    Mat<T> xq, xkv;    // inputs
    Mat<T> q, k, v;    // projected; q and k after rotation
    std::vector<Mat<T>> probs;  // per head [Nq, Nk]
    Mat<T> ctx;        // concatenated head outputs, pre output projection
};

/// Multi-head attention of queries from `xq` over keys/values from `xkv`.
/// Either rope table may be null (no rotation on that side).
template <class T>
Mat<T> attention(const Mat<T>& xq, const Mat<T>& xkv, const AttentionParams<T>& p, int heads,
                 const RopeTable<T>* rope_q, const RopeTable<T>* rope_k, AttentionCache<T>* cache,
                 std::vector<Mat<T>>* logits_out = nullptr) {
    const int d = p.q.out();
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> q = linear(xq, p.q), k = linear(xkv, p.k), v = linear(xkv, p.v);
    for (int h = 0; h < heads; ++h) {
        if (rope_q) {
            auto blk = q.middleCols(h * dh, dh);
            rope_q->apply(blk, 0);
        }
        if (rope_k) {
            auto blk = k.middleCols(h * dh, dh);
            rope_k->apply(blk, 0);
        }
    }
    Mat<T> ctx(xq.rows(), d);
    if (cache) cache->probs.resize(heads);
    if (logits_out) logits_out->resize(heads);
    for (int h = 0; h < heads; ++h) {
        Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
        if (logits_out) (*logits_out)[h] = s;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const T mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp().matrix();
            s.row(r) /= s.row(r).sum();
        }
        ctx.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
        if (cache) cache->probs[h] = std::move(s);
    }
    Mat<T> out = linear(ctx, p.o);
    if (cache) {
        cache->xq = xq;
        cache->xkv = xkv;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->ctx = std::move(ctx);
    }
    return out;
}

/// Backward of attention; writes dL/dxq and dL/dxkv.
template <class T>
void attention_backward(const AttentionCache<T>& c, const Mat<T>& dout, const AttentionParams<T>& p, int heads,
                        const RopeTable<T>* rope_q, const RopeTable<T>* rope_k, AttentionParams<T>& g, Mat<T>& dxq,
                        Mat<T>& dxkv) {
    const int d = p.q.out();
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Mat<T> dctx = linear_backward(c.ctx, dout, p.o, g.o);
    Mat<T> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
    for (int h = 0; h < heads; ++h) {
        const Mat<T>& P = c.probs[h];
        const auto dctx_h = dctx.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh).noalias() = P.transpose() * dctx_h;
        Mat<T> dp = dctx_h * c.v.middleCols(h * dh, dh).transpose();
        for (Eigen::Index r = 0; r < dp.rows(); ++r) {
            const T dot = dp.row(r).dot(P.row(r));
            dp.row(r) = (P.row(r).array() * (dp.row(r).array() - dot)).matrix() * scale;
        }
        dq.middleCols(h * dh, dh).noalias() = dp * c.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() = dp.transpose() * c.q.middleCols(h * dh, dh);
    }
    for (int h = 0; h < heads; ++h) {
        if (rope_q) {
            auto blk = dq.middleCols(h * dh, dh);
            rope_q->apply(blk, 0, -1);
        }
        if (rope_k) {
            auto blk = dk.middleCols(h * dh, dh);
            rope_k->apply(blk, 0, -1);
        }
    }
    dxq = linear_backward(c.xq, dq, p.q, g.q);
    dxkv = linear_backward(c.xkv, dk, p.k, g.k);
    dxkv += linear_backward(c.xkv, dv, p.v, g.v);
}

}  // namespace lipflow::nn
