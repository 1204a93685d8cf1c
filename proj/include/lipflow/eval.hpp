#pragma once

// Metrics for generated clips: toy lip sync, identity consistency outside
// the mouth, seam discontinuity and luminance drift.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipflow/inference.hpp"
#include "lipflow/synthetic_world.hpp"

namespace lipflow::eval {

struct EvalReport {
    double sync_c = 0.0;
    int sync_d = 0;
    double identity_consistency = 0.0;
    double seam_gap_ratio = 1.0;
    double color_drift = 0.0;

    bool operator==(const EvalReport&) const = default;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    j = {{"sync_c", r.sync_c},
         {"sync_d", r.sync_d},
         {"identity_consistency", r.identity_consistency},
         {"seam_gap_ratio", r.seam_gap_ratio},
         {"color_drift", r.color_drift}};
}

// Non-finite ratios are written as strings so the JSON stays valid.
inline void from_json(const nlohmann::json& j, EvalReport& r) {
    auto num = [&](const char* k) {
        const auto& v = j.at(k);
        if (v.is_string()) return std::stod(v.get<std::string>());
        return v.get<double>();
    };
    r.sync_c = num("sync_c");
    r.sync_d = j.at("sync_d").get<int>();
    r.identity_consistency = num("identity_consistency");
    r.seam_gap_ratio = num("seam_gap_ratio");
    r.color_drift = num("color_drift");
}

inline nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json j = r;
    if (!std::isfinite(r.seam_gap_ratio)) j["seam_gap_ratio"] = r.seam_gap_ratio > 0 ? "inf" : "nan";
    return j;
}

inline std::string csv_header() { return "clip,sync_c,sync_d,identity_consistency,seam_gap_ratio,color_drift"; }

inline std::string csv_row(const std::string& clip, const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, ",%.17g,%d,%.17g,%.17g,%.17g", r.sync_c, r.sync_d, r.identity_consistency,
                  r.seam_gap_ratio, r.color_drift);
    return clip + buf;
}

/// Mean absolute difference between consecutive frames, index j holds the
/// difference between frames j and j+1.
inline std::vector<double> adjacent_l1(const VideoClip& v) {
    std::vector<double> d;
    const std::size_t n = v.frame_size();
    for (int t = 1; t < v.frames; ++t) {
        const float* a = v.frame(t - 1);
        const float* b = v.frame(t);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(b[i]) - a[i]);
        d.push_back(acc / static_cast<double>(n));
    }
    return d;
}

/// Max adjacent-frame L1 at the seams over the median adjacent-frame L1.
/// Defined as 1 without seams or with fewer than two frames.
inline double seam_gap_ratio(const VideoClip& v, const std::vector<int>& seams) {
    if (v.frames < 2 || seams.empty()) return 1.0;
    const std::vector<double> d = adjacent_l1(v);
    double worst = 0.0;
    for (int j : seams) {
        require(j >= 1 && j < v.frames, "seam_gap_ratio: seam index out of range");
        worst = std::max(worst, d[j - 1]);
    }
    std::vector<double> sorted = d;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    if (median == 0.0) return worst == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return worst / median;
}

/// 1 - mean L1 distance to the reference over pixels outside the mouth box.
inline double identity_consistency(const VideoClip& v, const VideoClip& ref, const world::PixelBox& box) {
    require(ref.frames >= 1 && ref.height == v.height && ref.width == v.width,
            "identity_consistency: reference frame size mismatch");
    double acc = 0.0;
    std::size_t count = 0;
    for (int t = 0; t < v.frames; ++t)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) {
                if (box.contains(y, x)) continue;
                for (int c = 0; c < 3; ++c) acc += std::abs(static_cast<double>(v.at(t, y, x, c)) - ref.at(0, y, x, c));
                count += 3;
            }
    return count ? 1.0 - acc / static_cast<double>(count) : 1.0;
}

/// Least-squares slope of per-frame mean luminance against frame index.
inline double color_drift(const VideoClip& v) {
    if (v.frames < 2) return 0.0;
    const std::size_t n = static_cast<std::size_t>(v.height) * v.width;
    std::vector<double> lum(v.frames);
    for (int t = 0; t < v.frames; ++t) {
        const float* p = v.frame(t);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += 0.299 * p[3 * i] + 0.587 * p[3 * i + 1] + 0.114 * p[3 * i + 2];
        lum[t] = acc / static_cast<double>(n);
    }
    const double tm = (v.frames - 1) / 2.0;
    double ym = 0.0;
    for (double y : lum) ym += y;
    ym /= v.frames;
    double sxy = 0.0, sxx = 0.0;
    for (int t = 0; t < v.frames; ++t) {
        sxy += (t - tm) * (lum[t] - ym);
        sxx += (t - tm) * (t - tm);
    }
    return sxy / sxx;
}

inline EvalReport evaluate(const VideoClip& generated, const AudioSignal& audio, const VideoClip& ref_frame,
                           const world::SceneSpec& scene, const infer::WindowPlan& plan) {
    require(generated.frames >= 1, "evaluate: empty video");
    require(world::frames_covered(audio, generated.fps) >= generated.frames,
            "evaluate: audio does not cover the generated frames");
    if (!plan.empty())
        require(plan.back().end == generated.frames, "evaluate: window plan length does not match the video");
    EvalReport r;
    const world::SyncScore s = world::sync_confidence(generated, audio, scene);
    r.sync_c = s.sync_c;
    r.sync_d = s.sync_d;
    r.identity_consistency = identity_consistency(generated, ref_frame, world::mouth_box(scene, generated.height,
                                                                                          generated.width));
    r.seam_gap_ratio = seam_gap_ratio(generated, infer::seam_indices(plan, generated.frames));
    r.color_drift = color_drift(generated);
    return r;
}

}  // namespace lipflow::eval
