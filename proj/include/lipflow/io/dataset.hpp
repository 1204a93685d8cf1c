#pragma once

// Synthetic dataset generation and the on-disk run layout:
//
//   <dir>/manifest.json       clip list, scenes, render settings, feature stats
//   <dir>/clip_NNNN.wav       16-bit PCM audio
//   <dir>/clip_NNNN/FFFF.png  8-bit RGB frames

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipflow/audio_encoder.hpp"
#include "lipflow/io/png.hpp"
#include "lipflow/io/wav.hpp"
#include "lipflow/synthetic_world.hpp"

namespace lipflow::io {

struct WorldSettings {
    int frames = 48;
    double fps = 16.0;
    int height = 32;
    int width = 32;
    int patch = 4;
    int sample_rate = 16000;
};

/// Clip `seed`: random scene and audio, rendered. The audio lasts exactly
/// `frames` frames.
inline world::TripletSample make_triplet(std::uint64_t seed, const WorldSettings& s) {
    const double duration = s.frames / s.fps;
    const AudioSignal audio = world::gen_audio(seed, duration, s.sample_rate);
    return world::render_video(audio, world::random_scene(seed), s.fps, s.height, s.width, s.patch);
}

inline std::vector<world::TripletSample> make_triplets(std::uint64_t first_seed, int count, const WorldSettings& s) {
    std::vector<world::TripletSample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(make_triplet(first_seed + static_cast<std::uint64_t>(i), s));
    return out;
}

/// Feature statistics over the raw audio features of `samples`.
inline audio::FeatureStats feature_stats(const std::vector<world::TripletSample>& samples, int r, int dim) {
    std::vector<audio::AudioTokens> feats;
    for (const auto& s : samples) feats.push_back(audio::featurize_raw(s.audio, s.video.fps, s.video.frames, r, dim));
    return audio::compute_stats(feats);
}

inline nlohmann::json scene_json(const world::SceneSpec& s) {
    return {{"text_tag", s.text_tag},     {"center_row", s.center_row},       {"center_col", s.center_col},
            {"radius", s.radius},         {"mouth_gain", s.mouth_gain},       {"head_bob_gain", s.head_bob_gain},
            {"seed", s.seed}};
}

inline world::SceneSpec scene_from_json(const nlohmann::json& j) {
    world::SceneSpec s;
    j.at("text_tag").get_to(s.text_tag);
    j.at("center_row").get_to(s.center_row);
    j.at("center_col").get_to(s.center_col);
    j.at("radius").get_to(s.radius);
    j.at("mouth_gain").get_to(s.mouth_gain);
    j.at("head_bob_gain").get_to(s.head_bob_gain);
    j.at("seed").get_to(s.seed);
    return s;
}

struct Dataset {
    std::vector<world::TripletSample> samples;
    audio::FeatureStats stats;
    WorldSettings settings;
};

inline void save_dataset(const std::string& dir, const Dataset& d) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json clips = nlohmann::json::array();
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "clip_%04zu", i);
        const auto& s = d.samples[i];
        write_wav((fs::path(dir) / (std::string(stem) + ".wav")).string(), s.audio);
        const fs::path frames = fs::path(dir) / stem;
        fs::create_directories(frames);
        for (int t = 0; t < s.video.frames; ++t) {
            char name[32];
            std::snprintf(name, sizeof name, "%04d.png", t);
            write_png((frames / name).string(), s.video, t);
        }
        nlohmann::json entry = {
            {"id", stem}, {"seed", s.scene.seed}, {"frames", s.video.frames}, {"scene", scene_json(s.scene)}};
        if (s.video.frames >= 8) {
            const world::SyncScore sc = world::sync_confidence(s.video, s.audio, s.scene);
            entry["sync_c"] = sc.sync_c;
            entry["sync_d"] = sc.sync_d;
        }
        clips.push_back(entry);
    }
    const WorldSettings& w = d.settings;
    nlohmann::json m = {{"format", "lipflow-dataset"},
                        {"settings",
                         {{"frames", w.frames},
                          {"fps", w.fps},
                          {"height", w.height},
                          {"width", w.width},
                          {"patch", w.patch},
                          {"sample_rate", w.sample_rate}}},
                        {"feature_stats", {{"mean", d.stats.mean}, {"stddev", d.stats.stddev}}},
                        {"clips", clips}};
    write_file((fs::path(dir) / "manifest.json").string(), m.dump(2));
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DecodeError("dataset: malformed manifest " + manifest_path, e.byte);
    }
    Dataset d;
    const auto& w = m.at("settings");
    w.at("frames").get_to(d.settings.frames);
    w.at("fps").get_to(d.settings.fps);
    w.at("height").get_to(d.settings.height);
    w.at("width").get_to(d.settings.width);
    w.at("patch").get_to(d.settings.patch);
    w.at("sample_rate").get_to(d.settings.sample_rate);
    m.at("feature_stats").at("mean").get_to(d.stats.mean);
    m.at("feature_stats").at("stddev").get_to(d.stats.stddev);
    for (const auto& c : m.at("clips")) {
        const std::string stem = c.at("id").get<std::string>();
        world::TripletSample s;
        s.audio = read_wav((fs::path(dir) / (stem + ".wav")).string());
        const int frames = c.at("frames").get<int>();
        s.video = VideoClip(frames, d.settings.height, d.settings.width, d.settings.fps);
        for (int t = 0; t < frames; ++t) {
            char name[32];
            std::snprintf(name, sizeof name, "%04d.png", t);
            const VideoClip f = read_png((fs::path(dir) / stem / name).string());
            if (f.height != s.video.height || f.width != s.video.width)
                throw std::runtime_error("dataset: frame size mismatch in " + stem);
            std::copy(f.pixels.begin(), f.pixels.end(), s.video.frame(t));
        }
        s.scene = scene_from_json(c.at("scene"));
        s.envelope = world::frame_envelope(s.audio, s.video.fps, s.video.frames);
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace lipflow::io
