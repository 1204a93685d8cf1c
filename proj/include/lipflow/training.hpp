#pragma once

// Flow-matching training: z_t = (1-t) z0 + t z1 with velocity target
// z1 - z0, a mask-weighted joint loss plus a gated lip-region loss, task
// sampling, independent condition dropout and Adam.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipflow/audio_encoder.hpp"
#include "lipflow/checkpoint.hpp"
#include "lipflow/codec.hpp"
#include "lipflow/denoiser.hpp"
#include "lipflow/random.hpp"
#include "lipflow/synthetic_world.hpp"

namespace lipflow::train {

template <class T>
LatentVideo<T> interpolate(const LatentVideo<T>& z0, const LatentVideo<T>& z1, double t) {
    require_same_shape(z0, z1, "interpolate");
    require(t >= 0.0 && t <= 1.0, "interpolate: t must lie in [0, 1]");
    LatentVideo<T> out = z0;
    const T a = static_cast<T>(1.0 - t), b = static_cast<T>(t);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * z1.data[i];
    return out;
}

template <class T>
LatentVideo<T> velocity_target(const LatentVideo<T>& z0, const LatentVideo<T>& z1) {
    require_same_shape(z0, z1, "velocity_target");
    LatentVideo<T> out = z1;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = z1.data[i] - z0.data[i];
    return out;
}

namespace detail {

/// Mask value for element (t, c, y, x); a single-channel mask broadcasts.
template <class T>
T mask_at(const LatentMask<T>& m, int t, int c, int y, int x) {
    return m.at(t, m.channels == 1 ? 0 : c, y, x);
}

template <class T>
void check_mask(const LatentVideo<T>& pred, const LatentMask<T>& m, const char* what) {
    require(m.frames == pred.frames && m.height == pred.height && m.width == pred.width &&
                (m.channels == 1 || m.channels == pred.channels),
            std::string(what) + ": mask does not broadcast to the prediction");
}

}  // namespace detail

/// mean over all elements of [w1 m + w2 (1 - m)] (pred - target)^2.
/// `grad`, when given, receives dL/dpred.
template <class T>
double loss_joint(const LatentVideo<T>& pred, const LatentVideo<T>& target, const LatentMask<T>& mask, double w1,
                  double w2, std::type_identity_t<LatentVideo<T>>* grad = nullptr) {
    require_same_shape(pred, target, "loss_joint");
    detail::check_mask(pred, mask, "loss_joint");
    require(w1 >= 0.0 && w2 >= 0.0, "loss_joint: weights must be non-negative");
    const double n = static_cast<double>(pred.size());
    if (grad) *grad = LatentVideo<T>(pred.frames, pred.channels, pred.height, pred.width, pred.patch);
    double acc = 0.0;
    for (int t = 0; t < pred.frames; ++t)
        for (int c = 0; c < pred.channels; ++c)
            for (int y = 0; y < pred.height; ++y)
                for (int x = 0; x < pred.width; ++x) {
                    const double m = detail::mask_at(mask, t, c, y, x);
                    const double w = w1 * m + w2 * (1.0 - m);
                    const double diff = static_cast<double>(pred.at(t, c, y, x)) - target.at(t, c, y, x);
                    acc += w * diff * diff;
                    if (grad) grad->at(t, c, y, x) = static_cast<T>(2.0 * w * diff / n);
                }
    return acc / n;
}

struct FaceLossStats {
    long calls = 0;
    long lip_branch = 0;
    long empty_mask = 0;  // warnings: lip branch taken with an all-zero mask
};

/// Gated lip loss: u >= p_mask gives plain MSE, otherwise the mean squared
/// error over masked elements only.
template <class T>
double loss_face(const LatentVideo<T>& pred, const LatentVideo<T>& target, const LatentMask<T>& lip_mask, double u,
                 double p_mask, std::type_identity_t<LatentVideo<T>>* grad = nullptr, FaceLossStats* stats = nullptr) {
    require_same_shape(pred, target, "loss_face");
    detail::check_mask(pred, lip_mask, "loss_face");
    if (grad) *grad = LatentVideo<T>(pred.frames, pred.channels, pred.height, pred.width, pred.patch);
    if (stats) ++stats->calls;
    const bool lip = u < p_mask;
    double count = 0.0;
    if (lip) {
        for (int t = 0; t < pred.frames; ++t)
            for (int c = 0; c < pred.channels; ++c)
                for (int y = 0; y < pred.height; ++y)
                    for (int x = 0; x < pred.width; ++x) count += detail::mask_at(lip_mask, t, c, y, x);
        if (stats) ++stats->lip_branch;
        if (count == 0.0) {
            if (stats) ++stats->empty_mask;
            return 0.0;
        }
    } else {
        count = static_cast<double>(pred.size());
    }
    double acc = 0.0;
    for (int t = 0; t < pred.frames; ++t)
        for (int c = 0; c < pred.channels; ++c)
            for (int y = 0; y < pred.height; ++y)
                for (int x = 0; x < pred.width; ++x) {
                    const double m = lip ? static_cast<double>(detail::mask_at(lip_mask, t, c, y, x)) : 1.0;
                    const double diff = static_cast<double>(pred.at(t, c, y, x)) - target.at(t, c, y, x);
                    acc += m * diff * diff;
                    if (grad) grad->at(t, c, y, x) = static_cast<T>(2.0 * m * diff / count);
                }
    return acc / count;
}

enum class FaceMode { sum, alternate };

struct TrainConfig {
    double w1 = 2.0, w2 = 1.0;
    double p_mask = 0.5;
    double dropout_p = 0.15;
    double lambda_face = 1.0;
    FaceMode face_mode = FaceMode::sum;
    int stage = 2;                // 1: animation only, 2: animation/editing mix
    double animation_weight = 1.0;
    double editing_weight = 1.0;
    int batch_size = 4;
    int steps = 1000;
    int clip_frames = 16;         // crop length in frames, 0 = whole clip
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double weight_decay = 0.0;    // decoupled
    double grad_clip = 1.0;       // global norm, 0 = off
    int log_interval = 50;
    int checkpoint_interval = 0;  // 0 = final checkpoint only
    std::uint64_t seed = 0;

    void validate() const {
        require(w1 >= 0.0 && w2 >= 0.0, "TrainConfig: w1, w2 must be >= 0");
        require(p_mask >= 0.0 && p_mask <= 1.0, "TrainConfig: p_mask must lie in [0, 1]");
        require(dropout_p >= 0.0 && dropout_p <= 1.0, "TrainConfig: dropout_p must lie in [0, 1]");
        require(lambda_face >= 0.0, "TrainConfig: lambda_face must be >= 0");
        require(stage == 1 || stage == 2, "TrainConfig: stage must be 1 or 2");
        require(animation_weight >= 0.0 && editing_weight >= 0.0 && animation_weight + editing_weight > 0.0,
                "TrainConfig: task weights must be >= 0 and not both zero");
        require(batch_size >= 1 && steps >= 0 && clip_frames >= 0, "TrainConfig: invalid batch/steps/clip size");
        require(lr > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0,
                "TrainConfig: invalid optimizer settings");
        require(weight_decay >= 0.0 && grad_clip >= 0.0, "TrainConfig: invalid regularization settings");
        require(log_interval >= 1 && checkpoint_interval >= 0, "TrainConfig: invalid logging intervals");
    }
};

/// One dataset clip in training-ready form.
struct TrainingExample {
    VideoClip video;
    LatentVideo<float> latent;
    audio::AudioTokens audio;     // normalized, r tokens per frame
    LatentMask<float> lip_mask;   // pooled mouth box on every frame
    world::PixelBox mouth;
    int text_tag = 0;
};

inline TrainingExample make_example(const world::TripletSample& s, const dit::DenoiserConfig& cfg,
                                    const audio::FeatureStats* stats) {
    const VideoClip& v = s.video;
    TrainingExample ex;
    ex.video = v;
    ex.latent = codec::encode<float>(v, cfg.patch);
    ex.audio = audio::featurize(s.audio, v.fps, v.frames, cfg.tokens_per_frame, cfg.audio_dim, stats);
    ex.mouth = world::mouth_box(s.scene, v.height, v.width);
    ex.lip_mask = codec::pool_mask<float>(codec::box_mask(v.frames, v.height, v.width, ex.mouth), cfg.patch);
    ex.text_tag = s.scene.text_tag;
    return ex;
}

template <class T>
struct AdamState {
    dit::ModelParams<T> m, v;
    long step = 0;

    AdamState() = default;
    explicit AdamState(const dit::DenoiserConfig& c) : m(dit::zero_params<T>(c)), v(dit::zero_params<T>(c)) {}
};

template <class T>
std::vector<Mat<T>*> tensor_list(dit::ModelParams<T>& p) {
    std::vector<Mat<T>*> out;
    dit::for_each_tensor(p, [&](const std::string&, Mat<T>& m) { out.push_back(&m); });
    return out;
}

template <class T>
double grad_norm(const dit::ModelParams<T>& g) {
    double acc = 0.0;
    dit::for_each_tensor(g, [&](const std::string&, const Mat<T>& m) {
        acc += m.template cast<double>().squaredNorm();
    });
    return std::sqrt(acc);
}

template <class T>
void adam_update(dit::ModelParams<T>& p, dit::ModelParams<T>& g, AdamState<T>& st, const TrainConfig& cfg) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    const auto ps = tensor_list(p), gs = tensor_list(g), ms = tensor_list(st.m), vs = tensor_list(st.v);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T step = static_cast<T>(cfg.lr / bc1), denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg.adam_eps), decay = static_cast<T>(cfg.lr * cfg.weight_decay);
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto pa = ps[k]->array();
        auto ga = gs[k]->array();
        auto ma = ms[k]->array();
        auto va = vs[k]->array();
        ma = b1 * ma + (T(1) - b1) * ga;
        va = b2 * va + (T(1) - b2) * ga.square();
        if (decay != T(0)) pa -= decay * pa;
        pa -= step * ma / (va.sqrt() * denom_scale + eps);
    }
}

struct StepMetrics {
    double loss_joint = 0.0;
    double loss_face = 0.0;
    double loss_total = 0.0;
    double grad_norm = 0.0;
    int editing_samples = 0;
    int lip_branch = 0;
};

using InputObserver = std::function<void(const dit::DenoiseInput<float>&)>;

enum class LossTerms { both, joint_only, face_only };

struct LossParts {
    double joint = 0.0, face = 0.0, total = 0.0;
};

/// Composed objective joint + lambda * face, with dL/dpred in `grad`.
template <class T>
LossParts composed_loss(const LatentVideo<T>& pred, const LatentVideo<T>& target, const LatentMask<T>& task_mask,
                        const LatentMask<T>& lip_mask, double u, const TrainConfig& cfg, LossTerms terms,
                        std::type_identity_t<LatentVideo<T>>* grad, FaceLossStats* stats = nullptr) {
    LatentVideo<T> gj, gf;
    LossParts out;
    out.joint = loss_joint(pred, target, task_mask, cfg.w1, cfg.w2, grad ? &gj : nullptr);
    out.face = loss_face(pred, target, lip_mask, u, cfg.p_mask, grad ? &gf : nullptr, stats);
    const double aj = terms == LossTerms::face_only ? 0.0 : 1.0;
    const double af = terms == LossTerms::joint_only ? 0.0 : cfg.lambda_face;
    out.total = aj * out.joint + af * out.face;
    if (grad) {
        *grad = gj;
        for (std::size_t i = 0; i < grad->data.size(); ++i)
            grad->data[i] = static_cast<T>(aj * gj.data[i] + af * gf.data[i]);
    }
    return out;
}

template <class T>
LatentVideo<T> gaussian_like(const LatentVideo<T>& shape, Rng& rng) {
    LatentVideo<T> z(shape.frames, shape.channels, shape.height, shape.width, shape.patch);
    for (T& v : z.data) v = static_cast<T>(standard_normal(rng));
    return z;
}

/// One optimizer step on `batch`. `step_index` is the 0-based global step
/// (used by the alternating face mode).
inline StepMetrics train_step(dit::ModelParams<float>& params, AdamState<float>& adam,
                              std::span<const TrainingExample* const> batch, const TrainConfig& cfg, Rng& rng,
                              long step_index, const InputObserver& observer = {},
                              FaceLossStats* face_stats = nullptr) {
    require(!batch.empty(), "train_step: empty batch");
    const dit::DenoiserConfig& mc = params.config;
    dit::ModelParams<float> grads = dit::zero_params<float>(mc);
    StepMetrics out;
    const LossTerms terms = cfg.face_mode == FaceMode::sum ? LossTerms::both
                            : (step_index % 2 == 0)       ? LossTerms::joint_only
                                                          : LossTerms::face_only;
    const double p_anim = cfg.animation_weight / (cfg.animation_weight + cfg.editing_weight);
    const float inv_b = 1.0f / static_cast<float>(batch.size());

    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const TrainingExample& ex = *batch[bi];
        const int total = ex.latent.frames;
        const int len = cfg.clip_frames == 0 ? total : std::min(cfg.clip_frames, total);
        const int s = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(total - len + 1)));

        const codec::Task task =
            (cfg.stage == 1 || uniform01(rng) < p_anim) ? codec::Task::animation : codec::Task::editing;
        const bool drop_cond = uniform01(rng) < cfg.dropout_p;
        const bool drop_audio = uniform01(rng) < cfg.dropout_p;
        const bool drop_text = uniform01(rng) < cfg.dropout_p;
        const double t = uniform01(rng);
        const double u = uniform01(rng);

        const VideoClip clip = ex.video.slice(s, s + len);
        const std::array<world::PixelBox, 1> box{ex.mouth};
        const codec::ConditionInputs<float> cond =
            codec::build_condition_inputs<float>(task, clip, box, len, mc.patch);
        const LatentVideo<float> z1 = ex.latent.slice(s, s + len);
        const LatentVideo<float> z0 = gaussian_like(z1, rng);
        const audio::AudioTokens tokens = ex.audio.slice_frames(s, s + len);
        const LatentMask<float> lip = ex.lip_mask.slice(s, s + len);

        dit::DenoiseInput<float> in;
        in.z = interpolate(z0, z1, t);
        in.t = t;
        if (!drop_text) in.text = ex.text_tag;
        in.cond = drop_cond ? nullptr : &cond;
        in.audio = drop_audio ? nullptr : &tokens;
        if (observer) observer(in);

        dit::ForwardCache<float> cache;
        const LatentVideo<float> pred = dit::forward(params, in, &cache);
        LatentVideo<float> dpred;
        const LossParts lp =
            composed_loss(pred, velocity_target(z0, z1), cond.cond_mask, lip, u, cfg, terms, &dpred, face_stats);
        if (!std::isfinite(lp.total))
            throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(step_index) +
                                     " sample " + std::to_string(bi) + " (t=" + std::to_string(t) +
                                     ", joint=" + std::to_string(lp.joint) + ", face=" + std::to_string(lp.face) + ")");
        for (float& g : dpred.data) g *= inv_b;
        dit::backward(params, cache, dpred, grads);

        out.loss_joint += lp.joint / batch.size();
        out.loss_face += lp.face / batch.size();
        out.loss_total += lp.total / batch.size();
        out.editing_samples += task == codec::Task::editing;
        out.lip_branch += u < cfg.p_mask;
    }
    out.grad_norm = grad_norm(grads);
    if (!std::isfinite(out.grad_norm))
        throw std::runtime_error("train_step: non-finite gradient norm at step " + std::to_string(step_index));
    if (cfg.grad_clip > 0.0 && out.grad_norm > cfg.grad_clip) {
        const float k = static_cast<float>(cfg.grad_clip / out.grad_norm);
        for (Mat<float>* m : tensor_list(grads)) *m *= k;
    }
    adam_update(params, grads, adam, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// Training state sidecar: Adam moments, step counter and generator state.

inline constexpr std::string_view kStateMagic = "LIPFLOWS";

inline std::string state_path(const std::string& checkpoint) { return checkpoint + ".state"; }

inline void save_train_state(const std::string& path, const AdamState<float>& adam, const Rng& rng) {
    std::vector<float> flat = ::lipflow::detail::flatten(adam.m);
    const std::vector<float> v = ::lipflow::detail::flatten(adam.v);
    flat.insert(flat.end(), v.begin(), v.end());
    nlohmann::json h;
    h["format"] = "lipflow-train-state";
    h["config"] = adam.m.config;
    h["step"] = adam.step;
    h["rng"] = rng_state(rng);
    h["payload_floats"] = flat.size();
    io::write_file(path, io::encode_container(kStateMagic, h, flat));
}

inline void load_train_state(const std::string& path, const dit::DenoiserConfig& cfg, AdamState<float>& adam,
                             Rng& rng) {
    const io::Container c = io::decode_container(io::read_file(path), kStateMagic);
    dit::DenoiserConfig stored;
    try {
        stored = c.header.at("config").get<dit::DenoiserConfig>();
        adam.step = c.header.at("step").get<long>();
        set_rng_state(rng, c.header.at("rng").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("train state: bad header: ") + e.what(), 12);
    }
    if (!(stored == cfg)) throw std::invalid_argument("train state: config does not match the checkpoint");
    adam.m = dit::zero_params<float>(cfg);
    adam.v = dit::zero_params<float>(cfg);
    const std::size_t n = dit::parameter_count(adam.m);
    if (c.payload.size() != 2 * n) throw DecodeError("train state: payload size mismatch", c.payload_offset);
    ::lipflow::detail::unflatten(adam.m, std::vector<float>(c.payload.begin(), c.payload.begin() + n));
    ::lipflow::detail::unflatten(adam.v, std::vector<float>(c.payload.begin() + n, c.payload.end()));
}

struct MetricsRow {
    long step = 0;
    double loss_joint = 0.0, loss_face = 0.0, grad_norm = 0.0;
};

struct LoopOptions {
    std::string out_dir;                     // empty = keep nothing on disk
    std::optional<std::string> resume_from;  // checkpoint path; its .state sidecar is required
    std::function<void(const MetricsRow&)> on_log;
    InputObserver observer;
};

struct TrainResult {
    dit::ModelParams<float> params;
    std::string final_checkpoint;  // empty when out_dir is empty
    std::vector<MetricsRow> rows;
    long editing_samples = 0;
    FaceLossStats face;
};

/// Run config.steps optimizer steps (counting any steps already done by a
/// resumed checkpoint). Rows average the metrics over each log interval.
inline TrainResult train_loop(const std::vector<TrainingExample>& data, const TrainConfig& cfg,
                              dit::ModelParams<float> init, const LoopOptions& opt = {}) {
    cfg.validate();
    require(!data.empty(), "train_loop: empty dataset");
    TrainResult res;
    AdamState<float> adam(init.config);
    Rng rng(cfg.seed);
    if (opt.resume_from) {
        init = load_params<float>(*opt.resume_from, &init.config);
        load_train_state(state_path(*opt.resume_from), init.config, adam, rng);
    }
    res.params = std::move(init);

    namespace fs = std::filesystem;
    std::ofstream csv;
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        const fs::path csv_path = fs::path(opt.out_dir) / "metrics.csv";
        const bool append = opt.resume_from.has_value() && fs::exists(csv_path);
        csv.open(csv_path, append ? std::ios::app : std::ios::trunc);
        if (!append) csv << "step,loss_joint,loss_face,grad_norm\n";
    }
    auto save = [&](const std::string& name) {
        const std::string path = (fs::path(opt.out_dir) / name).string();
        save_params(path, res.params);
        save_train_state(state_path(path), adam, rng);
        return path;
    };

    MetricsRow acc;
    int in_window = 0;
    std::vector<const TrainingExample*> batch(cfg.batch_size);
    for (long step = adam.step; step < cfg.steps; ++step) {
        for (auto& b : batch) b = &data[uniform_index(rng, data.size())];
        const StepMetrics m = train_step(res.params, adam, batch, cfg, rng, step, opt.observer, &res.face);
        res.editing_samples += m.editing_samples;
        acc.loss_joint += m.loss_joint;
        acc.loss_face += m.loss_face;
        acc.grad_norm += m.grad_norm;
        ++in_window;
        const long done = step + 1;
        if (done % cfg.log_interval == 0) {
            MetricsRow row{done, acc.loss_joint / in_window, acc.loss_face / in_window, acc.grad_norm / in_window};
            res.rows.push_back(row);
            if (csv.is_open()) {
                char line[160];
                std::snprintf(line, sizeof line, "%ld,%.8g,%.8g,%.8g\n", row.step, row.loss_joint, row.loss_face,
                              row.grad_norm);
                csv << line << std::flush;
            }
            if (opt.on_log) opt.on_log(row);
            acc = {};
            in_window = 0;
        }
        if (!opt.out_dir.empty() && cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 &&
            done != cfg.steps) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06ld.lfp", done);
            save(name);
        }
    }
    if (!opt.out_dir.empty()) res.final_checkpoint = save("final.lfp");
    return res;
}

}  // namespace lipflow::train
