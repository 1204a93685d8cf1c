// lipflow command-line tool: gen-data, train, infer, eval, bench, oracle.
//
// Every command accepts --config FILE (flat key=value lines) and
// --print-config. Errors go to stderr as one JSON line and exit nonzero.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lipflow/audio_encoder.hpp"
#include "lipflow/checkpoint.hpp"
#include "lipflow/codec.hpp"
#include "lipflow/eval.hpp"
#include "lipflow/inference.hpp"
#include "lipflow/io/container.hpp"
#include "lipflow/io/dataset.hpp"
#include "lipflow/io/png.hpp"
#include "lipflow/io/wav.hpp"
#include "lipflow/reference/oracles.hpp"
#include "lipflow/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lipflow;

namespace {

// One-line error reported by main.
struct CliError : std::runtime_error {
    std::string kind;
    CliError(std::string k, const std::string& msg) : std::runtime_error(msg), kind(std::move(k)) {}
};

void print_error(const std::string& kind, const std::string& msg) {
    std::cerr << json{{"error", kind}, {"message", msg}}.dump() << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Effective settings of a subcommand as a flat JSON object.
json effective_config(const CLI::App& app) {
    json out = json::object();
    std::istringstream in(app.config_to_str(true, false));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (line.empty() || line[0] == '#' || line[0] == '[' || eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

void write_manifest(const fs::path& dir, const CLI::App& app, json artifacts, json extra = json::object()) {
    fs::create_directories(dir);
    json m = {{"command", app.get_name()}, {"config", effective_config(app)}, {"artifacts", std::move(artifacts)}};
    m.update(extra);
    io::write_file((dir / "manifest.json").string(), m.dump(2));
}

VideoClip read_frames_dir(const std::string& dir, double fps) {
    if (!fs::is_directory(dir)) throw CliError("io", "not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw CliError("io", "no PNG frames in " + dir);
    VideoClip first = io::read_png(files[0].string());
    VideoClip v(static_cast<int>(files.size()), first.height, first.width, fps);
    for (std::size_t t = 0; t < files.size(); ++t) {
        const VideoClip f = t == 0 ? first : io::read_png(files[t].string());
        if (f.height != v.height || f.width != v.width)
            throw CliError("io", "frame size mismatch: " + files[t].string());
        std::copy(f.pixels.begin(), f.pixels.end(), v.frame(static_cast<int>(t)));
    }
    return v;
}

void write_frames_dir(const fs::path& dir, const VideoClip& v) {
    fs::create_directories(dir);
    for (int t = 0; t < v.frames; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", t);
        io::write_png((dir / name).string(), v, t);
    }
}

world::PixelBox parse_box(const std::string& s) {
    world::PixelBox b;
    if (std::sscanf(s.c_str(), "%d,%d,%d,%d", &b.y0, &b.y1, &b.x0, &b.x1) != 4 || b.area() <= 0)
        throw CliError("invalid_argument", "mouth box must be y0,y1,x0,x1 with positive area: " + s);
    return b;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(std::stod(item));
    return out;
}

json plan_json(const infer::WindowPlan& plan) {
    json a = json::array();
    for (const auto& w : plan) a.push_back({w.start, w.end});
    return a;
}

infer::WindowPlan plan_from_json(const json& a) {
    infer::WindowPlan plan;
    for (const auto& w : a) plan.push_back({w.at(0).get<int>(), w.at(1).get<int>()});
    return plan;
}

json number_or_string(double x) { return std::isfinite(x) ? json(x) : json(std::to_string(x)); }

audio::FeatureStats read_stats(const std::string& path) {
    const json j = json::parse(io::read_file(path));
    audio::FeatureStats s;
    j.at("mean").get_to(s.mean);
    j.at("stddev").get_to(s.stddev);
    return s;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    std::string out;
    int count = 16;
    std::uint64_t seed = 0;
    io::WorldSettings world{48, 16.0, 32, 32, 4, 16000};
    int tokens_per_frame = 2, audio_dim = 16;
    bool filter = false;
    double min_sync_c = 0.5, max_sync_d = 1.0;
};

void add_world_options(CLI::App* c, io::WorldSettings& w) {
    c->add_option("--frames", w.frames, "frames per clip")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--fps", w.fps, "frame rate")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--height", w.height, "frame height")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--width", w.width, "frame width")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--patch", w.patch, "codec patch size")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--sample-rate", w.sample_rate, "audio sample rate")->capture_default_str();
}

void run_gen_data(const CLI::App& app, const GenDataOptions& o) {
    auto samples = io::make_triplets(o.seed, o.count, o.world);
    json funnel = nullptr;
    if (o.filter) {
        world::FilterResult r = world::filter_pool(samples, o.min_sync_c, o.max_sync_d);
        funnel = {{"input", r.report.input}, {"after_sync_c", r.report.after_sync_c},
                  {"after_sync_d", r.report.after_sync_d}};
        samples = std::move(r.kept);
        if (samples.empty()) throw CliError("empty_dataset", "filtering removed every clip");
    }
    io::Dataset d;
    d.settings = o.world;
    d.stats = io::feature_stats(samples, o.tokens_per_frame, o.audio_dim);
    d.samples = std::move(samples);
    io::save_dataset(o.out, d);
    json extra = {{"clips", d.samples.size()}};
    if (!funnel.is_null()) extra["funnel"] = funnel;
    write_manifest(fs::path(o.out) / "run", app, {"../manifest.json"}, extra);
    std::cout << json{{"out", o.out}, {"clips", d.samples.size()}, {"funnel", funnel}}.dump() << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string data, out, resume;
    dit::DenoiserConfig model;
    train::TrainConfig train;
    std::string face_mode = "sum";
    int init_seed = 7;
};

void run_train(const CLI::App& app, TrainOptions o) {
    const io::Dataset d = io::load_dataset(o.data);
    o.model.patch = d.settings.patch;
    o.model.validate();
    if (o.face_mode == "alternate") o.train.face_mode = train::FaceMode::alternate;
    else if (o.face_mode != "sum") throw CliError("invalid_argument", "face mode must be sum or alternate");
    std::vector<train::TrainingExample> data;
    for (const auto& s : d.samples) data.push_back(train::make_example(s, o.model, &d.stats));

    fs::create_directories(o.out);
    io::write_file((fs::path(o.out) / "feature_stats.json").string(),
                   json{{"mean", d.stats.mean}, {"stddev", d.stats.stddev}}.dump());
    train::LoopOptions lo;
    lo.out_dir = o.out;
    if (!o.resume.empty()) lo.resume_from = o.resume;
    lo.on_log = [](const train::MetricsRow& r) {
        std::cout << json{{"step", r.step}, {"loss_joint", r.loss_joint}, {"loss_face", r.loss_face},
                          {"grad_norm", r.grad_norm}}.dump()
                  << std::endl;
    };
    const auto t0 = std::chrono::steady_clock::now();
    const train::TrainResult res = train::train_loop(data, o.train, dit::init_params<float>(o.model, o.init_seed), lo);
    write_manifest(o.out, app, {"final.lfp", "metrics.csv", "feature_stats.json"},
                   {{"model", o.model},
                    {"parameters", dit::parameter_count(res.params)},
                    {"dataset", fs::absolute(o.data).string()},
                    {"wall_seconds", seconds_since(t0)}});
}

// ---------------------------------------------------------------------------
// infer / bench

struct GenerationOptions {
    std::string checkpoint, stats, audio, ref_image, ref_video, text, mouth_box;
    int frames = 0;
    double fps = 16.0;
    infer::SamplerConfig sampler;
    std::string cfg_mode = "normalized";
    int hybrid_n = -1;
};

void add_generation_options(CLI::App* c, GenerationOptions& g) {
    c->add_option("--checkpoint", g.checkpoint, "model parameters (.lfp)")->required();
    c->add_option("--stats", g.stats, "feature statistics JSON (default: next to the checkpoint)");
    c->add_option("--audio", g.audio, "driving audio (WAV)")->required();
    c->add_option("--ref-image", g.ref_image, "reference image (PNG), animation mode");
    c->add_option("--ref-video", g.ref_video, "source video frame directory, editing mode");
    c->add_option("--mouth-box", g.mouth_box, "editing mask box y0,y1,x0,x1");
    c->add_option("--text", g.text, "text tag (empty = null prompt)");
    c->add_option("--frames", g.frames, "frames to generate (0 = audio length)")->capture_default_str();
    c->add_option("--fps", g.fps, "frame rate")->capture_default_str();
    c->add_option("--window", g.sampler.window, "window length f")->capture_default_str();
    c->add_option("--overlap", g.sampler.overlap, "window overlap o")->capture_default_str();
    c->add_option("--steps", g.sampler.steps, "denoising steps")->capture_default_str();
    c->add_option("--cfg-audio", g.sampler.cfg_audio, "audio guidance weight")->capture_default_str();
    c->add_option("--cfg-text", g.sampler.cfg_text, "text guidance weight")->capture_default_str();
    c->add_option("--cfg-mode", g.cfg_mode, "normalized or literal")->capture_default_str();
    c->add_option("--hybrid-n", g.hybrid_n, "steps conditioned on the source video (-1 = no hybrid)")
        ->capture_default_str();
    c->add_option("--seed", g.sampler.seed, "noise seed")->capture_default_str();
}

struct Generation {
    dit::ModelParams<float> params;
    audio::AudioTokens tokens;
    AudioSignal audio;
    infer::LatentShape shape;
    infer::ConditionProvider<float> conds, image_conds;
    bool hybrid = false;
    int frames = 0, patch = 4;
    infer::SamplerConfig sampler;
};

Generation prepare_generation(const GenerationOptions& g) {
    Generation out;
    if (!fs::exists(g.checkpoint)) throw CliError("missing_checkpoint", "checkpoint not found: " + g.checkpoint);
    out.params = load_params<float>(g.checkpoint);
    const dit::DenoiserConfig& mc = out.params.config;
    out.patch = mc.patch;
    const std::string stats_path =
        g.stats.empty() ? (fs::path(g.checkpoint).parent_path() / "feature_stats.json").string() : g.stats;
    const audio::FeatureStats stats = read_stats(stats_path);
    out.audio = io::read_wav(g.audio);
    out.frames = g.frames > 0 ? g.frames : world::frames_covered(out.audio, g.fps);
    if (out.frames < 1) throw CliError("invalid_argument", "audio is shorter than one frame");
    out.tokens = audio::featurize(out.audio, g.fps, out.frames, mc.tokens_per_frame, mc.audio_dim, &stats);

    if (g.ref_image.empty() == g.ref_video.empty())
        throw CliError("invalid_argument", "exactly one of --ref-image and --ref-video is required");
    const std::optional<int> text = g.text.empty() ? std::nullopt : std::optional<int>(world::tag_index(g.text));
    VideoClip ref;
    if (!g.ref_image.empty()) {
        if (g.hybrid_n >= 0) throw CliError("invalid_argument", "--hybrid-n needs --ref-video");
        ref = io::read_png(g.ref_image);
        out.conds = infer::animation_provider<float>(ref, text, out.patch);
    } else {
        const VideoClip src = read_frames_dir(g.ref_video, g.fps);
        if (src.frames < out.frames) throw CliError("invalid_argument", "source video is shorter than --frames");
        if (g.mouth_box.empty()) throw CliError("invalid_argument", "editing mode needs --mouth-box");
        ref = src;
        out.conds = infer::editing_provider<float>(src, parse_box(g.mouth_box), text, out.patch);
        out.image_conds = infer::animation_provider<float>(src, text, out.patch);
        out.hybrid = g.hybrid_n >= 0;
    }
    if (ref.height % out.patch || ref.width % out.patch)
        throw CliError("invalid_argument", "reference size is not divisible by the model patch");
    out.shape = {mc.latent_channels(), ref.height / out.patch, ref.width / out.patch, out.patch};

    out.sampler = g.sampler;
    if (g.cfg_mode == "literal") out.sampler.cfg_mode = infer::CfgMode::literal;
    else if (g.cfg_mode != "normalized") throw CliError("invalid_argument", "cfg mode must be normalized or literal");
    out.sampler.window = std::min(out.sampler.window, out.frames);
    if (out.sampler.overlap >= out.sampler.window) out.sampler.overlap = 0;
    out.sampler.hybrid_switch = std::max(g.hybrid_n, 0);
    out.sampler.validate();
    return out;
}

VideoClip run_generation(infer::VelocityModel<float>& model, const Generation& gen, double fps) {
    const LatentVideo<float> z =
        gen.hybrid ? infer::hybrid_sample(model, gen.conds, gen.image_conds, gen.tokens, gen.frames, gen.shape,
                                          gen.sampler)
                   : infer::blf_sample(model, gen.conds, gen.tokens, gen.frames, gen.shape, gen.sampler);
    return codec::clamp_frames(codec::decode(z, gen.patch, fps));
}

struct InferOptions {
    GenerationOptions gen;
    double cache_alpha = 0.0;
    bool color_unify = false;
    std::string out;
};

void run_infer(const CLI::App& app, const InferOptions& o) {
    const Generation gen = prepare_generation(o.gen);
    infer::DiTVelocity<float> model(gen.params, o.cache_alpha);
    const auto t0 = std::chrono::steady_clock::now();
    VideoClip video = run_generation(model, gen, o.gen.fps);
    const double secs = seconds_since(t0);
    if (o.color_unify) video = infer::color_unify(video, gen.sampler.window);

    const fs::path out(o.out);
    write_frames_dir(out / "frames", video);
    io::write_apng((out / "preview.png").string(), video);
    const infer::WindowPlan plan = infer::plan_windows(gen.frames, gen.sampler.window, gen.sampler.overlap);
    const std::vector<int> seams = infer::seam_indices(plan, gen.frames);
    const infer::CacheStats& cs = model.stats();
    const json metrics = {
        {"frames", gen.frames},
        {"windows", plan_json(plan)},
        {"seams", seams},
        {"seam_gap_ratio", number_or_string(eval::seam_gap_ratio(video, seams))},
        {"cache",
         {{"alpha", o.cache_alpha},
          {"calls", cs.calls},
          {"skipped", cs.skipped},
          {"skip_rate", cs.skip_rate()},
          {"calls_per_step", cs.calls_per_step},
          {"skipped_per_step", cs.skipped_per_step}}},
        {"wall_seconds", secs}};
    io::write_file((out / "metrics.json").string(), metrics.dump(2));
    write_manifest(out, app, {"frames/", "preview.png", "metrics.json"});
    std::cout << json{{"out", o.out}, {"frames", gen.frames}, {"skip_rate", cs.skip_rate()}, {"wall_seconds", secs}}
                     .dump()
              << "\n";
}

struct BenchOptions {
    GenerationOptions gen;
    std::string alphas = "0,0.05,0.1,0.2,0.4";
    std::string out;
};

double psnr(const VideoClip& a, const VideoClip& b) {
    double se = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) se += std::pow(double(a.pixels[i]) - b.pixels[i], 2);
    const double mse = se / static_cast<double>(a.pixels.size());
    return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

struct DirectModel : infer::VelocityModel<float> {
    const dit::ModelParams<float>& p;
    long calls = 0;
    explicit DirectModel(const dit::ModelParams<float>& q) : p(q) {}
    LatentVideo<float> predict(const dit::DenoiseInput<float>& in, const infer::CallSite&) override {
        ++calls;
        return dit::forward(p, in);
    }
};

void run_bench(const CLI::App& app, const BenchOptions& o) {
    const Generation gen = prepare_generation(o.gen);
    std::ostringstream csv;
    csv << "alpha,wall_seconds,calls,skipped,skip_rate,psnr_db\n";
    auto row = [&](const std::string& alpha, double secs, long calls, long skipped, double q) {
        char line[256];
        std::snprintf(line, sizeof line, "%s,%.4f,%ld,%ld,%.6f,%s\n", alpha.c_str(), secs, calls, skipped,
                      calls ? double(skipped) / calls : 0.0, std::isfinite(q) ? std::to_string(q).c_str() : "inf");
        csv << line;
        std::cout << line << std::flush;
    };
    DirectModel direct(gen.params);
    auto t0 = std::chrono::steady_clock::now();
    const VideoClip base = run_generation(direct, gen, o.gen.fps);
    row("off", seconds_since(t0), direct.calls, 0, std::numeric_limits<double>::infinity());
    for (double alpha : parse_list(o.alphas)) {
        if (alpha < 0.0) throw CliError("invalid_argument", "alphas must be >= 0");
        infer::DiTVelocity<float> model(gen.params, alpha);
        t0 = std::chrono::steady_clock::now();
        const VideoClip v = run_generation(model, gen, o.gen.fps);
        row(std::to_string(alpha), seconds_since(t0), model.stats().calls, model.stats().skipped, psnr(v, base));
    }
    const fs::path out(o.out);
    fs::create_directories(out);
    io::write_file((out / "bench.csv").string(), csv.str());
    write_manifest(out, app, {"bench.csv"});
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string dataset, runs, out;
    int clip = -1;
};

eval::EvalReport eval_clip(const io::Dataset& d, std::size_t i, const std::string& runs) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "clip_%04zu", i);
    const world::TripletSample& s = d.samples.at(i);
    VideoClip video = s.video;
    infer::WindowPlan plan;
    if (!runs.empty()) {
        const fs::path run = fs::path(runs) / stem;
        video = read_frames_dir((run / "frames").string(), s.video.fps);
        if (fs::exists(run / "metrics.json"))
            plan = plan_from_json(json::parse(io::read_file((run / "metrics.json").string())).at("windows"));
    }
    return eval::evaluate(video, s.audio, s.video.slice(0, 1), s.scene, plan);
}

void run_eval(const CLI::App& app, const EvalOptions& o) {
    const io::Dataset d = io::load_dataset(o.dataset);
    std::string text;
    if (o.clip >= 0) {
        if (static_cast<std::size_t>(o.clip) >= d.samples.size())
            throw CliError("invalid_argument", "clip out of range");
        text = eval::report_json(eval_clip(d, o.clip, o.runs)).dump(2) + "\n";
    } else {
        text = eval::csv_header() + "\n";
        for (std::size_t i = 0; i < d.samples.size(); ++i) {
            char stem[32];
            std::snprintf(stem, sizeof stem, "clip_%04zu", i);
            text += eval::csv_row(stem, eval_clip(d, i, o.runs)) + "\n";
        }
    }
    if (o.out.empty()) std::cout << text;
    else io::write_file(o.out, text);
}

// ---------------------------------------------------------------------------
// oracle

struct OracleOptions {
    int l = 10, f = 4, o = 2, steps = 10, dim = 6;
    std::uint64_t seed = 0;
    std::string out;
};

void run_blf_affine(const OracleOptions& o) {
    if (o.f < 1 || o.o < 0 || o.o >= o.f || o.o == 1 || o.l < 1 || o.steps < 1 || o.dim < 1)
        throw CliError("invalid_argument", "blf-affine: need l >= 1, f >= 1, o in {0} or [2, f), steps >= 1, dim >= 1");
    const reference::AffineField field = reference::random_affine(o.dim, o.seed);
    std::mt19937_64 rng(o.seed + 1);
    std::normal_distribution<double> nd;
    std::vector<std::vector<double>> z(o.l, std::vector<double>(o.dim));
    for (auto& frame : z)
        for (double& x : frame) x = nd(rng);
    const json j = {{"seed", o.seed},
                    {"l", o.l},
                    {"f", o.f},
                    {"o", o.o},
                    {"steps", o.steps},
                    {"dim", o.dim},
                    {"A", field.A},
                    {"b", field.b},
                    {"init", z},
                    {"result", reference::blf_affine(z, o.f, o.o, o.steps, field)}};
    const std::string text = j.dump() + "\n";
    if (o.out.empty()) std::cout << text;
    else io::write_file(o.out, text);
}

std::string config_path;

void add_common(CLI::App* c) {
    c->add_option("--config", config_path, "flat key=value config file; command-line flags take precedence");
    c->add_flag("--print-config", "print the effective configuration and exit");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Append `--key=value` for every config file entry whose flag is absent
/// from the command line.
std::vector<std::string> merge_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw CliError("io", "cannot read config file " + path);
    std::vector<std::string> extra;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CliError("config", path + ":" + std::to_string(n) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.rfind("--", 0) != 0) key = "--" + key;
        const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
            return a == key || a.rfind(key + "=", 0) == 0;
        });
        if (!given) extra.push_back(key + "=" + value);
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lipflow: audio-driven talking-head generation on a synthetic world"};
    app.require_subcommand(1);

    GenDataOptions gd;
    auto* c_gen = app.add_subcommand("gen-data", "render a synthetic dataset");
    c_gen->add_option("--out", gd.out, "dataset directory")->required();
    c_gen->add_option("--count", gd.count, "number of clips")->capture_default_str()->check(CLI::PositiveNumber);
    c_gen->add_option("--seed", gd.seed, "first clip seed")->capture_default_str();
    add_world_options(c_gen, gd.world);
    c_gen->add_option("--tokens-per-frame", gd.tokens_per_frame, "audio tokens per frame")->capture_default_str();
    c_gen->add_option("--audio-dim", gd.audio_dim, "audio feature bands")->capture_default_str();
    c_gen->add_flag("--filter", gd.filter, "apply the sync funnel");
    c_gen->add_option("--min-sync-c", gd.min_sync_c, "funnel confidence threshold")->capture_default_str();
    c_gen->add_option("--max-sync-d", gd.max_sync_d, "funnel offset threshold")->capture_default_str();
    add_common(c_gen);

    TrainOptions tr;
    auto* c_train = app.add_subcommand("train", "train the denoiser");
    c_train->add_option("--data", tr.data, "dataset directory")->required();
    c_train->add_option("--out", tr.out, "run directory")->required();
    c_train->add_option("--resume", tr.resume, "checkpoint to resume from");
    c_train->add_option("--width", tr.model.width, "model width")->capture_default_str();
    c_train->add_option("--depth", tr.model.depth, "transformer blocks")->capture_default_str();
    c_train->add_option("--heads", tr.model.heads, "attention heads")->capture_default_str();
    c_train->add_option("--mlp-ratio", tr.model.mlp_ratio, "MLP expansion")->capture_default_str();
    c_train->add_option("--audio-layers", tr.model.audio_layers, "blocks with audio attention (default all)")
        ->delimiter(',');
    c_train->add_option("--tokens-per-frame", tr.model.tokens_per_frame, "audio tokens per frame")
        ->capture_default_str();
    c_train->add_option("--audio-dim", tr.model.audio_dim, "audio feature bands")->capture_default_str();
    c_train->add_option("--init-seed", tr.init_seed, "parameter init seed")->capture_default_str();
    c_train->add_option("--stage", tr.train.stage, "1 = animation only, 2 = animation and editing")
        ->capture_default_str();
    c_train->add_option("--steps", tr.train.steps, "optimizer steps")->capture_default_str();
    c_train->add_option("--batch-size", tr.train.batch_size, "clips per step")->capture_default_str();
    c_train->add_option("--clip-frames", tr.train.clip_frames, "crop length (0 = whole clip)")->capture_default_str();
    c_train->add_option("--lr", tr.train.lr, "learning rate")->capture_default_str();
    c_train->add_option("--weight-decay", tr.train.weight_decay, "decoupled weight decay")->capture_default_str();
    c_train->add_option("--grad-clip", tr.train.grad_clip, "global norm clip (0 = off)")->capture_default_str();
    c_train->add_option("--w1", tr.train.w1, "loss weight inside the task mask")->capture_default_str();
    c_train->add_option("--w2", tr.train.w2, "loss weight outside the task mask")->capture_default_str();
    c_train->add_option("--p-mask", tr.train.p_mask, "face loss gate probability")->capture_default_str();
    c_train->add_option("--dropout", tr.train.dropout_p, "condition dropout probability")->capture_default_str();
    c_train->add_option("--lambda-face", tr.train.lambda_face, "face loss weight")->capture_default_str();
    c_train->add_option("--face-mode", tr.face_mode, "sum or alternate")->capture_default_str();
    c_train->add_option("--animation-weight", tr.train.animation_weight, "stage 2 task weight")->capture_default_str();
    c_train->add_option("--editing-weight", tr.train.editing_weight, "stage 2 task weight")->capture_default_str();
    c_train->add_option("--log-interval", tr.train.log_interval, "steps per metrics row")->capture_default_str();
    c_train->add_option("--checkpoint-interval", tr.train.checkpoint_interval, "steps per checkpoint (0 = final only)")
        ->capture_default_str();
    c_train->add_option("--seed", tr.train.seed, "training seed")->capture_default_str();
    add_common(c_train);

    InferOptions inf;
    auto* c_infer = app.add_subcommand("infer", "generate a video from audio");
    add_generation_options(c_infer, inf.gen);
    c_infer->add_option("--cache-alpha", inf.cache_alpha, "residual cache threshold (0 = off)")->capture_default_str();
    c_infer->add_flag("--color-unify", inf.color_unify, "match frame colors to the first window");
    c_infer->add_option("--out", inf.out, "run directory")->required();
    add_common(c_infer);

    EvalOptions ev;
    auto* c_eval = app.add_subcommand("eval", "score generated or ground-truth clips");
    c_eval->add_option("--dataset", ev.dataset, "dataset directory with audio, scenes and references")->required();
    c_eval->add_option("--runs", ev.runs, "directory of per-clip infer runs named clip_NNNN (default ground truth)");
    c_eval->add_option("--clip", ev.clip, "single clip index (JSON report); default all clips (CSV)");
    c_eval->add_option("--out", ev.out, "output file (default stdout)");
    add_common(c_eval);

    BenchOptions be;
    auto* c_bench = app.add_subcommand("bench", "sweep the residual cache threshold");
    add_generation_options(c_bench, be.gen);
    c_bench->add_option("--alphas", be.alphas, "comma-separated thresholds")->capture_default_str();
    c_bench->add_option("--out", be.out, "run directory")->required();
    add_common(c_bench);

    OracleOptions orc;
    auto* c_oracle = app.add_subcommand("oracle", "print reference values");
    c_oracle->require_subcommand(1);
    auto* o_win = c_oracle->add_subcommand("windows", "window trace: one 'start end' line per window");
    o_win->add_option("l", orc.l)->required();
    o_win->add_option("f", orc.f)->required();
    o_win->add_option("o", orc.o)->required();
    auto* o_fuse = c_oracle->add_subcommand("fuse", "fusion weights for overlap o");
    o_fuse->add_option("o", orc.o)->required();
    auto* o_blf = c_oracle->add_subcommand("blf-affine", "BLF reference under a random affine field (JSON)");
    o_blf->add_option("--seed", orc.seed)->capture_default_str();
    o_blf->add_option("--frames", orc.l)->capture_default_str();
    o_blf->add_option("--window", orc.f)->capture_default_str();
    o_blf->add_option("--overlap", orc.o)->capture_default_str();
    o_blf->add_option("--steps", orc.steps)->capture_default_str();
    o_blf->add_option("--dim", orc.dim)->capture_default_str();
    o_blf->add_option("--out", orc.out, "output file (default stdout)");

    try {
        std::vector<std::string> args = merge_config(std::vector<std::string>(argv, argv + argc));
        std::reverse(args.begin(), args.end());
        args.pop_back();
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    } catch (const CliError& e) {
        print_error(e.kind, e.what());
        return 2;
    }

    try {
        for (CLI::App* c : {c_gen, c_train, c_infer, c_eval, c_bench}) {
            if (c->parsed() && c->get_option("--print-config")->as<bool>()) {
                std::cout << c->config_to_str(true, false);
                return 0;
            }
        }
        if (c_gen->parsed()) run_gen_data(*c_gen, gd);
        else if (c_train->parsed()) run_train(*c_train, tr);
        else if (c_infer->parsed()) run_infer(*c_infer, inf);
        else if (c_eval->parsed()) run_eval(*c_eval, ev);
        else if (c_bench->parsed()) run_bench(*c_bench, be);
        else if (o_win->parsed()) {
            if (orc.f < 1 || orc.o < 0 || orc.o >= orc.f || orc.l < 1)
                throw CliError("invalid_argument", "windows: need l >= 1, f >= 1, 0 <= o < f");
            for (const auto& [s, e] : reference::window_trace(orc.l, orc.f, orc.o)) std::cout << s << " " << e << "\n";
        } else if (o_fuse->parsed()) {
            if (orc.o < 2) throw CliError("invalid_argument", "fuse: overlap must be >= 2");
            const auto w = reference::fuse_weights(orc.o);
            for (std::size_t i = 0; i < w.size(); ++i) std::printf("%s%.17g", i ? " " : "", w[i]);
            std::printf("\n");
        } else if (o_blf->parsed()) {
            run_blf_affine(orc);
        }
    } catch (const CliError& e) {
        print_error(e.kind, e.what());
        return 1;
    } catch (const DecodeError& e) {
        print_error("decode", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        print_error("invalid_argument", e.what());
        return 1;
    } catch (const json::exception& e) {
        print_error("json", e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("runtime", e.what());
        return 1;
    }
    return 0;
}
