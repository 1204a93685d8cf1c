#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"
#include "lipflow/io/dataset.hpp"
#include "lipflow/reference/oracles.hpp"
#include "lipflow/training.hpp"

using namespace lipflow;
using namespace lipflow::train;

namespace {

std::vector<double> as_double(const LatentVideo<double>& z) { return z.data; }

dit::DenoiserConfig small_model() {
    dit::DenoiserConfig c = testutil::tiny_config(16, 1, 2, 4);
    c.audio_dim = 16;
    return c;
}

std::vector<TrainingExample> small_data(int count, const dit::DenoiserConfig& c) {
    io::WorldSettings s;
    s.frames = 12;
    s.height = 16;
    s.width = 16;
    const auto triplets = io::make_triplets(100, count, s);
    const audio::FeatureStats st = io::feature_stats(triplets, c.tokens_per_frame, c.audio_dim);
    std::vector<TrainingExample> out;
    for (const auto& t : triplets) out.push_back(make_example(t, c, &st));
    return out;
}

TrainConfig small_train() {
    TrainConfig t;
    t.batch_size = 2;
    t.steps = 20;
    t.clip_frames = 8;
    t.log_interval = 5;
    t.seed = 7;
    return t;
}

bool params_equal(const dit::ModelParams<float>& a, const dit::ModelParams<float>& b) {
    return ::lipflow::detail::flatten(a) == ::lipflow::detail::flatten(b);
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("lipflow_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(FlowPath, InterpolateAndTarget) {
    LatentVideo<double> z0(1, 1, 1, 2), z1(1, 1, 1, 2);
    z0.data = {0.0, 2.0};
    z1.data = {1.0, -2.0};
    EXPECT_EQ(interpolate(z0, z1, 0.0).data, z0.data);
    EXPECT_EQ(interpolate(z0, z1, 1.0).data, z1.data);
    const auto mid = interpolate(z0, z1, 0.25);
    EXPECT_DOUBLE_EQ(mid.data[0], 0.25);
    EXPECT_DOUBLE_EQ(mid.data[1], 1.0);
    EXPECT_EQ(velocity_target(z0, z1).data, (std::vector<double>{1.0, -4.0}));
    EXPECT_THROW(interpolate(z0, z1, 1.5), std::invalid_argument);
}

// Along the straight path the target velocity is the time derivative.
TEST(FlowPath, TargetIsPathDerivative) {
    const auto z0 = testutil::random_latent<double>(2, 3, 2, 2, 1);
    const auto z1 = testutil::random_latent<double>(2, 3, 2, 2, 2);
    const auto v = velocity_target(z0, z1);
    for (double t : {0.1, 0.5, 0.9}) {
        const auto a = interpolate(z0, z1, t - 1e-4), b = interpolate(z0, z1, t + 1e-4);
        for (std::size_t i = 0; i < v.data.size(); ++i) EXPECT_NEAR((b.data[i] - a.data[i]) / 2e-4, v.data[i], 1e-8);
    }
}

TEST(LossJoint, MatchesReference) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = testutil::random_latent<double>(3, 4, 3, 5, seed);
        const auto q = testutil::random_latent<double>(3, 4, 3, 5, seed + 50);
        const auto m = testutil::random_mask<double>(3, 3, 5, seed + 99);
        const double got = loss_joint(p, q, m, 2.0, 0.5);
        const double want = reference::weighted_mse(as_double(p), as_double(q), m.data, 3, 4, 15, 2.0, 0.5);
        EXPECT_NEAR(got, want, 1e-12);
    }
}

TEST(LossJoint, EqualWeightsReduceToMse) {
    const auto p = testutil::random_latent<double>(2, 2, 2, 2, 3);
    const auto q = testutil::random_latent<double>(2, 2, 2, 2, 4);
    const auto m = testutil::random_mask<double>(2, 2, 2, 5);
    double mse = 0.0;
    for (std::size_t i = 0; i < p.data.size(); ++i) mse += std::pow(p.data[i] - q.data[i], 2);
    mse /= static_cast<double>(p.data.size());
    EXPECT_NEAR(loss_joint(p, q, m, 1.0, 1.0), mse, 1e-12);
    EXPECT_DOUBLE_EQ(loss_joint(p, p, m, 2.0, 1.0), 0.0);
}

TEST(LossJoint, GradientMatchesFiniteDifference) {
    auto p = testutil::random_latent<double>(2, 3, 2, 2, 6);
    const auto q = testutil::random_latent<double>(2, 3, 2, 2, 7);
    const auto m = testutil::random_mask<double>(2, 2, 2, 8);
    LatentVideo<double> g;
    loss_joint(p, q, m, 2.0, 1.0, &g);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double keep = p.data[i];
        p.data[i] = keep + 1e-6;
        const double up = loss_joint(p, q, m, 2.0, 1.0);
        p.data[i] = keep - 1e-6;
        const double down = loss_joint(p, q, m, 2.0, 1.0);
        p.data[i] = keep;
        EXPECT_NEAR((up - down) / 2e-6, g.data[i], 1e-7);
    }
}

TEST(LossJoint, RejectsBadMask) {
    const auto p = testutil::random_latent<double>(2, 3, 2, 2, 1);
    const auto m = testutil::random_mask<double>(2, 3, 2, 1);
    EXPECT_THROW(loss_joint(p, p, m, 1.0, 1.0), std::invalid_argument);
    const auto ok = testutil::random_mask<double>(2, 2, 2, 1);
    EXPECT_THROW(loss_joint(p, p, ok, -1.0, 1.0), std::invalid_argument);
}

TEST(LossFace, BranchesMatchReference) {
    const auto p = testutil::random_latent<double>(3, 4, 2, 3, 10);
    const auto q = testutil::random_latent<double>(3, 4, 2, 3, 11);
    const auto m = testutil::random_mask<double>(3, 2, 3, 12, 0.3);
    FaceLossStats st;
    const double lip = loss_face(p, q, m, 0.2, 0.5, nullptr, &st);
    EXPECT_NEAR(lip, reference::masked_mean(as_double(p), as_double(q), m.data, 3, 4, 6), 1e-12);
    const double full = loss_face(p, q, m, 0.7, 0.5, nullptr, &st);
    std::vector<double> ones(m.data.size(), 1.0);
    EXPECT_NEAR(full, reference::masked_mean(as_double(p), as_double(q), ones, 3, 4, 6), 1e-12);
    EXPECT_EQ(st.calls, 2);
    EXPECT_EQ(st.lip_branch, 1);
    EXPECT_EQ(st.empty_mask, 0);
}

TEST(LossFace, EmptyMaskReturnsZeroAndCounts) {
    const auto p = testutil::random_latent<double>(2, 2, 2, 2, 1);
    const auto q = testutil::random_latent<double>(2, 2, 2, 2, 2);
    const LatentMask<double> empty(2, 1, 2, 2);
    FaceLossStats st;
    LatentVideo<double> g;
    EXPECT_EQ(loss_face(p, q, empty, 0.0, 0.5, &g, &st), 0.0);
    EXPECT_EQ(st.empty_mask, 1);
    for (double v : g.data) EXPECT_EQ(v, 0.0);
}

TEST(LossFace, GateFrequencyFollowsProbability) {
    const auto p = testutil::random_latent<float>(1, 1, 1, 1, 1);
    const LatentMask<float> m(1, 1, 1, 1);
    for (double pm : {0.5, 0.2}) {
        FaceLossStats st;
        Rng rng(3);
        for (int i = 0; i < 10000; ++i) loss_face(p, p, m, uniform01(rng), pm, nullptr, &st);
        EXPECT_NEAR(static_cast<double>(st.lip_branch) / st.calls, pm, 0.02);
    }
}

TEST(ComposedLoss, TermsSelectComponents) {
    const auto p = testutil::random_latent<double>(2, 3, 2, 2, 1);
    const auto q = testutil::random_latent<double>(2, 3, 2, 2, 2);
    const auto tm = testutil::random_mask<double>(2, 2, 2, 3);
    const auto lm = testutil::random_mask<double>(2, 2, 2, 4);
    TrainConfig cfg;
    cfg.lambda_face = 0.5;
    LatentVideo<double> g;
    const LossParts both = composed_loss(p, q, tm, lm, 0.1, cfg, LossTerms::both, &g);
    EXPECT_NEAR(both.total, both.joint + 0.5 * both.face, 1e-12);
    EXPECT_NEAR(composed_loss(p, q, tm, lm, 0.1, cfg, LossTerms::joint_only, nullptr).total, both.joint, 1e-12);
    EXPECT_NEAR(composed_loss(p, q, tm, lm, 0.1, cfg, LossTerms::face_only, nullptr).total, 0.5 * both.face, 1e-12);
}

TEST(TrainConfig, ValidateRejects) {
    EXPECT_NO_THROW(TrainConfig{}.validate());
    TrainConfig c;
    c.p_mask = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.stage = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.animation_weight = c.editing_weight = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.log_interval = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

// First Adam step moves each parameter by about lr against its gradient sign.
TEST(Adam, FirstStepIsSignedLr) {
    const auto c = small_model();
    auto p = dit::init_params<float>(c, 1);
    const auto before = ::lipflow::detail::flatten(p);
    auto g = dit::init_params<float>(c, 2, false);
    const auto gf = ::lipflow::detail::flatten(g);
    AdamState<float> st(c);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    adam_update(p, g, st, cfg);
    const auto after = ::lipflow::detail::flatten(p);
    EXPECT_EQ(st.step, 1);
    for (std::size_t i = 0; i < after.size(); ++i) {
        if (std::abs(gf[i]) < 1e-4f) continue;
        EXPECT_NEAR(after[i] - before[i], gf[i] > 0 ? -1e-3 : 1e-3, 1e-6);
    }
}

TEST(TrainStep, DeterministicGivenSeed) {
    const auto c = small_model();
    const auto data = small_data(3, c);
    const TrainConfig cfg = small_train();
    const auto a = train_loop(data, cfg, dit::init_params<float>(c, 1));
    const auto b = train_loop(data, cfg, dit::init_params<float>(c, 1));
    EXPECT_TRUE(params_equal(a.params, b.params));
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].loss_joint, b.rows[i].loss_joint);
}

TEST(TrainStep, LossDecreasesOnFrozenBatch) {
    const auto c = small_model();
    const auto data = small_data(2, c);
    auto params = dit::init_params<float>(c, 3);
    AdamState<float> adam(c);
    TrainConfig cfg = small_train();
    cfg.dropout_p = 0.0;
    cfg.lr = 3e-3;
    const std::vector<const TrainingExample*> batch{&data[0], &data[1]};
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        Rng rng(42);  // same crops, t and noise every step
        const StepMetrics m = train_step(params, adam, batch, cfg, rng, step);
        ASSERT_TRUE(std::isfinite(m.loss_total));
        if (step == 0) first = m.loss_total;
        last = m.loss_total;
    }
    EXPECT_LT(last, 0.5 * first);
}

TEST(TrainStep, FullDropoutGivesNullInputs) {
    const auto c = small_model();
    const auto data = small_data(2, c);
    TrainConfig cfg = small_train();
    cfg.dropout_p = 1.0;
    cfg.steps = 5;
    int seen = 0;
    LoopOptions opt;
    opt.observer = [&](const dit::DenoiseInput<float>& in) {
        ++seen;
        EXPECT_EQ(in.cond, nullptr);
        EXPECT_EQ(in.audio, nullptr);
        EXPECT_FALSE(in.text.has_value());
    };
    train_loop(data, cfg, dit::init_params<float>(c, 1), opt);
    EXPECT_EQ(seen, cfg.steps * cfg.batch_size);
}

TEST(TrainStep, ZeroDropoutKeepsInputs) {
    const auto c = small_model();
    const auto data = small_data(2, c);
    TrainConfig cfg = small_train();
    cfg.dropout_p = 0.0;
    cfg.steps = 3;
    LoopOptions opt;
    opt.observer = [&](const dit::DenoiseInput<float>& in) {
        EXPECT_NE(in.cond, nullptr);
        EXPECT_NE(in.audio, nullptr);
        EXPECT_TRUE(in.text.has_value());
        EXPECT_EQ(in.z.frames, cfg.clip_frames);
    };
    train_loop(data, cfg, dit::init_params<float>(c, 1), opt);
}

TEST(TrainStep, StageOneNeverSamplesEditing) {
    const auto c = small_model();
    const auto data = small_data(2, c);
    TrainConfig cfg = small_train();
    cfg.stage = 1;
    cfg.editing_weight = 10.0;
    int editing = 0;
    LoopOptions opt;
    opt.observer = [&](const dit::DenoiseInput<float>& in) {
        if (in.cond && in.cond->task == codec::Task::editing) ++editing;
    };
    const auto r = train_loop(data, cfg, dit::init_params<float>(c, 1), opt);
    EXPECT_EQ(r.editing_samples, 0);
    EXPECT_EQ(editing, 0);
    cfg.stage = 2;
    EXPECT_GT(train_loop(data, cfg, dit::init_params<float>(c, 1)).editing_samples, 0);
}

TEST(TrainStep, NonFiniteParametersThrow) {
    const auto c = small_model();
    const auto data = small_data(1, c);
    auto params = dit::init_params<float>(c, 1);
    params.out_proj.b(0, 0) = std::numeric_limits<float>::quiet_NaN();
    AdamState<float> adam(c);
    Rng rng(1);
    const std::vector<const TrainingExample*> batch{&data[0]};
    EXPECT_THROW(train_step(params, adam, batch, small_train(), rng, 0), std::runtime_error);
}

TEST(TrainLoop, WritesMetricsAndCheckpoints) {
    const auto c = small_model();
    const auto data = small_data(2, c);
    TrainConfig cfg = small_train();
    cfg.checkpoint_interval = 10;
    const auto dir = temp_dir("metrics");
    LoopOptions opt;
    opt.out_dir = dir.string();
    const auto r = train_loop(data, cfg, dit::init_params<float>(c, 1), opt);
    EXPECT_EQ(r.rows.size(), static_cast<std::size_t>(cfg.steps / cfg.log_interval));
    std::ifstream csv(dir / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,loss_joint,loss_face,grad_norm");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 4);
    EXPECT_TRUE(std::filesystem::exists(dir / "step_000010.lfp"));
    EXPECT_TRUE(std::filesystem::exists(dir / "step_000010.lfp.state"));
    EXPECT_TRUE(std::filesystem::exists(dir / "final.lfp"));
    EXPECT_TRUE(params_equal(load_params<float>(r.final_checkpoint, &c), r.params));
}

TEST(TrainLoop, ResumeMatchesUninterruptedRun) {
    const auto c = small_model();
    const auto data = small_data(3, c);
    TrainConfig cfg = small_train();
    cfg.checkpoint_interval = 10;
    const auto dir_a = temp_dir("resume_a"), dir_b = temp_dir("resume_b");
    LoopOptions full;
    full.out_dir = dir_a.string();
    const auto straight = train_loop(data, cfg, dit::init_params<float>(c, 1), full);

    LoopOptions resumed;
    resumed.out_dir = dir_b.string();
    resumed.resume_from = (dir_a / "step_000010.lfp").string();
    const auto cont = train_loop(data, cfg, dit::init_params<float>(c, 99), resumed);
    EXPECT_TRUE(params_equal(straight.params, cont.params));
    ASSERT_EQ(cont.rows.size(), 2u);
    EXPECT_EQ(cont.rows[0].step, 15);
    EXPECT_EQ(cont.rows[0].loss_joint, straight.rows[2].loss_joint);
}

TEST(TrainLoop, ResumeRejectsOtherConfig) {
    const auto c = small_model();
    const auto data = small_data(1, c);
    TrainConfig cfg = small_train();
    cfg.steps = 2;
    const auto dir = temp_dir("resume_bad");
    LoopOptions opt;
    opt.out_dir = dir.string();
    const auto r = train_loop(data, cfg, dit::init_params<float>(c, 1), opt);
    auto other = c;
    other.width = 24;
    LoopOptions res;
    res.resume_from = r.final_checkpoint;
    EXPECT_THROW(train_loop(data, cfg, dit::init_params<float>(other, 1), res), std::invalid_argument);
}
