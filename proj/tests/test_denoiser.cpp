#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "lipflow/checkpoint.hpp"
#include "lipflow/denoiser.hpp"
#include "lipflow/training.hpp"

using namespace lipflow;
using testutil::random_latent;
using testutil::tiny_config;

namespace {

template <class T>
struct Inputs {
    dit::DenoiseInput<T> in;
    codec::ConditionInputs<T> cond;
    audio::AudioTokens tokens;
};

template <class T>
Inputs<T> make_inputs(const dit::DenoiserConfig& c, int frames, int h, int w, std::uint64_t seed) {
    Inputs<T> x;
    const int C = c.latent_channels();
    x.cond.cond_latent = random_latent<T>(frames, C, h, w, seed + 1, c.patch);
    x.cond.cond_mask = testutil::random_mask<T>(frames, h, w, seed + 2);
    x.tokens = testutil::random_tokens(c.tokens_per_frame * frames, c.audio_dim, c.tokens_per_frame, seed + 3);
    x.in.z = random_latent<T>(frames, C, h, w, seed, c.patch);
    x.in.t = 0.37;
    x.in.text = 1;
    return x;
}

template <class T>
void wire(Inputs<T>& x) {
    x.in.cond = &x.cond;
    x.in.audio = &x.tokens;
}

}  // namespace

TEST(Denoiser, OutputShapeMatchesInput) {
    const auto c = tiny_config();
    const auto p = dit::init_params<float>(c, 1, false);
    for (auto [t, h, w] : {std::tuple{1, 2, 2}, std::tuple{3, 4, 2}, std::tuple{2, 1, 5}}) {
        auto x = make_inputs<float>(c, t, h, w, 9);
        wire(x);
        const auto v = dit::forward(p, x.in);
        EXPECT_TRUE(v.same_shape(x.in.z));
    }
}

TEST(Denoiser, ZeroOutputProjectionGivesZero) {
    const auto c = tiny_config();
    auto p = dit::init_params<float>(c, 2, false);
    p.out_proj.W.setZero();
    p.out_proj.b.setZero();
    auto x = make_inputs<float>(c, 2, 3, 3, 4);
    wire(x);
    for (float v : dit::forward(p, x.in).data) EXPECT_EQ(v, 0.0f);
}

TEST(Denoiser, ForwardIsPure) {
    const auto c = tiny_config();
    const auto p = dit::init_params<float>(c, 3, false);
    auto x = make_inputs<float>(c, 2, 3, 3, 5);
    wire(x);
    EXPECT_EQ(dit::forward(p, x.in).data, dit::forward(p, x.in).data);
}

TEST(Denoiser, NullConditionsEqualExplicitSubstitutes) {
    const auto c = tiny_config();
    const auto p = dit::init_params<float>(c, 4, false);
    auto x = make_inputs<float>(c, 2, 2, 2, 6);
    x.in.cond = nullptr;
    x.in.audio = nullptr;
    x.in.text.reset();
    const auto v_null = dit::forward(p, x.in);
    // Explicit zero condition gives the same input channels.
    const auto zero = codec::null_condition<float>(2, c.latent_channels(), 2, 2, c.patch);
    x.in.cond = &zero;
    x.in.text = c.text_vocab;  // the null tag row
    EXPECT_EQ(dit::forward(p, x.in).data, v_null.data);
}

TEST(Denoiser, RejectsBadInputs) {
    const auto c = tiny_config();
    const auto p = dit::init_params<float>(c, 5, false);
    auto x = make_inputs<float>(c, 2, 2, 2, 7);
    wire(x);
    auto bad = x.in;
    bad.z.data[3] = std::nanf("");
    EXPECT_THROW(dit::forward(p, bad), std::invalid_argument);
    bad = x.in;
    bad.z = random_latent<float>(2, c.latent_channels() + 1, 2, 2, 1);
    EXPECT_THROW(dit::forward(p, bad), std::invalid_argument);
    auto short_audio = testutil::random_tokens(3, c.audio_dim, 2, 1);
    bad = x.in;
    bad.audio = &short_audio;
    EXPECT_THROW(dit::forward(p, bad), std::invalid_argument);
    bad = x.in;
    bad.text = c.text_vocab + 1;
    EXPECT_THROW(dit::forward(p, bad), std::invalid_argument);
}

TEST(Denoiser, ConfigValidation) {
    auto c = tiny_config();
    c.width = 18;  // not divisible by 2 * heads = 4
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.depth = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.audio_layers = {5};
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Denoiser, AudioLayerSubsetChangesParameterCount) {
    auto c = tiny_config(16, 3);
    const std::size_t all = dit::parameter_count(dit::zero_params<float>(c));
    c.audio_layers = {2};
    const std::size_t one = dit::parameter_count(dit::zero_params<float>(c));
    EXPECT_EQ(all - one, 2u * 4u * (16u * 16u + 16u));
}

// With self and text attention disabled, shifting the audio tokens together
// with the video frames (circularly) leaves the logits between matching
// (frame, audio token) pairs unchanged.
TEST(Denoiser, AudioShiftEquivarianceProbe) {
    auto c = tiny_config(16, 1, 2);
    const auto p = dit::init_params<double>(c, 11, false);
    const int T = 6, h = 2, w = 2, r = c.tokens_per_frame, s = 2;
    const int hw = h * w;
    auto x = make_inputs<double>(c, T, h, w, 12);
    x.in.cond = nullptr;
    x.in.audio = &x.tokens;
    // Roll frames by s and audio by r*s.
    auto rolled = x.in.z;
    for (int t = 0; t < T; ++t)
        std::copy(x.in.z.frame(t), x.in.z.frame(t) + x.in.z.frame_size(), rolled.frame((t + s) % T));
    auto tokens = x.tokens;
    const int La = x.tokens.length;
    for (int i = 0; i < La; ++i)
        for (int j = 0; j < c.audio_dim; ++j) tokens.at((i + r * s) % La, j) = x.tokens.at(i, j);

    std::vector<std::vector<Mat<double>>> la, lb;
    dit::ForwardOptions<double> oa{false, false, &la}, ob{false, false, &lb};
    dit::forward(p, x.in, nullptr, oa);
    auto y = x.in;
    y.z = rolled;
    y.audio = &tokens;
    dit::forward(p, y, nullptr, ob);
    // Pairs that do not wrap keep their relative offset.
    int checked = 0;
    for (int head = 0; head < c.heads; ++head)
        for (int t = 0; t + s < T; ++t)
            for (int i = 0; i < hw; ++i)
                for (int a = 0; a + r * s < La; ++a) {
                    const double before = la[0][head](t * hw + i, a);
                    const double after = lb[0][head]((t + s) * hw + i, a + r * s);
                    EXPECT_NEAR(before, after, 1e-6);
                    ++checked;
                }
    EXPECT_GT(checked, 100);
}

TEST(Checkpoint, RoundtripIsBitIdentical) {
    const auto c = tiny_config();
    const auto p = dit::init_params<float>(c, 21, false);
    const auto q = decode_params<float>(encode_params(p), &c);
    auto x = make_inputs<float>(c, 2, 2, 2, 22);
    wire(x);
    EXPECT_EQ(dit::forward(p, x.in).data, dit::forward(q, x.in).data);
}

TEST(Checkpoint, ConfigMismatchRejected) {
    const auto c = tiny_config();
    const std::string bytes = encode_params(dit::init_params<float>(c, 1));
    auto other = c;
    other.depth = 3;
    EXPECT_THROW(decode_params<float>(bytes, &other), std::invalid_argument);
}

TEST(Checkpoint, CorruptionReportsOffset) {
    const auto c = tiny_config();
    std::string bytes = encode_params(dit::init_params<float>(c, 1));
    std::string flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    try {
        decode_params<float>(flipped);
        FAIL() << "checksum mismatch not detected";
    } catch (const DecodeError& e) {
        EXPECT_EQ(e.offset(), bytes.size() - 4);
    }
    EXPECT_THROW(decode_params<float>(bytes.substr(0, bytes.size() - 9)), DecodeError);
    std::string magic = bytes;
    magic[0] = 'X';
    try {
        decode_params<float>(magic);
        FAIL();
    } catch (const DecodeError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

// Central-difference check of the composed training loss on a tiny model.
TEST(Denoiser, GradientCheckComposedLoss) {
    const testutil::GradCheckResult r = testutil::composed_loss_gradcheck(31);
    for (const std::string& f : r.failures) std::printf("  %s\n", f.c_str());
    EXPECT_GT(r.total, 100);
    EXPECT_GE(r.ok, 0.95 * r.total) << r.ok << "/" << r.total;
}
