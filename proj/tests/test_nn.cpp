#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pseudocl/nn.hpp"

using namespace pseudocl;

namespace {

std::vector<double> v(std::initializer_list<double> x) { return x; }

Model zero_model(std::size_t in, std::vector<std::size_t> hidden, std::size_t out) {
    auto m = Model::create(in, hidden, out, 1);
    for (auto& l : m.hidden) {
        std::fill(l.weights.values().begin(), l.weights.values().end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    std::fill(m.head.weights.values().begin(), m.head.weights.values().end(), 0.0);
    std::fill(m.head.bias.begin(), m.head.bias.end(), 0.0);
    return m;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroLogits) {
    const auto m = zero_model(3, {4, 4}, 5);
    for (double l : forward(m, v({1.5, -2.0, 7.0}))) EXPECT_EQ(l, 0.0);
}

TEST(Forward, IdentityHead) {
    auto m = zero_model(2, {}, 2);
    m.head.weights(0, 0) = 1.0;
    m.head.weights(1, 1) = 1.0;
    EXPECT_EQ(forward(m, v({1, 2})), v({1, 2}));
    EXPECT_EQ(extract_features(m, v({1, 2})), v({1, 2}));
}

TEST(Forward, MatchesMatrixOracle) {
    const auto m = Model::create(4, {6, 5}, 3, 42);
    const auto x = v({0.3, -1.2, 0.8, 2.0});
    const auto net = oracle::to_net(m);
    const auto ref = oracle::logits(net, {0.3L, -1.2L, 0.8L, 2.0L});
    const auto got = forward(m, x);
    ASSERT_EQ(got.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], static_cast<double>(ref[i]), 1e-12);

    // features: everything but the head
    oracle::Net body = net;
    body.layers.pop_back();
    body.layers.push_back({});  // dummy head so the oracle applies relu to the last hidden layer
    auto feats = extract_features(m, x);
    std::vector<oracle::ld> a = {0.3L, -1.2L, 0.8L, 2.0L};
    for (std::size_t l = 0; l + 1 < body.layers.size(); ++l) {
        std::vector<oracle::ld> z;
        for (std::size_t r = 0; r < body.layers[l].w.size(); ++r) {
            oracle::ld s = body.layers[l].b[r];
            for (std::size_t c = 0; c < a.size(); ++c) s += body.layers[l].w[r][c] * a[c];
            z.push_back(s > 0 ? s : 0);
        }
        a = z;
    }
    ASSERT_EQ(feats.size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(feats[i], static_cast<double>(a[i]), 1e-12);
}

TEST(Forward, ShapeMismatchThrows) {
    const auto m = Model::create(3, {4}, 2, 0);
    EXPECT_THROW(forward(m, v({1, 2})), InputShapeError);
    EXPECT_THROW(extract_features(m, v({1, 2, 3, 4})), InputShapeError);
}

TEST(Forward, InitWithinFanInBound) {
    const auto m = Model::create(16, {64, 64}, 5, 7);
    const double b0 = 1.0 / std::sqrt(16.0), b1 = 1.0 / 8.0;
    for (double w : m.hidden[0].weights.values()) EXPECT_LE(std::fabs(w), b0);
    for (double w : m.hidden[1].weights.values()) EXPECT_LE(std::fabs(w), b1);
    EXPECT_EQ(m.parameter_count(), 16u * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5);
}

TEST(SoftenedProbs, ClosedForms) {
    for (double p : softened_probs(v({0.7, 0.7, 0.7, 0.7}), 3.0)) EXPECT_NEAR(p, 0.25, 1e-15);
    const auto p = softened_probs(v({std::log(2.0), 0.0}), 1.0);
    EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftenedProbs, ArbitraryPrecisionValue) {
    // softmax([1.5, 0.5, -1]) evaluated with 40-digit arithmetic
    const auto p = softened_probs(v({3, 1, -2}), 2.0);
    EXPECT_NEAR(p[0], 0.6896720861245035215791619, 1e-15);
    EXPECT_NEAR(p[1], 0.2537161816350251955058864, 1e-15);
    EXPECT_NEAR(p[2], 0.05661173224047128291495163, 1e-15);
}

TEST(SoftenedProbs, ShiftInvarianceAndNormalisation) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> z(7);
        for (double& x : z) x = rng.uniform(-30, 30);
        const double c = rng.uniform(-500, 500), T = rng.uniform(0.2, 5);
        auto shifted = z;
        for (double& x : shifted) x += c;
        const auto a = softened_probs(z, T), b = softened_probs(shifted, T);
        double sum = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            EXPECT_NEAR(a[i], b[i], 1e-9);
            EXPECT_GT(a[i], 0.0);
            sum += a[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(SoftenedProbs, RejectsNonPositiveTemperature) {
    EXPECT_THROW(softened_probs(v({1, 2}), 0.0), ParameterError);
    EXPECT_THROW(softened_probs(v({1, 2}), -1.0), ParameterError);
}

TEST(SoftenedProbs, ExtremeLogitsStayFinite) {
    const auto p = softened_probs(v({1000, -1000, 999}), 1.0);
    for (double x : p) EXPECT_TRUE(std::isfinite(x));
}

TEST(DistillationLoss, UniformIsLogM) {
    const auto z = v({0.4, 0.4, 0.4, 0.4, 0.4});
    EXPECT_NEAR(distillation_loss(z, z, 2.0, 5), std::log(5.0), 1e-14);
}

TEST(DistillationLoss, ArbitraryPrecisionValue) {
    // teacher [1,0], student [0,1], T=1: log(1+e) - 1/(1+e)
    EXPECT_NEAR(distillation_loss(v({0, 1}), v({1, 0}), 1.0, 2), 1.044320266148227713300155, 1e-14);
    EXPECT_NEAR(distillation_loss(v({0, 1}), v({1, 0}), 2.0, 2), 0.7853066497810339631924476, 1e-14);
}

TEST(DistillationLoss, OnlyFirstMLogitsUsed) {
    const double a = distillation_loss(v({0.1, 0.9, 5.0}), v({0.3, 0.2, -7.0}), 2.0, 2);
    const double b = distillation_loss(v({0.1, 0.9, -40.0}), v({0.3, 0.2}), 2.0, 2);
    EXPECT_EQ(a, b);
}

TEST(DistillationLoss, BoundedBelowByTeacherEntropy) {
    Rng rng(11);
    for (int t = 0; t < 300; ++t) {
        std::vector<double> s(6), te(6);
        for (double& x : s) x = rng.uniform(-4, 4);
        for (double& x : te) x = rng.uniform(-4, 4);
        const std::size_t m = 1 + rng.below(6);
        const double T = rng.uniform(0.5, 4);
        const auto p = softened_probs(std::span<const double>(te).first(m), T);
        double h = 0;
        for (double x : p) h -= x * std::log(x);
        EXPECT_GE(distillation_loss(s, te, T, m), h - 1e-12);
        EXPECT_NEAR(distillation_loss(te, te, T, m), h, 1e-12);
    }
}

TEST(DistillationLoss, Errors) {
    EXPECT_THROW(distillation_loss(v({1}), v({1}), 2.0, 0), ParameterError);
    EXPECT_THROW(distillation_loss(v({1}), v({1, 2}), 2.0, 2), InputShapeError);
}

TEST(CrossEntropy, Values) {
    EXPECT_NEAR(cross_entropy_pseudo(v({0, 0, 0, 0, 0, 0}), 4), std::log(6.0), 1e-15);
    EXPECT_NEAR(cross_entropy_pseudo(v({2, 0, -1}), 1), 2.169846019556285648778988, 1e-14);
    EXPECT_LT(cross_entropy_pseudo(v({0, 200, 0}), 1), 1e-80);
    EXPECT_THROW(cross_entropy_pseudo(v({0, 0}), 2), LabelError);
}

TEST(CrossDistillation, AlphaDefaults) {
    LossConfig c;
    EXPECT_EQ(c.alpha(10, 10), 0.5);
    EXPECT_EQ(c.alpha(50, 10), 50.0 / 60.0);
    c.alpha_override = 0.3;
    EXPECT_EQ(c.alpha(50, 10), 0.3);
}

TEST(CrossDistillation, ConvexCombinationAndEndpoints) {
    const auto s = v({0.5, -0.3, 1.2, 0.1});
    const auto t = v({1.0, 0.2});
    LossConfig c;  // alpha = 2/4
    EXPECT_NEAR(cross_distillation_loss(s, t, 3, c, 2, 2), 1.246320458373642232206827, 1e-14);
    c.alpha_override = 0.0;
    EXPECT_EQ(cross_distillation_loss(s, t, 3, c, 2, 2), cross_entropy_pseudo(s, 3));
    c.alpha_override = 1.0;
    EXPECT_EQ(cross_distillation_loss(s, t, 3, c, 2, 2), distillation_loss(s, t, 2.0, 2));
    c.alpha_override = 1.5;
    EXPECT_THROW(cross_distillation_loss(s, t, 3, c, 2, 2), ParameterError);
}

namespace {

struct GradCase {
    Model model;
    std::vector<std::vector<double>> xs, ts;
    std::vector<std::size_t> labels;
    std::vector<TrainingExample> batch;
    std::vector<oracle::Sample> samples;
};

GradCase make_case(std::uint64_t seed, std::size_t m, std::size_t n, std::size_t batch) {
    GradCase g;
    Rng rng(seed);
    g.model = Model::create(4, {6, 5}, m + n, seed);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<double> x(4), t(m);
        for (double& e : x) e = rng.uniform(-2, 2);
        for (double& e : t) e = rng.uniform(-3, 3);
        g.xs.push_back(x);
        g.ts.push_back(t);
        g.labels.push_back(rng.below(m + n));
    }
    for (std::size_t b = 0; b < batch; ++b) {
        g.batch.push_back({g.xs[b], g.ts[b], g.labels[b]});
        g.samples.push_back({{g.xs[b].begin(), g.xs[b].end()}, {g.ts[b].begin(), g.ts[b].end()}, g.labels[b]});
    }
    return g;
}

}  // namespace

TEST(Backward, MatchesFiniteDifferences) {
    for (double alpha : {0.0, 0.5, 5.0 / 6.0, 1.0})
        for (double T : {1.0, 2.0}) {
            auto g = make_case(static_cast<std::uint64_t>(alpha * 100 + T), 3, 2, 3);
            LossConfig cfg{T, alpha};
            const auto res = backward(g.model, g.batch, cfg, 3);
            const auto net = oracle::to_net(g.model);
            EXPECT_NEAR(res.loss, static_cast<double>(oracle::loss(net, g.samples, alpha, T, 3)), 1e-12);
            auto check_layer = [&](std::size_t li, const DenseLayer& grad) {
                for (std::size_t r = 0; r < grad.weights.rows(); ++r)
                    for (std::ptrdiff_t c = -1; c < static_cast<std::ptrdiff_t>(grad.weights.cols()); ++c) {
                        bool kink = false;
                        const double fd = static_cast<double>(
                            oracle::finite_difference(net, g.samples, alpha, T, 3, li, r, c, 1e-4L, &kink));
                        if (kink) continue;
                        const double an = c < 0 ? grad.bias[r] : grad.weights(r, static_cast<std::size_t>(c));
                        EXPECT_NEAR(an, fd, 1e-4 * std::max({std::fabs(an), std::fabs(fd), 1e-6}))
                            << "alpha=" << alpha << " T=" << T << " layer=" << li << " r=" << r << " c=" << c;
                    }
            };
            for (std::size_t l = 0; l < g.model.hidden.size(); ++l) check_layer(l, res.gradients.hidden[l]);
            check_layer(g.model.hidden.size(), res.gradients.head);
        }
}

TEST(Backward, HeadBiasGradientIsSoftmaxMinusOneHot) {
    auto g = make_case(5, 0, 4, 5);
    LossConfig cfg{2.0, 0.0};
    const auto res = backward(g.model, g.batch, cfg, 0);
    std::vector<double> expect(4, 0.0);
    for (std::size_t b = 0; b < g.batch.size(); ++b) {
        const auto p = softened_probs(forward(g.model, g.xs[b]), 1.0);
        for (std::size_t r = 0; r < 4; ++r) expect[r] += (p[r] - (r == g.labels[b] ? 1.0 : 0.0)) / 5.0;
    }
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(res.gradients.head.bias[r], expect[r], 1e-14);
}

TEST(Backward, DuplicatedBatchGivesSameGradients) {
    auto g = make_case(9, 2, 3, 1);
    std::vector<TrainingExample> twice = {g.batch[0], g.batch[0]};
    LossConfig cfg;
    const auto a = backward(g.model, g.batch, cfg, 2);
    const auto b = backward(g.model, twice, cfg, 2);
    EXPECT_NEAR(a.loss, b.loss, 1e-15);
    for (std::size_t i = 0; i < a.gradients.head.weights.size(); ++i)
        EXPECT_NEAR(a.gradients.head.weights.values()[i], b.gradients.head.weights.values()[i], 1e-15);
    for (std::size_t i = 0; i < a.gradients.hidden[0].weights.size(); ++i)
        EXPECT_NEAR(a.gradients.hidden[0].weights.values()[i], b.gradients.hidden[0].weights.values()[i], 1e-15);
}

TEST(Backward, EmptyBatchRejected) {
    const auto m = Model::create(2, {3}, 2, 0);
    EXPECT_THROW(backward(m, {}, LossConfig{}, 1), ParameterError);
}

TEST(Sgd, Arithmetic) {
    auto m = zero_model(1, {}, 1);
    m.head.weights(0, 0) = 1.0;
    auto g = zero_gradients(m);
    g.head.weights(0, 0) = 1.0;
    EXPECT_DOUBLE_EQ(sgd_step(m, g, 0.1, 0.0).head.weights(0, 0), 0.9);

    m.head.weights(0, 0) = 2.0;
    g.head.weights(0, 0) = 0.0;
    EXPECT_DOUBLE_EQ(sgd_step(m, g, 0.1, 0.5).head.weights(0, 0), 1.9);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
    const auto m = Model::create(5, {7, 7}, 4, 3);
    auto g = zero_gradients(m);
    for (double& x : g.head.weights.values()) x = 123.0;
    for (double& x : g.hidden[0].bias) x = -5.0;
    EXPECT_EQ(sgd_step(m, g, 0.0, 1e-5), m);
}

TEST(Sgd, ShapeMismatchAndNonFinite) {
    const auto m = Model::create(2, {3}, 2, 0);
    const auto other = Model::create(2, {4}, 2, 0);
    EXPECT_THROW(sgd_step(m, zero_gradients(other), 0.1, 0.0), ParameterError);
    auto g = zero_gradients(m);
    g.head.bias[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(sgd_step(m, g, 0.1, 0.0), NumericError);
}

TEST(ExpandHead, PreservesOldLogitsBitwise) {
    const auto m = Model::create(6, {8, 8}, 10, 4);
    const auto e = expand_head(m, 10, 99);
    const auto e2 = expand_head(e, 10, 100);
    const auto direct = expand_head(m, 20, 77);
    EXPECT_EQ(e.head_dim(), 20u);
    EXPECT_EQ(e2.head_dim(), 30u);
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> x(6);
        for (double& a : x) a = rng.uniform(-3, 3);
        const auto base = forward(m, x);
        const auto a = forward(e, x), b = forward(e2, x), c = forward(direct, x);
        for (std::size_t i = 0; i < 10; ++i) {
            EXPECT_EQ(a[i], base[i]);
            EXPECT_EQ(b[i], base[i]);
            EXPECT_EQ(c[i], base[i]);
        }
        for (std::size_t i = 10; i < 20; ++i) EXPECT_EQ(b[i], a[i]);
        EXPECT_EQ(extract_features(m, x), extract_features(e2, x));
    }
    EXPECT_EQ(e2.seed_log, (std::vector<std::uint64_t>{4, 99, 100}));
    EXPECT_THROW(expand_head(m, 0, 1), ParameterError);
}

TEST(ExpandHead, NewRowsWithinInitBound) {
    const auto e = expand_head(Model::create(3, {16}, 2, 0), 5, 1);
    for (std::size_t r = 2; r < 7; ++r)
        for (double w : e.head.weights.row(r)) EXPECT_LE(std::fabs(w), 0.25);
}

TEST(WeightAlign, HalvesWhenNewRowsTwiceAsLong) {
    auto m = zero_model(2, {}, 4);
    m.head.weights(0, 0) = 2.0;
    m.head.weights(1, 1) = 2.0;
    m.head.weights(2, 0) = 4.0;
    m.head.weights(3, 1) = -4.0;
    EXPECT_DOUBLE_EQ(weight_align_factor(m, 2, 2), 0.5);
    const auto a = weight_align(m, 2, 2);
    EXPECT_DOUBLE_EQ(a.head.weights(2, 0), 2.0);
    EXPECT_DOUBLE_EQ(a.head.weights(3, 1), -2.0);
    EXPECT_EQ(a.head.weights(0, 0), 2.0);
}

TEST(WeightAlign, EqualNormsUnchangedAndOldArgmaxKept) {
    auto m = zero_model(2, {}, 2);
    m.head.weights(0, 0) = 3.0;
    m.head.weights(1, 1) = 3.0;
    const auto a = weight_align(m, 1, 1);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.head.weights.values()[i], m.head.weights.values()[i], 1e-12);

    const auto big = expand_head(Model::create(4, {8}, 5, 1), 5, 2);
    const auto wa = weight_align(big, 5, 5);
    double old_norm = 0, new_norm = 0;
    for (std::size_t r = 0; r < 5; ++r) old_norm += norm2(wa.head.weights.row(r)) / 5;
    for (std::size_t r = 5; r < 10; ++r) new_norm += norm2(wa.head.weights.row(r)) / 5;
    EXPECT_NEAR(old_norm, new_norm, 1e-9);
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> x(4);
        for (double& e : x) e = rng.uniform(-3, 3);
        const auto a1 = forward(big, x), a2 = forward(wa, x);
        EXPECT_EQ(argmax(std::span<const double>(a1).first(5)), argmax(std::span<const double>(a2).first(5)));
    }
}

TEST(WeightAlign, DegenerateNewRows) {
    auto m = zero_model(2, {}, 3);
    m.head.weights(0, 0) = 1.0;
    EXPECT_THROW(weight_align(m, 1, 2), DegenerateScaleError);
    EXPECT_THROW(weight_align(m, 0, 3), ParameterError);
}

TEST(Determinism, TrainingSequenceIsBitwiseReproducible) {
    auto run = [] {
        auto g = make_case(21, 2, 2, 4);
        auto m = g.model;
        for (int s = 0; s < 20; ++s) m = sgd_step(m, backward(m, g.batch, LossConfig{}, 2).gradients, 0.05, 1e-5);
        return m;
    };
    EXPECT_EQ(run(), run());
}
