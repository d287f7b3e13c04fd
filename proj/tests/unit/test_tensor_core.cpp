#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "resadapt/errors.hpp"
#include "resadapt/gradcheck.hpp"
#include "resadapt/gradcheck_suite.hpp"
#include "resadapt/ops.hpp"
#include "resadapt/optim.hpp"
#include "resadapt/rng.hpp"
#include "test_util.hpp"

using namespace resadapt;
using testutil::max_rel_diff;
using testutil::naive_conv;
using testutil::random_bank;
using testutil::random_tensor;

namespace {

std::uint64_t reference_splitmix(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

TEST(Tensor, ElementCountMatchesDims) {
    Tensor<float> t(Shape{2, 3, 4, 5});
    EXPECT_EQ(t.size(), 120u);
    EXPECT_EQ(t.shape().numel(), 120u);
    EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ConfigError);
    EXPECT_THROW(Shape({1, 2, 3, 4, 5}), ConfigError);
    EXPECT_THROW(Shape({2, 0}), ConfigError);
}

TEST(Tensor, FilterBankRequiresOddExtent) {
    EXPECT_THROW(FilterBank<double>(2, 1, 1), ConfigError);
    FilterBank<double> f(3, 4, 5);
    EXPECT_EQ(f.param_count(), 9u * 4u * 5u);
}

TEST(Rng, SplitmixTestVector) {
    CounterRng rng(0);
    EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFull);
    for (std::uint64_t seed : {0ull, 1ull, 42ull, 0xDEADBEEFull}) {
        CounterRng r(seed);
        std::uint64_t state = seed;
        for (int i = 0; i < 8; ++i) {
            EXPECT_EQ(r.next_u64(), reference_splitmix(state)) << "seed " << seed << " draw " << i;
        }
    }
}

TEST(Rng, CounterAccessMatchesStream) {
    CounterRng r(7);
    for (std::uint64_t i = 0; i < 5; ++i) {
        EXPECT_EQ(r.next_u64(), CounterRng::at(7, i));
    }
    CounterRng a(3), b(3);
    EXPECT_EQ(a.fork(1).next_u64(), b.fork(1).next_u64());
    EXPECT_NE(a.fork(1).next_u64(), a.fork(2).next_u64());
}

TEST(Rng, UniformAndBelowRanges) {
    CounterRng r(11);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.next_uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_LT(r.next_below(7), 7u);
    }
    CounterRng s(5);
    auto p = shuffled_indices(50, s);
    std::vector<std::size_t> sorted(p);
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(50);
    std::iota(iota.begin(), iota.end(), 0u);
    EXPECT_EQ(sorted, iota);
}

TEST(Conv2d, SinglePixelIdentity) {
    Tensor<double> x(Shape{1, 1, 1, 1}, 5.0);
    FilterBank<double> f(1, 1, 1);
    f.at(0, 0, 0, 0) = 1.0;
    EXPECT_EQ(conv2d(x, f, {1, 0})[0], 5.0);
}

TEST(Conv2d, ZeroInputGivesZero) {
    CounterRng rng(1);
    Tensor<double> x(Shape{1, 3, 3, 1});
    const auto y = conv2d(x, random_bank(3, 1, 2, rng), {1, 1});
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, AllOnesHandOracle) {
    Tensor<double> x(Shape{1, 3, 3, 1}, 1.0);
    FilterBank<double> f(3, 1, 1);
    f.weights().fill(1.0);
    const auto y = conv2d(x, f, {1, 1});
    const double expected[3][3] = {{4, 6, 4}, {6, 9, 6}, {4, 6, 4}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y.at(0, i, j, 0), expected[i][j]);
}

TEST(Conv2d, MatchesDirectLoopsOnRandomShapes) {
    CounterRng base(2024);
    for (std::uint64_t t = 0; t < 30; ++t) {
        CounterRng rng = base.fork(t);
        const std::size_t l = 1 + 2 * rng.next_below(3);
        const std::size_t stride = 1 + rng.next_below(2);
        const std::size_t pad = rng.next_below(l);
        const std::size_t h = l + rng.next_below(5), w = l + rng.next_below(5);
        const std::size_t cin = 1 + rng.next_below(4), cout = 1 + rng.next_below(4);
        const auto x = random_tensor(Shape{2, h, w, cin}, rng);
        const auto f = random_bank(l, cin, cout, rng);
        const auto y = conv2d(x, f, {stride, pad});
        const auto ref = naive_conv(x, f, stride, pad);
        ASSERT_EQ(y.shape(), ref.shape());
        EXPECT_LE(max_rel_diff(y, ref), 1e-13) << "trial " << t;
    }
}

TEST(Conv2d, OutputExtentFormula) {
    EXPECT_EQ(conv_output_extent(8, 3, {1, 1}), 8u);
    EXPECT_EQ(conv_output_extent(8, 3, {2, 1}), 4u);
    EXPECT_EQ(conv_output_extent(7, 3, {2, 0}), 3u);
}

TEST(Conv2d, ShapeErrors) {
    Tensor<double> x(Shape{1, 4, 4, 2});
    EXPECT_THROW(conv2d(x, FilterBank<double>(3, 3, 1), {1, 1}), ConfigError);
    EXPECT_THROW(conv2d(Tensor<double>(Shape{1, 1, 1, 2}), FilterBank<double>(3, 2, 1), {1, 0}), ConfigError);
}

TEST(Conv2d, NonFiniteOutputIsNumericError) {
    Tensor<double> x(Shape{1, 2, 2, 1}, 1.0);
    x[0] = std::numeric_limits<double>::infinity();
    FilterBank<double> f(1, 1, 1);
    f.at(0, 0, 0, 0) = 1.0;
    EXPECT_THROW(conv2d(x, f, {1, 0}), NumericError);
}

TEST(Conv2d, LinearInInputAndFilter) {
    CounterRng rng(77);
    const auto x = random_tensor(Shape{2, 5, 5, 3}, rng);
    const auto y = random_tensor(Shape{2, 5, 5, 3}, rng);
    const auto f = random_bank(3, 3, 4, rng);
    const auto g = random_bank(3, 3, 4, rng);
    const double a = 0.7, b = -1.3;
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto lhs = conv2d(mix, f, {1, 1});
    const auto cx = conv2d(x, f, {1, 1}), cy = conv2d(y, f, {1, 1});
    Tensor<double> rhs(lhs.shape());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * cx[i] + b * cy[i];
    EXPECT_LE(max_rel_diff(lhs, rhs), 1e-12);

    FilterBank<double> fm(3, 3, 4);
    for (std::size_t i = 0; i < fm.param_count(); ++i)
        fm.weights()[i] = a * f.weights()[i] + b * g.weights()[i];
    const auto lf = conv2d(x, fm, {2, 1});
    const auto c1 = conv2d(x, f, {2, 1}), c2 = conv2d(x, g, {2, 1});
    Tensor<double> rf(lf.shape());
    for (std::size_t i = 0; i < rf.size(); ++i) rf[i] = a * c1[i] + b * c2[i];
    EXPECT_LE(max_rel_diff(lf, rf), 1e-12);
}

TEST(Conv1x1, IdentityAndZero) {
    CounterRng rng(3);
    const auto x = random_tensor(Shape{2, 3, 3, 4}, rng);
    EXPECT_EQ(conv1x1(x, Matrix<double>(Matrix<double>::Identity(4, 4))), x);
    const auto z = conv1x1(x, Matrix<double>(Matrix<double>::Zero(4, 2)));
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(conv1x1(x, Matrix<double>(Matrix<double>::Zero(3, 2))), ConfigError);
}

TEST(Conv1x1, MatchesConv2dWithUnitBank) {
    CounterRng rng(4);
    const auto x = random_tensor(Shape{2, 3, 3, 4}, rng);
    const auto a = testutil::random_matrix(4, 2, rng);
    FilterBank<double> f(1, 4, 2);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t d = 0; d < 2; ++d) f.at(0, 0, c, d) = a(Eigen::Index(c), Eigen::Index(d));
    EXPECT_LE(max_rel_diff(conv1x1(x, a), conv2d(x, f, {1, 0})), 1e-15);
    const auto x6 = random_tensor(Shape{1, 6, 6, 4}, rng);
    EXPECT_LE(max_rel_diff(conv1x1(x6, a, 2), conv2d(x6, f, {2, 0})), 1e-15);
}

TEST(BatchNorm, EvalIdentityConfiguration) {
    CounterRng rng(5);
    const auto x = random_tensor(Shape{4, 2, 2, 3}, rng);
    auto state = BatchNormState<double>::identity(3);
    const auto y = batch_norm(x, state, Mode::Eval);
    const double damp = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] * damp, 1e-15);
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
    CounterRng rng(6);
    auto x = random_tensor(Shape{8, 3, 3, 2}, rng, 3.0);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] += 10.0;
    auto state = BatchNormState<double>::identity(2);
    state.scale = {2.0, 0.5};
    state.bias = {1.0, -3.0};
    const auto y = batch_norm(x, state, Mode::Train);
    const std::size_t rows = y.rows();
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0, sq = 0.0, xm = 0.0, xs = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            mean += y[r * 2 + c];
            xm += x[r * 2 + c];
        }
        mean /= double(rows);
        xm /= double(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            sq += (y[r * 2 + c] - mean) * (y[r * 2 + c] - mean);
            xs += (x[r * 2 + c] - xm) * (x[r * 2 + c] - xm);
        }
        const double var = sq / double(rows), xvar = xs / double(rows);
        EXPECT_NEAR(mean, state.bias[c], 1e-12);
        const double expected = state.scale[c] * state.scale[c] * xvar / (xvar + 1e-5);
        EXPECT_NEAR(var, expected, 1e-10);
        EXPECT_GE(state.running_var[c], 0.0);
        // EMA with momentum 0.1 from (0, 1).
        EXPECT_NEAR(state.running_mean[c], 0.1 * xm, 1e-12);
        EXPECT_NEAR(state.running_var[c], 0.9 + 0.1 * xvar * double(rows) / double(rows - 1), 1e-12);
    }
}

TEST(BatchNorm, ConstantBatchIsHandledByEpsilon) {
    Tensor<double> x(Shape{4, 2, 2, 1}, 3.0);
    auto state = BatchNormState<double>::identity(1);
    const auto y = batch_norm(x, state, Mode::Train);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
    EXPECT_GE(state.running_var[0], 0.0);
}

TEST(BatchNorm, EvalModeIsAffineBySuperposition) {
    CounterRng rng(8);
    auto state = BatchNormState<double>::identity(3);
    state.scale = {1.5, -0.3, 2.0};
    state.bias = {0.1, 0.2, -0.7};
    state.running_mean = {0.4, -1.0, 2.0};
    state.running_var = {0.5, 2.0, 0.01};
    const auto x = random_tensor(Shape{2, 2, 2, 3}, rng);
    const auto y = random_tensor(Shape{2, 2, 2, 3}, rng);
    const double a = 1.7, b = -0.4;
    Tensor<double> mix(x.shape()), zero(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto fm = batch_norm(mix, state, Mode::Eval);
    const auto fx = batch_norm(x, state, Mode::Eval);
    const auto fy = batch_norm(y, state, Mode::Eval);
    const auto f0 = batch_norm(zero, state, Mode::Eval);
    for (std::size_t i = 0; i < fm.size(); ++i)
        EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i] + (1 - a - b) * f0[i], 1e-12);
    const auto before = state;
    (void)batch_norm(x, state, Mode::Eval);
    EXPECT_EQ(state, before);
}

TEST(Pool, ConstantInvarianceAndMean) {
    Tensor<double> c(Shape{2, 4, 6, 3}, 1.25);
    const auto halved = pool(c, PoolKind::Avg2x2);
    const auto global = pool(c, PoolKind::GlobalAvg);
    for (double v : halved.values()) EXPECT_EQ(v, 1.25);
    for (double v : global.values()) EXPECT_EQ(v, 1.25);
    Tensor<double> p(Shape{1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
    EXPECT_EQ(pool(p, PoolKind::Avg2x2)[0], 2.5);
    EXPECT_EQ(pool(p, PoolKind::Avg2x2).shape(), Shape({1, 1, 1, 1}));
    EXPECT_EQ(pool(c, PoolKind::GlobalAvg).shape(), Shape({2, 3}));
    EXPECT_THROW(pool(Tensor<double>(Shape{1, 3, 4, 1}), PoolKind::Avg2x2), ConfigError);
}

TEST(Pointwise, ReluDefinition) {
    Tensor<double> x(Shape{3}, std::vector<double>{-3.0, 0.0, 3.0});
    const auto y = relu(x);
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 0.0);
    EXPECT_EQ(y[2], 3.0);
}

TEST(Pointwise, DropoutIdentityCases) {
    CounterRng rng(9);
    const auto x = random_tensor(Shape{2, 3, 3, 2}, rng);
    EXPECT_EQ(dropout(x, 0.0, 123, Mode::Train), x);
    EXPECT_EQ(dropout(x, 0.5, 123, Mode::Eval), x);
    EXPECT_EQ(dropout(x, 0.5, 123, Mode::Train), dropout(x, 0.5, 123, Mode::Train));
    EXPECT_NE(dropout(x, 0.5, 123, Mode::Train), dropout(x, 0.5, 124, Mode::Train));
    EXPECT_THROW(dropout(x, 1.0, 1, Mode::Train), ConfigError);
}

TEST(Pointwise, DropoutExpectationMonteCarlo) {
    const Tensor<double> ones(Shape{4}, 1.0);
    const double p = 0.3;
    double sum = 0.0;
    std::size_t zeros = 0, count = 0;
    for (std::uint64_t seed = 0; seed < 100000; ++seed) {
        const auto y = dropout(ones, p, seed, Mode::Train);
        for (double v : y.values()) {
            sum += v;
            zeros += v == 0.0;
            ++count;
            ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / (1.0 - p)) < 1e-15);
        }
    }
    const double mean = sum / double(count);
    std::printf("dropout Monte-Carlo mean %.5f, zero fraction %.5f\n", mean, double(zeros) / double(count));
    EXPECT_NEAR(mean, 1.0, 0.01);
    EXPECT_NEAR(double(zeros) / double(count), p, 0.005);
}

TEST(Head, UniformLogitsGiveLogK) {
    for (std::size_t k : {2u, 5u, 10u}) {
        Tensor<double> x(Shape{3, 4}, 0.5);
        Matrix<double> w = Matrix<double>::Zero(4, Eigen::Index(k));
        std::vector<double> b(k, 0.25);
        std::vector<std::uint32_t> labels{0, 1, 1};
        const auto out = classifier_head(x, w, b, labels);
        EXPECT_NEAR(out.loss, std::log(double(k)), 1e-14);
    }
}

TEST(Head, DominantCorrectLogitDrivesLossToZero) {
    Tensor<double> x(Shape{1, 1}, 1.0);
    std::vector<std::uint32_t> labels{2};
    double previous = 1e9;
    for (double scale : {1.0, 5.0, 20.0, 50.0}) {
        Matrix<double> w(1, 3);
        w << 0.0, 0.0, scale;
        const auto out = classifier_head(x, w, std::vector<double>(3, 0.0), labels);
        EXPECT_LT(out.loss, previous);
        previous = out.loss;
    }
    EXPECT_LT(previous, 1e-20);
}

TEST(Head, OutOfRangeLabel) {
    Tensor<double> x(Shape{1, 2}, 1.0);
    Matrix<double> w = Matrix<double>::Zero(2, 3);
    std::vector<std::uint32_t> labels{3};
    EXPECT_THROW(classifier_head(x, w, std::vector<double>(3, 0.0), labels), ConfigError);
}

TEST(Sgd, PlainGradientDescent) {
    std::vector<double> p{1.0, -2.0}, g{0.5, 0.25};
    OptimizerState<double> opt(0.1, 0.0);
    std::vector<ParamGroup<double>> groups{{"p", p, g, 0.0}};
    sgd_step<double>(groups, opt);
    EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.1 * 0.5);
    EXPECT_DOUBLE_EQ(p[1], -2.0 - 0.1 * 0.25);
}

TEST(Sgd, TwoStepMomentumHandTrace) {
    std::vector<double> p{1.0}, g{0.5};
    OptimizerState<double> opt(0.1, 0.9);
    std::vector<ParamGroup<double>> groups{{"p", p, g, 0.0}};
    sgd_step<double>(groups, opt);
    // v1 = 0.5, p1 = 1 - 0.05
    EXPECT_NEAR(opt.velocities().at("p")[0], 0.5, 1e-15);
    EXPECT_NEAR(p[0], 0.95, 1e-15);
    sgd_step<double>(groups, opt);
    // v2 = 0.9 * 0.5 + 0.5 = 0.95, p2 = 0.95 - 0.095
    EXPECT_NEAR(opt.velocities().at("p")[0], 0.95, 1e-15);
    EXPECT_NEAR(p[0], 0.855, 1e-15);
}

TEST(Sgd, PureShrinkageStrictlyDecreasesNorm) {
    std::vector<double> p{3.0, -4.0}, g{0.0, 0.0};
    OptimizerState<double> opt(0.1, 0.0);
    std::vector<ParamGroup<double>> groups{{"p", p, g, 0.5}};
    double norm = 5.0;
    for (int step = 0; step < 20; ++step) {
        const double expected0 = p[0] * (1.0 - 0.1 * 0.5);
        sgd_step<double>(groups, opt);
        EXPECT_NEAR(p[0], expected0, 1e-15);
        const double next = std::hypot(p[0], p[1]);
        EXPECT_LT(next, norm);
        norm = next;
    }
}

TEST(GradCheck, LinearMapIsExactUpToRoundoff) {
    std::vector<double> p{0.3, -1.2, 2.5, 0.0}, c{1.5, -0.5, 2.0, 3.0};
    auto loss = [&] { return std::inner_product(p.begin(), p.end(), c.begin(), 0.0); };
    const auto report = finite_diff_check("linear", p, c, loss);
    EXPECT_EQ(report.checked, 4u);
    EXPECT_LE(report.max_relative_error, 1e-9);
}

TEST(GradCheck, ReluKinkIsExcluded) {
    std::vector<double> p{0.0, 0.5, -0.5};
    std::vector<double> grad{0.0, 1.0, 0.0};
    auto loss = [&] {
        double s = 0.0;
        for (double v : p) s += std::max(v, 0.0);
        return s;
    };
    GradCheckOptions options;
    options.skip = [&](std::size_t i) { return p[i] == 0.0; };
    const auto report = finite_diff_check("relu", p, grad, loss, options);
    EXPECT_EQ(report.skipped, 1u);
    EXPECT_EQ(report.checked, 2u);
    EXPECT_LE(report.max_relative_error, 1e-9);
}

TEST(GradCheck, Conv2dRandomSmallShapes) {
    CounterRng base(31);
    for (std::uint64_t t = 0; t < 6; ++t) {
        CounterRng rng = base.fork(t);
        const std::size_t stride = 1 + t % 2;
        auto x = random_tensor(Shape{2, 5, 5, 2}, rng);
        auto f = random_bank(3, 2, 3, rng);
        const auto y0 = conv2d(x, f, {stride, 1});
        const auto r = random_tensor(y0.shape(), rng);
        auto loss = [&] {
            const auto y = conv2d(x, f, {stride, 1});
            return std::inner_product(y.values().begin(), y.values().end(), r.values().begin(), 0.0);
        };
        const auto g = conv2d_backward(x, f, {stride, 1}, r);
        const auto rx = finite_diff_check("dx", x.values(), g.dx.values(), loss);
        const auto rf = finite_diff_check("df", f.weights().values(), g.df.weights().values(), loss);
        EXPECT_LE(rx.max_relative_error, 1e-6);
        EXPECT_LE(rf.max_relative_error, 1e-6);
    }
}

TEST(GradCheck, FullSuiteAcrossRandomShapes) {
    const auto report = run_gradcheck_suite(20240601, 60);
    ASSERT_GE(report.trials, 50u);
    const auto* worst = report.worst();
    ASSERT_NE(worst, nullptr);
    std::printf("gradcheck suite: %zu checks, worst %s at %.3e\n", report.reports.size(), worst->name.c_str(),
                report.max_error());
    EXPECT_TRUE(report.passed(1e-6));
}
