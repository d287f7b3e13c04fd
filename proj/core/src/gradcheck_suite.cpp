#include "resadapt/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "resadapt/adapters.hpp"
#include "resadapt/network.hpp"
#include "resadapt/ops.hpp"
#include "resadapt/rng.hpp"

namespace resadapt {

double GradSuiteReport::max_error() const {
    double m = 0.0;
    for (const auto& r : reports) {
        m = std::max(m, r.max_relative_error);
    }
    return m;
}

const GradCheckReport* GradSuiteReport::worst() const {
    const GradCheckReport* w = nullptr;
    for (const auto& r : reports) {
        if (!w || r.max_relative_error > w->max_relative_error) {
            w = &r;
        }
    }
    return w;
}

namespace {

using Vec = std::vector<double>;

std::size_t pick(CounterRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.next_below(hi - lo + 1); }

Tensor<double> random_tensor(Shape s, CounterRng& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) {
        v = rng.next_gaussian();
    }
    return t;
}

Matrix<double> random_matrix(std::size_t r, std::size_t c, CounterRng& rng, double scale = 1.0) {
    Matrix<double> m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.next_gaussian();
    }
    return m;
}

Vec random_vec(std::size_t n, CounterRng& rng, double offset = 0.0) {
    Vec v(n);
    for (auto& x : v) {
        x = offset + 0.5 * rng.next_gaussian();
    }
    return v;
}

double dot(const Tensor<double>& r, const Tensor<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += r[i] * y[i];
    }
    return s;
}

std::span<double> span_of(Tensor<double>& t) { return t.values(); }
std::span<double> span_of(Matrix<double>& m) { return {m.data(), std::size_t(m.size())}; }
std::span<double> span_of(Vec& v) { return v; }
std::span<const double> cspan(const Tensor<double>& t) { return t.values(); }
std::span<const double> cspan(const Matrix<double>& m) { return {m.data(), std::size_t(m.size())}; }
std::span<const double> cspan(const Vec& v) { return v; }

struct Ctx {
    CounterRng& rng;
    const GradCheckOptions& options;
    GradSuiteReport& out;
    std::size_t trial;

    template <typename P, typename G>
    void check(const std::string& what, P& param, const G& analytic, const std::function<double()>& loss,
               std::function<bool(std::size_t)> skip = {}) {
        GradCheckOptions opt = options;
        if (skip) {
            opt.skip = std::move(skip);
        }
        out.reports.push_back(
            finite_diff_check("trial " + std::to_string(trial) + " " + what, span_of(param), cspan(analytic), loss, opt));
    }
};

void check_conv2d(Ctx& c) {
    const std::size_t l = std::array<std::size_t, 3>{1, 3, 5}[c.rng.next_below(3)];
    const ConvGeometry g{pick(c.rng, 1, 2), pick(c.rng, 0, (l - 1) / 2)};
    const std::size_t lo = l > 2 * g.pad ? l - 2 * g.pad : 1;
    const Shape xs{pick(c.rng, 1, 2), pick(c.rng, std::max<std::size_t>(lo, 2), 6), pick(c.rng, std::max<std::size_t>(lo, 2), 6),
                   pick(c.rng, 1, 4)};
    Tensor<double> x = random_tensor(xs, c.rng);
    FilterBank<double> f(random_tensor(Shape{l, l, xs[3], pick(c.rng, 1, 4)}, c.rng));
    const Tensor<double> y = conv2d(x, f, g);
    const Tensor<double> r = random_tensor(y.shape(), c.rng);
    auto grads = conv2d_backward(x, f, g, r, true, true);
    auto loss = [&] { return dot(r, conv2d(x, f, g)); };
    const std::string tag = "conv2d L=" + std::to_string(l) + " s=" + std::to_string(g.stride) + " " + xs.str();
    c.check(tag + " dx", x, grads.dx, loss);
    c.check(tag + " df", f.weights(), grads.df.weights(), loss);
}

void check_conv1x1(Ctx& c) {
    const std::size_t stride = pick(c.rng, 1, 2);
    const Shape xs{pick(c.rng, 1, 2), pick(c.rng, 1, 5), pick(c.rng, 1, 5), pick(c.rng, 1, 4)};
    Tensor<double> x = random_tensor(xs, c.rng);
    Matrix<double> a = random_matrix(xs[3], pick(c.rng, 1, 4), c.rng);
    const Tensor<double> r = random_tensor(conv1x1(x, a, stride).shape(), c.rng);
    auto grads = conv1x1_backward(x, a, stride, r);
    auto loss = [&] { return dot(r, conv1x1(x, a, stride)); };
    c.check("conv1x1 s=" + std::to_string(stride) + " dx", x, grads.dx, loss);
    c.check("conv1x1 s=" + std::to_string(stride) + " da", a, grads.da, loss);
}

void check_batch_norm(Ctx& c) {
    const Shape xs{pick(c.rng, 2, 3), pick(c.rng, 1, 3), pick(c.rng, 1, 3), pick(c.rng, 1, 3)};
    Tensor<double> x = random_tensor(xs, c.rng);
    auto state = BatchNormState<double>::identity(xs[3]);
    state.scale = random_vec(xs[3], c.rng, 1.0);
    state.bias = random_vec(xs[3], c.rng);
    auto run = [&](BatchNormCache<double>* cache) {
        auto s = state;
        return batch_norm(x, s, Mode::Train, cache, false);
    };
    BatchNormCache<double> cache;
    const Tensor<double> y = run(&cache);
    const Tensor<double> r = random_tensor(y.shape(), c.rng);
    auto grads = batch_norm_backward(cache, state, r);
    auto loss = [&] { return dot(r, run(nullptr)); };
    c.check("batch_norm dx", x, grads.dx, loss);
    c.check("batch_norm dscale", state.scale, grads.dscale, loss);
    c.check("batch_norm dbias", state.bias, grads.dbias, loss);
}

void check_pool(Ctx& c) {
    const PoolKind kind = c.rng.next_below(2) ? PoolKind::Avg2x2 : PoolKind::GlobalAvg;
    const Shape xs{pick(c.rng, 1, 2), 2 * pick(c.rng, 1, 3), 2 * pick(c.rng, 1, 3), pick(c.rng, 1, 3)};
    Tensor<double> x = random_tensor(xs, c.rng);
    const Tensor<double> r = random_tensor(pool(x, kind).shape(), c.rng);
    const Tensor<double> dx = pool_backward(xs, kind, r);
    c.check(kind == PoolKind::Avg2x2 ? "avg2x2 dx" : "global_avg dx", x, dx, [&] { return dot(r, pool(x, kind)); });
}

void check_relu(Ctx& c) {
    Tensor<double> x = random_tensor(Shape{pick(c.rng, 1, 3), pick(c.rng, 1, 4), pick(c.rng, 1, 4), pick(c.rng, 1, 3)}, c.rng);
    x[0] = 0.0;  // exercised by the skip policy
    const Tensor<double> r = random_tensor(x.shape(), c.rng);
    const Tensor<double> dx = relu_backward(x, r);
    const double margin = 10.0 * c.options.step;
    const Tensor<double> frozen = x;
    c.check("relu dx", x, dx, [&] { return dot(r, relu(x)); },
            [&frozen, margin](std::size_t i) { return std::abs(frozen[i]) < margin; });
}

void check_dropout(Ctx& c) {
    Tensor<double> x = random_tensor(Shape{pick(c.rng, 1, 3), pick(c.rng, 1, 4), pick(c.rng, 1, 4), pick(c.rng, 1, 3)}, c.rng);
    const double p = 0.1 * double(pick(c.rng, 1, 6));
    const std::uint64_t seed = c.rng.next_u64();
    DropoutMask<double> mask;
    const Tensor<double> r = random_tensor(dropout(x, p, seed, Mode::Train, &mask).shape(), c.rng);
    const Tensor<double> dx = dropout_backward(mask, r);
    c.check("dropout dx", x, dx, [&] { return dot(r, dropout(x, p, seed, Mode::Train)); });
}

void check_head(Ctx& c) {
    const std::size_t n = pick(c.rng, 1, 5), ch = pick(c.rng, 1, 6), k = pick(c.rng, 2, 5);
    Tensor<double> x = random_tensor(Shape{n, ch}, c.rng);
    Matrix<double> w = random_matrix(ch, k, c.rng);
    Vec b = random_vec(k, c.rng);
    std::vector<std::uint32_t> labels(n);
    for (auto& l : labels) {
        l = std::uint32_t(c.rng.next_below(k));
    }
    const auto out = classifier_head(x, w, b, labels);
    const auto g = classifier_head_backward(x, w, out, labels);
    auto loss = [&] { return classifier_head(x, w, b, labels).loss; };
    c.check("head dx", x, g.dx, loss);
    c.check("head dweights", w, g.dweights, loss);
    c.check("head dbias", b, g.dbias, loss);
}

void check_series(Ctx& c) {
    const std::size_t ch = pick(c.rng, 1, 4);
    const ConvGeometry g{1, 1};
    Tensor<double> x = random_tensor(Shape{2, pick(c.rng, 2, 4), pick(c.rng, 2, 4), pick(c.rng, 1, 3)}, c.rng);
    FilterBank<double> f(random_tensor(Shape{3, 3, x.channels(), ch}, c.rng));
    Matrix<double> a = random_matrix(ch, ch, c.rng, 0.5);
    auto bn = BatchNormState<double>::identity(ch);
    bn.scale = random_vec(ch, c.rng, 1.0);
    bn.bias = random_vec(ch, c.rng);
    const bool with_bn = c.rng.next_below(2) == 1;
    auto run = [&](SeriesCache<double>* cache) {
        auto s = bn;
        return series_forward(x, f, g, a, with_bn ? &s : nullptr, Mode::Train, cache, false);
    };
    SeriesCache<double> cache;
    const Tensor<double> r = random_tensor(run(&cache).shape(), c.rng);
    auto grads = series_backward(x, f, g, a, with_bn ? &bn : nullptr, cache, r, true);
    auto loss = [&] { return dot(r, run(nullptr)); };
    const std::string tag = with_bn ? "series+bn " : "series ";
    c.check(tag + "dx", x, grads.dx, loss);
    c.check(tag + "df", f.weights(), grads.df.weights(), loss);
    c.check(tag + "dalpha", a, grads.dalpha, loss);
    if (with_bn) {
        c.check(tag + "dscale", bn.scale, grads.dscale, loss);
        c.check(tag + "dbias", bn.bias, grads.dbias, loss);
    }
}

void check_parallel(Ctx& c) {
    const ConvGeometry g{pick(c.rng, 1, 2), 1};
    Tensor<double> x = random_tensor(Shape{pick(c.rng, 1, 2), pick(c.rng, 2, 5), pick(c.rng, 2, 5), pick(c.rng, 1, 4)}, c.rng);
    FilterBank<double> f(random_tensor(Shape{3, 3, x.channels(), pick(c.rng, 1, 4)}, c.rng));
    Matrix<double> a = random_matrix(x.channels(), f.out_channels(), c.rng);
    const Tensor<double> r = random_tensor(parallel_forward(x, f, g, a).shape(), c.rng);
    auto grads = parallel_backward(x, f, g, a, r, true);
    auto loss = [&] { return dot(r, parallel_forward(x, f, g, a)); };
    const std::string tag = "parallel s=" + std::to_string(g.stride) + " ";
    c.check(tag + "dx", x, grads.dx, loss);
    c.check(tag + "df", f.weights(), grads.df.weights(), loss);
    c.check(tag + "dalpha", a, grads.dalpha, loss);
}

void check_network(Ctx& c) {
    NetworkConfig cfg;
    cfg.widths = {2, 3, 4};
    cfg.blocks_per_macro = 1;
    CounterRng init = c.rng.fork(1);
    Network<double> net(cfg, init);
    PlacementConfig placement = PlacementConfig::all(c.rng.next_below(2) ? Topology::Series : Topology::Parallel);
    placement.dropout = 0.25;
    auto& d = net.add_domain("g", 3, placement, init);
    for (auto& [i, a] : d.alphas) {
        a = random_matrix(std::size_t(a.rows()), std::size_t(a.cols()), c.rng, 0.3);
    }
    for (auto& s : d.bn) {
        s.scale = random_vec(s.channels(), c.rng, 1.0);
        s.bias = random_vec(s.channels(), c.rng);
    }
    // 8x8 inputs keep every train-mode BN averaging over at least 16 values;
    // at 4x4 the deepest stage normalizes 3 numbers and the loss curvature
    // swamps a 1e-5 central difference.
    const Tensor<double> x = random_tensor(Shape{4, 8, 8, 3}, c.rng);
    const std::vector<std::uint32_t> labels{0, 1, 2, 0};
    const std::uint64_t seed = c.rng.next_u64();
    auto loss = [&] {
        const Tensor<double> feats = net.forward_features(x, "g", Mode::Train, nullptr, seed);
        return classifier_head(feats, d.head_weights, d.head_bias, labels).loss;
    };
    ForwardTrace<double> trace;
    const Tensor<double> feats = net.forward_features(x, "g", Mode::Train, &trace, seed);
    const auto out = classifier_head(feats, d.head_weights, d.head_bias, labels);
    const auto hg = classifier_head_backward(feats, d.head_weights, out, labels);
    const auto part = partition_params(net, "g", Regime::FinetuneAll);
    Gradients<double> grads;
    net.backward(trace, hg.dx, part.trainable, grads);
    grads[names::head_weights("g")].assign(hg.dweights.data(), hg.dweights.data() + hg.dweights.size());
    grads[names::head_bias("g")] = hg.dbias;
    const std::string tag = std::string("network/") + std::string(to_string(placement.topology)) + " ";
    // An entry is skipped when a +-step nudge flips any ReLU input, since the
    // central difference then straddles a kink.
    auto relu_signs = [&] {
        ForwardTrace<double> t;
        net.forward_features(x, "g", Mode::Train, &t, seed);
        std::vector<bool> signs;
        auto add = [&signs](const Tensor<double>& pre) {
            for (std::size_t i = 0; i < pre.size(); ++i) {
                signs.push_back(pre[i] > 0.0);
            }
        };
        for (const auto& b : t.blocks) {
            add(b.pre1);
            add(b.pre2);
        }
        add(t.final_pre);
        return signs;
    };
    const std::vector<bool> reference = relu_signs();
    const double step = c.options.step;
    net.visit([&](const ParamView<double>& p) {
        if (!part.trainable.count(p.name)) {
            return;
        }
        const auto& g = grads.at(p.name);
        GradCheckOptions opts = c.options;
        const std::span<double> values = p.values;
        opts.skip = [&, values](std::size_t i) {
            const double saved = values[i];
            values[i] = saved + step;
            bool crosses = relu_signs() != reference;
            values[i] = saved - step;
            crosses = crosses || relu_signs() != reference;
            values[i] = saved;
            return crosses;
        };
        c.out.reports.push_back(finite_diff_check("trial " + std::to_string(c.trial) + " " + tag + p.name, p.values,
                                                  g, loss, opts));
    });
}

}  // namespace

GradSuiteReport run_gradcheck_suite(std::uint64_t seed, std::size_t trials, const GradCheckOptions& options) {
    using Check = void (*)(Ctx&);
    static constexpr Check checks[] = {check_conv2d, check_conv1x1,  check_batch_norm, check_pool,    check_relu,
                                       check_dropout, check_head,    check_series,     check_parallel, check_network};
    constexpr std::size_t count = sizeof(checks) / sizeof(checks[0]);
    GradSuiteReport report;
    report.trials = trials;
    const CounterRng base(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        CounterRng rng = base.fork(t);
        Ctx ctx{rng, options, report, t};
        checks[t % count](ctx);
    }
    return report;
}

}  // namespace resadapt
