#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "resadapt/errors.hpp"
#include "resadapt/network.hpp"
#include "resadapt/tensor_io.hpp"
#include "test_util.hpp"

using namespace resadapt;
using testutil::max_rel_diff;
using testutil::random_tensor;

namespace {

NetworkConfig toy_config() {
    NetworkConfig cfg;
    cfg.widths = {4, 8, 16};
    cfg.blocks_per_macro = 4;
    return cfg;
}

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.widths = {3, 4, 6};
    cfg.blocks_per_macro = 2;
    return cfg;
}

// Gives a domain non-trivial BN statistics, affine terms and adapters so that
// equality checks are not satisfied by accident.
template <typename T>
void randomize_domain(DomainParams<T>& d, CounterRng& rng, bool adapters) {
    for (auto& bn : d.bn) {
        for (std::size_t c = 0; c < bn.channels(); ++c) {
            bn.scale[c] = T(1.0 + 0.2 * rng.next_gaussian());
            bn.bias[c] = T(0.1 * rng.next_gaussian());
            bn.running_mean[c] = T(0.1 * rng.next_gaussian());
            bn.running_var[c] = T(0.5 + rng.next_uniform());
        }
    }
    if (adapters) {
        for (auto& [index, a] : d.alphas) {
            for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = T(0.1 * rng.next_gaussian());
        }
    }
    for (Eigen::Index i = 0; i < d.head_weights.size(); ++i) d.head_weights.data()[i] = T(rng.next_gaussian());
}

}  // namespace

TEST(Config, DefaultHasTwentySixWeightLayers) {
    NetworkConfig cfg;
    EXPECT_EQ(cfg.weight_layers(), 26u);
    EXPECT_EQ(cfg.width(0), 64u);
    EXPECT_EQ(cfg.width(1), 128u);
    EXPECT_EQ(cfg.width(2), 256u);
    EXPECT_EQ(cfg.body_convs(), 24u);
    EXPECT_EQ(body_layout(cfg).size(), 24u);
}

TEST(Config, WidthMultiplierAndValidation) {
    NetworkConfig cfg;
    cfg.width_multiplier = 0.25;
    EXPECT_EQ(cfg.width(0), 16u);
    EXPECT_EQ(cfg.width(2), 64u);
    NetworkConfig bad;
    bad.filter_size = 4;
    EXPECT_THROW(bad.validate(), ConfigError);
    NetworkConfig zero;
    zero.blocks_per_macro = 0;
    EXPECT_THROW(zero.validate(), ConfigError);
}

TEST(Placement, AdaptedLayerCounts) {
    const auto layout = body_layout(NetworkConfig{});
    auto count = [&](const PlacementConfig& p) {
        std::size_t n = 0;
        for (const auto& c : layout) n += p.adapts(c.macro, c.position);
        return n;
    };
    auto all = PlacementConfig::all();
    EXPECT_EQ(count(all), 24u);
    auto second = all;
    second.within = WithinBlock::SecondOnly;
    EXPECT_EQ(count(second), 12u);
    EXPECT_EQ(count(PlacementConfig::none()), 0u);
    auto early = all;
    early.macros = kEarly;
    EXPECT_EQ(count(early), 8u);
}

TEST(Placement, ParseMacros) {
    EXPECT_EQ(parse_macros("all"), unsigned(kAllMacros));
    EXPECT_EQ(parse_macros("none"), 0u);
    EXPECT_EQ(parse_macros("early+late"), unsigned(kEarly | kLate));
    EXPECT_EQ(parse_macros(macros_to_string(kMid | kLate)), unsigned(kMid | kLate));
    EXPECT_THROW(parse_macros("middle"), ConfigError);
    EXPECT_EQ(parse_within("second"), WithinBlock::SecondOnly);
    EXPECT_EQ(parse_within("both"), WithinBlock::BothConvs);
    EXPECT_EQ(parse_regime("adapters_only"), Regime::AdaptersOnly);
    EXPECT_THROW(parse_regime("everything"), ConfigError);
}

TEST(Budget, ToyNetHandEnumeration) {
    // Every body conv of the toy net maps width(m) to width(m): 8 convs per
    // macro at 4x4, 8x8 and 16x16.
    const std::size_t by_hand = 8 * (4 * 4) + 8 * (8 * 8) + 8 * (16 * 16);
    ASSERT_EQ(by_hand, 2688u);
    const auto cfg = toy_config();
    std::size_t enumerated = 0;
    for (const auto& c : body_layout(cfg)) enumerated += c.in_channels * c.out_channels;
    EXPECT_EQ(enumerated, by_hand);
    EXPECT_EQ(planned_adapter_params(cfg, PlacementConfig::all(Topology::Parallel)), by_hand);
    EXPECT_EQ(planned_adapter_params(cfg, PlacementConfig::all(Topology::Series)), by_hand);

    CounterRng rng(1);
    Network<double> net(cfg, rng);
    net.add_domain("a", 5, PlacementConfig::all(), rng);
    const auto report = count_params(net, PlacementConfig::all());
    ASSERT_EQ(report.domains.size(), 1u);
    EXPECT_EQ(report.domains[0].adapters, by_hand);
    EXPECT_EQ(report.domains[0].head, 16u * 5u + 5u);
}

TEST(Budget, AdapterCostIsOneNinthOfEachLayer) {
    CounterRng rng(2);
    Network<float> net(NetworkConfig::desk(), rng);
    const auto report = count_params(net, PlacementConfig::all());
    std::size_t adapted = 0;
    for (const auto& layer : report.layers) {
        if (layer.adapter_params == 0) continue;
        ++adapted;
        EXPECT_EQ(9 * layer.adapter_params, layer.conv_params) << "layer " << layer.layer;
    }
    EXPECT_EQ(adapted, NetworkConfig::desk().body_convs());
}

TEST(Budget, SecondOnlyHalvesAndMacrosAreMonotone) {
    for (const auto& cfg : {NetworkConfig{}, NetworkConfig::desk(), toy_config()}) {
        auto both = PlacementConfig::all();
        auto second = both;
        second.within = WithinBlock::SecondOnly;
        const auto nb = planned_adapter_params(cfg, both);
        EXPECT_EQ(2 * planned_adapter_params(cfg, second), nb);
        auto p = both;
        p.macros = kEarly;
        const auto e = planned_adapter_params(cfg, p);
        p.macros = kEarly | kMid;
        const auto em = planned_adapter_params(cfg, p);
        EXPECT_LT(e, em);
        EXPECT_LT(em, nb);
    }
}

TEST(Partition, RegimeTrainableCounts) {
    CounterRng rng(3);
    Network<double> net(tiny_config(), rng);
    net.add_domain("base", 4, PlacementConfig::none(), rng);
    std::size_t total = 0;
    net.visit([&](const ParamView<const double>& p) {
        if (p.kind != ParamKind::BatchNormStats && p.kind != ParamKind::AdapterBatchNormStats) total += p.values.size();
    });
    const auto fa = partition_params(net, "base", Regime::FinetuneAll);
    EXPECT_EQ(count_elements(net, fa.trainable), total);
    EXPECT_TRUE(fa.frozen.empty());

    net.add_domain("new", 7, PlacementConfig::all(), rng, nullptr);
    const auto ho = partition_params(net, "new", Regime::HeadOnly);
    EXPECT_EQ(count_elements(net, ho.trainable), net.feature_channels() * 7 + 7);

    const auto ao = partition_params(net, "new", Regime::AdaptersOnly);
    EXPECT_EQ(ao.trainable.count(names::universal_filter(0)), 0u);
    EXPECT_EQ(ao.frozen.count(names::universal_filter(0)), 1u);
    EXPECT_EQ(ao.trainable.count(names::head_weights("base")), 0u);
    std::size_t alphas = 0;
    for (const auto& n : ao.trainable) alphas += n.find("/alpha") != std::string::npos;
    EXPECT_EQ(alphas, tiny_config().body_convs());
}

TEST(Forward, ZeroAdaptersReproduceBaseAtEveryBlock) {
    for (Topology topo : {Topology::Parallel, Topology::Series}) {
        CounterRng rng(4);
        Network<double> net(tiny_config(), rng);
        auto& base = net.add_domain("base", 3, PlacementConfig::none(), rng);
        randomize_domain(base, rng, false);
        const std::string base_id = "base";
        net.add_domain("adapted", 3, PlacementConfig::all(topo), rng, &base_id);
        const auto x = random_tensor(Shape{2, 8, 8, 3}, rng);
        std::vector<Tensor<double>> a, b;
        const auto fa = net.infer_features(x, "base", &a);
        const auto fb = net.infer_features(x, "adapted", &b);
        ASSERT_EQ(a.size(), b.size());
        ASSERT_EQ(a.size(), tiny_config().residual_blocks());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_LE(max_rel_diff(b[i], a[i]), 1e-12) << to_string(topo) << " block " << i;
        }
        EXPECT_LE(max_rel_diff(fb, fa), 1e-12);
    }
}

TEST(Forward, EvalDeterminismAndUnknownDomain) {
    CounterRng rng(5);
    Network<double> net(tiny_config(), rng);
    auto& d = net.add_domain("a", 4, PlacementConfig::all(), rng);
    randomize_domain(d, rng, true);
    const auto x = random_tensor(Shape{3, 8, 8, 3}, rng);
    EXPECT_EQ(net.infer(x, "a"), net.infer(x, "a"));
    EXPECT_EQ(net.forward(x, "a", Mode::Eval), net.infer(x, "a"));
    EXPECT_THROW(net.infer(x, "missing"), ConfigError);
    EXPECT_THROW(net.infer(random_tensor(Shape{1, 6, 6, 3}, rng), "a"), ConfigError);
}

TEST(Forward, DomainIsolation) {
    CounterRng rng(6);
    Network<double> net(tiny_config(), rng);
    auto& a = net.add_domain("a", 4, PlacementConfig::all(), rng);
    randomize_domain(a, rng, true);
    auto& b = net.add_domain("b", 5, PlacementConfig::all(Topology::Series), rng);
    randomize_domain(b, rng, true);
    const auto x = random_tensor(Shape{2, 8, 8, 3}, rng);
    const auto before = net.infer(x, "b");
    // Train-mode passes update a's running statistics; then perturb its parameters.
    (void)net.forward(x, "a", Mode::Train, 99);
    auto& a2 = net.domain("a");
    for (auto& [i, m] : a2.alphas) m.array() += 0.5;
    a2.head_weights.array() *= 2.0;
    a2.bn[0].scale[0] = 3.0;
    EXPECT_EQ(net.infer(x, "b"), before);
}

TEST(Forward, FusedDomainMatchesTwoPathAndUnfusesBitwise) {
    CounterRng rng(7);
    Network<double> net(tiny_config(), rng);
    auto& d = net.add_domain("a", 4, PlacementConfig::all(), rng);
    randomize_domain(d, rng, true);
    const auto x = random_tensor(Shape{2, 8, 8, 3}, rng);
    const auto two_path = net.infer(x, "a");
    std::vector<std::pair<std::string, std::vector<double>>> snapshot;
    net.visit([&](const ParamView<const double>& p) {
        snapshot.emplace_back(p.name, std::vector<double>(p.values.begin(), p.values.end()));
    });
    net.fuse_domain("a");
    EXPECT_EQ(net.domain("a").fused.size(), tiny_config().body_convs());
    EXPECT_LE(max_rel_diff(net.infer(x, "a"), two_path), 1e-12);
    EXPECT_THROW(net.fuse_domain("a"), ConfigError);
    net.unfuse_domain("a");
    std::vector<std::pair<std::string, std::vector<double>>> after;
    net.visit([&](const ParamView<const double>& p) {
        after.emplace_back(p.name, std::vector<double>(p.values.begin(), p.values.end()));
    });
    EXPECT_EQ(after, snapshot);
    EXPECT_EQ(net.infer(x, "a"), two_path);
}

TEST(Forward, CorruptedFusedBankIsDetected) {
    CounterRng rng(8);
    Network<double> net(tiny_config(), rng);
    auto& d = net.add_domain("a", 4, PlacementConfig::all(), rng);
    randomize_domain(d, rng, true);
    net.fuse_domain("a");
    net.domain("a").fused.begin()->second.at(0, 0, 0, 0) += 1.0;
    EXPECT_THROW(net.unfuse_domain("a"), IntegrityError);
}

TEST(Forward, GoldenLogitsForToyNet) {
    CounterRng rng(20240917);
    Network<double> net(toy_config(), rng);
    auto& d = net.add_domain("golden", 6, PlacementConfig::all(), rng);
    randomize_domain(d, rng, true);
    const auto x = random_tensor(Shape{2, 8, 8, 3}, rng);
    const auto logits = net.infer(x, "golden");

    const std::filesystem::path golden = std::filesystem::path(RESADAPT_TEST_DATA) / "toy_logits.mdtb";
    if (!std::filesystem::exists(golden) || std::getenv("RESADAPT_REGEN_GOLDEN")) {
        std::filesystem::create_directories(golden.parent_path());
        save_tensor(golden, logits);
        std::printf("wrote golden logits to %s\n", golden.c_str());
    }
    const auto expected = load_tensor<double>(golden);
    ASSERT_EQ(expected.shape(), logits.shape());
    EXPECT_LE(max_rel_diff(logits, expected), 1e-12);
}
