// End-to-end acceptance run. Prints one [PASS]/[FAIL] line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "resadapt/adapters.hpp"
#include "resadapt/checkpoint.hpp"
#include "resadapt/compression.hpp"
#include "resadapt/dataset.hpp"
#include "resadapt/digest.hpp"
#include "resadapt/gradcheck_suite.hpp"
#include "resadapt/network.hpp"
#include "resadapt/trainer.hpp"

using namespace resadapt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Tensor<double> gaussian(Shape shape, CounterRng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = scale * rng.next_gaussian();
    return t;
}

Matrix<double> gaussian(std::size_t rows, std::size_t cols, CounterRng& rng, double scale = 1.0) {
    Matrix<double> m{static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.next_gaussian();
    return m;
}

FilterBank<double> gaussian_bank(std::size_t l, std::size_t cin, std::size_t cout, CounterRng& rng) {
    FilterBank<double> f(l, cin, cout);
    for (auto& v : f.weights().values()) v = rng.next_gaussian();
    return f;
}

double rel_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        ref = std::max(ref, std::abs(b[i]));
    }
    return diff / std::max(ref, 1e-300);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

// ---------------------------------------------------------------------------

void fusion_equivalence() {
    const auto t0 = Clock::now();
    CounterRng base(0xF05E);
    double parallel_worst = 0.0, series_worst = 0.0;
    std::size_t cases = 0;
    for (std::uint64_t t = 0; t < 200; ++t) {
        CounterRng rng = base.fork(t);
        const std::size_t stride = 1 + t % 2;
        const std::size_t cin = 1 + rng.next_below(8), cout = 1 + rng.next_below(8);
        const std::size_t h = 2 + 2 * rng.next_below(5), w = 2 + 2 * rng.next_below(5);
        const auto x = gaussian(Shape{1 + rng.next_below(3), h, w, cin}, rng);
        const auto f = gaussian_bank(3, cin, cout, rng);
        const auto ap = gaussian(cin, cout, rng, 0.5);
        parallel_worst = std::max(parallel_worst, rel_diff(conv2d(x, fuse_parallel(f, ap), {stride, 1}),
                                                           parallel_forward(x, f, {stride, 1}, ap)));
        const auto as = gaussian(cout, cout, rng, 0.5);
        series_worst = std::max(series_worst,
                                rel_diff(conv2d(x, fuse_series(f, as), {stride, 1}),
                                         series_forward<double>(x, f, {stride, 1}, as, nullptr, Mode::Eval)));
        ++cases;
    }
    const double secs = seconds_since(t0);
    const bool ok = parallel_worst <= 1e-6 && series_worst <= 1e-6 && cases >= 100 && secs < 10.0;
    verdict(1, ok,
            std::to_string(cases) + " cases at strides 1/2, parallel max rel " + fmt("%.2e", parallel_worst) +
                ", series max rel " + fmt("%.2e", series_worst) + ", " + fmt("%.2f s", secs));
}

void shrink_to_identity() {
    double worst = 0.0;
    std::size_t blocks = 0;
    for (Topology topo : {Topology::Parallel, Topology::Series}) {
        CounterRng rng(0x1D);
        Network<double> net(NetworkConfig::desk(), rng);
        auto& base = net.add_domain("base", 5, PlacementConfig::none(), rng);
        for (auto& bn : base.bn) {
            for (std::size_t c = 0; c < bn.channels(); ++c) {
                bn.scale[c] = 1.0 + 0.3 * rng.next_gaussian();
                bn.bias[c] = 0.2 * rng.next_gaussian();
                bn.running_mean[c] = 0.2 * rng.next_gaussian();
                bn.running_var[c] = 0.5 + rng.next_uniform();
            }
        }
        const std::string base_id = "base";
        net.add_domain("adapted", 7, PlacementConfig::all(topo), rng, &base_id);
        const auto x = gaussian(Shape{4, 16, 16, 3}, rng);
        std::vector<Tensor<double>> a, b;
        const auto fa = net.infer_features(x, "base", &a);
        const auto fb = net.infer_features(x, "adapted", &b);
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_diff(b[i], a[i]));
        worst = std::max(worst, rel_diff(fb, fa));
        blocks += a.size();
    }
    verdict(2, worst <= 1e-12 && blocks > 0,
            "zero adapters (parallel and series) vs base over " + std::to_string(blocks) +
                " block outputs, max rel " + fmt("%.2e", worst));
}

void gradient_suite() {
    const auto t0 = Clock::now();
    const auto report = run_gradcheck_suite(0x6AD, 60);
    const double secs = seconds_since(t0);
    const auto* worst = report.worst();
    const bool ok = report.trials >= 50 && report.passed(1e-6) && secs < 60.0;
    verdict(3, ok,
            std::to_string(report.trials) + " randomized trials, " + std::to_string(report.reports.size()) +
                " checks, worst " + (worst ? worst->name : std::string("?")) + " " +
                fmt("%.2e", report.max_error()) + ", " + fmt("%.2f s", secs));
}

void svd_suite() {
    CounterRng base(0x5D);
    double ortho = 0.0, recon = 0.0, identity = 0.0;
    std::size_t wins = 0, trials = 0;
    bool monotone = true;
    for (std::uint64_t t = 0; t < 10; ++t) {
        CounterRng rng = base.fork(t);
        const std::size_t c = 4 + 2 * rng.next_below(5), tcount = 1 + rng.next_below(4);
        std::vector<Matrix<double>> alphas;
        for (std::size_t i = 0; i < tcount; ++i) alphas.push_back(gaussian(c, c, rng));
        const Matrix<double> stacked = stack_columns(alphas);
        const auto s = svd(stacked);
        const Eigen::Index r = Eigen::Index(s.singular_values.size());
        ortho = std::max(ortho, (s.u.transpose() * s.u - Matrix<double>::Identity(r, r)).norm());
        ortho = std::max(ortho, (s.v.transpose() * s.v - Matrix<double>::Identity(r, r)).norm());
        const Matrix<double> rec =
            s.u * Eigen::Map<const Eigen::VectorXd>(s.singular_values.data(), r).asDiagonal() * s.v.transpose();
        recon = std::max(recon, (rec - stacked).norm() / stacked.norm());

        const std::size_t k = c / 2;
        const auto fact = joint_factorize(alphas, k);
        Matrix<double> sum = Matrix<double>::Zero(Eigen::Index(k), Eigen::Index(k));
        for (const auto& g : fact.gammas) sum += g.transpose() * g;
        identity = std::max(identity, (sum - Matrix<double>::Identity(Eigen::Index(k), Eigen::Index(k))).norm());

        auto residual = [&](const Matrix<double>& b, const std::vector<Matrix<double>>& gs) {
            double e = 0.0;
            for (std::size_t i = 0; i < tcount; ++i) e += (alphas[i] - b * gs[i].transpose()).squaredNorm();
            return e;
        };
        const double best = residual(fact.beta, fact.gammas);
        for (int sample = 0; sample < 50; ++sample) {
            const auto b = gaussian(c, k, rng);
            const auto g = gaussian(c, k, rng);
            std::vector<Matrix<double>> gs(tcount, g);
            // Random factor pairs, and the same random beta with least-squares gammas.
            std::vector<Matrix<double>> fitted;
            for (const auto& a : alphas)
                fitted.push_back((b.transpose() * b).ldlt().solve(b.transpose() * a).transpose());
            trials += 2;
            wins += best <= residual(b, gs);
            wins += best <= residual(b, fitted);
        }

        double previous = 1e300;
        for (std::size_t kk = 1; kk <= c; ++kk) {
            const auto f = joint_factorize(alphas, kk);
            const double e = residual(f.beta, f.gammas);
            monotone = monotone && e <= previous * (1 + 1e-12) + 1e-24;
            previous = e;
        }
        monotone = monotone && previous <= 1e-20 * stacked.squaredNorm();
    }
    const bool ok = ortho <= 1e-10 && recon <= 1e-10 && identity <= 1e-10 && wins == trials && monotone;
    verdict(4, ok,
            "orthonormality " + fmt("%.1e", ortho) + ", reconstruction " + fmt("%.1e", recon) +
                ", sum gamma^T gamma - I " + fmt("%.1e", identity) + ", truncation beat " + std::to_string(wins) +
                "/" + std::to_string(trials) + " random factorizations, error non-increasing in K: " +
                (monotone ? "yes" : "no"));
}

void accounting() {
    CounterRng rng(0xACC);
    Network<float> net(NetworkConfig{}, rng);
    const auto both = count_params(net, PlacementConfig::all());
    bool ninth = true;
    std::size_t adapted = 0;
    for (const auto& layer : both.layers) {
        if (layer.adapter_params == 0) continue;
        ++adapted;
        ninth = ninth && Rational(std::int64_t(layer.adapter_params), std::int64_t(layer.conv_params)) ==
                             adapter_param_fraction(3);
    }
    ninth = ninth && adapter_param_fraction(3) == Rational(1, 9) && adapted == 24;
    auto second = PlacementConfig::all();
    second.within = WithinBlock::SecondOnly;
    const auto half = count_params(net, second);
    const bool halves = 2 * half.planned_adapter_params == both.planned_adapter_params;
    const auto ratio = compression_ratio(10, 256, 128);
    const bool exact = ratio.ratio == Rational(11, 20) && ratio.ratio.value() == 0.55;
    bool stored = true;
    for (std::size_t t : {1u, 3u, 10u}) {
        for (std::size_t c : {8u, 16u}) {
            std::vector<Matrix<double>> alphas;
            for (std::size_t i = 0; i < t; ++i) alphas.push_back(gaussian(c, c, rng));
            const std::size_t k = c / 2;
            stored = stored && joint_factorize(alphas, k).stored_elements() == t * c * k + c * k;
        }
    }
    verdict(5, ninth && halves && exact && stored,
            "adapter/conv = 1/9 on all " + std::to_string(adapted) + " adapted layers, second_only " +
                std::to_string(half.planned_adapter_params) + " vs both " +
                std::to_string(both.planned_adapter_params) + ", compression_ratio(10,256,128) = " +
                std::to_string(ratio.ratio.num) + "/" + std::to_string(ratio.ratio.den) +
                ", stored elements T*C*K + C*K: " + (stored ? "exact" : "mismatch"));
}

// ---------------------------------------------------------------------------
// Desk-scale multi-domain experiments (criteria 6, 7, 8)

struct DomainSpec {
    std::string id;
    double rotation;
    double frequency;
    std::size_t classes;
};

const std::vector<DomainSpec> kShifted{
    {"A", 0.4, 5.0, 10},
    {"B", 1.3, 7.0, 10},
    {"C", 2.2, 4.0, 8},
};

Dataset synth(const std::string& name, std::uint64_t seed, std::size_t classes, std::size_t per_class,
              double rotation, double frequency) {
    SyntheticDomainSpec spec;
    spec.name = name;
    spec.seed = seed;
    spec.num_classes = classes;
    spec.images_per_class = per_class;
    spec.height = spec.width = 16;
    spec.noise_sigma = 0.5;
    spec.palette_rotation = rotation;
    spec.frequency = frequency;
    return generate_domain(spec);
}

TrainConfig train_config(std::size_t epochs, Regime regime, std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 32;
    tc.regime = regime;
    tc.seed = seed;
    return tc;
}

struct SeedResult {
    double base_val = 0.0;
    std::vector<double> adapters, head, finetune, compressed;
    std::size_t alpha_storage = 0, gamma_storage = 0;
    std::size_t stored_before = 0, stored_after = 0;
    bool digests_ok = true;
    std::string digest_note;
};

struct IntegrityEvidence {
    bool fuse_roundtrip = false;
    bool serialization = false;
    bool reproducible = false;
    std::string note;
};

SeedResult run_seed(std::uint64_t s, IntegrityEvidence* evidence) {
    SeedResult out;
    const std::uint64_t data = 1000 * s;
    const auto base_train = synth("base", 1 + data, 5, 400, 0.0, 3.0);
    const auto base_val = synth("base", 2 + data, 5, 100, 0.0, 3.0);
    RunReport base_report;
    Network<float> net = train_base<float>(NetworkConfig::desk(), "base", base_train, &base_val,
                                           train_config(6, Regime::FinetuneAll, 100 + s), base_report);
    out.base_val = *base_report.final_val_accuracy;
    const std::string universal = universal_digest(net);
    const Network<float> pristine = net;

    std::vector<Dataset> trains, vals;
    for (const auto& d : kShifted) {
        trains.push_back(synth(d.id, 11 + data, d.classes, 1000 / d.classes, d.rotation, d.frequency));
        vals.push_back(synth(d.id, 12 + data, d.classes, 60, d.rotation, d.frequency));
    }

    for (std::size_t i = 0; i < kShifted.size(); ++i) {
        const auto& id = kShifted[i].id;
        const std::uint64_t seed = 200 + 10 * s + i;
        const auto ra = train_domain<float>(net, "base", id, PlacementConfig::all(), trains[i], &vals[i],
                                            train_config(6, Regime::AdaptersOnly, seed));
        out.adapters.push_back(*ra.final_val_accuracy);
        if (ra.universal_digest_after != universal) {
            out.digests_ok = false;
            out.digest_note += " universal changed by adapters_only(" + id + ")";
        }

        Network<float> scratch = pristine;
        const auto rh = train_domain<float>(scratch, "base", id, PlacementConfig::none(), trains[i], &vals[i],
                                            train_config(30, Regime::HeadOnly, seed));
        out.head.push_back(*rh.final_val_accuracy);
        scratch.remove_domain(id);
        const auto rf = train_domain<float>(scratch, "base", id, PlacementConfig::none(), trains[i], &vals[i],
                                            train_config(6, Regime::FinetuneAll, seed));
        out.finetune.push_back(*rf.final_val_accuracy);
        std::printf("  seed %llu domain %s: adapters_only %.2f%%  head_only %.2f%%  finetune_all %.2f%%\n",
                    static_cast<unsigned long long>(s), id.c_str(), 100 * out.adapters.back(),
                    100 * out.head.back(), 100 * out.finetune.back());
        std::fflush(stdout);
    }

    if (evidence) {
        // Parallel fuse then unfuse must give back the same checkpoint bytes.
        const auto before = to_checkpoint(net).encode();
        Network<float> fused = net;
        fused.fuse_domain("A");
        const fs::path dir = fs::temp_directory_path() / "resadapt_acceptance";
        fs::create_directories(dir);
        save_checkpoint(dir / "fused.mdck", to_checkpoint(fused));
        auto reloaded = from_checkpoint<float>(load_checkpoint(dir / "fused.mdck"));
        reloaded.unfuse_domain("A");
        evidence->fuse_roundtrip = to_checkpoint(reloaded).encode() == before;

        // Same seed, same inputs: retrain domain A from the pristine base and compare bytes.
        Network<float> again = pristine;
        (void)train_domain<float>(again, "base", "A", PlacementConfig::all(), trains[0], &vals[0],
                                  train_config(6, Regime::AdaptersOnly, 200 + 10 * s));
        Network<float> reference = pristine;
        reference.insert_domain(net.domain("A"));
        evidence->reproducible = to_checkpoint(again).encode() == to_checkpoint(reference).encode();
    }

    for (const auto& d : kShifted) {
        for (const auto& [index, a] : net.domain(d.id).alphas) out.alpha_storage += std::size_t(a.size());
    }
    std::vector<std::string> ids;
    for (const auto& d : kShifted) ids.push_back(d.id);
    const auto comp = compress_adapters(net, ids, RankSpec::parse("half"));
    out.stored_before = comp.stored_before;
    out.stored_after = comp.stored_after;
    for (const auto& d : kShifted) {
        for (const auto& [index, g] : net.domain(d.id).gammas) out.gamma_storage += std::size_t(g.size());
    }
    const std::string betas = beta_digest(net);
    for (std::size_t i = 0; i < kShifted.size(); ++i) {
        auto tc = train_config(3, Regime::GammasOnly, 300 + 10 * s + i);
        tc.lr.initial = 0.01;
        const auto rg = finetune_gammas<float>(net, kShifted[i].id, trains[i], &vals[i], tc);
        out.compressed.push_back(*rg.final_val_accuracy);
        if (rg.beta_digest_after != betas || rg.universal_digest_after != universal) {
            out.digests_ok = false;
            out.digest_note += " digest changed by finetune-gamma(" + kShifted[i].id + ")";
        }
        std::printf("  seed %llu domain %s: compressed K=C/2 + gamma fine-tune %.2f%%\n",
                    static_cast<unsigned long long>(s), kShifted[i].id.c_str(), 100 * out.compressed.back());
        std::fflush(stdout);
    }
    if (universal_digest(net) != universal || beta_digest(net) != betas) {
        out.digests_ok = false;
        out.digest_note += " final digests differ";
    }

    if (evidence) {
        // Full multi-domain checkpoint and a dataset directory through the filesystem.
        const fs::path dir = fs::temp_directory_path() / "resadapt_acceptance";
        save_checkpoint(dir / "compressed.mdck", to_checkpoint(net));
        const auto loaded = from_checkpoint<float>(load_checkpoint(dir / "compressed.mdck"));
        bool same = to_checkpoint(loaded).encode() == to_checkpoint(net).encode();
        const auto x = gather_images<float>(vals[0], std::vector<std::size_t>{0, 1, 2, 3});
        for (const auto& id : net.domain_ids()) same = same && loaded.infer(x, id) == net.infer(x, id);
        save_dataset(dir / "dataset", vals[1]);
        const auto ds = load_dataset(dir / "dataset");
        same = same && ds.images == vals[1].images && ds.labels == vals[1].labels;
        const auto wide = from_checkpoint<double>(to_checkpoint(net));
        same = same && to_checkpoint(from_checkpoint<float>(to_checkpoint(wide))).encode() ==
                           to_checkpoint(net).encode();
        evidence->serialization = same;
        fs::remove_all(dir);
    }
    return out;
}

}  // namespace

int main() {
    const auto t_all = Clock::now();
    fusion_equivalence();
    shrink_to_identity();
    gradient_suite();
    svd_suite();
    accounting();

    const auto t_desk = Clock::now();
    std::vector<SeedResult> seeds;
    IntegrityEvidence evidence;
    for (std::uint64_t s = 0; s < 3; ++s) {
        std::printf("seed %llu\n", static_cast<unsigned long long>(s));
        seeds.push_back(run_seed(s, s == 0 ? &evidence : nullptr));
        std::printf("  base val %.2f%%, elapsed %.0f s\n", 100 * seeds.back().base_val, seconds_since(t_desk));
    }
    const double desk_secs = seconds_since(t_desk);

    std::vector<double> ad, hd, ft, cp, min_base;
    bool base_ok = true;
    for (const auto& r : seeds) {
        ad.push_back(mean(r.adapters));
        hd.push_back(mean(r.head));
        ft.push_back(mean(r.finetune));
        cp.push_back(mean(r.compressed));
        base_ok = base_ok && r.base_val >= 0.95;
    }
    const double m_ad = 100 * median(ad), m_hd = 100 * median(hd), m_ft = 100 * median(ft), m_cp = 100 * median(cp);
    std::string per_domain;
    for (std::size_t i = 0; i < kShifted.size(); ++i) {
        std::vector<double> a, h, f;
        for (const auto& r : seeds) {
            a.push_back(r.adapters[i]);
            h.push_back(r.head[i]);
            f.push_back(r.finetune[i]);
        }
        per_domain += " " + kShifted[i].id + " " + fmt("%.1f", 100 * median(a)) + "/" + fmt("%.1f", 100 * median(h)) +
                      "/" + fmt("%.1f", 100 * median(f));
    }
    verdict(6, base_ok && m_ad >= m_hd + 5.0 && m_ad >= m_ft - 3.0 && desk_secs <= 900.0,
            "base val >= 95% on every seed: " + std::string(base_ok ? "yes" : "no") +
                "; median over 3 seeds of domain-mean accuracy: adapters_only " + fmt("%.2f", m_ad) +
                ", head_only " + fmt("%.2f", m_hd) + ", finetune_all " + fmt("%.2f", m_ft) +
                " (per-domain medians adapters/head/finetune:" + per_domain + "); " + fmt("%.0f s", desk_secs));

    bool halved = true;
    for (const auto& r : seeds) {
        halved = halved && 2 * r.gamma_storage == r.alpha_storage &&
                 Rational(std::int64_t(r.stored_after), std::int64_t(r.stored_before)) == Rational(4, 6);
    }
    verdict(7, m_cp >= m_ad - 2.0 && halved,
            "median compressed+finetuned " + fmt("%.2f", m_cp) + " vs uncompressed " + fmt("%.2f", m_ad) +
                "; per-domain storage " + std::to_string(seeds[0].gamma_storage) + " vs " +
                std::to_string(seeds[0].alpha_storage) + ", total " + std::to_string(seeds[0].stored_after) +
                " vs " + std::to_string(seeds[0].stored_before) + " = (T+1)/(2T) with T=3");

    bool digests = true;
    std::string notes;
    for (const auto& r : seeds) {
        digests = digests && r.digests_ok;
        notes += r.digest_note;
    }
    verdict(8, digests && evidence.fuse_roundtrip && evidence.serialization && evidence.reproducible,
            std::string("universal/beta digests stable: ") + (digests ? "yes" : "no" + notes) +
                "; fuse/unfuse checkpoint bitwise: " + (evidence.fuse_roundtrip ? "yes" : "no") +
                "; serialization round trips bitwise: " + (evidence.serialization ? "yes" : "no") +
                "; fixed-seed retrain bitwise: " + (evidence.reproducible ? "yes" : "no"));

    std::printf("%d of 8 criteria failed, total %.0f s\n", failures, seconds_since(t_all));
    return failures == 0 ? 0 : 1;
}
