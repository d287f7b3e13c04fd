#include "resadapt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "resadapt/digest.hpp"
#include "resadapt/errors.hpp"
#include "resadapt/optim.hpp"
#include "resadapt/tensor_io.hpp"

namespace resadapt {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

double LrSchedule::at(std::size_t epoch, std::size_t epochs) const {
    double lr = initial;
    for (double m : milestones) {
        if (double(epoch) >= std::floor(m * double(epochs))) {
            lr *= factor;
        }
    }
    return lr;
}

double resolve_weight_decay(const WeightDecayPolicy& policy, const std::string& domain, std::size_t train_size) {
    double wd = 0.0;
    if (auto it = policy.overrides.find(domain); it != policy.overrides.end()) {
        wd = it->second;
    } else if (train_size < policy.small_limit) {
        wd = policy.small_value;
    } else if (train_size < policy.large_limit) {
        wd = policy.medium_value;
    } else {
        wd = policy.large_value;
    }
    if (!(wd > 0.0) || !std::isfinite(wd)) {
        throw ConfigError("weight decay for domain '" + domain + "' must be positive and finite");
    }
    return wd;
}

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    if (!(lr.initial >= 0.0) || !(lr.factor > 0.0)) {
        throw ConfigError("learning rate must be non-negative with a positive decay factor");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (weight_decay_value && !(*weight_decay_value >= 0.0)) {
        throw ConfigError("weight decay must be non-negative");
    }
}

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> TrainConfig::describe() const {
    std::string ms;
    for (double m : lr.milestones) {
        ms += (ms.empty() ? "" : ",") + fmt(m);
    }
    return {{"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"lr", fmt(lr.initial)},
            {"lr_milestones", ms},
            {"lr_factor", fmt(lr.factor)},
            {"momentum", fmt(momentum)},
            {"regime", std::string(to_string(regime))},
            {"wd", weight_decay_value ? fmt(*weight_decay_value) : "auto"},
            {"seed", std::to_string(seed)}};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string RunReport::summary_text() const {
    std::ostringstream s;
    s << "command = " << command << "\n";
    s << "domain = " << domain << "\n";
    for (const auto& [k, v] : config) {
        s << k << " = " << v << "\n";
    }
    s << "weight_decay = " << fmt(weight_decay) << "\n";
    s << "train_size = " << train_size << "\n";
    s << "trainable_params = " << trainable_params << "\n";
    s << "final_train_accuracy = " << fmt(final_train_accuracy) << "\n";
    if (final_val_accuracy) {
        s << "final_val_accuracy = " << fmt(*final_val_accuracy) << "\n";
        s << "final_val_loss = " << fmt(*final_val_loss) << "\n";
    }
    s << "universal_digest_before = " << universal_digest_before << "\n";
    s << "universal_digest_after = " << universal_digest_after << "\n";
    if (!frozen_digest_before.empty()) {
        s << "frozen_digest_before = " << frozen_digest_before << "\n";
        s << "frozen_digest_after = " << frozen_digest_after << "\n";
    }
    if (!beta_digest_before.empty()) {
        s << "beta_digest_before = " << beta_digest_before << "\n";
        s << "beta_digest_after = " << beta_digest_after << "\n";
    }
    s << "wall_seconds = " << fmt(wall_seconds) << "\n";
    return s.str();
}

namespace {
void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}
}  // namespace

void RunReport::write_csv(const std::filesystem::path& path) const {
    std::ostringstream s;
    s << "epoch,split,loss,accuracy,lr\n";
    for (const auto& e : history) {
        s << e.epoch << "," << e.split << "," << fmt(e.loss) << "," << fmt(e.accuracy) << "," << fmt(e.lr) << "\n";
    }
    write_text(path, s.str());
}

void RunReport::write_summary(const std::filesystem::path& path) const { write_text(path, summary_text()); }

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <typename T>
std::size_t argmax(std::span<const T> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k] > row[best]) {
            best = k;
        }
    }
    return best;
}

namespace {

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v;
    v.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        v.push_back(i);
    }
    return v;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
    const std::size_t k = logits.channels();
    std::size_t correct = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (argmax<T>(logits.values().subspan(n * k, k)) == labels[n]) {
            ++correct;
        }
    }
    return correct;
}

template <typename T>
EvalResult evaluate_features(const Tensor<T>& features, const DomainParams<T>& d, std::span<const std::uint32_t> labels) {
    const auto out = classifier_head(features, d.head_weights, d.head_bias, labels);
    EvalResult r;
    r.count = labels.size();
    r.accuracy = double(count_correct(out.logits, labels)) / double(r.count);
    r.loss = out.loss;
    return r;
}

void check_dataset(const Dataset& ds, std::size_t num_classes, const std::string& domain) {
    ds.validate();
    if (ds.size() == 0) {
        throw ConfigError("dataset for domain '" + domain + "' is empty");
    }
    if (ds.num_classes != num_classes) {
        throw ConfigError("dataset '" + ds.name + "' has " + std::to_string(ds.num_classes) + " classes, domain '" +
                          domain + "' expects " + std::to_string(num_classes));
    }
}

}  // namespace

template <typename T>
EvalResult evaluate(const Network<T>& net, const std::string& domain, const Dataset& ds, std::size_t batch_size) {
    const DomainParams<T>& d = net.domain(domain);
    check_dataset(ds, d.num_classes, domain);
    EvalResult total;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < ds.size(); b += batch_size) {
        const auto idx = range(b, std::min(ds.size(), b + batch_size));
        const std::span<const std::uint32_t> labels(ds.labels.data() + b, idx.size());
        const Tensor<T> x = gather_images<T>(ds, idx);
        const auto out = classifier_head(net.infer_features(x, domain), d.head_weights, d.head_bias, labels);
        loss_sum += out.loss * double(idx.size());
        correct += count_correct(out.logits, labels);
    }
    total.count = ds.size();
    total.accuracy = double(correct) / double(total.count);
    total.loss = loss_sum / double(total.count);
    return total;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kDropoutStream = 0x64726f706f7574ULL;

using Clock = std::chrono::steady_clock;

bool decays(ParamKind k) { return k != ParamKind::BatchNorm && k != ParamKind::AdapterBatchNorm; }

template <typename T>
void apply_step(Network<T>& net, const Gradients<T>& grads, double wd, OptimizerState<T>& opt) {
    std::vector<ParamGroup<T>> groups;
    groups.reserve(grads.size());
    net.visit([&](const ParamView<T>& p) {
        auto it = grads.find(p.name);
        if (it == grads.end()) {
            return;
        }
        groups.push_back({p.name, p.values, it->second, decays(p.kind) ? wd : 0.0});
    });
    if (groups.size() != grads.size()) {
        throw ConfigError("gradient produced for a parameter the network does not hold");
    }
    sgd_step<T>(groups, opt);
}

template <typename T>
void record_val(RunReport& report, const Network<T>& net, const std::string& domain, const Dataset* val,
                std::size_t epoch, double lr) {
    if (!val) {
        return;
    }
    const EvalResult r = evaluate(net, domain, *val);
    report.history.push_back({epoch, "val", r.loss, r.accuracy, lr});
    report.final_val_accuracy = r.accuracy;
    report.final_val_loss = r.loss;
}

template <typename T>
void require_finite_loss(double loss, const std::string& domain, std::size_t epoch, std::size_t step) {
    if (!std::isfinite(loss)) {
        throw NumericError("training diverged on domain '" + domain + "' at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step) + " (loss " + fmt(loss) + ")");
    }
}

/// Full forward/backward through the network for every batch.
template <typename T>
void run_epochs(Network<T>& net, const std::string& domain, const Dataset& train, const Dataset* val,
                const TrainConfig& tc, const std::set<std::string>& trainable, double wd, RunReport& report) {
    OptimizerState<T> opt(tc.lr.initial, tc.momentum);
    const std::string hw = names::head_weights(domain), hb = names::head_bias(domain);
    const bool head_w = trainable.count(hw) != 0, head_b = trainable.count(hb) != 0;
    const bool body = std::any_of(trainable.begin(), trainable.end(),
                                  [&](const std::string& n) { return n != hw && n != hb; });
    const CounterRng shuffle_root(tc.seed);
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = tc.lr.at(epoch, tc.epochs);
        opt.set_learning_rate(lr);
        CounterRng shuffle = shuffle_root.fork(epoch);
        const auto order = shuffled_indices(train.size(), shuffle);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < order.size(); b += tc.batch_size, ++step) {
            const std::span<const std::size_t> idx(order.data() + b, std::min(tc.batch_size, order.size() - b));
            std::vector<std::uint32_t> labels;
            labels.reserve(idx.size());
            for (auto i : idx) {
                labels.push_back(train.labels[i]);
            }
            const Tensor<T> x = gather_images<T>(train, idx);
            ForwardTrace<T> trace;
            const Tensor<T> feats = net.forward_features(x, domain, Mode::Train, body ? &trace : nullptr,
                                                         CounterRng::at(tc.seed ^ kDropoutStream, step));
            const DomainParams<T>& d = net.domain(domain);
            const auto out = classifier_head(feats, d.head_weights, d.head_bias, labels);
            require_finite_loss<T>(out.loss, domain, epoch, step);
            loss_sum += out.loss * double(idx.size());
            correct += count_correct(out.logits, labels);
            const auto hg = classifier_head_backward(feats, d.head_weights, out, labels);
            Gradients<T> grads;
            if (head_w) {
                grads[hw].assign(hg.dweights.data(), hg.dweights.data() + hg.dweights.size());
            }
            if (head_b) {
                grads[hb] = hg.dbias;
            }
            if (body) {
                net.backward(trace, hg.dx, trainable, grads);
            }
            apply_step(net, grads, wd, opt);
        }
        report.history.push_back({epoch, "train", loss_sum / double(train.size()),
                                  double(correct) / double(train.size()), lr});
        report.final_train_accuracy = double(correct) / double(train.size());
        if (tc.eval_every_epoch || epoch + 1 == tc.epochs) {
            record_val(report, net, domain, val, epoch, lr);
        }
    }
    if (tc.epochs == 0) {
        report.final_train_accuracy = evaluate(net, domain, train).accuracy;
        record_val(report, net, domain, val, 0, tc.lr.initial);
    }
}

/// Classifier-only training on features computed once with the frozen network.
template <typename T>
void run_head_epochs(Network<T>& net, const std::string& domain, const Dataset& train, const Dataset* val,
                     const TrainConfig& tc, double wd, RunReport& report) {
    const std::size_t c = net.feature_channels();
    Tensor<T> features(Shape{train.size(), c});
    for (std::size_t b = 0; b < train.size(); b += 256) {
        const auto idx = range(b, std::min(train.size(), b + 256));
        const Tensor<T> f = net.infer_features(gather_images<T>(train, idx), domain);
        std::copy(f.data(), f.data() + f.size(), features.data() + b * c);
    }
    OptimizerState<T> opt(tc.lr.initial, tc.momentum);
    const std::string hw = names::head_weights(domain), hb = names::head_bias(domain);
    const CounterRng shuffle_root(tc.seed);
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = tc.lr.at(epoch, tc.epochs);
        opt.set_learning_rate(lr);
        CounterRng shuffle = shuffle_root.fork(epoch);
        const auto order = shuffled_indices(train.size(), shuffle);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
            const std::size_t n = std::min(tc.batch_size, order.size() - b);
            Tensor<T> x(Shape{n, c});
            std::vector<std::uint32_t> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t src = order[b + i];
                std::copy(features.data() + src * c, features.data() + (src + 1) * c, x.data() + i * c);
                labels[i] = train.labels[src];
            }
            const DomainParams<T>& d = net.domain(domain);
            const auto out = classifier_head(x, d.head_weights, d.head_bias, labels);
            require_finite_loss<T>(out.loss, domain, epoch, b / tc.batch_size);
            loss_sum += out.loss * double(n);
            correct += count_correct(out.logits, labels);
            const auto hg = classifier_head_backward(x, d.head_weights, out, labels);
            Gradients<T> grads;
            grads[hw].assign(hg.dweights.data(), hg.dweights.data() + hg.dweights.size());
            grads[hb] = hg.dbias;
            apply_step(net, grads, wd, opt);
        }
        report.history.push_back({epoch, "train", loss_sum / double(train.size()),
                                  double(correct) / double(train.size()), lr});
        report.final_train_accuracy = double(correct) / double(train.size());
        if (tc.eval_every_epoch || epoch + 1 == tc.epochs) {
            record_val(report, net, domain, val, epoch, lr);
        }
    }
    if (tc.epochs == 0) {
        report.final_train_accuracy = evaluate_features(features, net.domain(domain), train.labels).accuracy;
        record_val(report, net, domain, val, 0, tc.lr.initial);
    }
}

template <typename T>
void verify_unchanged(const std::string& what, const std::string& before, const std::string& after,
                      const std::string& domain) {
    if (before != after) {
        throw IntegrityError(what + " changed while training domain '" + domain + "' (" + before.substr(0, 16) +
                             " -> " + after.substr(0, 16) + ")");
    }
}

}  // namespace

template <typename T>
Network<T> train_base(const NetworkConfig& cfg, const std::string& domain, const Dataset& train, const Dataset* val,
                      const TrainConfig& tc, RunReport& report) {
    tc.validate();
    const auto start = Clock::now();
    CounterRng init(tc.seed);
    Network<T> net(cfg, init);
    net.add_domain(domain, train.num_classes, PlacementConfig::none(), init);
    check_dataset(train, train.num_classes, domain);

    report = RunReport{};
    report.command = "train-base";
    report.domain = domain;
    report.config = tc.describe();
    report.train_size = train.size();
    report.weight_decay = tc.weight_decay_value ? *tc.weight_decay_value
                                                : resolve_weight_decay(tc.weight_decay, domain, train.size());
    const auto part = partition_params(net, domain, Regime::FinetuneAll);
    report.trainable_params = count_elements(net, part.trainable);
    report.universal_digest_before = universal_digest(net);
    run_epochs(net, domain, train, val, tc, part.trainable, report.weight_decay, report);
    report.universal_digest_after = universal_digest(net);
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return net;
}

template <typename T>
RunReport train_domain(Network<T>& net, const std::string& base_domain, const std::string& domain,
                       const PlacementConfig& placement, const Dataset& train, const Dataset* val,
                       const TrainConfig& tc) {
    tc.validate();
    if (tc.regime == Regime::GammasOnly) {
        throw ConfigError("gammas_only training goes through finetune-gamma");
    }
    if (!net.has_domain(base_domain)) {
        throw ConfigError("unknown base domain '" + base_domain + "'");
    }
    check_dataset(train, train.num_classes, domain);
    if (val) {
        check_dataset(*val, train.num_classes, domain);
    }
    const auto start = Clock::now();
    CounterRng init = CounterRng(tc.seed).fork(0x68656164);
    const PlacementConfig effective = tc.regime == Regime::AdaptersOnly ? placement : PlacementConfig::none();
    if (tc.regime == Regime::AdaptersOnly && !effective.any()) {
        throw ConfigError("adapters_only training needs a placement with at least one adapted macro-block");
    }
    net.add_domain(domain, train.num_classes, effective, init, &base_domain);
    if (tc.regime == Regime::FinetuneAll) {
        net.materialize_own_universal(domain);
    }

    RunReport report;
    report.command = "train-domain";
    report.domain = domain;
    report.config = tc.describe();
    report.config.emplace_back("base_domain", base_domain);
    report.config.emplace_back("topology", std::string(to_string(effective.topology)));
    report.config.emplace_back("placement", macros_to_string(effective.macros));
    report.config.emplace_back("within", std::string(to_string(effective.within)));
    report.config.emplace_back("dropout", effective.dropout ? fmt(*effective.dropout) : "off");
    report.train_size = train.size();
    report.weight_decay = tc.weight_decay_value ? *tc.weight_decay_value
                                                : resolve_weight_decay(tc.weight_decay, domain, train.size());

    const auto part = partition_params(net, domain, tc.regime);
    report.trainable_params = count_elements(net, part.trainable);
    report.universal_digest_before = universal_digest(net);
    report.beta_digest_before = beta_digest(net);
    report.frozen_digest_before = named_digest(net, part.frozen);
    if (tc.regime == Regime::HeadOnly) {
        run_head_epochs(net, domain, train, val, tc, report.weight_decay, report);
    } else {
        run_epochs(net, domain, train, val, tc, part.trainable, report.weight_decay, report);
    }
    report.universal_digest_after = universal_digest(net);
    report.beta_digest_after = beta_digest(net);
    report.frozen_digest_after = named_digest(net, part.frozen);
    verify_unchanged<T>("universal filters", report.universal_digest_before, report.universal_digest_after, domain);
    verify_unchanged<T>("shared betas", report.beta_digest_before, report.beta_digest_after, domain);
    verify_unchanged<T>("frozen parameters", report.frozen_digest_before, report.frozen_digest_after, domain);
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return report;
}

template <typename T>
RunReport finetune_gammas(Network<T>& net, const std::string& domain, const Dataset& train, const Dataset* val,
                          TrainConfig tc) {
    tc.regime = Regime::GammasOnly;
    tc.validate();
    const DomainParams<T>& d = net.domain(domain);
    if (d.gammas.empty()) {
        throw ConfigError("domain '" + domain + "' has no compressed layers");
    }
    if (!d.fused.empty()) {
        throw ConfigError("domain '" + domain + "' is fused; unfuse it before fine-tuning");
    }
    check_dataset(train, d.num_classes, domain);
    if (val) {
        check_dataset(*val, d.num_classes, domain);
    }
    const auto start = Clock::now();
    RunReport report;
    report.command = "finetune-gamma";
    report.domain = domain;
    report.config = tc.describe();
    report.train_size = train.size();
    report.weight_decay = tc.weight_decay_value ? *tc.weight_decay_value
                                                : resolve_weight_decay(tc.weight_decay, domain, train.size());
    const auto part = partition_params(net, domain, Regime::GammasOnly);
    report.trainable_params = count_elements(net, part.trainable);
    report.universal_digest_before = universal_digest(net);
    report.beta_digest_before = beta_digest(net);
    report.frozen_digest_before = named_digest(net, part.frozen);
    run_epochs(net, domain, train, val, tc, part.trainable, report.weight_decay, report);
    report.universal_digest_after = universal_digest(net);
    report.beta_digest_after = beta_digest(net);
    report.frozen_digest_after = named_digest(net, part.frozen);
    verify_unchanged<T>("universal filters", report.universal_digest_before, report.universal_digest_after, domain);
    verify_unchanged<T>("shared betas", report.beta_digest_before, report.beta_digest_after, domain);
    verify_unchanged<T>("frozen parameters", report.frozen_digest_before, report.frozen_digest_after, domain);
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Compression
// ---------------------------------------------------------------------------

std::size_t RankSpec::resolve(std::size_t channels) const {
    const std::size_t k = rank ? *rank : (full ? channels : channels / 2);
    if (k == 0 || k > channels) {
        throw ConfigError("rank " + std::to_string(k) + " outside [1, " + std::to_string(channels) + "]");
    }
    return k;
}

RankSpec RankSpec::parse(const std::string& s) {
    if (s == "half") {
        return {};
    }
    if (s == "full") {
        return RankSpec{std::nullopt, true};
    }
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || v == 0) {
        throw ConfigError("rank must be 'half', 'full' or a positive integer, got '" + s + "'");
    }
    return RankSpec{std::size_t(v)};
}

std::string RankSpec::str() const { return rank ? std::to_string(*rank) : (full ? "full" : "half"); }

template <typename T>
CompressionReport compress_adapters(Network<T>& net, std::span<const std::string> domains, const RankSpec& rank) {
    if (domains.empty()) {
        throw ConfigError("compress: no domains given");
    }
    CompressionReport report;
    report.domains.assign(domains.begin(), domains.end());
    std::vector<DomainParams<T>*> ds;
    for (const auto& id : domains) {
        DomainParams<T>& d = net.domain(id);
        if (!d.fused.empty()) {
            throw ConfigError("compress: domain '" + id + "' is fused");
        }
        if (!d.gammas.empty()) {
            throw ConfigError("compress: domain '" + id + "' is already compressed");
        }
        if (d.alphas.empty()) {
            throw ConfigError("compress: domain '" + id + "' has no adapters");
        }
        if (!ds.empty() && d.alphas.size() != ds.front()->alphas.size()) {
            throw ConfigError("compress: domains are adapted at different layers");
        }
        ds.push_back(&d);
    }
    std::vector<std::size_t> layers;
    for (const auto& [index, a] : ds.front()->alphas) {
        layers.push_back(index);
    }
    for (const std::size_t index : layers) {
        const Matrix<T> first = ds.front()->alphas.at(index);
        if (net.shared_betas().count(index)) {
            throw ConfigError("compress: layer " + std::to_string(index + 1) + " already has a shared beta");
        }
        std::vector<Matrix<double>> alphas;
        for (auto* d : ds) {
            auto it = d->alphas.find(index);
            if (it == d->alphas.end()) {
                throw ConfigError("compress: domain '" + d->id + "' has no adapter at layer " +
                                  std::to_string(index + 1));
            }
            if (it->second.rows() != first.rows() || it->second.cols() != first.cols()) {
                throw ConfigError("compress: adapter shapes differ at layer " + std::to_string(index + 1));
            }
            alphas.push_back(it->second.template cast<double>());
        }
        const std::size_t c = std::size_t(first.rows());
        const std::size_t k = rank.resolve(c);
        const JointFactorization fact = joint_factorize(alphas, k);
        LayerCompression lc;
        lc.layer = index + 1;
        lc.channels = c;
        lc.rank = k;
        lc.relative_error = tail_energy_ratio(fact.singular_values, k);
        lc.stored_before = ds.size() * std::size_t(first.size());
        lc.stored_after = fact.stored_elements();
        net.shared_betas()[index] = fact.beta.template cast<T>();
        for (std::size_t t = 0; t < ds.size(); ++t) {
            ds[t]->gammas[index] = fact.gammas[t].template cast<T>();
            ds[t]->alphas.erase(index);
        }
        report.stored_before += lc.stored_before;
        report.stored_after += lc.stored_after;
        report.layers.push_back(lc);
    }
    return report;
}

#define RESADAPT_INSTANTIATE_TRAINER(T)                                                                            \
    template std::size_t argmax<T>(std::span<const T>);                                                          \
    template EvalResult evaluate<T>(const Network<T>&, const std::string&, const Dataset&, std::size_t);         \
    template Network<T> train_base<T>(const NetworkConfig&, const std::string&, const Dataset&, const Dataset*,   \
                                      const TrainConfig&, RunReport&);                                           \
    template RunReport train_domain<T>(Network<T>&, const std::string&, const std::string&,                     \
                                       const PlacementConfig&, const Dataset&, const Dataset*, const TrainConfig&); \
    template RunReport finetune_gammas<T>(Network<T>&, const std::string&, const Dataset&, const Dataset*,       \
                                          TrainConfig);                                                          \
    template CompressionReport compress_adapters<T>(Network<T>&, std::span<const std::string>, const RankSpec&);

RESADAPT_INSTANTIATE_TRAINER(float)
RESADAPT_INSTANTIATE_TRAINER(double)

}  // namespace resadapt
