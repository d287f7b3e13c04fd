#include "resadapt/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "resadapt/errors.hpp"

namespace resadapt {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

NetworkConfig NetworkConfig::desk() {
    NetworkConfig cfg;
    cfg.widths = {16, 32, 64};
    cfg.blocks_per_macro = 2;
    return cfg;
}

std::size_t NetworkConfig::width(std::size_t macro) const {
    return std::max<std::size_t>(1, std::size_t(std::lround(double(widths[macro]) * width_multiplier)));
}

void NetworkConfig::validate() const {
    for (std::size_t m = 0; m < 3; ++m) {
        if (widths[m] == 0) {
            throw ConfigError("network widths must be positive");
        }
    }
    if (!(width_multiplier > 0.0)) {
        throw ConfigError("width multiplier must be positive");
    }
    if (blocks_per_macro == 0) {
        throw ConfigError("blocks_per_macro must be positive");
    }
    if (filter_size % 2 == 0) {
        throw ConfigError("filter size must be odd, got " + std::to_string(filter_size));
    }
    if (in_channels == 0) {
        throw ConfigError("input channels must be positive");
    }
}

PlacementConfig PlacementConfig::all(Topology topology) {
    PlacementConfig p;
    p.macros = kAllMacros;
    p.topology = topology;
    return p;
}

bool PlacementConfig::adapts(std::size_t macro, std::size_t position) const {
    if ((macros & (1u << macro)) == 0) {
        return false;
    }
    return within == WithinBlock::BothConvs || position == 1;
}

unsigned parse_macros(std::string_view s) {
    if (s == "all") {
        return kAllMacros;
    }
    if (s == "none" || s.empty()) {
        return 0;
    }
    unsigned mask = 0;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find('+', start), s.size());
        const std::string_view part = s.substr(start, end - start);
        if (part == "early") {
            mask |= kEarly;
        } else if (part == "mid") {
            mask |= kMid;
        } else if (part == "late") {
            mask |= kLate;
        } else {
            throw ConfigError("unknown placement '" + std::string(part) + "' (expected all|none|early|mid|late)");
        }
        start = end + 1;
    }
    return mask;
}

std::string macros_to_string(unsigned macros) {
    if (macros == kAllMacros) {
        return "all";
    }
    if (macros == 0) {
        return "none";
    }
    std::string out;
    const char* labels[] = {"early", "mid", "late"};
    for (unsigned m = 0; m < 3; ++m) {
        if (macros & (1u << m)) {
            out += (out.empty() ? "" : "+");
            out += labels[m];
        }
    }
    return out;
}

WithinBlock parse_within(std::string_view s) {
    if (s == "both") {
        return WithinBlock::BothConvs;
    }
    if (s == "second") {
        return WithinBlock::SecondOnly;
    }
    throw ConfigError("unknown within-block placement '" + std::string(s) + "' (expected both|second)");
}

std::string_view to_string(WithinBlock w) { return w == WithinBlock::BothConvs ? "both" : "second"; }

std::string_view to_string(Regime r) {
    switch (r) {
    case Regime::FinetuneAll:
        return "finetune_all";
    case Regime::AdaptersOnly:
        return "adapters_only";
    case Regime::HeadOnly:
        return "head_only";
    case Regime::GammasOnly:
        return "gammas_only";
    }
    return "?";
}

Regime parse_regime(std::string_view s) {
    for (Regime r : {Regime::FinetuneAll, Regime::AdaptersOnly, Regime::HeadOnly, Regime::GammasOnly}) {
        if (s == to_string(r)) {
            return r;
        }
    }
    throw ConfigError("unknown regime '" + std::string(s) + "' (expected finetune_all|adapters_only|head_only)");
}

std::vector<BodyConv> body_layout(const NetworkConfig& cfg) {
    cfg.validate();
    std::vector<BodyConv> out;
    out.reserve(cfg.body_convs());
    for (std::size_t m = 0; m < 3; ++m) {
        for (std::size_t b = 0; b < cfg.blocks_per_macro; ++b) {
            for (std::size_t p = 0; p < 2; ++p) {
                BodyConv c;
                c.index = out.size();
                c.layer = c.index + 1;
                c.macro = m;
                c.block = b;
                c.position = p;
                c.in_channels = cfg.width(m);
                c.out_channels = cfg.width(m);
                out.push_back(c);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

namespace names {
namespace {
std::string domain_prefix(std::string_view domain) { return "domain/" + std::string(domain) + "/"; }
}  // namespace

std::string universal_filter(std::size_t layer) { return "universal/layer/" + std::to_string(layer) + "/filter"; }
std::string universal_projection(std::size_t macro) { return "universal/proj/" + std::to_string(macro) + "/filter"; }
std::string shared_beta(std::size_t layer) { return "shared/layer/" + std::to_string(layer) + "/beta"; }
std::string alpha(std::string_view domain, std::size_t layer) {
    return domain_prefix(domain) + "layer/" + std::to_string(layer) + "/alpha";
}
std::string gamma(std::string_view domain, std::size_t layer) {
    return domain_prefix(domain) + "layer/" + std::to_string(layer) + "/gamma";
}
std::string bn(std::string_view domain, std::size_t index, std::string_view field) {
    return domain_prefix(domain) + "bn/" + std::to_string(index) + "/" + std::string(field);
}
std::string adapter_bn(std::string_view domain, std::size_t layer, std::string_view field) {
    return domain_prefix(domain) + "adapter_bn/" + std::to_string(layer) + "/" + std::string(field);
}
std::string head_weights(std::string_view domain) { return domain_prefix(domain) + "head/weights"; }
std::string head_bias(std::string_view domain) { return domain_prefix(domain) + "head/bias"; }
std::string own_filter(std::string_view domain, std::size_t layer) {
    return domain_prefix(domain) + universal_filter(layer);
}
std::string own_projection(std::string_view domain, std::size_t macro) {
    return domain_prefix(domain) + universal_projection(macro);
}
std::string fused_filter(std::string_view domain, std::size_t layer) {
    return domain_prefix(domain) + "fused/layer/" + std::to_string(layer) + "/filter";
}
}  // namespace names

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
std::size_t UniversalParams<T>::param_count() const {
    std::size_t n = stem.param_count() + projections[0].param_count() + projections[1].param_count();
    for (const auto& f : body) {
        n += f.param_count();
    }
    return n;
}

template <typename T>
Network<T>::Network(NetworkConfig config, CounterRng& rng) : config_(config), layout_(body_layout(config)) {
    const std::size_t l = config_.filter_size;
    universal_.stem = he_filter<T>(l, config_.in_channels, config_.width(0), rng);
    universal_.body.reserve(layout_.size());
    for (const auto& c : layout_) {
        universal_.body.push_back(he_filter<T>(l, c.in_channels, c.out_channels, rng));
    }
    universal_.projections[0] = he_filter<T>(1, config_.width(0), config_.width(1), rng);
    universal_.projections[1] = he_filter<T>(1, config_.width(1), config_.width(2), rng);
}

template <typename T>
Network<T>::Network(NetworkConfig config, UniversalParams<T> universal)
    : config_(config), layout_(body_layout(config)), universal_(std::move(universal)) {
    if (universal_.body.size() != layout_.size()) {
        throw ConfigError("universal parameters hold " + std::to_string(universal_.body.size()) +
                          " body filters, configuration needs " + std::to_string(layout_.size()));
    }
}

namespace {

void validate_domain_id(const std::string& id) {
    if (id.empty() || id.find_first_of("/ \t\n") != std::string::npos) {
        throw ConfigError("domain id '" + id + "' must be non-empty without '/' or whitespace");
    }
}

template <typename T>
BatchNormState<T>& mutable_state(const BatchNormState<T>& s, BatchNormState<T>* m) {
    // Only reached with update_running == false when m is null, so no write happens.
    return m ? *m : const_cast<BatchNormState<T>&>(s);
}

template <typename T>
void accumulate(Gradients<T>& grads, const std::string& name, std::span<const T> g) {
    auto [it, inserted] = grads.try_emplace(name, g.begin(), g.end());
    if (!inserted) {
        if (it->second.size() != g.size()) {
            throw ConfigError("gradient size mismatch for " + name);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            it->second[i] += g[i];
        }
    }
}

template <typename T>
std::span<const T> span_of(const Matrix<T>& m) {
    return {m.data(), std::size_t(m.size())};
}

}  // namespace

template <typename T>
DomainParams<T>& Network<T>::add_domain(const std::string& id, std::size_t num_classes,
                                        const PlacementConfig& placement, CounterRng& rng,
                                        const std::string* clone_bn_from) {
    validate_domain_id(id);
    if (has_domain(id)) {
        throw ConfigError("domain '" + id + "' already registered");
    }
    if (num_classes < 2) {
        throw ConfigError("domain '" + id + "' needs at least 2 classes");
    }
    if (placement.dropout && !(*placement.dropout >= 0.0 && *placement.dropout < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1)");
    }
    DomainParams<T> d;
    d.id = id;
    d.num_classes = num_classes;
    d.placement = placement;
    if (clone_bn_from) {
        d.bn = domain(*clone_bn_from).bn;
    } else {
        for (const auto& c : layout_) {
            d.bn.push_back(BatchNormState<T>::identity(c.in_channels));
        }
        d.bn.push_back(BatchNormState<T>::identity(feature_channels()));
    }
    for (const auto& c : layout_) {
        if (!placement.adapts(c.macro, c.position)) {
            continue;
        }
        const std::size_t rows = adapter_param_count(placement.topology, c.in_channels, c.out_channels) / c.out_channels;
        d.alphas.emplace(c.index, Matrix<T>::Zero(Eigen::Index(rows), Eigen::Index(c.out_channels)));
        if (placement.topology == Topology::Series && placement.series_bn) {
            d.adapter_bn.emplace(c.index, BatchNormState<T>::identity(c.out_channels));
        }
    }
    d.head_weights = Matrix<T>(Eigen::Index(feature_channels()), Eigen::Index(num_classes));
    for (Eigen::Index i = 0; i < d.head_weights.size(); ++i) {
        d.head_weights.data()[i] = T(0.01 * rng.next_gaussian());
    }
    d.head_bias.assign(num_classes, T{0});
    auto [it, inserted] = domains_.emplace(id, std::move(d));
    return it->second;
}

template <typename T>
void Network<T>::insert_domain(DomainParams<T> d) {
    validate_domain_id(d.id);
    if (d.bn.size() != config_.batch_norms()) {
        throw ConfigError("domain '" + d.id + "' has " + std::to_string(d.bn.size()) + " BN states, expected " +
                          std::to_string(config_.batch_norms()));
    }
    const std::string id = d.id;
    if (!domains_.emplace(id, std::move(d)).second) {
        throw ConfigError("domain '" + id + "' already registered");
    }
}

template <typename T>
void Network<T>::remove_domain(const std::string& id) {
    if (domains_.erase(id) == 0) {
        throw ConfigError("unknown domain '" + id + "'");
    }
}

template <typename T>
DomainParams<T>& Network<T>::domain(const std::string& id) {
    auto it = domains_.find(id);
    if (it == domains_.end()) {
        throw ConfigError("unknown domain '" + id + "'");
    }
    return it->second;
}

template <typename T>
const DomainParams<T>& Network<T>::domain(const std::string& id) const {
    auto it = domains_.find(id);
    if (it == domains_.end()) {
        throw ConfigError("unknown domain '" + id + "'");
    }
    return it->second;
}

template <typename T>
std::vector<std::string> Network<T>::domain_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, d] : domains_) {
        ids.push_back(id);
    }
    return ids;
}

template <typename T>
Matrix<T> Network<T>::adapter(const DomainParams<T>& d, std::size_t index) const {
    if (auto g = d.gammas.find(index); g != d.gammas.end()) {
        auto b = betas_.find(index);
        if (b == betas_.end()) {
            throw ConfigError("domain '" + d.id + "' has a gamma for layer " + std::to_string(index + 1) +
                              " but no shared beta");
        }
        return b->second * g->second.transpose();
    }
    auto a = d.alphas.find(index);
    if (a == d.alphas.end()) {
        throw ConfigError("domain '" + d.id + "' has no adapter for layer " + std::to_string(index + 1));
    }
    return a->second;
}

template <typename T>
const FilterBank<T>& Network<T>::host_filter(const DomainParams<T>& d, std::size_t index) const {
    return d.own_universal ? d.own_universal->body[index] : universal_.body[index];
}

template <typename T>
void Network<T>::materialize_own_universal(const std::string& id) {
    auto& d = domain(id);
    if (!d.own_universal) {
        d.own_universal = universal_;
    }
}

template <typename T>
Tensor<T> Network<T>::run_conv(const Tensor<T>& in, const DomainParams<T>& d, DomainParams<T>* md, std::size_t index,
                               Mode mode, ConvTrace<T>* trace) const {
    const BodyConv& bc = layout_[index];
    const ConvGeometry geom{1, (config_.filter_size - 1) / 2};
    Tensor<T> out;
    bool adapted = false, fused = false;
    Matrix<T> alpha;
    if (auto it = d.fused.find(index); it != d.fused.end()) {
        fused = true;
        out = conv2d(in, it->second, geom);
    } else if (d.placement.adapts(bc.macro, bc.position)) {
        adapted = true;
        alpha = adapter(d, index);
        const FilterBank<T>& f = host_filter(d, index);
        if (d.placement.topology == Topology::Parallel) {
            out = parallel_forward(in, f, geom, alpha);
        } else {
            BatchNormState<T>* bn = nullptr;
            if (d.placement.series_bn) {
                bn = &mutable_state(d.adapter_bn.at(index), md ? &md->adapter_bn.at(index) : nullptr);
            }
            out = series_forward(in, f, geom, alpha, bn, mode, trace ? &trace->series : nullptr, md != nullptr);
        }
    } else {
        out = conv2d(in, host_filter(d, index), geom);
    }
    if (trace) {
        trace->input = in;
        trace->adapted = adapted;
        trace->fused = fused;
        trace->alpha = std::move(alpha);
    }
    return out;
}

template <typename T>
Tensor<T> Network<T>::run(const Tensor<T>& x, const DomainParams<T>& d, DomainParams<T>* md, Mode mode,
                          ForwardTrace<T>* trace, std::uint64_t dropout_seed,
                          std::vector<Tensor<T>>* block_outputs) const {
    if (x.rank() != 4 || x.dim(3) != config_.in_channels) {
        throw ConfigError("network input must be N x H x W x " + std::to_string(config_.in_channels) + ", got " +
                          x.shape().str());
    }
    if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0) {
        throw ConfigError("network input extents must be divisible by 4, got " + x.shape().str());
    }
    const UniversalParams<T>& u = d.own_universal ? *d.own_universal : universal_;
    const bool update = md != nullptr;
    const std::size_t pad = (config_.filter_size - 1) / 2;
    auto norm = [&](const Tensor<T>& in, std::size_t j, BatchNormCache<T>* cache) {
        auto& state = mutable_state(d.bn[j], md ? &md->bn[j] : nullptr);
        return batch_norm(in, state, mode, cache, update);
    };

    if (trace) {
        trace->domain = d.id;
        trace->mode = mode;
        trace->input = x;
        trace->blocks.assign(layout_.size() / 2, {});
    }
    Tensor<T> h = conv2d(x, u.stem, {1, pad});
    for (std::size_t k = 0; k < layout_.size() / 2; ++k) {
        const std::size_t m = k / config_.blocks_per_macro;
        const std::size_t b = k % config_.blocks_per_macro;
        if (b == 0 && m > 0) {
            const Shape in_shape = h.shape();
            Tensor<T> pooled = pool(h, PoolKind::Avg2x2);
            h = conv2d(pooled, u.projections[m - 1], {1, 0});
            if (trace) {
                trace->transition_in[m - 1] = in_shape;
                trace->transition_pooled[m - 1] = std::move(pooled);
            }
        }
        BlockTrace<T>* bt = trace ? &trace->blocks[k] : nullptr;
        Tensor<T> pre1 = norm(h, 2 * k, bt ? &bt->bn1 : nullptr);
        Tensor<T> z1 = run_conv(relu(pre1), d, md, 2 * k, mode, bt ? &bt->conv0 : nullptr);
        Tensor<T> pre2 = norm(z1, 2 * k + 1, bt ? &bt->bn2 : nullptr);
        Tensor<T> a2 = relu(pre2);
        const bool drop = d.placement.dropout && mode == Mode::Train &&
                          d.placement.adapts(layout_[2 * k + 1].macro, layout_[2 * k + 1].position);
        DropoutMask<T> mask;
        if (drop) {
            a2 = dropout(a2, *d.placement.dropout, CounterRng::at(dropout_seed, k), mode, bt ? &mask : nullptr);
        }
        Tensor<T> z2 = run_conv(a2, d, md, 2 * k + 1, mode, bt ? &bt->conv1 : nullptr);
        if (bt) {
            bt->input = h;
            bt->pre1 = std::move(pre1);
            bt->pre2 = std::move(pre2);
            bt->dropout = drop;
            bt->mask = std::move(mask);
        }
        for (std::size_t i = 0; i < h.size(); ++i) {
            h[i] += z2[i];
        }
        if (block_outputs) {
            block_outputs->push_back(h);
        }
    }
    Tensor<T> pre = norm(h, d.bn.size() - 1, trace ? &trace->final_bn : nullptr);
    Tensor<T> features = pool(relu(pre), PoolKind::GlobalAvg);
    if (trace) {
        trace->final_pre = std::move(pre);
    }
    return features;
}

template <typename T>
Tensor<T> Network<T>::forward_features(const Tensor<T>& x, const std::string& id, Mode mode, ForwardTrace<T>* trace,
                                       std::uint64_t dropout_seed, std::vector<Tensor<T>>* block_outputs) {
    DomainParams<T>& d = domain(id);
    return run(x, d, mode == Mode::Train ? &d : nullptr, mode, trace, dropout_seed, block_outputs);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, const std::string& id, Mode mode, std::uint64_t dropout_seed) {
    const Tensor<T> f = forward_features(x, id, mode, nullptr, dropout_seed);
    const auto& d = domain(id);
    return classifier_logits(f, d.head_weights, d.head_bias);
}

template <typename T>
Tensor<T> Network<T>::infer_features(const Tensor<T>& x, const std::string& id,
                                     std::vector<Tensor<T>>* block_outputs) const {
    return run(x, domain(id), nullptr, Mode::Eval, nullptr, 0, block_outputs);
}

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& x, const std::string& id) const {
    const auto& d = domain(id);
    return classifier_logits(infer_features(x, id), d.head_weights, d.head_bias);
}

template <typename T>
Tensor<T> Network<T>::backprop_conv(const ConvTrace<T>& trace, const DomainParams<T>& d, std::size_t index,
                                    const Tensor<T>& dy, const std::set<std::string>& trainable,
                                    Gradients<T>& grads) const {
    const ConvGeometry geom{1, (config_.filter_size - 1) / 2};
    const std::size_t layer = layout_[index].layer;
    if (trace.fused) {
        const std::string fname = names::fused_filter(d.id, layer);
        const bool need_df = trainable.count(fname) != 0;
        auto cg = conv2d_backward(trace.input, d.fused.at(index), geom, dy, true, need_df);
        if (need_df) {
            accumulate<T>(grads, fname, cg.df.weights().values());
        }
        return std::move(cg.dx);
    }
    const std::string fname = d.own_universal ? names::own_filter(d.id, layer) : names::universal_filter(layer);
    const bool need_df = trainable.count(fname) != 0;
    const FilterBank<T>& f = host_filter(d, index);
    if (!trace.adapted) {
        auto cg = conv2d_backward(trace.input, f, geom, dy, true, need_df);
        if (need_df) {
            accumulate<T>(grads, fname, cg.df.weights().values());
        }
        return std::move(cg.dx);
    }
    AdapterGrads<T> g;
    if (d.placement.topology == Topology::Parallel) {
        g = parallel_backward(trace.input, f, geom, trace.alpha, dy, need_df);
    } else {
        const BatchNormState<T>* bn = d.placement.series_bn ? &d.adapter_bn.at(index) : nullptr;
        g = series_backward(trace.input, f, geom, trace.alpha, bn, trace.series, dy, need_df);
        if (trace.series.has_bn) {
            const std::string sn = names::adapter_bn(d.id, layer, "scale");
            const std::string bnn = names::adapter_bn(d.id, layer, "bias");
            if (trainable.count(sn)) {
                accumulate<T>(grads, sn, g.dscale);
            }
            if (trainable.count(bnn)) {
                accumulate<T>(grads, bnn, g.dbias);
            }
        }
    }
    if (need_df) {
        accumulate<T>(grads, fname, g.df.weights().values());
    }
    if (d.compressed(index)) {
        const std::string gname = names::gamma(d.id, layer);
        const std::string bname = names::shared_beta(layer);
        if (trainable.count(gname)) {
            const Matrix<T> dgamma = g.dalpha.transpose() * betas_.at(index);
            accumulate<T>(grads, gname, span_of(dgamma));
        }
        if (trainable.count(bname)) {
            const Matrix<T> dbeta = g.dalpha * d.gammas.at(index);
            accumulate<T>(grads, bname, span_of(dbeta));
        }
    } else {
        const std::string aname = names::alpha(d.id, layer);
        if (trainable.count(aname)) {
            accumulate<T>(grads, aname, span_of(g.dalpha));
        }
    }
    return std::move(g.dx);
}

template <typename T>
void Network<T>::backward(const ForwardTrace<T>& trace, const Tensor<T>& dfeatures,
                          const std::set<std::string>& trainable, Gradients<T>& grads) const {
    const DomainParams<T>& d = domain(trace.domain);
    const UniversalParams<T>& u = d.own_universal ? *d.own_universal : universal_;
    auto bn_grads = [&](std::size_t j, const BatchNormCache<T>& cache, const Tensor<T>& dy) {
        auto bg = batch_norm_backward(cache, d.bn[j], dy);
        const std::string sn = names::bn(d.id, j, "scale");
        const std::string bnn = names::bn(d.id, j, "bias");
        if (trainable.count(sn)) {
            accumulate<T>(grads, sn, bg.dscale);
        }
        if (trainable.count(bnn)) {
            accumulate<T>(grads, bnn, bg.dbias);
        }
        return std::move(bg.dx);
    };
    auto proj_name = [&](std::size_t m) {
        return d.own_universal ? names::own_projection(d.id, m) : names::universal_projection(m);
    };

    Tensor<T> dh = pool_backward(trace.final_pre.shape(), PoolKind::GlobalAvg, dfeatures);
    dh = relu_backward(trace.final_pre, dh);
    dh = bn_grads(d.bn.size() - 1, trace.final_bn, dh);

    for (std::size_t k = trace.blocks.size(); k-- > 0;) {
        const BlockTrace<T>& bt = trace.blocks[k];
        Tensor<T> da2 = backprop_conv(bt.conv1, d, 2 * k + 1, dh, trainable, grads);
        if (bt.dropout) {
            da2 = dropout_backward(bt.mask, da2);
        }
        const Tensor<T> dz1 = bn_grads(2 * k + 1, bt.bn2, relu_backward(bt.pre2, da2));
        const Tensor<T> da1 = backprop_conv(bt.conv0, d, 2 * k, dz1, trainable, grads);
        const Tensor<T> dbranch = bn_grads(2 * k, bt.bn1, relu_backward(bt.pre1, da1));
        for (std::size_t i = 0; i < dh.size(); ++i) {
            dh[i] += dbranch[i];
        }
        const std::size_t m = k / config_.blocks_per_macro;
        if (k % config_.blocks_per_macro == 0 && m > 0) {
            const std::string pname = proj_name(m);
            const bool need_df = trainable.count(pname) != 0;
            auto cg = conv2d_backward(trace.transition_pooled[m - 1], u.projections[m - 1], {1, 0}, dh, true, need_df);
            if (need_df) {
                accumulate<T>(grads, pname, cg.df.weights().values());
            }
            dh = pool_backward(trace.transition_in[m - 1], PoolKind::Avg2x2, cg.dx);
        }
    }
    const std::string stem = d.own_universal ? names::own_filter(d.id, 0) : names::universal_filter(0);
    if (trainable.count(stem)) {
        const std::size_t pad = (config_.filter_size - 1) / 2;
        auto cg = conv2d_backward(trace.input, u.stem, {1, pad}, dh, false, true);
        accumulate<T>(grads, stem, cg.df.weights().values());
    }
}

// ---------------------------------------------------------------------------
// Visiting
// ---------------------------------------------------------------------------

namespace {

template <typename V, typename Bank>
void emit_bank(const std::function<void(const ParamView<V>&)>& fn, std::string name, ParamKind kind,
               const std::string& domain, Bank& bank) {
    auto& w = bank.weights();
    fn(ParamView<V>{std::move(name), kind, domain, w.shape().dims(), std::span<V>(w.data(), w.size())});
}

template <typename V, typename M>
void emit_matrix(const std::function<void(const ParamView<V>&)>& fn, std::string name, ParamKind kind,
                 const std::string& domain, M& m) {
    fn(ParamView<V>{std::move(name), kind, domain, {std::size_t(m.rows()), std::size_t(m.cols())},
                    std::span<V>(m.data(), std::size_t(m.size()))});
}

template <typename V, typename Vec>
void emit_vector(const std::function<void(const ParamView<V>&)>& fn, std::string name, ParamKind kind,
                 const std::string& domain, Vec& v) {
    fn(ParamView<V>{std::move(name), kind, domain, {v.size()}, std::span<V>(v.data(), v.size())});
}

template <typename V, typename U>
void emit_universal(const std::function<void(const ParamView<V>&)>& fn, U& u, const std::string& domain) {
    const bool own = !domain.empty();
    const ParamKind kind = own ? ParamKind::OwnFilter : ParamKind::UniversalFilter;
    auto filter_name = [&](std::size_t layer) {
        return own ? names::own_filter(domain, layer) : names::universal_filter(layer);
    };
    emit_bank<V>(fn, filter_name(0), kind, domain, u.stem);
    for (std::size_t i = 0; i < u.body.size(); ++i) {
        emit_bank<V>(fn, filter_name(i + 1), kind, domain, u.body[i]);
    }
    for (std::size_t m = 1; m <= 2; ++m) {
        emit_bank<V>(fn, own ? names::own_projection(domain, m) : names::universal_projection(m), kind, domain,
                     u.projections[m - 1]);
    }
}

template <typename V, typename Bn>
void emit_bn(const std::function<void(const ParamView<V>&)>& fn, const std::string& domain, Bn& s,
             const std::function<std::string(std::string_view)>& name, ParamKind learnable, ParamKind stats) {
    emit_vector<V>(fn, name("scale"), learnable, domain, s.scale);
    emit_vector<V>(fn, name("bias"), learnable, domain, s.bias);
    emit_vector<V>(fn, name("running_mean"), stats, domain, s.running_mean);
    emit_vector<V>(fn, name("running_var"), stats, domain, s.running_var);
}

template <typename V, typename Net, typename Betas, typename Domains>
void visit_all(const std::function<void(const ParamView<V>&)>& fn, Net& universal, Betas& betas, Domains& domains) {
    emit_universal<V>(fn, universal, std::string());
    for (auto& [index, beta] : betas) {
        emit_matrix<V>(fn, names::shared_beta(index + 1), ParamKind::SharedBeta, std::string(), beta);
    }
    for (auto& [id, d] : domains) {
        for (auto& [index, a] : d.alphas) {
            emit_matrix<V>(fn, names::alpha(id, index + 1), ParamKind::Alpha, id, a);
        }
        for (auto& [index, g] : d.gammas) {
            emit_matrix<V>(fn, names::gamma(id, index + 1), ParamKind::Gamma, id, g);
        }
        for (std::size_t j = 0; j < d.bn.size(); ++j) {
            emit_bn<V>(fn, id, d.bn[j], [&](std::string_view f) { return names::bn(id, j, f); }, ParamKind::BatchNorm,
                       ParamKind::BatchNormStats);
        }
        for (auto& [index, s] : d.adapter_bn) {
            const std::size_t layer = index + 1;
            emit_bn<V>(fn, id, s, [&](std::string_view f) { return names::adapter_bn(id, layer, f); },
                       ParamKind::AdapterBatchNorm, ParamKind::AdapterBatchNormStats);
        }
        emit_matrix<V>(fn, names::head_weights(id), ParamKind::HeadWeights, id, d.head_weights);
        emit_vector<V>(fn, names::head_bias(id), ParamKind::HeadBias, id, d.head_bias);
        if (d.own_universal) {
            emit_universal<V>(fn, *d.own_universal, id);
        }
        for (auto& [index, f] : d.fused) {
            emit_bank<V>(fn, names::fused_filter(id, index + 1), ParamKind::FusedFilter, id, f);
        }
    }
}

}  // namespace

template <typename T>
void Network<T>::visit(const std::function<void(const ParamView<T>&)>& fn) {
    visit_all<T>(fn, universal_, betas_, domains_);
}

template <typename T>
void Network<T>::visit(const std::function<void(const ParamView<const T>&)>& fn) const {
    visit_all<const T>(fn, universal_, betas_, domains_);
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

template <typename T>
void Network<T>::fuse_domain(const std::string& id) {
    DomainParams<T>& d = domain(id);
    if (!d.fused.empty()) {
        throw ConfigError("domain '" + id + "' is already fused");
    }
    if (!d.placement.any()) {
        throw ConfigError("domain '" + id + "' has no adapters to fuse");
    }
    if (d.placement.topology == Topology::Series && d.placement.series_bn) {
        throw ConfigError("series adapters with a normalized branch cannot be fused into a single filter");
    }
    for (const auto& c : layout_) {
        if (!d.placement.adapts(c.macro, c.position)) {
            continue;
        }
        const Matrix<T> a = adapter(d, c.index);
        const FilterBank<T>& f = host_filter(d, c.index);
        d.fused.emplace(c.index, d.placement.topology == Topology::Parallel ? fuse_parallel(f, a) : fuse_series(f, a));
    }
}

template <typename T>
void Network<T>::unfuse_domain(const std::string& id) {
    DomainParams<T>& d = domain(id);
    if (d.fused.empty()) {
        throw ConfigError("domain '" + id + "' is not fused");
    }
    constexpr double eps = std::numeric_limits<T>::epsilon();
    for (const auto& [index, g] : d.fused) {
        const Matrix<T> a = adapter(d, index);
        const FilterBank<T>& f = host_filter(d, index);
        std::optional<FilterBank<T>> recovered;
        double scale = 1.0;
        if (d.placement.topology == Topology::Parallel) {
            recovered = unfuse_parallel(g, a);
            scale = 4.0 * eps;
        } else {
            recovered = unfuse_series(g, a);
            scale = 1e3 * eps;
        }
        if (!recovered) {
            continue;  // singular I + alpha: f is not recoverable from g alone
        }
        for (std::size_t i = 0; i < f.param_count(); ++i) {
            const double ref = std::max({std::abs(double(f.weights()[i])), std::abs(double(g.weights()[i])), 1.0});
            if (std::abs(double(recovered->weights()[i]) - double(f.weights()[i])) > scale * ref) {
                throw IntegrityError("unfusing layer " + std::to_string(index + 1) + " of domain '" + id +
                                     "' does not reproduce the host filter");
            }
        }
    }
    d.fused.clear();
}

// ---------------------------------------------------------------------------
// Partitioning and accounting
// ---------------------------------------------------------------------------

namespace {

bool learnable(ParamKind k) {
    return k != ParamKind::BatchNormStats && k != ParamKind::AdapterBatchNormStats && k != ParamKind::FusedFilter;
}

}  // namespace

template <typename T>
ParamPartition partition_params(const Network<T>& net, const std::string& domain, Regime regime) {
    const DomainParams<T>& d = net.domain(domain);
    ParamPartition out;
    net.visit([&](const ParamView<const T>& p) {
        if (!learnable(p.kind)) {
            return;
        }
        const bool mine = p.domain == domain;
        bool train = false;
        switch (regime) {
        case Regime::FinetuneAll:
            train = mine || (p.kind == ParamKind::UniversalFilter && !d.own_universal);
            break;
        case Regime::AdaptersOnly:
            train = mine && (p.kind == ParamKind::Alpha || p.kind == ParamKind::Gamma ||
                             p.kind == ParamKind::BatchNorm || p.kind == ParamKind::AdapterBatchNorm ||
                             p.kind == ParamKind::HeadWeights || p.kind == ParamKind::HeadBias);
            break;
        case Regime::HeadOnly:
            train = mine && (p.kind == ParamKind::HeadWeights || p.kind == ParamKind::HeadBias);
            break;
        case Regime::GammasOnly:
            train = mine && p.kind == ParamKind::Gamma;
            break;
        }
        (train ? out.trainable : out.frozen).insert(p.name);
    });
    return out;
}

template <typename T>
std::size_t count_elements(const Network<T>& net, const std::set<std::string>& names) {
    std::size_t n = 0;
    net.visit([&](const ParamView<const T>& p) {
        if (names.count(p.name)) {
            n += p.values.size();
        }
    });
    return n;
}

std::size_t planned_adapter_params(const NetworkConfig& cfg, const PlacementConfig& placement) {
    std::size_t n = 0;
    for (const auto& c : body_layout(cfg)) {
        if (placement.adapts(c.macro, c.position)) {
            n += adapter_param_count(placement.topology, c.in_channels, c.out_channels);
        }
    }
    return n;
}

template <typename T>
BudgetReport count_params(const Network<T>& net, const PlacementConfig& placement) {
    const NetworkConfig& cfg = net.config();
    BudgetReport r;
    r.weight_layers = cfg.weight_layers();
    r.widths = {cfg.width(0), cfg.width(1), cfg.width(2)};
    std::map<std::string, DomainBudget> per_domain;
    for (const auto& id : net.domain_ids()) {
        per_domain[id].id = id;
    }
    net.visit([&](const ParamView<const T>& p) {
        const std::size_t n = p.values.size();
        switch (p.kind) {
        case ParamKind::UniversalFilter:
            r.universal += n;
            break;
        case ParamKind::SharedBeta:
            r.shared_betas += n;
            break;
        case ParamKind::Alpha:
        case ParamKind::Gamma:
        case ParamKind::AdapterBatchNorm:
            per_domain[p.domain].adapters += n;
            break;
        case ParamKind::BatchNorm:
            per_domain[p.domain].batch_norm += n;
            break;
        case ParamKind::HeadWeights:
        case ParamKind::HeadBias:
            per_domain[p.domain].head += n;
            break;
        case ParamKind::OwnFilter:
            per_domain[p.domain].own_universal += n;
            break;
        default:
            break;
        }
    });
    std::size_t domain_total = r.shared_betas;
    for (auto& [id, b] : per_domain) {
        domain_total += b.total();
        r.domains.push_back(b);
    }
    r.budget_factor = 1.0 + double(domain_total) / double(r.universal);
    for (const auto& c : net.layout()) {
        LayerBudget lb;
        lb.layer = c.layer;
        lb.macro = c.macro;
        lb.in_channels = c.in_channels;
        lb.out_channels = c.out_channels;
        lb.conv_params = net.universal().body[c.index].param_count();
        lb.adapter_params = placement.adapts(c.macro, c.position)
                                ? adapter_param_count(placement.topology, c.in_channels, c.out_channels)
                                : 0;
        r.layers.push_back(lb);
    }
    r.planned_adapter_params = planned_adapter_params(cfg, placement);
    return r;
}

template struct UniversalParams<float>;
template struct UniversalParams<double>;
template class Network<float>;
template class Network<double>;
template ParamPartition partition_params<float>(const Network<float>&, const std::string&, Regime);
template ParamPartition partition_params<double>(const Network<double>&, const std::string&, Regime);
template std::size_t count_elements<float>(const Network<float>&, const std::set<std::string>&);
template std::size_t count_elements<double>(const Network<double>&, const std::set<std::string>&);
template BudgetReport count_params<float>(const Network<float>&, const PlacementConfig&);
template BudgetReport count_params<double>(const Network<double>&, const PlacementConfig&);

}  // namespace resadapt
