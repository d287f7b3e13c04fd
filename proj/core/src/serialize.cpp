#include <bit>
#include <charconv>
#include <cstring>

#include "resadapt/checkpoint.hpp"
#include "resadapt/errors.hpp"

namespace resadapt {

namespace {

constexpr const char* kNetworkMeta = "meta/network";

std::string placement_meta_name(std::string_view domain) { return "domain/" + std::string(domain) + "/meta/placement"; }

TensorRecord u32_record(std::vector<std::uint32_t> v) {
    const auto n = std::uint32_t(v.size());
    return to_record<std::uint32_t>(v, {n});
}

std::vector<std::string_view> split(std::string_view s) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t end = s.find('/', start);
        parts.push_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (end == std::string_view::npos) {
            return parts;
        }
        start = end + 1;
    }
}

std::size_t parse_index(std::string_view s, const std::string& entry) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError("checkpoint entry '" + entry + "' has a malformed index");
    }
    return v;
}

template <typename T>
FilterBank<T> bank_from(const TensorRecord& r, const std::string& name) {
    if (r.dims.size() != 4 || r.dims[0] != r.dims[1]) {
        throw FormatError("checkpoint entry '" + name + "' is not an L x L x C_in x C_out filter bank");
    }
    return FilterBank<T>(record_tensor<T>(r));
}

template <typename T>
Matrix<T> matrix_from(const TensorRecord& r, const std::string& name) {
    if (r.dims.size() != 2) {
        throw FormatError("checkpoint entry '" + name + "' is not a matrix");
    }
    const auto v = record_values<T>(r);
    return ConstMatrixMap<T>(v.data(), Eigen::Index(r.dims[0]), Eigen::Index(r.dims[1]));
}

template <typename T>
std::vector<T> vector_from(const TensorRecord& r, const std::string& name) {
    if (r.dims.size() != 1) {
        throw FormatError("checkpoint entry '" + name + "' is not a vector");
    }
    return record_values<T>(r);
}

template <typename T>
void set_bn_field(BatchNormState<T>& s, std::string_view field, std::vector<T> v, const std::string& name) {
    if (field == "scale") {
        s.scale = std::move(v);
    } else if (field == "bias") {
        s.bias = std::move(v);
    } else if (field == "running_mean") {
        s.running_mean = std::move(v);
    } else if (field == "running_var") {
        s.running_var = std::move(v);
    } else {
        throw FormatError("unknown batch-norm field in '" + name + "'");
    }
}

template <typename T>
void check_bn(const BatchNormState<T>& s, std::size_t channels, const std::string& where) {
    if (s.scale.size() != channels || s.bias.size() != channels || s.running_mean.size() != channels ||
        s.running_var.size() != channels) {
        throw FormatError(where + ": batch-norm state incomplete or mis-sized");
    }
}

template <typename T>
void set_universal_entry(UniversalParams<T>& u, std::span<const std::string_view> parts, const TensorRecord& r,
                         const std::string& name) {
    // parts: layer/<i>/filter or proj/<m>/filter
    if (parts.size() != 3 || parts[2] != "filter") {
        throw FormatError("unrecognized checkpoint entry '" + name + "'");
    }
    const std::size_t i = parse_index(parts[1], name);
    if (parts[0] == "layer") {
        if (i == 0) {
            u.stem = bank_from<T>(r, name);
        } else if (i <= u.body.size()) {
            u.body[i - 1] = bank_from<T>(r, name);
        } else {
            throw FormatError("checkpoint entry '" + name + "' is beyond the configured depth");
        }
    } else if (parts[0] == "proj" && (i == 1 || i == 2)) {
        u.projections[i - 1] = bank_from<T>(r, name);
    } else {
        throw FormatError("unrecognized checkpoint entry '" + name + "'");
    }
}

template <typename T>
void check_universal(const UniversalParams<T>& u, const NetworkConfig& cfg, const std::vector<BodyConv>& layout,
                     const std::string& where) {
    const std::size_t l = cfg.filter_size;
    auto check = [&](const FilterBank<T>& f, std::size_t ext, std::size_t in, std::size_t out, const std::string& what) {
        if (f.extent() != ext || f.in_channels() != in || f.out_channels() != out) {
            throw FormatError(where + ": " + what + " missing or mis-shaped");
        }
    };
    check(u.stem, l, cfg.in_channels, cfg.width(0), "stem filter");
    for (const auto& c : layout) {
        check(u.body[c.index], l, c.in_channels, c.out_channels, "layer " + std::to_string(c.layer) + " filter");
    }
    check(u.projections[0], 1, cfg.width(0), cfg.width(1), "projection 1");
    check(u.projections[1], 1, cfg.width(1), cfg.width(2), "projection 2");
}

}  // namespace

template <typename T>
Checkpoint to_checkpoint(const Network<T>& net) {
    const NetworkConfig& cfg = net.config();
    Checkpoint ckpt;
    ckpt.add(kNetworkMeta, u32_record({std::uint32_t(cfg.width(0)), std::uint32_t(cfg.width(1)),
                                       std::uint32_t(cfg.width(2)), std::uint32_t(cfg.blocks_per_macro),
                                       std::uint32_t(cfg.filter_size), std::uint32_t(cfg.in_channels)}));
    for (const auto& id : net.domain_ids()) {
        const auto& d = net.domain(id);
        const auto& p = d.placement;
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(p.dropout.value_or(0.0));
        ckpt.add(placement_meta_name(id),
                 u32_record({std::uint32_t(d.num_classes), p.macros, p.within == WithinBlock::SecondOnly ? 1u : 0u,
                             p.topology == Topology::Parallel ? 1u : 0u, p.series_bn ? 1u : 0u,
                             p.dropout ? 1u : 0u, std::uint32_t(bits), std::uint32_t(bits >> 32)}));
    }
    net.visit([&](const ParamView<const T>& v) {
        std::vector<std::uint32_t> dims(v.dims.begin(), v.dims.end());
        ckpt.add(v.name, to_record<T>(v.values, std::move(dims)));
    });
    return ckpt;
}

template <typename T>
Network<T> from_checkpoint(const Checkpoint& ckpt) {
    const auto meta = record_values<std::uint32_t>(ckpt.get(kNetworkMeta));
    if (meta.size() != 6) {
        throw FormatError("meta/network must hold 6 values");
    }
    NetworkConfig cfg;
    cfg.widths = {meta[0], meta[1], meta[2]};
    cfg.blocks_per_macro = meta[3];
    cfg.filter_size = meta[4];
    cfg.in_channels = meta[5];
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("meta/network: ") + e.what());
    }
    const auto layout = body_layout(cfg);

    UniversalParams<T> universal;
    universal.body.resize(layout.size());
    std::map<std::size_t, Matrix<T>> betas;
    std::map<std::string, DomainParams<T>> domains;

    // Domain skeletons first so parameter entries can be validated against them.
    for (const auto& [name, r] : ckpt.entries()) {
        const auto parts = split(name);
        if (parts.size() == 4 && parts[0] == "domain" && parts[2] == "meta" && parts[3] == "placement") {
            const auto m = record_values<std::uint32_t>(r);
            if (m.size() != 8 || m[1] > kAllMacros) {
                throw FormatError("'" + name + "' is malformed");
            }
            DomainParams<T> d;
            d.id = std::string(parts[1]);
            d.num_classes = m[0];
            d.placement.macros = m[1];
            d.placement.within = m[2] ? WithinBlock::SecondOnly : WithinBlock::BothConvs;
            d.placement.topology = m[3] ? Topology::Parallel : Topology::Series;
            d.placement.series_bn = m[4] != 0;
            if (m[5]) {
                d.placement.dropout = std::bit_cast<double>(std::uint64_t(m[6]) | std::uint64_t(m[7]) << 32);
            }
            d.bn.resize(cfg.batch_norms());
            domains.emplace(d.id, std::move(d));
        }
    }

    for (const auto& [name, r] : ckpt.entries()) {
        if (name == kNetworkMeta) {
            continue;
        }
        const auto parts = split(name);
        if (parts[0] == "universal") {
            set_universal_entry(universal, std::span(parts).subspan(1), r, name);
            continue;
        }
        if (parts[0] == "shared" && parts.size() == 4 && parts[1] == "layer" && parts[3] == "beta") {
            const std::size_t layer = parse_index(parts[2], name);
            if (layer == 0 || layer > layout.size()) {
                throw FormatError("checkpoint entry '" + name + "' names a layer outside the body");
            }
            betas[layer - 1] = matrix_from<T>(r, name);
            continue;
        }
        if (parts[0] != "domain" || parts.size() < 3) {
            throw FormatError("unrecognized checkpoint entry '" + name + "'");
        }
        auto it = domains.find(std::string(parts[1]));
        if (it == domains.end()) {
            throw FormatError("checkpoint entry '" + name + "' belongs to a domain without placement metadata");
        }
        DomainParams<T>& d = it->second;
        const std::span<const std::string_view> rest = std::span(parts).subspan(2);
        auto body_index = [&](std::string_view s) {
            const std::size_t layer = parse_index(s, name);
            if (layer == 0 || layer > layout.size()) {
                throw FormatError("checkpoint entry '" + name + "' names a layer outside the body");
            }
            return layer - 1;
        };
        if (rest[0] == "meta") {
            continue;
        } else if (rest.size() == 3 && rest[0] == "layer" && rest[2] == "alpha") {
            d.alphas[body_index(rest[1])] = matrix_from<T>(r, name);
        } else if (rest.size() == 3 && rest[0] == "layer" && rest[2] == "gamma") {
            d.gammas[body_index(rest[1])] = matrix_from<T>(r, name);
        } else if (rest.size() == 3 && rest[0] == "bn") {
            const std::size_t j = parse_index(rest[1], name);
            if (j >= d.bn.size()) {
                throw FormatError("checkpoint entry '" + name + "' names a BN outside the network");
            }
            set_bn_field(d.bn[j], rest[2], vector_from<T>(r, name), name);
        } else if (rest.size() == 3 && rest[0] == "adapter_bn") {
            set_bn_field(d.adapter_bn[body_index(rest[1])], rest[2], vector_from<T>(r, name), name);
        } else if (rest.size() == 2 && rest[0] == "head" && rest[1] == "weights") {
            d.head_weights = matrix_from<T>(r, name);
        } else if (rest.size() == 2 && rest[0] == "head" && rest[1] == "bias") {
            d.head_bias = vector_from<T>(r, name);
        } else if (rest[0] == "universal") {
            if (!d.own_universal) {
                d.own_universal.emplace();
                d.own_universal->body.resize(layout.size());
            }
            set_universal_entry(*d.own_universal, rest.subspan(1), r, name);
        } else if (rest.size() == 4 && rest[0] == "fused" && rest[1] == "layer" && rest[3] == "filter") {
            d.fused[body_index(rest[2])] = bank_from<T>(r, name);
        } else {
            throw FormatError("unrecognized checkpoint entry '" + name + "'");
        }
    }

    check_universal(universal, cfg, layout, "universal parameters");
    Network<T> net(cfg, std::move(universal));
    net.shared_betas() = std::move(betas);
    for (auto& [id, d] : domains) {
        const std::string where = "domain '" + id + "'";
        for (std::size_t j = 0; j < d.bn.size(); ++j) {
            check_bn(d.bn[j], j < layout.size() ? layout[j].in_channels : net.feature_channels(), where);
        }
        for (const auto& c : layout) {
            const bool adapted = d.placement.adapts(c.macro, c.position);
            const bool has = d.alphas.count(c.index) || d.gammas.count(c.index);
            if (adapted != has) {
                throw FormatError(where + ": adapters do not match the stored placement at layer " +
                                  std::to_string(c.layer));
            }
            if (d.gammas.count(c.index) && !net.shared_betas().count(c.index)) {
                throw FormatError(where + ": gamma at layer " + std::to_string(c.layer) + " has no shared beta");
            }
        }
        for (const auto& [index, s] : d.adapter_bn) {
            check_bn(s, layout[index].out_channels, where);
        }
        if (std::size_t(d.head_weights.rows()) != net.feature_channels() ||
            std::size_t(d.head_weights.cols()) != d.num_classes || d.head_bias.size() != d.num_classes) {
            throw FormatError(where + ": classifier head missing or mis-shaped");
        }
        if (d.own_universal) {
            check_universal(*d.own_universal, cfg, layout, where);
        }
        net.insert_domain(std::move(d));
    }
    return net;
}

template Checkpoint to_checkpoint<float>(const Network<float>&);
template Checkpoint to_checkpoint<double>(const Network<double>&);
template Network<float> from_checkpoint<float>(const Checkpoint&);
template Network<double> from_checkpoint<double>(const Checkpoint&);

}  // namespace resadapt
