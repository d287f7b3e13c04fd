#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resadapt/adapters.hpp"
#include "resadapt/ops.hpp"
#include "resadapt/rng.hpp"
#include "resadapt/tensor.hpp"

namespace resadapt {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Widths/depths of the three-macro-block pre-activation ResNet. The defaults
/// give the 26-layer 64/128/256 configuration.
struct NetworkConfig {
    std::array<std::size_t, 3> widths{64, 128, 256};
    double width_multiplier = 1.0;
    std::size_t blocks_per_macro = 4;
    std::size_t filter_size = 3;
    std::size_t in_channels = 3;

    /// 16/32/64 with two blocks per macro, for quick runs.
    static NetworkConfig desk();

    std::size_t width(std::size_t macro) const;
    std::size_t residual_blocks() const { return 3 * blocks_per_macro; }
    std::size_t body_convs() const { return 2 * residual_blocks(); }
    /// Stem + body convolutions + classifier. Projections sit on the trunk and are not counted.
    std::size_t weight_layers() const { return body_convs() + 2; }
    std::size_t batch_norms() const { return body_convs() + 1; }
    void validate() const;

    bool operator==(const NetworkConfig&) const = default;
};

enum MacroBits : unsigned { kEarly = 1u, kMid = 2u, kLate = 4u, kAllMacros = 7u };

enum class WithinBlock { BothConvs, SecondOnly };

/// Which residual-block convolutions of a domain carry adapters, and how.
struct PlacementConfig {
    unsigned macros = 0;
    WithinBlock within = WithinBlock::BothConvs;
    Topology topology = Topology::Parallel;
    /// Dropout rate applied right before the second adapted conv of each block.
    std::optional<double> dropout;
    /// Series adapters normalize their branch with a domain BN.
    bool series_bn = true;

    static PlacementConfig none() { return {}; }
    static PlacementConfig all(Topology topology = Topology::Parallel);

    bool adapts(std::size_t macro, std::size_t position) const;
    bool any() const { return macros != 0; }

    bool operator==(const PlacementConfig&) const = default;
};

/// "all", "none", "early", "mid", "late" or a '+'-joined subset such as "early+late".
unsigned parse_macros(std::string_view s);
std::string macros_to_string(unsigned macros);
WithinBlock parse_within(std::string_view s);
std::string_view to_string(WithinBlock w);

/// One 3x3 convolution of the residual body. `layer` is its universal layer
/// index (the stem is layer 0, body convs are 1..body_convs()).
struct BodyConv {
    std::size_t index = 0;
    std::size_t layer = 0;
    std::size_t macro = 0;
    std::size_t block = 0;
    std::size_t position = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
};

std::vector<BodyConv> body_layout(const NetworkConfig& cfg);

// ---------------------------------------------------------------------------
// Parameter naming (also the checkpoint entry names)
// ---------------------------------------------------------------------------

namespace names {
std::string universal_filter(std::size_t layer);
std::string universal_projection(std::size_t macro);
std::string shared_beta(std::size_t layer);
std::string alpha(std::string_view domain, std::size_t layer);
std::string gamma(std::string_view domain, std::size_t layer);
std::string bn(std::string_view domain, std::size_t index, std::string_view field);
std::string adapter_bn(std::string_view domain, std::size_t layer, std::string_view field);
std::string head_weights(std::string_view domain);
std::string head_bias(std::string_view domain);
std::string own_filter(std::string_view domain, std::size_t layer);
std::string own_projection(std::string_view domain, std::size_t macro);
std::string fused_filter(std::string_view domain, std::size_t layer);
}  // namespace names

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Filter banks shared by every domain: stem, body convs and the two 1x1
/// projections that widen the trunk at macro boundaries.
template <typename T>
struct UniversalParams {
    FilterBank<T> stem;
    std::vector<FilterBank<T>> body;
    std::array<FilterBank<T>, 2> projections;

    std::size_t param_count() const;
    bool operator==(const UniversalParams&) const = default;
};

template <typename T>
struct DomainParams {
    std::string id;
    std::size_t num_classes = 0;
    PlacementConfig placement;
    std::map<std::size_t, Matrix<T>> alphas;  // keyed by body conv index
    std::map<std::size_t, Matrix<T>> gammas;  // compressed layers: alpha = beta gamma^T
    std::vector<BatchNormState<T>> bn;
    std::map<std::size_t, BatchNormState<T>> adapter_bn;
    Matrix<T> head_weights;
    std::vector<T> head_bias;
    std::optional<UniversalParams<T>> own_universal;  // finetune_all copy
    std::map<std::size_t, FilterBank<T>> fused;       // test-time fused banks

    bool compressed(std::size_t index) const { return gammas.count(index) != 0; }
};

enum class Regime { FinetuneAll, AdaptersOnly, HeadOnly, GammasOnly };

std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);

/// What a visitor is looking at; determines trainability and accounting.
enum class ParamKind {
    UniversalFilter,
    SharedBeta,
    Alpha,
    Gamma,
    BatchNorm,       // learnable scale/bias
    BatchNormStats,  // running mean/var buffers
    AdapterBatchNorm,
    AdapterBatchNormStats,
    HeadWeights,
    HeadBias,
    OwnFilter,
    FusedFilter,
};

/// Shape-carrying view handed to parameter visitors.
template <typename T>
struct ParamView {
    std::string name;
    ParamKind kind;
    std::string domain;  // empty for universal/shared entries
    std::vector<std::size_t> dims;
    std::span<T> values;
};

template <typename T>
using Gradients = std::map<std::string, std::vector<T>>;

// ---------------------------------------------------------------------------
// Forward trace
// ---------------------------------------------------------------------------

template <typename T>
struct ConvTrace {
    Tensor<T> input;
    bool adapted = false;
    bool fused = false;
    Matrix<T> alpha;
    SeriesCache<T> series;
};

template <typename T>
struct BlockTrace {
    Tensor<T> input;
    BatchNormCache<T> bn1;
    Tensor<T> pre1;
    ConvTrace<T> conv0;
    BatchNormCache<T> bn2;
    Tensor<T> pre2;
    bool dropout = false;
    DropoutMask<T> mask;
    ConvTrace<T> conv1;
};

template <typename T>
struct ForwardTrace {
    std::string domain;
    Mode mode = Mode::Eval;
    Tensor<T> input;
    Tensor<T> stem_out;
    std::array<Shape, 2> transition_in;
    std::array<Tensor<T>, 2> transition_pooled;
    std::vector<BlockTrace<T>> blocks;
    BatchNormCache<T> final_bn;
    Tensor<T> final_pre;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
class Network {
public:
    /// Universal filters He-initialized from `rng`; no domains yet.
    Network(NetworkConfig config, CounterRng& rng);
    /// For deserialization: parameters are filled in afterwards.
    Network(NetworkConfig config, UniversalParams<T> universal);

    const NetworkConfig& config() const { return config_; }
    const std::vector<BodyConv>& layout() const { return layout_; }
    std::size_t feature_channels() const { return config_.width(2); }

    UniversalParams<T>& universal() { return universal_; }
    const UniversalParams<T>& universal() const { return universal_; }

    std::map<std::size_t, Matrix<T>>& shared_betas() { return betas_; }
    const std::map<std::size_t, Matrix<T>>& shared_betas() const { return betas_; }

    /// Registers a domain. Adapters start at exactly zero; BN states are cloned
    /// from `clone_bn_from` if given (else identity); the head is N(0, 0.01^2).
    DomainParams<T>& add_domain(const std::string& id, std::size_t num_classes, const PlacementConfig& placement,
                                CounterRng& rng, const std::string* clone_bn_from = nullptr);
    void insert_domain(DomainParams<T> domain);
    void remove_domain(const std::string& id);

    bool has_domain(const std::string& id) const { return domains_.count(id) != 0; }
    DomainParams<T>& domain(const std::string& id);
    const DomainParams<T>& domain(const std::string& id) const;
    std::vector<std::string> domain_ids() const;

    /// Adapter actually applied at body conv `index` (alpha, or beta gamma^T).
    Matrix<T> adapter(const DomainParams<T>& d, std::size_t index) const;
    const FilterBank<T>& host_filter(const DomainParams<T>& d, std::size_t index) const;

    /// Gives a domain its own trainable copy of the universal filters.
    void materialize_own_universal(const std::string& id);

    /// Pooled features (N x C_final). In train mode BN uses batch statistics and
    /// updates running estimates of `domain`.
    Tensor<T> forward_features(const Tensor<T>& x, const std::string& domain, Mode mode,
                               ForwardTrace<T>* trace = nullptr, std::uint64_t dropout_seed = 0,
                               std::vector<Tensor<T>>* block_outputs = nullptr);

    Tensor<T> forward(const Tensor<T>& x, const std::string& domain, Mode mode, std::uint64_t dropout_seed = 0);

    /// Eval-mode logits without touching any state.
    Tensor<T> infer(const Tensor<T>& x, const std::string& domain) const;
    Tensor<T> infer_features(const Tensor<T>& x, const std::string& domain,
                             std::vector<Tensor<T>>* block_outputs = nullptr) const;

    /// Backpropagates d(loss)/d(features). Gradients are written only for
    /// parameter names contained in `trainable`.
    void backward(const ForwardTrace<T>& trace, const Tensor<T>& dfeatures, const std::set<std::string>& trainable,
                  Gradients<T>& grads) const;

    /// Visits every stored tensor in canonical order. The universal part comes
    /// first, then shared betas, then domains in id order.
    void visit(const std::function<void(const ParamView<T>&)>& fn);
    void visit(const std::function<void(const ParamView<const T>&)>& fn) const;

    // Test-time fusion of one domain's adapters into per-domain filter banks.
    void fuse_domain(const std::string& id);
    /// Drops the fused banks after checking that unfusing them reproduces the
    /// host filters; throws IntegrityError otherwise.
    void unfuse_domain(const std::string& id);

private:
    Tensor<T> run(const Tensor<T>& x, const DomainParams<T>& d, DomainParams<T>* mutable_domain, Mode mode,
                  ForwardTrace<T>* trace, std::uint64_t dropout_seed, std::vector<Tensor<T>>* block_outputs) const;
    Tensor<T> run_conv(const Tensor<T>& in, const DomainParams<T>& d, DomainParams<T>* md, std::size_t index,
                       Mode mode, ConvTrace<T>* trace) const;
    Tensor<T> backprop_conv(const ConvTrace<T>& trace, const DomainParams<T>& d, std::size_t index,
                            const Tensor<T>& dy, const std::set<std::string>& trainable, Gradients<T>& grads) const;

    NetworkConfig config_;
    std::vector<BodyConv> layout_;
    UniversalParams<T> universal_;
    std::map<std::size_t, Matrix<T>> betas_;
    std::map<std::string, DomainParams<T>> domains_;
};

// ---------------------------------------------------------------------------
// Partitioning and accounting
// ---------------------------------------------------------------------------

struct ParamPartition {
    std::set<std::string> trainable;
    std::set<std::string> frozen;
};

/// Splits every learnable parameter of the network into the trainable set of
/// `domain` under `regime` and everything else. Running BN statistics are
/// buffers and appear in neither set.
template <typename T>
ParamPartition partition_params(const Network<T>& net, const std::string& domain, Regime regime);

template <typename T>
std::size_t count_elements(const Network<T>& net, const std::set<std::string>& names);

struct DomainBudget {
    std::string id;
    std::size_t adapters = 0;  // alphas + gammas + adapter BN
    std::size_t batch_norm = 0;
    std::size_t head = 0;
    std::size_t own_universal = 0;
    std::size_t total() const { return adapters + batch_norm + head + own_universal; }
};

struct LayerBudget {
    std::size_t layer = 0;
    std::size_t macro = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t conv_params = 0;
    std::size_t adapter_params = 0;  // under the queried placement
};

struct BudgetReport {
    std::size_t weight_layers = 0;
    std::array<std::size_t, 3> widths{};
    std::size_t universal = 0;
    std::size_t shared_betas = 0;
    std::vector<DomainBudget> domains;
    /// 1 + (sum of domain costs + shared betas) / universal.
    double budget_factor = 1.0;
    std::vector<LayerBudget> layers;
    std::size_t planned_adapter_params = 0;
};

/// Adapter parameters a placement would add to one domain.
std::size_t planned_adapter_params(const NetworkConfig& cfg, const PlacementConfig& placement);

template <typename T>
BudgetReport count_params(const Network<T>& net, const PlacementConfig& placement);

}  // namespace resadapt
