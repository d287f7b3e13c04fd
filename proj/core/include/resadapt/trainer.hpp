#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "resadapt/compression.hpp"
#include "resadapt/dataset.hpp"
#include "resadapt/network.hpp"

namespace resadapt {

/// Constant rate with multiplicative drops once the epoch index reaches each
/// milestone fraction of the run.
struct LrSchedule {
    double initial = 0.05;
    std::vector<double> milestones{0.6, 0.8};
    double factor = 0.1;

    double at(std::size_t epoch, std::size_t epochs) const;
};

/// Explicit per-domain values win; otherwise the value is tiered by training-set size.
struct WeightDecayPolicy {
    std::map<std::string, double> overrides;
    std::size_t small_limit = 8000;   // below: small_value
    std::size_t large_limit = 50000;  // at or above: large_value
    double small_value = 0.002;
    double medium_value = 0.0005;
    double large_value = 0.0001;
};

double resolve_weight_decay(const WeightDecayPolicy& policy, const std::string& domain, std::size_t train_size);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    LrSchedule lr;
    double momentum = 0.9;
    Regime regime = Regime::AdaptersOnly;
    WeightDecayPolicy weight_decay;
    /// Bypasses the policy when set.
    std::optional<double> weight_decay_value;
    std::uint64_t seed = 0;
    /// Validation after every epoch; otherwise only after the last one.
    bool eval_every_epoch = false;

    void validate() const;
    std::vector<std::pair<std::string, std::string>> describe() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
};

struct RunReport {
    std::string command;
    std::string domain;
    std::vector<EpochRecord> history;
    double final_train_accuracy = 0.0;
    std::optional<double> final_val_accuracy;
    std::optional<double> final_val_loss;
    double weight_decay = 0.0;
    std::size_t train_size = 0;
    std::size_t trainable_params = 0;
    std::string universal_digest_before;
    std::string universal_digest_after;
    std::string frozen_digest_before;
    std::string frozen_digest_after;
    std::string beta_digest_before;
    std::string beta_digest_after;
    double wall_seconds = 0.0;
    std::vector<std::pair<std::string, std::string>> config;

    std::string summary_text() const;
    void write_csv(const std::filesystem::path& path) const;
    void write_summary(const std::filesystem::path& path) const;
};

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t count = 0;
};

/// Index of the largest entry; the lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> row);

/// Eval-mode top-1 accuracy and mean cross-entropy. Never mutates the network.
template <typename T>
EvalResult evaluate(const Network<T>& net, const std::string& domain, const Dataset& ds, std::size_t batch_size = 256);

/// He-initialized network plus a first domain trained end to end.
template <typename T>
Network<T> train_base(const NetworkConfig& cfg, const std::string& domain, const Dataset& train, const Dataset* val,
                      const TrainConfig& tc, RunReport& report);

/// Registers `domain` next to `base_domain` and trains it under `tc.regime`:
/// adapters_only uses `placement` with zero-initialized adapters, head_only
/// trains a classifier on frozen features, finetune_all trains a private copy
/// of every filter. BN states start as copies of the base domain's. Throws
/// IntegrityError if anything outside the trainable set changed.
template <typename T>
RunReport train_domain(Network<T>& net, const std::string& base_domain, const std::string& domain,
                       const PlacementConfig& placement, const Dataset& train, const Dataset* val,
                       const TrainConfig& tc);

/// Trains only the domain's gammas of compressed layers; shared betas and
/// universal filters must stay byte-identical. BN running statistics adapt.
template <typename T>
RunReport finetune_gammas(Network<T>& net, const std::string& domain, const Dataset& train, const Dataset* val,
                          TrainConfig tc);

/// "half", "full" or an explicit K.
struct RankSpec {
    std::optional<std::size_t> rank;  // nullopt = C/2, or C when `full`
    bool full = false;

    std::size_t resolve(std::size_t channels) const;
    static RankSpec parse(const std::string& s);
    std::string str() const;
};

struct LayerCompression {
    std::size_t layer = 0;
    std::size_t channels = 0;
    std::size_t rank = 0;
    double relative_error = 0.0;  // of the stacked adapters
    std::size_t stored_before = 0;
    std::size_t stored_after = 0;
};

struct CompressionReport {
    std::vector<std::string> domains;
    std::vector<LayerCompression> layers;
    std::size_t stored_before = 0;
    std::size_t stored_after = 0;
};

/// Jointly factorizes, layer by layer, the adapters of `domains` (all adapted
/// at the same layers) into a shared beta and per-domain gammas, replacing
/// their alphas.
template <typename T>
CompressionReport compress_adapters(Network<T>& net, std::span<const std::string> domains, const RankSpec& rank);

}  // namespace resadapt
