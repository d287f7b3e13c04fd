#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "resadapt/network.hpp"
#include "resadapt/tensor_io.hpp"

namespace resadapt {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Named MDTB records in insertion order. Names are unique.
class Checkpoint {
public:
    void add(std::string name, TensorRecord record);
    /// Replaces an existing entry in place or appends a new one.
    void set(const std::string& name, TensorRecord record);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const TensorRecord& get(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::string, TensorRecord>>& entries() const { return entries_; }

    std::vector<std::uint8_t> encode() const;
    static Checkpoint decode(std::span<const std::uint8_t> bytes);

    bool operator==(const Checkpoint& o) const { return entries_ == o.entries_; }

private:
    std::vector<std::pair<std::string, TensorRecord>> entries_;
    std::map<std::string, std::size_t> index_;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Floating-point precision of the parameter records in a checkpoint.
Precision checkpoint_precision(const Checkpoint& ckpt);

/// Every parameter of the network in canonical visit order, preceded by
/// "meta/network" and one "domain/<id>/meta/placement" record per domain.
template <typename T>
Checkpoint to_checkpoint(const Network<T>& net);

/// Inverse of to_checkpoint. Records of the other precision are converted.
template <typename T>
Network<T> from_checkpoint(const Checkpoint& ckpt);

}  // namespace resadapt
