#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>

#include "resadapt/network.hpp"

namespace resadapt {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string file_digest(const std::filesystem::path& path);

/// Digest over (name, MDTB record) of every visited parameter accepted by
/// `select`, in canonical order.
template <typename T>
std::string params_digest(const Network<T>& net, const std::function<bool(const ParamView<const T>&)>& select);

/// Shared universal filters (stem, body, projections).
template <typename T>
std::string universal_digest(const Network<T>& net);

/// Shared compression factors; the digest of nothing when no layer is compressed.
template <typename T>
std::string beta_digest(const Network<T>& net);

template <typename T>
std::string named_digest(const Network<T>& net, const std::set<std::string>& names);

}  // namespace resadapt
