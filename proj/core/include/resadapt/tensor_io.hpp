#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "resadapt/tensor.hpp"

namespace resadapt {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U32 = 2 };

std::size_t dtype_size(DType t);
std::string_view to_string(DType t);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }
template <>
constexpr DType dtype_of<std::uint32_t>() { return DType::U32; }

/// One MDTB record held as raw little-endian payload bytes, so records can be
/// moved between containers without touching their numeric content.
struct TensorRecord {
    DType dtype = DType::F32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t numel() const;
    bool operator==(const TensorRecord&) const = default;
};

inline constexpr std::uint32_t kTensorFormatVersion = 1;

/// Appends the full record (magic, version, rank, dims, dtype, payload).
void encode_record(const TensorRecord& r, std::vector<std::uint8_t>& out);
/// Parses one record starting at `offset` and advances it. Throws
/// BadMagicError, VersionMismatchError or SizeMismatchError.
TensorRecord decode_record(std::span<const std::uint8_t> bytes, std::size_t& offset);

template <typename T>
TensorRecord to_record(std::span<const T> values, std::vector<std::uint32_t> dims);
template <typename T>
TensorRecord to_record(const Tensor<T>& t);

/// Decodes the payload as T. Floating records convert between precisions;
/// integer records must be read as uint32.
template <typename T>
std::vector<T> record_values(const TensorRecord& r);
template <typename T>
Tensor<T> record_tensor(const TensorRecord& r);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_record(const std::filesystem::path& path, const TensorRecord& r);
/// The whole file must be exactly one record.
TensorRecord load_record(const std::filesystem::path& path);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    save_record(path, to_record(t));
}
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
    return record_tensor<T>(load_record(path));
}

void save_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels);
std::vector<std::uint32_t> load_labels(const std::filesystem::path& path);

}  // namespace resadapt
