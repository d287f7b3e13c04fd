#include "resadapt/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

#include "resadapt/errors.hpp"

namespace resadapt {

static_assert(std::endian::native == std::endian::little, "MDTB payloads are written as native little-endian");

namespace {

constexpr char kMagic[4] = {'M', 'D', 'T', 'B'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(std::uint8_t(v >> (8 * i)));
    }
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t& off) {
    if (off + 4 > b.size()) {
        throw SizeMismatchError("MDTB: truncated header");
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= std::uint32_t(b[off + std::size_t(i)]) << (8 * i);
    }
    off += 4;
    return v;
}

}  // namespace

std::size_t dtype_size(DType t) {
    switch (t) {
    case DType::F32:
        return 4;
    case DType::F64:
        return 8;
    case DType::U32:
        return 4;
    }
    throw FormatError("unknown dtype");
}

std::string_view to_string(DType t) {
    switch (t) {
    case DType::F32:
        return "single";
    case DType::F64:
        return "double";
    case DType::U32:
        return "u32";
    }
    return "?";
}

std::size_t TensorRecord::numel() const {
    std::size_t n = 1;
    for (auto d : dims) {
        n *= d;
    }
    return n;
}

void encode_record(const TensorRecord& r, std::vector<std::uint8_t>& out) {
    if (r.payload.size() != r.numel() * dtype_size(r.dtype)) {
        throw SizeMismatchError("MDTB: payload of " + std::to_string(r.payload.size()) + " bytes does not match dims");
    }
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kTensorFormatVersion);
    put_u32(out, std::uint32_t(r.dims.size()));
    for (auto d : r.dims) {
        put_u32(out, d);
    }
    out.push_back(std::uint8_t(r.dtype));
    out.insert(out.end(), r.payload.begin(), r.payload.end());
}

TensorRecord decode_record(std::span<const std::uint8_t> b, std::size_t& offset) {
    std::size_t off = offset;
    if (off + 4 > b.size()) {
        throw SizeMismatchError("MDTB: truncated before magic");
    }
    if (std::memcmp(b.data() + off, kMagic, 4) != 0) {
        throw BadMagicError("MDTB: bad magic");
    }
    off += 4;
    const std::uint32_t version = get_u32(b, off);
    if (version != kTensorFormatVersion) {
        throw VersionMismatchError("MDTB: unsupported version " + std::to_string(version));
    }
    const std::uint32_t rank = get_u32(b, off);
    if (rank > 4) {
        throw FormatError("MDTB: rank " + std::to_string(rank) + " exceeds 4");
    }
    TensorRecord r;
    for (std::uint32_t i = 0; i < rank; ++i) {
        r.dims.push_back(get_u32(b, off));
    }
    if (off + 1 > b.size()) {
        throw SizeMismatchError("MDTB: truncated before dtype");
    }
    const std::uint8_t dt = b[off++];
    if (dt > 2) {
        throw FormatError("MDTB: unknown dtype code " + std::to_string(dt));
    }
    r.dtype = DType(dt);
    const std::size_t bytes = r.numel() * dtype_size(r.dtype);
    if (off + bytes > b.size()) {
        throw SizeMismatchError("MDTB: payload needs " + std::to_string(bytes) + " bytes, " +
                                std::to_string(b.size() - off) + " available");
    }
    r.payload.assign(b.begin() + std::ptrdiff_t(off), b.begin() + std::ptrdiff_t(off + bytes));
    offset = off + bytes;
    return r;
}

template <typename T>
TensorRecord to_record(std::span<const T> values, std::vector<std::uint32_t> dims) {
    TensorRecord r;
    r.dtype = dtype_of<T>();
    r.dims = std::move(dims);
    if (r.numel() != values.size()) {
        throw ConfigError("to_record: dims hold " + std::to_string(r.numel()) + " elements, got " +
                          std::to_string(values.size()));
    }
    r.payload.resize(values.size() * sizeof(T));
    if (!values.empty()) {
        std::memcpy(r.payload.data(), values.data(), r.payload.size());
    }
    return r;
}

template <typename T>
TensorRecord to_record(const Tensor<T>& t) {
    std::vector<std::uint32_t> dims(t.shape().dims().begin(), t.shape().dims().end());
    return to_record<T>(t.values(), std::move(dims));
}

namespace {

template <typename S>
std::vector<S> raw_values(const TensorRecord& r) {
    std::vector<S> v(r.numel());
    if (!v.empty()) {
        std::memcpy(v.data(), r.payload.data(), r.payload.size());
    }
    return v;
}

}  // namespace

template <typename T>
std::vector<T> record_values(const TensorRecord& r) {
    if (r.payload.size() != r.numel() * dtype_size(r.dtype)) {
        throw SizeMismatchError("record payload does not match its dims");
    }
    if constexpr (std::is_same_v<T, std::uint32_t>) {
        if (r.dtype != DType::U32) {
            throw FormatError("expected a u32 record, found " + std::string(to_string(r.dtype)));
        }
        return raw_values<std::uint32_t>(r);
    } else {
        if (r.dtype == DType::F32) {
            auto v = raw_values<float>(r);
            return std::vector<T>(v.begin(), v.end());
        }
        if (r.dtype == DType::F64) {
            auto v = raw_values<double>(r);
            return std::vector<T>(v.begin(), v.end());
        }
        throw FormatError("expected a floating-point record, found u32");
    }
}

template <typename T>
Tensor<T> record_tensor(const TensorRecord& r) {
    std::vector<std::size_t> dims(r.dims.begin(), r.dims.end());
    if (dims.empty()) {
        dims.push_back(1);
    }
    return Tensor<T>(Shape(std::move(dims)), record_values<T>(r));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("cannot write " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        if (!out) {
            throw FormatError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw FormatError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

void save_record(const std::filesystem::path& path, const TensorRecord& r) {
    std::vector<std::uint8_t> bytes;
    encode_record(r, bytes);
    write_file_atomic(path, bytes);
}

TensorRecord load_record(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::size_t off = 0;
    TensorRecord r = decode_record(bytes, off);
    if (off != bytes.size()) {
        throw SizeMismatchError(path.string() + ": " + std::to_string(bytes.size() - off) +
                                " trailing bytes after the record");
    }
    return r;
}

void save_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
    save_record(path, to_record<std::uint32_t>(labels, {std::uint32_t(labels.size())}));
}

std::vector<std::uint32_t> load_labels(const std::filesystem::path& path) {
    const TensorRecord r = load_record(path);
    if (r.dims.size() != 1) {
        throw FormatError(path.string() + ": labels must be rank 1");
    }
    return record_values<std::uint32_t>(r);
}

template TensorRecord to_record<float>(std::span<const float>, std::vector<std::uint32_t>);
template TensorRecord to_record<double>(std::span<const double>, std::vector<std::uint32_t>);
template TensorRecord to_record<std::uint32_t>(std::span<const std::uint32_t>, std::vector<std::uint32_t>);
template TensorRecord to_record<float>(const Tensor<float>&);
template TensorRecord to_record<double>(const Tensor<double>&);
template std::vector<float> record_values<float>(const TensorRecord&);
template std::vector<double> record_values<double>(const TensorRecord&);
template std::vector<std::uint32_t> record_values<std::uint32_t>(const TensorRecord&);
template Tensor<float> record_tensor<float>(const TensorRecord&);
template Tensor<double> record_tensor<double>(const TensorRecord&);

}  // namespace resadapt
