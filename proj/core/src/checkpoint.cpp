#include "resadapt/checkpoint.hpp"

#include <cstring>

#include "resadapt/errors.hpp"

namespace resadapt {

namespace {
constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(std::uint8_t(v >> (8 * i)));
    }
}
}  // namespace

void Checkpoint::add(std::string name, TensorRecord record) {
    if (name.empty() || name.size() > 0xFFFF) {
        throw ConfigError("checkpoint entry names must be 1..65535 bytes");
    }
    if (!index_.emplace(name, entries_.size()).second) {
        throw FormatError("duplicate checkpoint entry '" + name + "'");
    }
    entries_.emplace_back(std::move(name), std::move(record));
}

void Checkpoint::set(const std::string& name, TensorRecord record) {
    if (auto it = index_.find(name); it != index_.end()) {
        entries_[it->second].second = std::move(record);
    } else {
        add(name, std::move(record));
    }
}

const TensorRecord& Checkpoint::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw FormatError("checkpoint has no entry '" + name + "'");
    }
    return entries_[it->second].second;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kCheckpointFormatVersion);
    put_u32(out, std::uint32_t(entries_.size()));
    for (const auto& [name, record] : entries_) {
        out.push_back(std::uint8_t(name.size() & 0xFF));
        out.push_back(std::uint8_t(name.size() >> 8));
        out.insert(out.end(), name.begin(), name.end());
        encode_record(record, out);
    }
    return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> b) {
    if (b.size() < 12) {
        throw SizeMismatchError("MDCK: truncated header");
    }
    if (std::memcmp(b.data(), kMagic, 4) != 0) {
        throw BadMagicError("MDCK: bad magic");
    }
    auto u32 = [&](std::size_t off) {
        return std::uint32_t(b[off]) | std::uint32_t(b[off + 1]) << 8 | std::uint32_t(b[off + 2]) << 16 |
               std::uint32_t(b[off + 3]) << 24;
    };
    const std::uint32_t version = u32(4);
    if (version != kCheckpointFormatVersion) {
        throw VersionMismatchError("MDCK: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = u32(8);
    std::size_t off = 12;
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        if (off + 2 > b.size()) {
            throw SizeMismatchError("MDCK: truncated entry header");
        }
        const std::size_t len = std::size_t(b[off]) | std::size_t(b[off + 1]) << 8;
        off += 2;
        if (off + len > b.size()) {
            throw SizeMismatchError("MDCK: truncated entry name");
        }
        std::string name(reinterpret_cast<const char*>(b.data() + off), len);
        off += len;
        ckpt.add(std::move(name), decode_record(b, off));
    }
    if (off != b.size()) {
        throw SizeMismatchError("MDCK: " + std::to_string(b.size() - off) + " trailing bytes");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, ckpt.encode());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return Checkpoint::decode(read_file(path)); }

Precision checkpoint_precision(const Checkpoint& ckpt) {
    for (const auto& [name, r] : ckpt.entries()) {
        if (r.dtype == DType::F32) {
            return Precision::Single;
        }
        if (r.dtype == DType::F64) {
            return Precision::Double;
        }
    }
    throw FormatError("checkpoint holds no floating-point parameters");
}

}  // namespace resadapt
