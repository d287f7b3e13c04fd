#include "resadapt/digest.hpp"

#include <array>
#include <memory>

#include <openssl/evp.h>

#include "resadapt/errors.hpp"
#include "resadapt/tensor_io.hpp"

namespace resadapt {

namespace {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw std::runtime_error("SHA-256 initialization failed");
        }
    }
    void update(std::span<const std::uint8_t> bytes) {
        if (EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()) != 1) {
            throw std::runtime_error("SHA-256 update failed");
        }
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) {
            throw std::runtime_error("SHA-256 finalization failed");
        }
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    Sha256 h;
    h.update(bytes);
    return h.hex();
}

std::string file_digest(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

template <typename T>
std::string params_digest(const Network<T>& net, const std::function<bool(const ParamView<const T>&)>& select) {
    Sha256 h;
    std::vector<std::uint8_t> buf;
    net.visit([&](const ParamView<const T>& v) {
        if (!select(v)) {
            return;
        }
        buf.assign(v.name.begin(), v.name.end());
        buf.push_back(0);
        encode_record(to_record<T>(v.values, std::vector<std::uint32_t>(v.dims.begin(), v.dims.end())), buf);
        h.update(buf);
    });
    return h.hex();
}

template <typename T>
std::string universal_digest(const Network<T>& net) {
    return params_digest<T>(net, [](const ParamView<const T>& v) { return v.kind == ParamKind::UniversalFilter; });
}

template <typename T>
std::string beta_digest(const Network<T>& net) {
    return params_digest<T>(net, [](const ParamView<const T>& v) { return v.kind == ParamKind::SharedBeta; });
}

template <typename T>
std::string named_digest(const Network<T>& net, const std::set<std::string>& names) {
    return params_digest<T>(net, [&](const ParamView<const T>& v) { return names.count(v.name) != 0; });
}

#define RESADAPT_INSTANTIATE_DIGEST(T)                                                                             \
    template std::string params_digest<T>(const Network<T>&, const std::function<bool(const ParamView<const T>&)>&); \
    template std::string universal_digest<T>(const Network<T>&);                                                 \
    template std::string beta_digest<T>(const Network<T>&);                                                      \
    template std::string named_digest<T>(const Network<T>&, const std::set<std::string>&);

RESADAPT_INSTANTIATE_DIGEST(float)
RESADAPT_INSTANTIATE_DIGEST(double)

}  // namespace resadapt
