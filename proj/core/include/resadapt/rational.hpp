#pragma once

#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace resadapt {

/// Exact non-negative fraction, always stored in lowest terms.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    constexpr Rational() = default;
    constexpr Rational(std::int64_t n, std::int64_t d) : num(n), den(d) {
        if (d == 0) {
            throw std::invalid_argument("Rational: zero denominator");
        }
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const std::int64_t g = std::gcd(num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
    }

    constexpr double value() const { return double(num) / double(den); }
    constexpr bool operator==(const Rational&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.num << '/' << r.den; }

}  // namespace resadapt
