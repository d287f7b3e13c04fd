#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "resadapt/rng.hpp"
#include "resadapt/tensor.hpp"

namespace testutil {

using resadapt::CounterRng;
using resadapt::FilterBank;
using resadapt::Matrix;
using resadapt::Shape;
using resadapt::Tensor;

inline Tensor<double> random_tensor(Shape shape, CounterRng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) {
        v = scale * rng.next_gaussian();
    }
    return t;
}

inline FilterBank<double> random_bank(std::size_t extent, std::size_t cin, std::size_t cout, CounterRng& rng,
                                      double scale = 1.0) {
    FilterBank<double> f(extent, cin, cout);
    for (auto& v : f.weights().values()) {
        v = scale * rng.next_gaussian();
    }
    return f;
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng, double scale = 1.0) {
    Matrix<double> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.next_gaussian();
    }
    return m;
}

/// max |a - b| / max(max |b|, tiny)
template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(double(a[i]) - double(b[i])));
        ref = std::max(ref, std::abs(double(b[i])));
    }
    return diff / std::max(ref, 1e-300);
}

/// Direct six-loop convolution with zero padding, used as an oracle.
inline Tensor<double> naive_conv(const Tensor<double>& x, const FilterBank<double>& f, std::size_t stride,
                                 std::size_t pad) {
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t l = f.extent(), d = f.out_channels();
    const std::size_t ho = (h + 2 * pad - l) / stride + 1, wo = (w + 2 * pad - l) / stride + 1;
    Tensor<double> y(Shape{n, ho, wo, d});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j)
                for (std::size_t o = 0; o < d; ++o) {
                    double acc = 0.0;
                    for (std::size_t v = 0; v < l; ++v)
                        for (std::size_t u = 0; u < l; ++u) {
                            const long r = long(i * stride + v) - long(pad);
                            const long s = long(j * stride + u) - long(pad);
                            if (r < 0 || s < 0 || r >= long(h) || s >= long(w)) continue;
                            for (std::size_t k = 0; k < c; ++k) acc += f.at(v, u, k, o) * x.at(b, r, s, k);
                        }
                    y.at(b, i, j, o) = acc;
                }
    return y;
}

}  // namespace testutil
