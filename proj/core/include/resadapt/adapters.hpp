#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "resadapt/ops.hpp"
#include "resadapt/rational.hpp"
#include "resadapt/tensor.hpp"

namespace resadapt {

enum class Topology { Series, Parallel };

std::string_view to_string(Topology t);
Topology parse_topology(std::string_view s);

/// Places `a` (C_in x C_out, entry [c,d] maps input c to output d) at the
/// center tap of an otherwise zero L x L bank. L must be odd.
template <typename T>
FilterBank<T> embed_diag(const Matrix<T>& a, std::size_t extent);

template <typename T>
struct SeriesCache {
    Tensor<T> z;  // host convolution output
    bool has_bn = false;
    BatchNormCache<T> bn;
};

/// z = conv2d(x, f); returns z + bn(conv1x1(z, alpha)). Pass bn == nullptr to
/// bypass the adapter's normalization.
template <typename T>
Tensor<T> series_forward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Matrix<T>& alpha,
                         BatchNormState<T>* bn, Mode mode, SeriesCache<T>* cache = nullptr,
                         bool update_running = true);

/// conv2d(x, f) + 1x1 adapter branch sampled at the host stride. The host
/// convolution must use "same" padding (L-1)/2 so both branches align.
template <typename T>
Tensor<T> parallel_forward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Matrix<T>& alpha);

template <typename T>
struct AdapterGrads {
    Tensor<T> dx;
    FilterBank<T> df;  // empty unless requested
    Matrix<T> dalpha;
    std::vector<T> dscale;  // series adapter BN, if present
    std::vector<T> dbias;
};

template <typename T>
AdapterGrads<T> series_backward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Matrix<T>& alpha,
                                const BatchNormState<T>* bn, const SeriesCache<T>& cache, const Tensor<T>& dy,
                                bool need_df = false);

template <typename T>
AdapterGrads<T> parallel_backward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom,
                                  const Matrix<T>& alpha, const Tensor<T>& dy, bool need_df = false);

/// g = f composed with the 1x1 map (I + alpha): g[v,u,c,d] = sum_e f[v,u,c,e] (I+alpha)[e,d].
template <typename T>
FilterBank<T> fuse_series(const FilterBank<T>& f, const Matrix<T>& alpha);

/// Recovers f from a series-fused bank. Returns nullopt when I + alpha is
/// singular, in which case f is not determined by g.
template <typename T>
std::optional<FilterBank<T>> unfuse_series(const FilterBank<T>& g, const Matrix<T>& alpha);

/// g = f + embed_diag(alpha, L).
template <typename T>
FilterBank<T> fuse_parallel(const FilterBank<T>& f, const Matrix<T>& alpha);

/// g - embed_diag(alpha, L). Off-center taps come back bit-exact; center taps
/// carry the rounding of one add and one subtract.
template <typename T>
FilterBank<T> unfuse_parallel(const FilterBank<T>& g, const Matrix<T>& alpha);

/// Adapter size relative to an L x L host bank with the same channel counts: 1/L^2.
Rational adapter_param_fraction(std::size_t extent);

/// Series adapters act on the host output (C_out x C_out); parallel ones
/// mirror the host's channel map (C_in x C_out).
std::size_t adapter_param_count(Topology topology, std::size_t in_channels, std::size_t out_channels);

}  // namespace resadapt
