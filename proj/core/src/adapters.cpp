#include "resadapt/adapters.hpp"

#include <string>

#include <Eigen/LU>

#include "resadapt/errors.hpp"

namespace resadapt {

std::string_view to_string(Topology t) { return t == Topology::Series ? "series" : "parallel"; }

Topology parse_topology(std::string_view s) {
    if (s == "series") {
        return Topology::Series;
    }
    if (s == "parallel") {
        return Topology::Parallel;
    }
    throw ConfigError("unknown topology '" + std::string(s) + "' (expected series|parallel)");
}

namespace {

template <typename T>
void require_square_for(const Matrix<T>& alpha, std::size_t channels, const char* op) {
    if (std::size_t(alpha.rows()) != channels || std::size_t(alpha.cols()) != channels) {
        throw ConfigError(std::string(op) + ": adapter is " + std::to_string(alpha.rows()) + "x" +
                          std::to_string(alpha.cols()) + ", expected " + std::to_string(channels) + "x" +
                          std::to_string(channels));
    }
}

template <typename T>
void require_matches_host(const FilterBank<T>& f, const Matrix<T>& alpha, const char* op) {
    if (std::size_t(alpha.rows()) != f.in_channels() || std::size_t(alpha.cols()) != f.out_channels()) {
        throw ConfigError(std::string(op) + ": adapter is " + std::to_string(alpha.rows()) + "x" +
                          std::to_string(alpha.cols()) + ", host bank maps " + std::to_string(f.in_channels()) +
                          " to " + std::to_string(f.out_channels()) + " channels");
    }
}

void require_same_padding(std::size_t extent, ConvGeometry geom) {
    if (geom.pad != (extent - 1) / 2) {
        throw ConfigError("parallel adapter needs same padding " + std::to_string((extent - 1) / 2) + ", got " +
                          std::to_string(geom.pad));
    }
}

}  // namespace

template <typename T>
FilterBank<T> embed_diag(const Matrix<T>& a, std::size_t extent) {
    if (extent % 2 == 0) {
        throw ConfigError("embed_diag: extent must be odd, got " + std::to_string(extent));
    }
    FilterBank<T> bank(extent, std::size_t(a.rows()), std::size_t(a.cols()));
    const std::size_t center = (extent - 1) / 2;
    for (Eigen::Index c = 0; c < a.rows(); ++c) {
        for (Eigen::Index d = 0; d < a.cols(); ++d) {
            bank.at(center, center, std::size_t(c), std::size_t(d)) = a(c, d);
        }
    }
    return bank;
}

template <typename T>
Tensor<T> series_forward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Matrix<T>& alpha,
                         BatchNormState<T>* bn, Mode mode, SeriesCache<T>* cache, bool update_running) {
    require_square_for(alpha, f.out_channels(), "series_forward");
    Tensor<T> z = conv2d(x, f, geom);
    Tensor<T> branch = conv1x1(z, alpha);
    BatchNormCache<T> bn_cache;
    if (bn) {
        branch = batch_norm(branch, *bn, mode, cache ? &bn_cache : nullptr, update_running);
    }
    Tensor<T> y = z;
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += branch[i];
    }
    if (cache) {
        cache->z = std::move(z);
        cache->has_bn = bn != nullptr;
        cache->bn = std::move(bn_cache);
    }
    return y;
}

template <typename T>
Tensor<T> parallel_forward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Matrix<T>& alpha) {
    require_matches_host(f, alpha, "parallel_forward");
    require_same_padding(f.extent(), geom);
    Tensor<T> y = conv2d(x, f, geom);
    const Tensor<T> branch = conv1x1(x, alpha, geom.stride);
    if (branch.shape() != y.shape()) {
        throw ConfigError("parallel_forward: adapter branch " + branch.shape().str() + " vs host " + y.shape().str());
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += branch[i];
    }
    return y;
}

template <typename T>
AdapterGrads<T> series_backward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Matrix<T>& alpha,
                                const BatchNormState<T>* bn, const SeriesCache<T>& cache, const Tensor<T>& dy,
                                bool need_df) {
    AdapterGrads<T> g;
    Tensor<T> dbranch = dy;
    if (cache.has_bn) {
        auto bg = batch_norm_backward(cache.bn, *bn, dy);
        dbranch = std::move(bg.dx);
        g.dscale = std::move(bg.dscale);
        g.dbias = std::move(bg.dbias);
    }
    auto ag = conv1x1_backward(cache.z, alpha, 1, dbranch);
    g.dalpha = std::move(ag.da);
    Tensor<T> dz = dy;
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dz[i] += ag.dx[i];
    }
    auto cg = conv2d_backward(x, f, geom, dz, true, need_df);
    g.dx = std::move(cg.dx);
    if (need_df) {
        g.df = std::move(cg.df);
    }
    return g;
}

template <typename T>
AdapterGrads<T> parallel_backward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom,
                                  const Matrix<T>& alpha, const Tensor<T>& dy, bool need_df) {
    AdapterGrads<T> g;
    auto cg = conv2d_backward(x, f, geom, dy, true, need_df);
    auto ag = conv1x1_backward(x, alpha, geom.stride, dy);
    g.dx = std::move(cg.dx);
    for (std::size_t i = 0; i < g.dx.size(); ++i) {
        g.dx[i] += ag.dx[i];
    }
    if (need_df) {
        g.df = std::move(cg.df);
    }
    g.dalpha = std::move(ag.da);
    return g;
}

template <typename T>
FilterBank<T> fuse_series(const FilterBank<T>& f, const Matrix<T>& alpha) {
    require_square_for(alpha, f.out_channels(), "fuse_series");
    FilterBank<T> g(f.extent(), f.in_channels(), f.out_channels());
    const Matrix<T> map = Matrix<T>::Identity(alpha.rows(), alpha.cols()) + alpha;
    g.as_matrix().noalias() = f.as_matrix() * map;
    return g;
}

template <typename T>
std::optional<FilterBank<T>> unfuse_series(const FilterBank<T>& g, const Matrix<T>& alpha) {
    require_square_for(alpha, g.out_channels(), "unfuse_series");
    const Matrix<T> map = Matrix<T>::Identity(alpha.rows(), alpha.cols()) + alpha;
    Eigen::FullPivLU<Matrix<T>> lu(map);
    if (!lu.isInvertible()) {
        return std::nullopt;
    }
    FilterBank<T> f(g.extent(), g.in_channels(), g.out_channels());
    f.as_matrix() = g.as_matrix() * lu.inverse();
    return f;
}

template <typename T>
FilterBank<T> fuse_parallel(const FilterBank<T>& f, const Matrix<T>& alpha) {
    require_matches_host(f, alpha, "fuse_parallel");
    FilterBank<T> g = f;
    const std::size_t center = (f.extent() - 1) / 2;
    for (std::size_t c = 0; c < f.in_channels(); ++c) {
        for (std::size_t d = 0; d < f.out_channels(); ++d) {
            g.at(center, center, c, d) += alpha(Eigen::Index(c), Eigen::Index(d));
        }
    }
    return g;
}

template <typename T>
FilterBank<T> unfuse_parallel(const FilterBank<T>& g, const Matrix<T>& alpha) {
    require_matches_host(g, alpha, "unfuse_parallel");
    FilterBank<T> f = g;
    const std::size_t center = (g.extent() - 1) / 2;
    for (std::size_t c = 0; c < g.in_channels(); ++c) {
        for (std::size_t d = 0; d < g.out_channels(); ++d) {
            f.at(center, center, c, d) -= alpha(Eigen::Index(c), Eigen::Index(d));
        }
    }
    return f;
}

Rational adapter_param_fraction(std::size_t extent) {
    if (extent % 2 == 0) {
        throw ConfigError("adapter_param_fraction: extent must be odd, got " + std::to_string(extent));
    }
    return Rational(1, std::int64_t(extent * extent));
}

std::size_t adapter_param_count(Topology topology, std::size_t in_channels, std::size_t out_channels) {
    return topology == Topology::Series ? out_channels * out_channels : in_channels * out_channels;
}

#define RESADAPT_INSTANTIATE_ADAPTERS(T)                                                                           \
    template FilterBank<T> embed_diag<T>(const Matrix<T>&, std::size_t);                                          \
    template Tensor<T> series_forward<T>(const Tensor<T>&, const FilterBank<T>&, ConvGeometry, const Matrix<T>&,  \
                                         BatchNormState<T>*, Mode, SeriesCache<T>*, bool);                              \
    template Tensor<T> parallel_forward<T>(const Tensor<T>&, const FilterBank<T>&, ConvGeometry, const Matrix<T>&); \
    template AdapterGrads<T> series_backward<T>(const Tensor<T>&, const FilterBank<T>&, ConvGeometry,             \
                                                const Matrix<T>&, const BatchNormState<T>*, const SeriesCache<T>&, \
                                                const Tensor<T>&, bool);                                          \
    template AdapterGrads<T> parallel_backward<T>(const Tensor<T>&, const FilterBank<T>&, ConvGeometry,           \
                                                  const Matrix<T>&, const Tensor<T>&, bool);                      \
    template FilterBank<T> fuse_series<T>(const FilterBank<T>&, const Matrix<T>&);                                \
    template std::optional<FilterBank<T>> unfuse_series<T>(const FilterBank<T>&, const Matrix<T>&);               \
    template FilterBank<T> fuse_parallel<T>(const FilterBank<T>&, const Matrix<T>&);                              \
    template FilterBank<T> unfuse_parallel<T>(const FilterBank<T>&, const Matrix<T>&);

RESADAPT_INSTANTIATE_ADAPTERS(float)
RESADAPT_INSTANTIATE_ADAPTERS(double)

}  // namespace resadapt
