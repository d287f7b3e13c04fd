#include "resadapt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "resadapt/errors.hpp"
#include "resadapt/rng.hpp"

namespace resadapt {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.rank() != rank) {
        throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + s.str());
    }
}

struct ConvDims {
    std::size_t n, h, w, c, oh, ow, d, l;
    ConvGeometry g;
    std::size_t patch() const { return l * l * c; }
    std::size_t out_rows() const { return n * oh * ow; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom) {
    require_rank(x.shape(), 4, "conv2d");
    if (geom.stride == 0) {
        throw ConfigError("conv2d: stride must be positive");
    }
    if (x.dim(3) != f.in_channels()) {
        throw ConfigError("conv2d: input has " + std::to_string(x.dim(3)) + " channels, filter expects " +
                          std::to_string(f.in_channels()));
    }
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0, f.out_channels(), f.extent(), geom};
    d.oh = conv_output_extent(d.h, d.l, geom);
    d.ow = conv_output_extent(d.w, d.l, geom);
    return d;
}

bool is_pointwise(const ConvDims& d) { return d.l == 1 && d.g.stride == 1 && d.g.pad == 0; }

// Rows (n, i, j), columns (v, u, c) matching the filter's memory order.
template <typename T>
Matrix<T> im2col(const Tensor<T>& x, const ConvDims& d) {
    Matrix<T> cols(Eigen::Index(d.out_rows()), Eigen::Index(d.patch()));
    T* out = cols.data();
    const T* src = x.data();
    const auto pad = static_cast<std::ptrdiff_t>(d.g.pad);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.oh; ++i) {
            for (std::size_t j = 0; j < d.ow; ++j) {
                for (std::size_t v = 0; v < d.l; ++v) {
                    const std::ptrdiff_t row = std::ptrdiff_t(i * d.g.stride + v) - pad;
                    for (std::size_t u = 0; u < d.l; ++u) {
                        const std::ptrdiff_t col = std::ptrdiff_t(j * d.g.stride + u) - pad;
                        if (row < 0 || col < 0 || row >= std::ptrdiff_t(d.h) || col >= std::ptrdiff_t(d.w)) {
                            std::fill(out, out + d.c, T{0});
                        } else {
                            const T* p = src + ((n * d.h + std::size_t(row)) * d.w + std::size_t(col)) * d.c;
                            std::copy(p, p + d.c, out);
                        }
                        out += d.c;
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
void col2im(const Matrix<T>& cols, const ConvDims& d, Tensor<T>& dx) {
    const T* in = cols.data();
    T* dst = dx.data();
    const auto pad = static_cast<std::ptrdiff_t>(d.g.pad);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t i = 0; i < d.oh; ++i) {
            for (std::size_t j = 0; j < d.ow; ++j) {
                for (std::size_t v = 0; v < d.l; ++v) {
                    const std::ptrdiff_t row = std::ptrdiff_t(i * d.g.stride + v) - pad;
                    for (std::size_t u = 0; u < d.l; ++u) {
                        const std::ptrdiff_t col = std::ptrdiff_t(j * d.g.stride + u) - pad;
                        if (row >= 0 && col >= 0 && row < std::ptrdiff_t(d.h) && col < std::ptrdiff_t(d.w)) {
                            T* p = dst + ((n * d.h + std::size_t(row)) * d.w + std::size_t(col)) * d.c;
                            for (std::size_t c = 0; c < d.c; ++c) {
                                p[c] += in[c];
                            }
                        }
                        in += d.c;
                    }
                }
            }
        }
    }
}

// Rows of x sampled at stride s (1x1 taps, no padding).
template <typename T>
Matrix<T> strided_rows(const Tensor<T>& x, std::size_t stride, std::size_t oh, std::size_t ow) {
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Matrix<T> rows(Eigen::Index(n * oh * ow), Eigen::Index(c));
    T* out = rows.data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                const T* p = x.data() + ((b * h + i * stride) * w + j * stride) * c;
                out = std::copy(p, p + c, out);
            }
        }
    }
    return rows;
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t extent, ConvGeometry geom) {
    if (input + 2 * geom.pad < extent) {
        throw ConfigError("conv2d: padded input extent " + std::to_string(input + 2 * geom.pad) +
                          " smaller than filter extent " + std::to_string(extent));
    }
    return (input + 2 * geom.pad - extent) / geom.stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom) {
    const ConvDims d = conv_dims(x, f, geom);
    Tensor<T> y(Shape{d.n, d.oh, d.ow, d.d});
    auto ym = y.as_matrix();
    if (is_pointwise(d)) {
        ym.noalias() = x.as_matrix() * f.as_matrix();
    } else {
        ym.noalias() = im2col(x, d) * f.as_matrix();
    }
    require_finite(y, "conv2d");
    return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom, const Tensor<T>& dy,
                             bool need_dx, bool need_df) {
    const ConvDims d = conv_dims(x, f, geom);
    if (dy.shape() != Shape{d.n, d.oh, d.ow, d.d}) {
        throw ConfigError("conv2d_backward: cotangent shape " + dy.shape().str() + " does not match output");
    }
    ConvGrads<T> g;
    const auto dym = dy.as_matrix();
    if (is_pointwise(d)) {
        if (need_df) {
            g.df = FilterBank<T>(1, d.c, d.d);
            g.df.as_matrix().noalias() = x.as_matrix().transpose() * dym;
        }
        if (need_dx) {
            g.dx = Tensor<T>(x.shape());
            g.dx.as_matrix().noalias() = dym * f.as_matrix().transpose();
        }
    } else {
        if (need_df) {
            const Matrix<T> cols = im2col(x, d);
            g.df = FilterBank<T>(d.l, d.c, d.d);
            g.df.as_matrix().noalias() = cols.transpose() * dym;
        }
        if (need_dx) {
            const Matrix<T> dcols = dym * f.as_matrix().transpose();
            g.dx = Tensor<T>(x.shape());
            col2im(dcols, d, g.dx);
        }
    }
    if (need_dx) {
        require_finite(g.dx, "conv2d_backward");
    }
    if (need_df) {
        require_finite(g.df.weights(), "conv2d_backward");
    }
    return g;
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Matrix<T>& a, std::size_t stride) {
    require_rank(x.shape(), 4, "conv1x1");
    if (std::size_t(a.rows()) != x.dim(3)) {
        throw ConfigError("conv1x1: matrix has " + std::to_string(a.rows()) + " rows, input has " +
                          std::to_string(x.dim(3)) + " channels");
    }
    if (stride == 0) {
        throw ConfigError("conv1x1: stride must be positive");
    }
    const std::size_t oh = (x.dim(1) - 1) / stride + 1;
    const std::size_t ow = (x.dim(2) - 1) / stride + 1;
    Tensor<T> y(Shape{x.dim(0), oh, ow, std::size_t(a.cols())});
    if (stride == 1) {
        y.as_matrix().noalias() = x.as_matrix() * a;
    } else {
        y.as_matrix().noalias() = strided_rows(x, stride, oh, ow) * a;
    }
    require_finite(y, "conv1x1");
    return y;
}

template <typename T>
Conv1x1Grads<T> conv1x1_backward(const Tensor<T>& x, const Matrix<T>& a, std::size_t stride, const Tensor<T>& dy,
                                 bool need_dx, bool need_da) {
    const std::size_t oh = (x.dim(1) - 1) / stride + 1;
    const std::size_t ow = (x.dim(2) - 1) / stride + 1;
    if (dy.shape() != Shape{x.dim(0), oh, ow, std::size_t(a.cols())}) {
        throw ConfigError("conv1x1_backward: cotangent shape " + dy.shape().str() + " does not match output");
    }
    Conv1x1Grads<T> g;
    const auto dym = dy.as_matrix();
    if (stride == 1) {
        if (need_da) {
            g.da.noalias() = x.as_matrix().transpose() * dym;
        }
        if (need_dx) {
            g.dx = Tensor<T>(x.shape());
            g.dx.as_matrix().noalias() = dym * a.transpose();
        }
        return g;
    }
    if (need_da) {
        g.da.noalias() = strided_rows(x, stride, oh, ow).transpose() * dym;
    }
    if (need_dx) {
        const Matrix<T> drows = dym * a.transpose();
        g.dx = Tensor<T>(x.shape());
        const std::size_t h = x.dim(1), w = x.dim(2), c = x.dim(3);
        const T* in = drows.data();
        for (std::size_t b = 0; b < x.dim(0); ++b) {
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j) {
                    T* p = g.dx.data() + ((b * h + i * stride) * w + j * stride) * c;
                    std::copy(in, in + c, p);
                    in += c;
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(std::size_t channels) {
    BatchNormState s;
    s.scale.assign(channels, T{1});
    s.bias.assign(channels, T{0});
    s.running_mean.assign(channels, T{0});
    s.running_var.assign(channels, T{1});
    return s;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode, BatchNormCache<T>* cache,
                     bool update_running) {
    const std::size_t c = x.channels();
    if (c != state.channels()) {
        throw ConfigError("batch_norm: input has " + std::to_string(c) + " channels, state has " +
                          std::to_string(state.channels()));
    }
    const std::size_t rows = x.rows();
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    if (mode == Mode::Train) {
        const T* p = x.data();
        for (std::size_t r = 0; r < rows; ++r, p += c) {
            for (std::size_t k = 0; k < c; ++k) {
                mean[k] += p[k];
            }
        }
        for (auto& m : mean) {
            m /= double(rows);
        }
        p = x.data();
        for (std::size_t r = 0; r < rows; ++r, p += c) {
            for (std::size_t k = 0; k < c; ++k) {
                const double dv = double(p[k]) - mean[k];
                var[k] += dv * dv;
            }
        }
        for (std::size_t k = 0; k < c; ++k) {
            var[k] /= double(rows);
        }
        if (update_running) {
            const double mom = state.momentum;
            const double unbias = rows > 1 ? double(rows) / double(rows - 1) : 1.0;
            for (std::size_t k = 0; k < c; ++k) {
                state.running_mean[k] = T((1.0 - mom) * state.running_mean[k] + mom * mean[k]);
                state.running_var[k] = T((1.0 - mom) * state.running_var[k] + mom * var[k] * unbias);
            }
        }
    } else {
        for (std::size_t k = 0; k < c; ++k) {
            mean[k] = state.running_mean[k];
            var[k] = state.running_var[k];
        }
    }

    std::vector<T> inv_std(c), mu(c);
    for (std::size_t k = 0; k < c; ++k) {
        inv_std[k] = T(1.0 / std::sqrt(var[k] + state.epsilon));
        mu[k] = T(mean[k]);
    }
    Tensor<T> y(x.shape());
    Tensor<T> x_hat;
    if (cache) {
        x_hat = Tensor<T>(x.shape());
    }
    const T* p = x.data();
    T* out = y.data();
    for (std::size_t r = 0; r < rows; ++r, p += c, out += c) {
        for (std::size_t k = 0; k < c; ++k) {
            const T xh = (p[k] - mu[k]) * inv_std[k];
            if (cache) {
                x_hat[r * c + k] = xh;
            }
            out[k] = state.scale[k] * xh + state.bias[k];
        }
    }
    require_finite(y, "batch_norm");
    if (cache) {
        cache->mode = mode;
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const BatchNormState<T>& state,
                                      const Tensor<T>& dy) {
    const std::size_t c = state.channels();
    const std::size_t rows = dy.rows();
    if (dy.shape() != cache.x_hat.shape()) {
        throw ConfigError("batch_norm_backward: cotangent shape mismatch");
    }
    BatchNormGrads<T> g;
    std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
    const T* d = dy.data();
    const T* xh = cache.x_hat.data();
    for (std::size_t r = 0; r < rows; ++r, d += c, xh += c) {
        for (std::size_t k = 0; k < c; ++k) {
            sum_dy[k] += d[k];
            sum_dy_xh[k] += double(d[k]) * xh[k];
        }
    }
    g.dbias.assign(sum_dy.begin(), sum_dy.end());
    g.dscale.assign(sum_dy_xh.begin(), sum_dy_xh.end());

    g.dx = Tensor<T>(dy.shape());
    d = dy.data();
    xh = cache.x_hat.data();
    T* out = g.dx.data();
    if (cache.mode == Mode::Eval) {
        for (std::size_t r = 0; r < rows; ++r, d += c, out += c) {
            for (std::size_t k = 0; k < c; ++k) {
                out[k] = d[k] * state.scale[k] * cache.inv_std[k];
            }
        }
    } else {
        const double inv_n = 1.0 / double(rows);
        std::vector<T> a(c), mdy(c), mdyxh(c);
        for (std::size_t k = 0; k < c; ++k) {
            a[k] = state.scale[k] * cache.inv_std[k];
            mdy[k] = T(sum_dy[k] * inv_n);
            mdyxh[k] = T(sum_dy_xh[k] * inv_n);
        }
        for (std::size_t r = 0; r < rows; ++r, d += c, xh += c, out += c) {
            for (std::size_t k = 0; k < c; ++k) {
                out[k] = a[k] * (d[k] - mdy[k] - xh[k] * mdyxh[k]);
            }
        }
    }
    require_finite(g.dx, "batch_norm_backward");
    return g;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind) {
    require_rank(x.shape(), 4, "pool");
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (kind == PoolKind::GlobalAvg) {
        Tensor<T> y(Shape{n, c});
        const T inv = T(1) / T(h * w);
        for (std::size_t b = 0; b < n; ++b) {
            const T* p = x.data() + b * h * w * c;
            T* out = y.data() + b * c;
            for (std::size_t r = 0; r < h * w; ++r, p += c) {
                for (std::size_t k = 0; k < c; ++k) {
                    out[k] += p[k];
                }
            }
            for (std::size_t k = 0; k < c; ++k) {
                out[k] *= inv;
            }
        }
        return y;
    }
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("pool: avg2x2 needs even spatial extents, got " + x.shape().str());
    }
    Tensor<T> y(Shape{n, h / 2, w / 2, c});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < h / 2; ++i) {
            for (std::size_t j = 0; j < w / 2; ++j) {
                for (std::size_t k = 0; k < c; ++k) {
                    y.at(b, i, j, k) = T(0.25) * (x.at(b, 2 * i, 2 * j, k) + x.at(b, 2 * i, 2 * j + 1, k) +
                                                  x.at(b, 2 * i + 1, 2 * j, k) + x.at(b, 2 * i + 1, 2 * j + 1, k));
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> pool_backward(const Shape& input_shape, PoolKind kind, const Tensor<T>& dy) {
    const std::size_t n = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3];
    Tensor<T> dx(input_shape);
    if (kind == PoolKind::GlobalAvg) {
        const T inv = T(1) / T(h * w);
        for (std::size_t b = 0; b < n; ++b) {
            const T* g = dy.data() + b * c;
            T* p = dx.data() + b * h * w * c;
            for (std::size_t r = 0; r < h * w; ++r, p += c) {
                for (std::size_t k = 0; k < c; ++k) {
                    p[k] = g[k] * inv;
                }
            }
        }
        return dx;
    }
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                for (std::size_t k = 0; k < c; ++k) {
                    dx.at(b, i, j, k) = T(0.25) * dy.at(b, i / 2, j / 2, k);
                }
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    std::transform(x.values().begin(), x.values().end(), y.values().begin(),
                   [](T v) { return v > T{0} ? v : T{0}; });
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        dx[i] = x[i] > T{0} ? dy[i] : T{0};
    }
    return dx;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t seed, Mode mode, DropoutMask<T>* mask) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    }
    if (mode == Mode::Eval || p == 0.0) {
        if (mask) {
            mask->multiplier.assign(x.size(), T{1});
        }
        return x;
    }
    const T keep_scale = T(1.0 / (1.0 - p));
    Tensor<T> y(x.shape());
    std::vector<T> mult(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = double(CounterRng::at(seed, i) >> 11) * 0x1.0p-53;
        mult[i] = u < p ? T{0} : keep_scale;
        y[i] = x[i] * mult[i];
    }
    if (mask) {
        mask->multiplier = std::move(mult);
    }
    return y;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutMask<T>& mask, const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dx[i] = dy[i] * mask.multiplier[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> classifier_logits(const Tensor<T>& x, const Matrix<T>& weights, const std::vector<T>& bias) {
    require_rank(x.shape(), 2, "classifier_head");
    if (std::size_t(weights.rows()) != x.dim(1) || std::size_t(weights.cols()) != bias.size()) {
        throw ConfigError("classifier_head: weights " + std::to_string(weights.rows()) + "x" +
                          std::to_string(weights.cols()) + " incompatible with input " + x.shape().str());
    }
    const std::size_t k = bias.size();
    Tensor<T> logits(Shape{x.dim(0), k});
    auto lm = logits.as_matrix();
    lm.noalias() = x.as_matrix() * weights;
    lm.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), Eigen::Index(k));
    require_finite(logits, "classifier_head");
    return logits;
}

template <typename T>
HeadOutput<T> classifier_head(const Tensor<T>& x, const Matrix<T>& weights, const std::vector<T>& bias,
                              std::span<const std::uint32_t> labels) {
    HeadOutput<T> out;
    out.logits = classifier_logits(x, weights, bias);
    const std::size_t n = x.dim(0), k = bias.size();
    if (labels.size() != n) {
        throw ConfigError("classifier_head: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(n));
    }
    out.probabilities = Tensor<T>(out.logits.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) {
            throw ConfigError("classifier_head: label " + std::to_string(labels[i]) + " out of range [0, " +
                              std::to_string(k) + ")");
        }
        const T* z = out.logits.data() + i * k;
        T* pr = out.probabilities.data() + i * k;
        const double zmax = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            sum += std::exp(double(z[j]) - zmax);
        }
        const double log_sum = std::log(sum);
        for (std::size_t j = 0; j < k; ++j) {
            pr[j] = T(std::exp(double(z[j]) - zmax - log_sum));
        }
        loss -= double(z[labels[i]]) - zmax - log_sum;
    }
    out.loss = loss / double(n);
    if (!std::isfinite(out.loss)) {
        throw NumericError("classifier_head: non-finite loss");
    }
    return out;
}

template <typename T>
HeadGrads<T> classifier_head_backward(const Tensor<T>& x, const Matrix<T>& weights, const HeadOutput<T>& out,
                                      std::span<const std::uint32_t> labels) {
    const std::size_t n = x.dim(0), k = std::size_t(weights.cols());
    Tensor<T> dlogits = out.probabilities;
    const T inv_n = T(1) / T(n);
    for (std::size_t i = 0; i < n; ++i) {
        dlogits[i * k + labels[i]] -= T{1};
    }
    for (auto& v : dlogits.values()) {
        v *= inv_n;
    }
    HeadGrads<T> g;
    const auto dl = dlogits.as_matrix();
    g.dweights.noalias() = x.as_matrix().transpose() * dl;
    g.dbias.assign(k, T{0});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            g.dbias[j] += dlogits[i * k + j];
        }
    }
    g.dx = Tensor<T>(x.shape());
    g.dx.as_matrix().noalias() = dl * weights.transpose();
    return g;
}

template <typename T>
FilterBank<T> he_filter(std::size_t extent, std::size_t in_channels, std::size_t out_channels, CounterRng& rng) {
    FilterBank<T> f(extent, in_channels, out_channels);
    const double std_dev = std::sqrt(2.0 / double(extent * extent * in_channels));
    for (auto& v : f.weights().values()) {
        v = T(std_dev * rng.next_gaussian());
    }
    return f;
}

#define RESADAPT_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const FilterBank<T>&, ConvGeometry);                         \
    template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const FilterBank<T>&, ConvGeometry,              \
                                             const Tensor<T>&, bool, bool);                                     \
    template Tensor<T> conv1x1<T>(const Tensor<T>&, const Matrix<T>&, std::size_t);                             \
    template Conv1x1Grads<T> conv1x1_backward<T>(const Tensor<T>&, const Matrix<T>&, std::size_t,               \
                                                 const Tensor<T>&, bool, bool);                                 \
    template struct BatchNormState<T>;                                                                          \
    template Tensor<T> batch_norm<T>(const Tensor<T>&, BatchNormState<T>&, Mode, BatchNormCache<T>*, bool);     \
    template BatchNormGrads<T> batch_norm_backward<T>(const BatchNormCache<T>&, const BatchNormState<T>&,       \
                                                      const Tensor<T>&);                                        \
    template Tensor<T> pool<T>(const Tensor<T>&, PoolKind);                                                     \
    template Tensor<T> pool_backward<T>(const Shape&, PoolKind, const Tensor<T>&);                              \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                               \
    template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> dropout<T>(const Tensor<T>&, double, std::uint64_t, Mode, DropoutMask<T>*);              \
    template Tensor<T> dropout_backward<T>(const DropoutMask<T>&, const Tensor<T>&);                            \
    template Tensor<T> classifier_logits<T>(const Tensor<T>&, const Matrix<T>&, const std::vector<T>&);         \
    template HeadOutput<T> classifier_head<T>(const Tensor<T>&, const Matrix<T>&, const std::vector<T>&,        \
                                              std::span<const std::uint32_t>);                                  \
    template HeadGrads<T> classifier_head_backward<T>(const Tensor<T>&, const Matrix<T>&, const HeadOutput<T>&, \
                                                      std::span<const std::uint32_t>);                          \
    template FilterBank<T> he_filter<T>(std::size_t, std::size_t, std::size_t, CounterRng&);

RESADAPT_INSTANTIATE_OPS(float)
RESADAPT_INSTANTIATE_OPS(double)

}  // namespace resadapt
