#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "resadapt/tensor.hpp"

namespace resadapt {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

/// Output extent along one spatial axis.
std::size_t conv_output_extent(std::size_t input, std::size_t extent, ConvGeometry geom);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom);

template <typename T>
struct ConvGrads {
    Tensor<T> dx;
    FilterBank<T> df;
};

/// Cotangents of conv2d w.r.t. its input and filters. Either side can be skipped.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const FilterBank<T>& f, ConvGeometry geom,
                             const Tensor<T>& dy, bool need_dx = true, bool need_df = true);

/// 1x1 convolution: out[n,h,w,d] = sum_c a[c,d] x[n,h*s,w*s,c].
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Matrix<T>& a, std::size_t stride = 1);

template <typename T>
struct Conv1x1Grads {
    Tensor<T> dx;
    Matrix<T> da;
};

template <typename T>
Conv1x1Grads<T> conv1x1_backward(const Tensor<T>& x, const Matrix<T>& a, std::size_t stride,
                                 const Tensor<T>& dy, bool need_dx = true, bool need_da = true);

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    std::vector<T> scale;
    std::vector<T> bias;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    double epsilon = 1e-5;
    double momentum = 0.1;

    /// scale 1, bias 0, running mean 0, running var 1.
    static BatchNormState identity(std::size_t channels);

    std::size_t channels() const { return scale.size(); }
    bool operator==(const BatchNormState&) const = default;
};

template <typename T>
struct BatchNormCache {
    Mode mode = Mode::Eval;
    Tensor<T> x_hat;
    std::vector<T> inv_std;
};

/// Normalizes over every axis but the last. In train mode uses batch statistics
/// and, if `update_running`, folds them into the running estimates (unbiased var).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode,
                     BatchNormCache<T>* cache = nullptr, bool update_running = true);

template <typename T>
struct BatchNormGrads {
    Tensor<T> dx;
    std::vector<T> dscale;
    std::vector<T> dbias;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const BatchNormState<T>& state,
                                      const Tensor<T>& dy);

// ---------------------------------------------------------------------------
// Pooling and pointwise
// ---------------------------------------------------------------------------

enum class PoolKind { Avg2x2, GlobalAvg };

/// Avg2x2 maps N,H,W,C to N,H/2,W/2,C; GlobalAvg maps N,H,W,C to N,C.
template <typename T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind);

template <typename T>
Tensor<T> pool_backward(const Shape& input_shape, PoolKind kind, const Tensor<T>& dy);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Gradient is taken as 0 at x == 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);

/// Inverted dropout: survivors are scaled by 1/(1-p), so eval mode is identity.
/// The mask is a pure function of (seed, element index).
template <typename T>
struct DropoutMask {
    std::vector<T> multiplier;
};

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t seed, Mode mode,
                  DropoutMask<T>* mask = nullptr);

template <typename T>
Tensor<T> dropout_backward(const DropoutMask<T>& mask, const Tensor<T>& dy);

// ---------------------------------------------------------------------------
// Classifier head: affine map + mean softmax cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
struct HeadOutput {
    Tensor<T> logits;         // N x K
    Tensor<T> probabilities;  // N x K
    double loss = 0.0;
};

template <typename T>
HeadOutput<T> classifier_head(const Tensor<T>& x, const Matrix<T>& weights, const std::vector<T>& bias,
                              std::span<const std::uint32_t> labels);

/// Logits only, for evaluation.
template <typename T>
Tensor<T> classifier_logits(const Tensor<T>& x, const Matrix<T>& weights, const std::vector<T>& bias);

template <typename T>
struct HeadGrads {
    Tensor<T> dx;
    Matrix<T> dweights;
    std::vector<T> dbias;
};

template <typename T>
HeadGrads<T> classifier_head_backward(const Tensor<T>& x, const Matrix<T>& weights,
                                      const HeadOutput<T>& out, std::span<const std::uint32_t> labels);

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

class CounterRng;

/// Gaussian with std sqrt(2 / (L^2 C_in)).
template <typename T>
FilterBank<T> he_filter(std::size_t extent, std::size_t in_channels, std::size_t out_channels, CounterRng& rng);

}  // namespace resadapt
