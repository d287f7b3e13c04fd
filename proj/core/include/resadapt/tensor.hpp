#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace resadapt {

/// Dense row-major matrix used for adapters, classifier weights and factors.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

enum class Precision { Single, Double };

class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::vector<std::size_t> dims);

    std::size_t rank() const { return dims_.size(); }
    std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
    std::size_t numel() const;
    const std::vector<std::size_t>& dims() const { return dims_; }

    bool operator==(const Shape&) const = default;

    std::string str() const;

private:
    std::vector<std::size_t> dims_;
};

/// Dense tensor of rank <= 4. Image batches use axis order N,H,W,C.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.rank(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    // NHWC element access, rank-4 only.
    T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return values_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return values_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    /// Channels are the innermost axis; everything else flattens into rows.
    std::size_t channels() const { return shape_[shape_.rank() - 1]; }
    std::size_t rows() const { return size() / channels(); }

    MatrixMap<T> as_matrix() { return {values_.data(), Eigen::Index(rows()), Eigen::Index(channels())}; }
    ConstMatrixMap<T> as_matrix() const {
        return {values_.data(), Eigen::Index(rows()), Eigen::Index(channels())};
    }

    Tensor reshaped(Shape shape) const;
    void fill(T value);

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(values_.begin(), values_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<T> values_;
};

/// Throws NumericError naming `op` if any element is NaN or infinite.
template <typename T>
void require_finite(std::span<const T> values, std::string_view op);

template <typename T>
void require_finite(const Tensor<T>& t, std::string_view op) {
    require_finite<T>(t.values(), op);
}

/// L x L x C_in x C_out convolution weights; index order (v, u, c, d).
template <typename T>
class FilterBank {
public:
    FilterBank() = default;
    FilterBank(std::size_t extent, std::size_t in_channels, std::size_t out_channels);
    explicit FilterBank(Tensor<T> weights);

    std::size_t extent() const { return extent_; }
    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    std::size_t param_count() const { return weights_.size(); }

    Tensor<T>& weights() { return weights_; }
    const Tensor<T>& weights() const { return weights_; }

    T& at(std::size_t v, std::size_t u, std::size_t c, std::size_t d) {
        return weights_[((v * extent_ + u) * in_ + c) * out_ + d];
    }
    const T& at(std::size_t v, std::size_t u, std::size_t c, std::size_t d) const {
        return weights_[((v * extent_ + u) * in_ + c) * out_ + d];
    }

    /// (L*L*C_in) x C_out view; rows follow the im2col patch order (v, u, c).
    ConstMatrixMap<T> as_matrix() const {
        return {weights_.data(), Eigen::Index(extent_ * extent_ * in_), Eigen::Index(out_)};
    }
    MatrixMap<T> as_matrix() {
        return {weights_.data(), Eigen::Index(extent_ * extent_ * in_), Eigen::Index(out_)};
    }

    bool operator==(const FilterBank&) const = default;

private:
    std::size_t extent_ = 0;
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    Tensor<T> weights_;
};

}  // namespace resadapt
