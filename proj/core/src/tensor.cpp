#include "resadapt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "resadapt/errors.hpp"

namespace resadapt {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.size() > 4) {
        throw ConfigError("tensor rank " + std::to_string(dims_.size()) + " exceeds 4");
    }
    for (auto d : dims_) {
        if (d == 0) {
            throw ConfigError("tensor extents must be positive, got " + str());
        }
    }
}

std::size_t Shape::numel() const {
    if (dims_.empty()) {
        return 0;
    }
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        os << (i ? "x" : "") << dims_[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), values_(shape_.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_.numel()) {
        throw ConfigError("tensor of shape " + shape_.str() + " given " + std::to_string(values_.size()) +
                          " elements");
    }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape.numel() != size()) {
        throw ConfigError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(std::move(shape), values_);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
void require_finite(std::span<const T> values, std::string_view op) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(std::string(op) + ": non-finite value at element " + std::to_string(i));
        }
    }
}

template <typename T>
FilterBank<T>::FilterBank(std::size_t extent, std::size_t in_channels, std::size_t out_channels)
    : extent_(extent), in_(in_channels), out_(out_channels),
      weights_(Shape{extent, extent, in_channels, out_channels}) {
    if (extent % 2 == 0) {
        throw ConfigError("filter extent must be odd, got " + std::to_string(extent));
    }
}

template <typename T>
FilterBank<T>::FilterBank(Tensor<T> weights) : weights_(std::move(weights)) {
    const auto& s = weights_.shape();
    if (s.rank() != 4 || s[0] != s[1] || s[0] % 2 == 0) {
        throw ConfigError("filter bank must be LxLxCinxCout with odd L, got " + s.str());
    }
    extent_ = s[0];
    in_ = s[2];
    out_ = s[3];
}

template class Tensor<float>;
template class Tensor<double>;
template class FilterBank<float>;
template class FilterBank<double>;
template void require_finite<float>(std::span<const float>, std::string_view);
template void require_finite<double>(std::span<const double>, std::string_view);

}  // namespace resadapt
