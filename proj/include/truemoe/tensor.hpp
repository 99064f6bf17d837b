#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "truemoe/errors.hpp"

namespace truemoe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor. Storage is float in production; the same layer code
// is instantiated for double when gradients are verified.
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
        }
    }

    // Construction path that also rejects NaN/Inf.
    static BasicTensor checked(Shape shape, std::vector<T> data) {
        BasicTensor t(std::move(shape), std::move(data));
        if (!t.all_finite()) throw NumericError("non-finite value in checked tensor");
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
    const T& at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    BasicTensor& operator+=(const BasicTensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    BasicTensor& operator-=(const BasicTensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    BasicTensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    friend BasicTensor operator+(BasicTensor a, const BasicTensor& b) { return a += b; }
    friend BasicTensor operator-(BasicTensor a, const BasicTensor& b) { return a -= b; }
    friend BasicTensor operator*(BasicTensor a, T s) { return a *= s; }

    bool operator==(const BasicTensor& o) const = default;

    void require_same_shape(const BasicTensor& o) const {
        if (shape_ != o.shape_) {
            throw DimensionError("shape mismatch " + shape_str(shape_) + " vs " + shape_str(o.shape_));
        }
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <class T>
double sum_sq(const BasicTensor<T>& t) {
    double s = 0.0;
    for (T v : t.values()) s += double(v) * double(v);
    return s;
}

template <class T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    a.require_same_shape(b);
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace truemoe
