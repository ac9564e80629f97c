#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stpconv/errors.hpp"

namespace stpconv {

// Per-axis counts for the three spatiotemporal axes.
struct Dims3 {
    std::int64_t x = 1;
    std::int64_t y = 1;
    std::int64_t t = 1;

    bool operator==(const Dims3&) const = default;
};

// Axis sizes of a dense (x, y, t, channel) array.
struct Shape4 {
    std::int64_t nx = 0;
    std::int64_t ny = 0;
    std::int64_t nt = 0;
    std::int64_t nc = 0;

    bool operator==(const Shape4&) const = default;

    // Element count. Throws ShapeError for zero, negative, or overflowing axes.
    std::int64_t volume() const;
    std::string str() const;
};

// Dense 4-axis array with x varying fastest, then y, then t, then channel:
// index(x,y,t,c) = x + nx*(y + ny*(t + nt*c)). Plain value type; sharing
// immutable tensors across threads is safe, mutation needs exclusive access.
template <typename T>
class Tensor4T {
  public:
    Tensor4T() = default;
    Tensor4T(Shape4 shape, T fill)
        : shape_(shape), values_(static_cast<std::size_t>(shape.volume()), fill) {}

    const Shape4& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }

    std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t t, std::int64_t c) const {
        assert(x >= 0 && x < shape_.nx && y >= 0 && y < shape_.ny);
        assert(t >= 0 && t < shape_.nt && c >= 0 && c < shape_.nc);
        return x + shape_.nx * (y + shape_.ny * (t + shape_.nt * c));
    }

    T& at(std::int64_t x, std::int64_t y, std::int64_t t, std::int64_t c) {
        return values_[static_cast<std::size_t>(index(x, y, t, c))];
    }
    T at(std::int64_t x, std::int64_t y, std::int64_t t, std::int64_t c) const {
        return values_[static_cast<std::size_t>(index(x, y, t, c))];
    }

    T& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    bool operator==(const Tensor4T&) const = default;

  private:
    Shape4 shape_;
    std::vector<T> values_;
};

using Tensor4 = Tensor4T<float>;
using Tensor4d = Tensor4T<double>;

enum class ElementwiseOp { add, sub, mul };

namespace detail {
inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}
}  // namespace detail

template <typename T>
Tensor4T<T> elementwise(const Tensor4T<T>& a, const Tensor4T<T>& b, ElementwiseOp op) {
    detail::require_same_shape(a.shape(), b.shape(), "elementwise");
    Tensor4T<T> out(a.shape(), T(0));
    const std::int64_t n = a.size();
    switch (op) {
        case ElementwiseOp::add:
            for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
            break;
        case ElementwiseOp::sub:
            for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
            break;
        case ElementwiseOp::mul:
            for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
            break;
    }
    return out;
}

template <typename T>
Tensor4T<T> add(const Tensor4T<T>& a, const Tensor4T<T>& b) {
    return elementwise(a, b, ElementwiseOp::add);
}
template <typename T>
Tensor4T<T> sub(const Tensor4T<T>& a, const Tensor4T<T>& b) {
    return elementwise(a, b, ElementwiseOp::sub);
}
template <typename T>
Tensor4T<T> mul(const Tensor4T<T>& a, const Tensor4T<T>& b) {
    return elementwise(a, b, ElementwiseOp::mul);
}

template <typename To, typename From>
Tensor4T<To> cast_tensor(const Tensor4T<From>& a) {
    Tensor4T<To> out(a.shape(), To(0));
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = static_cast<To>(a[i]);
    return out;
}

// Data tensor paired with a binary validity mask of identical shape.
// Invariants: mask elements are exactly 0 or 1, data is 0 wherever the mask
// is 0, and data is finite wherever the mask is 1.
template <typename T>
struct MaskedBlockT {
    Tensor4T<T> data;
    Tensor4T<T> mask;

    const Shape4& shape() const { return data.shape(); }

    // Fraction of voxels with mask 0.
    double missing_fraction() const;

    // Throws ShapeError / DataError / NumericError if an invariant is broken.
    void validate() const;
};

using MaskedBlock = MaskedBlockT<float>;
using MaskedBlockd = MaskedBlockT<double>;

// All-valid block over the given data.
template <typename T>
MaskedBlockT<T> fully_valid(Tensor4T<T> data) {
    Tensor4T<T> mask(data.shape(), T(1));
    return MaskedBlockT<T>{std::move(data), std::move(mask)};
}

template <typename T>
double MaskedBlockT<T>::missing_fraction() const {
    const std::int64_t n = mask.size();
    if (n == 0) return 0.0;
    std::int64_t missing = 0;
    for (std::int64_t i = 0; i < n; ++i) missing += (mask[i] == T(0));
    return static_cast<double>(missing) / static_cast<double>(n);
}

template <typename T>
void MaskedBlockT<T>::validate() const {
    detail::require_same_shape(data.shape(), mask.shape(), "masked block");
    for (std::int64_t i = 0; i < mask.size(); ++i) {
        const T m = mask[i];
        if (m != T(0) && m != T(1)) {
            throw DataError("masked block: mask value at flat index " + std::to_string(i) +
                            " is not 0 or 1");
        }
        if (m == T(0) && data[i] != T(0)) {
            throw DataError("masked block: data at masked-out flat index " + std::to_string(i) +
                            " is not 0");
        }
        if (m == T(1) && !std::isfinite(static_cast<double>(data[i]))) {
            throw NumericError("masked block: non-finite data at valid flat index " +
                               std::to_string(i));
        }
    }
}

}  // namespace stpconv
