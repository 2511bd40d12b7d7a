#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "visil/error.hpp"

namespace visil {

using Index = std::ptrdiff_t;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Extents of a dense tensor: 1 to 4 positive axes.
class Shape {
public:
    static constexpr int kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<Index> extents) { assign(extents.begin(), extents.end()); }
    explicit Shape(std::span<const Index> extents) { assign(extents.begin(), extents.end()); }

    int rank() const { return rank_; }
    Index operator[](int axis) const { return extents_[static_cast<std::size_t>(axis)]; }
    Index size() const {
        Index n = rank_ == 0 ? 0 : 1;
        for (int a = 0; a < rank_; ++a) n *= extents_[static_cast<std::size_t>(a)];
        return n;
    }
    std::span<const Index> extents() const { return {extents_.data(), static_cast<std::size_t>(rank_)}; }

    /// Shape with `axis` removed; used by contractions.
    std::vector<Index> without(int axis) const {
        std::vector<Index> out;
        for (int a = 0; a < rank_; ++a)
            if (a != axis) out.push_back(extents_[static_cast<std::size_t>(a)]);
        return out;
    }

    friend bool operator==(const Shape& a, const Shape& b) {
        return a.rank_ == b.rank_ && std::equal(a.extents().begin(), a.extents().end(), b.extents().begin());
    }

    std::string str() const {
        std::string s = "[";
        for (int a = 0; a < rank_; ++a) {
            if (a) s += ",";
            s += std::to_string(extents_[static_cast<std::size_t>(a)]);
        }
        return s + "]";
    }

private:
    template <typename It>
    void assign(It first, It last) {
        const auto n = std::distance(first, last);
        if (n < 1 || n > kMaxRank)
            throw ShapeError("tensor rank must be in [1, 4], got " + std::to_string(n));
        rank_ = static_cast<int>(n);
        std::size_t i = 0;
        for (; first != last; ++first, ++i) {
            if (*first <= 0) throw ShapeError("tensor extents must be positive");
            extents_[i] = *first;
        }
    }

    std::array<Index, kMaxRank> extents_{};
    int rank_ = 0;
};

/// Dense row-major tensor of up to four axes.
template <typename Scalar_>
class Tensor {
public:
    using Scalar = Scalar_;
    static_assert(std::is_floating_point_v<Scalar>);

    Tensor() = default;
    explicit Tensor(const Shape& shape, Scalar fill = Scalar(0))
        : shape_(shape), data_(static_cast<std::size_t>(shape.size()), fill) {}
    Tensor(const Shape& shape, std::vector<Scalar> values) : shape_(shape), data_(std::move(values)) {
        if (static_cast<Index>(data_.size()) != shape_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
    }

    static Tensor zeros(const Shape& shape) { return Tensor(shape); }
    static Tensor scalar(Scalar v) { return Tensor(Shape{1}, std::vector<Scalar>{v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return shape_.rank(); }
    Index dim(int axis) const { return shape_[axis]; }
    Index size() const { return static_cast<Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::span<Scalar> values() { return data_; }
    std::span<const Scalar> values() const { return data_; }
    Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    Index offset(Index i0, Index i1 = 0, Index i2 = 0, Index i3 = 0) const {
        const std::array<Index, 4> idx{i0, i1, i2, i3};
        Index off = 0;
        for (int a = 0; a < rank(); ++a) off = off * shape_[a] + idx[static_cast<std::size_t>(a)];
        return off;
    }
    Scalar& at(Index i0, Index i1 = 0, Index i2 = 0, Index i3 = 0) { return data_[static_cast<std::size_t>(offset(i0, i1, i2, i3))]; }
    Scalar at(Index i0, Index i1 = 0, Index i2 = 0, Index i3 = 0) const {
        return data_[static_cast<std::size_t>(offset(i0, i1, i2, i3))];
    }

    /// Same data under a new shape of equal size.
    Tensor reshaped(const Shape& shape) const& { return Tensor(shape, data_); }
    Tensor reshaped(const Shape& shape) && { return Tensor(shape, std::move(data_)); }

    /// Row-major matrix view with `rows` rows; the column count is inferred.
    Eigen::Map<RowMatrix<Scalar>> matrix(Index rows) {
        return {data(), rows, rows == 0 ? 0 : size() / rows};
    }
    Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows) const {
        return {data(), rows, rows == 0 ? 0 : size() / rows};
    }
    Eigen::Map<Vector<Scalar>> flat() { return {data(), size()}; }
    Eigen::Map<const Vector<Scalar>> flat() const { return {data(), size()}; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
    }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

}  // namespace visil
