#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/rng.hpp"

namespace chroma {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(e));
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense row-major N-d array. Immutable once built: the element buffer is
// shared between copies and never written after construction, so tensors are
// safe to pass across threads by value. Gradient tracking metadata (node id,
// tape epoch) is assigned at creation time by the recording machinery.
template <typename T>
class Tensor {
  public:
    using Scalar = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
        const auto n = numel_of(shape_);
        if (static_cast<std::int64_t>(values.size()) != n) {
            throw ShapeError("element count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        }
        data_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor zeros(Shape shape) {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)));
    }

    static Tensor full(Shape shape, T value) {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
    }

    static Tensor zeros_like(const Tensor& other) { return zeros(other.shape()); }

    static Tensor identity(std::int64_t n) {
        Tensor out = zeros({n, n});
        for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[i * n + i] = T(1);
        return out;
    }

    static Tensor gaussian(Shape shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
        const auto n = numel_of(shape);
        std::vector<T> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = static_cast<T>(rng.gaussian(mean, stddev));
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
    bool empty() const { return !data_; }

    std::span<const T> data() const { return {data_->data(), data_->size()}; }
    const T* raw() const { return data_->data(); }

    // Only valid before the tensor escapes its creation site.
    std::span<T> mutable_data() { return {data_->data(), data_->size()}; }

    const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a single-element tensor, shape is " + shape_str(shape_));
        return (*data_)[0];
    }

    T at(std::initializer_list<std::int64_t> idx) const {
        return (*data_)[static_cast<std::size_t>(offset(idx))];
    }

    std::int64_t offset(std::initializer_list<std::int64_t> idx) const {
        if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch");
        std::int64_t off = 0;
        std::size_t axis = 0;
        for (auto i : idx) {
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool flag) {
        requires_grad_ = flag;
        return *this;
    }
    Tensor with_grad() const {
        Tensor t = *this;
        t.requires_grad_ = true;
        return t;
    }

    int node() const { return node_; }
    std::uint64_t tape_epoch() const { return tape_epoch_; }
    void set_node(int node, std::uint64_t epoch) {
        node_ = node;
        tape_epoch_ = epoch;
    }

    bool all_finite() const {
        for (const T& v : *data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> v(data_->size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>((*data_)[i]);
        Tensor<U> out(shape_, std::move(v));
        out.set_requires_grad(requires_grad_);
        return out;
    }

  private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    bool requires_grad_ = false;
    int node_ = -1;
    std::uint64_t tape_epoch_ = 0;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace chroma
