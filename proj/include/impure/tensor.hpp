#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "impure/common.hpp"

namespace impure {

// 64-byte aligned storage. Eigen's vectorized reductions split by buffer
// alignment, so a fixed alignment is what makes equal-shape computations
// bit-reproducible across allocations.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr size_t alignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(size_t n) {
        size_t bytes = (n * sizeof(T) + alignment - 1) / alignment * alignment;
        void* p = std::aligned_alloc(alignment, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, size_t) noexcept { std::free(p); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
    template <typename U>
    bool operator!=(const AlignedAllocator<U>&) const {
        return false;
    }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor with shared storage. Handles are cheap to copy;
// storage is shared, so treat tensors produced by graph ops as immutable.
template <typename T>
class Tensor {
  public:
    using Scalar = T;
    using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatMap =
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
    using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<AlignedVec<T>>(numel_of(shape_), T(0))) {}
    Tensor(std::vector<int64_t> shape, const std::vector<T>& values)
        : shape_(std::move(shape)),
          data_(std::make_shared<AlignedVec<T>>(values.begin(), values.end())) {
        IMPURE_CHECK(static_cast<int64_t>(data_->size()) == numel_of(shape_),
                     "tensor shape/data size mismatch");
    }

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return numel_of(shape_); }

    AlignedVec<T>& data() { return *data_; }
    const AlignedVec<T>& data() const { return *data_; }
    T* ptr() { return data_->data(); }
    const T* ptr() const { return data_->data(); }
    T& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    // 2-D view; 1-D tensors map as a single row.
    MatMap mat() {
        auto [r, c] = rc();
        return MatMap(ptr(), r, c);
    }
    ConstMatMap mat() const {
        auto [r, c] = rc();
        return ConstMatMap(ptr(), r, c);
    }
    VecMap vec() { return VecMap(ptr(), numel()); }
    ConstVecMap vec() const { return ConstVecMap(ptr(), numel()); }

    // Same storage, new shape.
    Tensor reshaped(std::vector<int64_t> shape) const {
        IMPURE_CHECK(numel_of(shape) == numel(), "reshape numel mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<AlignedVec<T>>(*data_);
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        for (size_t i = 0; i < data_->size(); ++i)
            t[static_cast<int64_t>(i)] = static_cast<U>((*data_)[i]);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), int64_t(1), std::multiplies<int64_t>());
    }

  private:
    std::pair<int64_t, int64_t> rc() const {
        if (shape_.empty()) return {0, 0};
        if (shape_.size() == 1) return {1, shape_[0]};
        int64_t cols = shape_.back();
        return {numel() / cols, cols};
    }

    std::vector<int64_t> shape_;
    std::shared_ptr<AlignedVec<T>> data_;
};

}  // namespace impure
