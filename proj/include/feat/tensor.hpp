#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <new>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace feat {

namespace detail {

// Size-bucketed freelist behind tensor storage. Tape graphs allocate and
// free the same handful of activation shapes every step; recycling them
// sidesteps allocator churn (glibc returns large blocks to the kernel on
// free, which makes a naive graph build fault-bound).
class BufferPool {
public:
    static constexpr size_t kMaxCachedBytes = size_t(1) << 29;  // 512 MiB

    void* get(size_t bytes) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = free_.find(bytes);
            if (it != free_.end() && !it->second.empty()) {
                void* p = it->second.back();
                it->second.pop_back();
                cached_ -= bytes;
                return p;
            }
        }
        return ::operator new(bytes);
    }

    void put(void* p, size_t bytes) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (cached_ + bytes <= kMaxCachedBytes) {
                free_[bytes].push_back(p);
                cached_ += bytes;
                return;
            }
        }
        ::operator delete(p);
    }

    ~BufferPool() {
        for (auto& [bytes, list] : free_)
            for (void* p : list) ::operator delete(p);
    }

private:
    std::mutex mu_;
    std::unordered_map<size_t, std::vector<void*>> free_;
    size_t cached_ = 0;
};

inline BufferPool& buffer_pool() {
    static BufferPool* pool = new BufferPool();  // leaked: outlives all tensors
    return *pool;
}

}  // namespace detail

template <class T>
struct PoolAllocator {
    using value_type = T;
    PoolAllocator() = default;
    template <class U>
    PoolAllocator(const PoolAllocator<U>&) {}
    T* allocate(size_t n) { return static_cast<T*>(detail::buffer_pool().get(n * sizeof(T))); }
    void deallocate(T* p, size_t n) { detail::buffer_pool().put(p, n * sizeof(T)); }
    bool operator==(const PoolAllocator&) const { return true; }
    bool operator!=(const PoolAllocator&) const { return false; }
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. Extents must be positive; element count equals the
// product of extents.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
    }

    Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.validate_shape();
        if (static_cast<int64_t>(values.size()) != shape_numel(t.shape_))
            throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(t.shape_));
        t.data_.assign(values.begin(), values.end());
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<T, PoolAllocator<T>>& vec() { return data_; }
    const std::vector<T, PoolAllocator<T>>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

    bool all_finite() const {
        for (const T& x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out = Tensor<U>(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    Tensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
        Tensor t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

private:
    void validate_shape() const {
        if (shape_.empty()) throw ShapeError("tensor rank must be >= 1");
        for (int64_t e : shape_)
            if (e <= 0) throw ShapeError("non-positive extent in " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T, PoolAllocator<T>> data_;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace feat
