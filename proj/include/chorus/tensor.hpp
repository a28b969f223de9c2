#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "chorus/errors.hpp"

namespace chorus {

// Dense row-major tensor. Storage type is a template parameter so the same
// graph code can run in float (pipeline) or double (gradient checking).
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int64_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    TensorT(std::vector<int64_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != checked_size(shape_)) {
            throw ContractViolation("tensor data length does not match shape");
        }
    }

    static TensorT zeros(std::vector<int64_t> shape) { return TensorT(std::move(shape)); }

    static TensorT scalar(T v) { return TensorT({1}, std::vector<T>{v}); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(size_t i) const { return shape_[i]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T item() const {
        if (size() != 1) throw ContractViolation("item() on non-scalar tensor");
        return data_[0];
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return TensorT<U>(shape_, std::move(out));
    }

    // Mirrors the graph-level flag; leaves created from this tensor inherit it.
    bool requires_grad{false};

private:
    static int64_t checked_size(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d <= 0) throw ContractViolation("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    std::vector<int64_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

}  // namespace chorus
