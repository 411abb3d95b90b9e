#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccdnet {

/// Dense row-major numeric array, rank 1..4. Feature maps use (N, C, H, W).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        for (int d : shape_) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim");
        }
        data_.assign(numel_of(shape_), T(0));
    }

    Tensor(std::vector<int> shape, T fill_value) : Tensor(std::move(shape)) {
        std::fill(data_.begin(), data_.end(), fill_value);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor scalar(T v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    bool empty() const { return data_.empty(); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const std::vector<int>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-d accessor (n, c, h, w)
    T& at(int n, int c, int h, int w) { return data_[idx4(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[idx4(n, c, h, w)]; }

    // 2-d accessor (r, c)
    T& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    const T& at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

    std::size_t idx4(int n, int c, int h, int w) const {
        assert(ndim() == 4);
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<int> new_shape) const {
        if (numel_of(new_shape) != numel()) throw std::invalid_argument("reshape: numel mismatch");
        Tensor out = *this;
        out.shape_ = std::move(new_shape);
        return out;
    }

    T max_abs() const {
        T m = T(0);
        for (T v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.set_raw(shape_, std::vector<U>(data_.begin(), data_.end()));
        return out;
    }

    void set_raw(std::vector<int> shape, std::vector<T> data) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("set_raw: size mismatch");
        shape_ = std::move(shape);
        data_ = std::move(data);
    }

    const std::vector<T>& storage() const { return data_; }

private:
    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T>
inline void accumulate_into(Tensor<T>& dst, const Tensor<T>& src) {
    assert(dst.same_shape(src));
    T* d = dst.data();
    const T* s = src.data();
    const std::int64_t n = dst.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

/// Largest |a - b| over all elements.
template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    T m = T(0);
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace ccdnet
