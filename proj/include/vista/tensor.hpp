#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vista/errors.hpp"

namespace vista {

// Dense row-major tensor. Float for training/inference, double for
// finite-difference gradient checks.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(t.count(t.shape), T(0));
        return t;
    }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor from(std::vector<int> s, std::vector<T> d) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        if ((int64_t)t.data.size() != t.count(t.shape))
            throw DimensionError("tensor: data size does not match shape " + t.shape_str());
        return t;
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw DimensionError("tensor: negative dim");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return (int64_t)data.size(); }
    int dim(int i) const { return shape[(size_t)i]; }
    int ndim() const { return (int)shape.size(); }

    T& operator[](int64_t i) { return data[(size_t)i]; }
    const T& operator[](int64_t i) const { return data[(size_t)i]; }

    // 2-D accessor, shape [rows, cols]
    T& at(int r, int c) { return data[(size_t)r * shape[1] + c]; }
    const T& at(int r, int c) const { return data[(size_t)r * shape[1] + c]; }

    // 3-D accessor, shape [c, h, w]
    T& at3(int a, int b, int c) {
        return data[((size_t)a * shape[1] + b) * shape[2] + c];
    }
    const T& at3(int a, int b, int c) const {
        return data[((size_t)a * shape[1] + b) * shape[2] + c];
    }

    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite((double)v)) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!all_finite()) throw NumericError(std::string("non-finite values in ") + where);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = (U)data[i];
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace vista
