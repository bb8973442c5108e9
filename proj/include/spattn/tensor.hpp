// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/errors.hpp"

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

namespace spattn {

/// Dense row-major array with shape metadata. f64 is the verification
/// precision; f32 instantiations are for the training/bench paths.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad; // same length as data once a backward pass filled it

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(checked_numel(shape), T(0));
    }

    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != checked_numel(shape)) {
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape product " +
                             std::to_string(checked_numel(shape)));
        }
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor scalar(T v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static std::size_t checked_numel(const std::vector<int>& s) {
        if (s.empty()) {
            throw ShapeError("empty shape");
        }
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) {
                throw ShapeError("non-positive dimension " + std::to_string(d));
            }
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return data.size(); }

    int rows() const { return shape.at(0); }
    int cols() const {
        return shape.size() > 1
                   ? std::accumulate(shape.begin() + 1, shape.end(), 1, std::multiplies<int>())
                   : 1;
    }

    T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    const T& operator()(int i, int j) const {
        return data[static_cast<std::size_t>(i) * cols() + j];
    }

    const T* row_ptr(int i) const { return data.data() + static_cast<std::size_t>(i) * cols(); }
    T* row_ptr(int i) { return data.data() + static_cast<std::size_t>(i) * cols(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            s += (i ? "x" : "") + std::to_string(shape[i]);
        }
        return s + "]";
    }
};

} // namespace spattn
