#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "vtok/error.hpp"

namespace vtok {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor of 64-bit floats. Plain value type; gradients and
// graph bookkeeping live in ad::Node.
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> vals) : shape(std::move(s)), v(std::move(vals)) {
        if (v.size() != shape_numel(shape))
            throw ShapeError("tensor: " + std::to_string(v.size()) + " values for shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    std::size_t size() const { return v.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return shape.size() == 2 ? shape[0] : (shape.empty() ? 1 : shape[0]); }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : 1; }

    double& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

    double item() const {
        if (v.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
        return v[0];
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

} // namespace vtok
