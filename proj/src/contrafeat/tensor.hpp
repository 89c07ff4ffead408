#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace contrafeat {

// Dense row-major float tensor. Small helper type used across the project;
// shapes are explicit and checked by the call sites that care.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0f) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            assert(d >= 0);
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }
    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float x) {
        Tensor t(std::move(s));
        for (auto& e : t.v) e = x;
        return t;
    }
    static Tensor from(std::vector<int> s, std::vector<float> data) {
        Tensor t;
        t.shape = std::move(s);
        t.v = std::move(data);
        assert(t.v.size() == count(t.shape));
        return t;
    }

    std::size_t size() const { return v.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    float& operator[](std::size_t i) { return v[i]; }
    float operator[](std::size_t i) const { return v[i]; }

    // 2-D accessors (row-major).
    float& at(int i, int j) { return v[static_cast<std::size_t>(i) * dim(1) + j]; }
    float at(int i, int j) const { return v[static_cast<std::size_t>(i) * dim(1) + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void fill(float x) {
        for (auto& e : v) e = x;
    }
};

inline float dot(const float* a, const float* b, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline float norm2(const float* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

}  // namespace contrafeat
