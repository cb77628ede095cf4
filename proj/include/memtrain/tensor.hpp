#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "memtrain/errors.hpp"

namespace memtrain {

// Dense row-major float32 tensor. The digital path runs entirely in FP32;
// analog quantities (currents, conductances) use double and live outside.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0f);
    }
    Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    void reshape(std::vector<int> s) {
        if (numel_of(s) != data.size()) throw ShapeError("reshape changes element count");
        shape = std::move(s);
    }

    std::string shape_str() const {
        std::string out = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) out += ", ";
            out += std::to_string(shape[i]);
        }
        return out + ")";
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace memtrain
