#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recon/rng.hpp"

namespace recon {

// Dense row-major f64 tensor. The invariant `numel(shape) == data.size()` is
// enforced by every factory and by the TNSR loader.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor scalar(double value) { return full({1}, value); }
    static Tensor from(std::vector<int64_t> shape, std::vector<double> values);
    static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0);
    static Tensor uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& operator()(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double operator()(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double& operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    double operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    double max_abs() const;

    Tensor reshaped(std::vector<int64_t> new_shape) const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// TNSR v1 container: ASCII header `TNSR 1 <ndim> <d0> ... f64 row-major\n`
// followed by little-endian raw doubles.
void save_tnsr(const std::string& path, const Tensor& t);
Tensor load_tnsr(const std::string& path);

// Bundles several named tensors as `<dir>/<name>.tnsr` plus an index file.
void save_tnsr_bundle(const std::string& dir, const std::vector<std::pair<std::string, const Tensor*>>& items);

}  // namespace recon
