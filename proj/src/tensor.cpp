#include "recon/tensor.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace recon {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    int64_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.data) x = value;
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
    return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.data) x = stddev * rng.normal();
    return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.data) x = rng.uniform(lo, hi);
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data) m = std::max(m, std::fabs(x));
    return m;
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw std::invalid_argument("reshape " + shape_str(shape) + " -> " + shape_str(new_shape) +
                                    " changes element count");
    Tensor t = *this;
    t.shape = std::move(new_shape);
    return t;
}

void save_tnsr(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    std::ostringstream hdr;
    hdr << "TNSR 1 " << t.ndim();
    for (int64_t d : t.shape) hdr << " " << d;
    hdr << " f64 row-major\n";
    f << hdr.str();
    static_assert(sizeof(double) == 8);
    f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
    if (!f) throw std::runtime_error("write failed: " + path);
}

Tensor load_tnsr(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("truncated TNSR header: " + path);
    std::istringstream hdr(line);
    std::string magic, dtype, order;
    int ndim = -1;
    hdr >> magic >> dtype;  // dtype slot temporarily holds version
    if (magic != "TNSR" || dtype != "1") throw std::runtime_error("not a TNSR v1 container: " + path);
    hdr >> ndim;
    if (ndim < 0 || ndim > 8) throw std::runtime_error("bad TNSR rank in " + path);
    std::vector<int64_t> shape(static_cast<size_t>(ndim));
    for (auto& d : shape) hdr >> d;
    hdr >> dtype >> order;
    if (dtype != "f64" || order != "row-major")
        throw std::runtime_error("unsupported TNSR layout '" + dtype + " " + order + "' in " + path);
    Tensor t = Tensor::zeros(shape);
    f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
    if (f.gcount() != static_cast<std::streamsize>(t.data.size() * 8))
        throw std::runtime_error("truncated TNSR payload: " + path);
    return t;
}

void save_tnsr_bundle(const std::string& dir, const std::vector<std::pair<std::string, const Tensor*>>& items) {
    std::filesystem::create_directories(dir);
    std::ofstream idx(dir + "/index.txt");
    for (const auto& [name, tensor] : items) {
        save_tnsr(dir + "/" + name + ".tnsr", *tensor);
        idx << name << "\n";
    }
}

}  // namespace recon
