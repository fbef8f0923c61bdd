#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mialab {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense n-dimensional array of doubles, row-major. Shape extents must be
// positive and the data must be finite; both are checked at construction.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        validate();
    }

    static Tensor zeros(std::vector<std::size_t> shape_) {
        Tensor t;
        t.shape = std::move(shape_);
        check_extents(t.shape);
        t.data.assign(shape_numel(t.shape), 0.0);
        return t;
    }

    static Tensor full(std::vector<std::size_t> shape_, double value) {
        if (!std::isfinite(value)) throw std::invalid_argument("Tensor::full: non-finite fill value");
        Tensor t;
        t.shape = std::move(shape_);
        check_extents(t.shape);
        t.data.assign(shape_numel(t.shape), value);
        return t;
    }

    std::size_t numel() const { return data.size(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void validate() const {
        check_extents(shape);
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        if (!all_finite()) throw std::invalid_argument("Tensor: non-finite value rejected");
    }

private:
    static void check_extents(const std::vector<std::size_t>& shape_) {
        for (std::size_t d : shape_)
            if (d == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape_));
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(what + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace mialab
