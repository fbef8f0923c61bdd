#pragma once

#include <functional>

#include "mialab/tensor.hpp"

namespace mialab {

// Central-difference gradient estimate of a scalar function. This is the
// verification oracle for every backward pass in the engine; it never calls
// into reverse-mode code.
inline Tensor finite_diff_oracle(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_oracle: h must be positive");
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double orig = probe[i];
        probe[i] = orig + h;
        double fp = f(probe);
        probe[i] = orig - h;
        double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_oracle: non-finite f at coordinate " + std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Relative error between a gradient and its oracle estimate, measured on
// vector norms with a floor so near-zero gradients compare sanely.
inline double gradient_rel_error(const Tensor& got, const Tensor& oracle) {
    require_same_shape(got, oracle, "gradient_rel_error");
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < got.numel(); ++i) {
        double d = got[i] - oracle[i];
        diff2 += d * d;
        ref2 += oracle[i] * oracle[i];
    }
    return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-8);
}

}  // namespace mialab
