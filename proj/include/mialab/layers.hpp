#pragma once

#include <variant>

#include "mialab/tensor.hpp"

namespace mialab {

// Fixed layer-stack vocabulary. No general graph: each layer maps one input
// tensor to one output tensor with an exact hand-written backward pass.
struct Dense {
    std::size_t in, out;
    bool operator==(const Dense&) const = default;
};
struct Conv2d {
    std::size_t in_ch, out_ch, kernel, stride, pad;
    bool operator==(const Conv2d&) const = default;
};
struct ReLU {
    bool operator==(const ReLU&) const = default;
};
struct Flatten {
    bool operator==(const Flatten&) const = default;
};
struct MeanPool2d {
    std::size_t k;
    bool operator==(const MeanPool2d&) const = default;
};
struct LayerNorm {
    std::size_t dim;
    bool operator==(const LayerNorm&) const = default;
};

using LayerKind = std::variant<Dense, Conv2d, ReLU, Flatten, MeanPool2d, LayerNorm>;

inline std::string layer_type_name(const LayerKind& kind) {
    struct V {
        std::string operator()(const Dense&) const { return "Dense"; }
        std::string operator()(const Conv2d&) const { return "Conv2d"; }
        std::string operator()(const ReLU&) const { return "ReLU"; }
        std::string operator()(const Flatten&) const { return "Flatten"; }
        std::string operator()(const MeanPool2d&) const { return "MeanPool2d"; }
        std::string operator()(const LayerNorm&) const { return "LayerNorm"; }
    };
    return std::visit(V{}, kind);
}

// Parameter tensors for one layer, in declaration order
// (Dense: weight [out,in], bias [out]; Conv2d: weight [oc,ic,k,k], bias [oc];
//  LayerNorm: gain [dim], bias [dim]; others: none).
using LayerParams = std::vector<Tensor>;

struct ParamSet {
    std::vector<LayerParams> layers;

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& lp : layers)
            for (const auto& t : lp) n += t.numel();
        return n;
    }
};

namespace detail {

inline void check_layer_extents(const LayerKind& kind) {
    if (const auto* d = std::get_if<Dense>(&kind)) {
        if (d->in == 0 || d->out == 0) throw std::invalid_argument("Dense: extents must be positive");
    } else if (const auto* c = std::get_if<Conv2d>(&kind)) {
        if (c->in_ch == 0 || c->out_ch == 0 || c->kernel == 0 || c->stride == 0)
            throw std::invalid_argument("Conv2d: extents must be positive");
    } else if (const auto* p = std::get_if<MeanPool2d>(&kind)) {
        if (p->k == 0) throw std::invalid_argument("MeanPool2d: window must be positive");
    } else if (const auto* ln = std::get_if<LayerNorm>(&kind)) {
        if (ln->dim == 0) throw std::invalid_argument("LayerNorm: dim must be positive");
    }
}

[[noreturn]] inline void shape_error(const std::string& layer, const std::string& expected,
                                     const std::vector<std::size_t>& actual) {
    throw std::invalid_argument(layer + ": expected input " + expected + ", got " + shape_str(actual));
}

}  // namespace detail

// Output shape for a given input shape; rejects inputs the layer cannot take.
inline std::vector<std::size_t> layer_output_shape(const LayerKind& kind,
                                                   const std::vector<std::size_t>& in_shape) {
    detail::check_layer_extents(kind);
    if (const auto* d = std::get_if<Dense>(&kind)) {
        if (in_shape.size() != 1 || in_shape[0] != d->in)
            detail::shape_error("Dense", "[" + std::to_string(d->in) + "]", in_shape);
        return {d->out};
    }
    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        if (in_shape.size() != 3 || in_shape[0] != c->in_ch)
            detail::shape_error("Conv2d", "[" + std::to_string(c->in_ch) + " x H x W]", in_shape);
        std::size_t h = in_shape[1], w = in_shape[2];
        if (h + 2 * c->pad < c->kernel || w + 2 * c->pad < c->kernel)
            throw std::invalid_argument("Conv2d: kernel " + std::to_string(c->kernel) +
                                        " does not fit padded input " + shape_str(in_shape));
        std::size_t oh = (h + 2 * c->pad - c->kernel) / c->stride + 1;
        std::size_t ow = (w + 2 * c->pad - c->kernel) / c->stride + 1;
        return {c->out_ch, oh, ow};
    }
    if (std::holds_alternative<ReLU>(kind)) return in_shape;
    if (std::holds_alternative<Flatten>(kind)) return {shape_numel(in_shape)};
    if (const auto* p = std::get_if<MeanPool2d>(&kind)) {
        if (in_shape.size() != 3) detail::shape_error("MeanPool2d", "[C x H x W]", in_shape);
        if (in_shape[1] % p->k != 0 || in_shape[2] % p->k != 0)
            throw std::invalid_argument("MeanPool2d: input " + shape_str(in_shape) +
                                        " not divisible by window " + std::to_string(p->k));
        return {in_shape[0], in_shape[1] / p->k, in_shape[2] / p->k};
    }
    const auto& ln = std::get<LayerNorm>(kind);
    if (shape_numel(in_shape) != ln.dim)
        detail::shape_error("LayerNorm", "numel " + std::to_string(ln.dim), in_shape);
    return in_shape;
}

// Fan-in used for scaled-Gaussian initialization.
inline std::size_t layer_fan_in(const LayerKind& kind) {
    if (const auto* d = std::get_if<Dense>(&kind)) return d->in;
    if (const auto* c = std::get_if<Conv2d>(&kind)) return c->in_ch * c->kernel * c->kernel;
    return 1;
}

inline bool layer_has_params(const LayerKind& kind) {
    return std::holds_alternative<Dense>(kind) || std::holds_alternative<Conv2d>(kind) ||
           std::holds_alternative<LayerNorm>(kind);
}

// Zero-valued parameter tensors with the layer's contract shapes.
inline LayerParams layer_zero_params(const LayerKind& kind) {
    if (const auto* d = std::get_if<Dense>(&kind))
        return {Tensor::zeros({d->out, d->in}), Tensor::zeros({d->out})};
    if (const auto* c = std::get_if<Conv2d>(&kind))
        return {Tensor::zeros({c->out_ch, c->in_ch, c->kernel, c->kernel}), Tensor::zeros({c->out_ch})};
    if (const auto* ln = std::get_if<LayerNorm>(&kind))
        return {Tensor::zeros({ln->dim}), Tensor::zeros({ln->dim})};
    return {};
}

inline void check_layer_params(const LayerKind& kind, const LayerParams& params, const std::string& layer_id) {
    LayerParams expect = layer_zero_params(kind);
    if (params.size() != expect.size())
        throw std::invalid_argument(layer_id + ": expected " + std::to_string(expect.size()) +
                                    " parameter tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape != expect[i].shape)
            throw std::invalid_argument(layer_id + ": parameter " + std::to_string(i) + " shape " +
                                        shape_str(params[i].shape) + " != " + shape_str(expect[i].shape));
}

namespace detail {

constexpr double kLayerNormEps = 1e-5;

inline Tensor dense_forward(const Dense& d, const LayerParams& p, const Tensor& x) {
    const Tensor& w = p[0];
    const Tensor& b = p[1];
    Tensor y = Tensor::zeros({d.out});
    for (std::size_t o = 0; o < d.out; ++o) {
        double acc = b[o];
        const double* wrow = w.data.data() + o * d.in;
        for (std::size_t i = 0; i < d.in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
    return y;
}

inline Tensor conv2d_forward(const Conv2d& c, const LayerParams& p, const Tensor& x) {
    const Tensor& w = p[0];
    const Tensor& b = p[1];
    std::size_t h = x.shape[1], ww = x.shape[2];
    auto out_shape = std::vector<std::size_t>{c.out_ch, (h + 2 * c.pad - c.kernel) / c.stride + 1,
                                              (ww + 2 * c.pad - c.kernel) / c.stride + 1};
    std::size_t oh = out_shape[1], ow = out_shape[2];
    Tensor y = Tensor::zeros(out_shape);
    for (std::size_t oc = 0; oc < c.out_ch; ++oc) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = b[oc];
                for (std::size_t ic = 0; ic < c.in_ch; ++ic) {
                    for (std::size_t ky = 0; ky < c.kernel; ++ky) {
                        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) -
                                            static_cast<std::ptrdiff_t>(c.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < c.kernel; ++kx) {
                            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) -
                                                static_cast<std::ptrdiff_t>(c.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ww)) continue;
                            acc += w.data[((oc * c.in_ch + ic) * c.kernel + ky) * c.kernel + kx] *
                                   x.data[(ic * h + iy) * ww + ix];
                        }
                    }
                }
                y.data[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return y;
}

inline Tensor meanpool_forward(const MeanPool2d& p, const Tensor& x) {
    std::size_t ch = x.shape[0], h = x.shape[1], w = x.shape[2];
    std::size_t oh = h / p.k, ow = w / p.k;
    Tensor y = Tensor::zeros({ch, oh, ow});
    double inv = 1.0 / static_cast<double>(p.k * p.k);
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < p.k; ++ky)
                    for (std::size_t kx = 0; kx < p.k; ++kx)
                        acc += x.data[(c * h + oy * p.k + ky) * w + ox * p.k + kx];
                y.data[(c * oh + oy) * ow + ox] = acc * inv;
            }
    return y;
}

inline Tensor layernorm_forward(const LayerNorm& ln, const LayerParams& p, const Tensor& x) {
    const Tensor& gain = p[0];
    const Tensor& bias = p[1];
    std::size_t n = ln.dim;
    double mu = 0.0;
    for (double v : x.data) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    Tensor y = x;
    for (std::size_t i = 0; i < n; ++i) y[i] = gain[i] * (x[i] - mu) * inv_std + bias[i];
    return y;
}

}  // namespace detail

// Pure forward map for one layer. Shape mismatches are rejected with the
// layer's expected/actual shapes in the message.
inline Tensor apply_layer(const LayerKind& kind, const LayerParams& params, const Tensor& x) {
    std::vector<std::size_t> out_shape = layer_output_shape(kind, x.shape);  // validates input
    check_layer_params(kind, params, layer_type_name(kind));
    if (const auto* d = std::get_if<Dense>(&kind)) return detail::dense_forward(*d, params, x);
    if (const auto* c = std::get_if<Conv2d>(&kind)) return detail::conv2d_forward(*c, params, x);
    if (std::holds_alternative<ReLU>(kind)) {
        Tensor y = x;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        return y;
    }
    if (std::holds_alternative<Flatten>(kind)) {
        Tensor y = x;
        y.shape = out_shape;
        return y;
    }
    if (const auto* p = std::get_if<MeanPool2d>(&kind)) return detail::meanpool_forward(*p, x);
    return detail::layernorm_forward(std::get<LayerNorm>(kind), params, x);
}

struct LayerGrads {
    Tensor wrt_input;
    LayerParams wrt_params;
};

// Exact reverse-mode step: given the layer's forward input and the gradient
// of some scalar with respect to the layer's output, produce gradients with
// respect to the input and parameters.
inline LayerGrads layer_backward(const LayerKind& kind, const LayerParams& params, const Tensor& x,
                                 const Tensor& upstream) {
    std::vector<std::size_t> out_shape = layer_output_shape(kind, x.shape);
    if (upstream.shape != out_shape)
        throw std::invalid_argument(layer_type_name(kind) + " backward: upstream shape " +
                                    shape_str(upstream.shape) + " != output shape " + shape_str(out_shape));
    check_layer_params(kind, params, layer_type_name(kind));

    LayerGrads g;
    g.wrt_params = layer_zero_params(kind);

    if (const auto* d = std::get_if<Dense>(&kind)) {
        const Tensor& w = params[0];
        g.wrt_input = Tensor::zeros(x.shape);
        for (std::size_t o = 0; o < d->out; ++o) {
            double u = upstream[o];
            const double* wrow = w.data.data() + o * d->in;
            double* gw = g.wrt_params[0].data.data() + o * d->in;
            for (std::size_t i = 0; i < d->in; ++i) {
                g.wrt_input[i] += wrow[i] * u;
                gw[i] += x[i] * u;
            }
            g.wrt_params[1][o] += u;
        }
        return g;
    }
    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        std::size_t h = x.shape[1], w = x.shape[2];
        std::size_t oh = out_shape[1], ow = out_shape[2];
        const Tensor& wt = params[0];
        g.wrt_input = Tensor::zeros(x.shape);
        for (std::size_t oc = 0; oc < c->out_ch; ++oc) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double u = upstream.data[(oc * oh + oy) * ow + ox];
                    g.wrt_params[1][oc] += u;
                    for (std::size_t ic = 0; ic < c->in_ch; ++ic) {
                        for (std::size_t ky = 0; ky < c->kernel; ++ky) {
                            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c->stride + ky) -
                                                static_cast<std::ptrdiff_t>(c->pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < c->kernel; ++kx) {
                                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c->stride + kx) -
                                                    static_cast<std::ptrdiff_t>(c->pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                std::size_t wi = ((oc * c->in_ch + ic) * c->kernel + ky) * c->kernel + kx;
                                std::size_t xi = (ic * h + iy) * w + ix;
                                g.wrt_params[0].data[wi] += x.data[xi] * u;
                                g.wrt_input.data[xi] += wt.data[wi] * u;
                            }
                        }
                    }
                }
            }
        }
        return g;
    }
    if (std::holds_alternative<ReLU>(kind)) {
        g.wrt_input = Tensor::zeros(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) g.wrt_input[i] = x[i] > 0.0 ? upstream[i] : 0.0;
        return g;
    }
    if (std::holds_alternative<Flatten>(kind)) {
        g.wrt_input = upstream;
        g.wrt_input.shape = x.shape;
        return g;
    }
    if (const auto* p = std::get_if<MeanPool2d>(&kind)) {
        std::size_t ch = x.shape[0], h = x.shape[1], w = x.shape[2];
        std::size_t oh = h / p->k, ow = w / p->k;
        double inv = 1.0 / static_cast<double>(p->k * p->k);
        g.wrt_input = Tensor::zeros(x.shape);
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double u = upstream.data[(c * oh + oy) * ow + ox] * inv;
                    for (std::size_t ky = 0; ky < p->k; ++ky)
                        for (std::size_t kx = 0; kx < p->k; ++kx)
                            g.wrt_input.data[(c * h + oy * p->k + ky) * w + ox * p->k + kx] += u;
                }
        return g;
    }

    // LayerNorm: y_i = gain_i * xhat_i + bias_i, xhat = (x - mu) / sqrt(var + eps)
    const auto& ln = std::get<LayerNorm>(kind);
    const Tensor& gain = params[0];
    std::size_t n = ln.dim;
    double mu = 0.0;
    for (double v : x.data) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + detail::kLayerNormEps);

    std::vector<double> xhat(n), dxhat(n);
    double dxhat_mean = 0.0, dxhat_xhat_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (x[i] - mu) * inv_std;
        dxhat[i] = upstream[i] * gain[i];
        dxhat_mean += dxhat[i];
        dxhat_xhat_mean += dxhat[i] * xhat[i];
    }
    dxhat_mean /= static_cast<double>(n);
    dxhat_xhat_mean /= static_cast<double>(n);

    g.wrt_input = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < n; ++i) {
        g.wrt_input[i] = (dxhat[i] - dxhat_mean - xhat[i] * dxhat_xhat_mean) * inv_std;
        g.wrt_params[0][i] = upstream[i] * xhat[i];
        g.wrt_params[1][i] = upstream[i];
    }
    return g;
}

}  // namespace mialab
