#pragma once

#include "mialab/dataset.hpp"
#include "mialab/model.hpp"

namespace mialab {

// ---- Adam --------------------------------------------------------------

struct AdamState {
    Tensor m, v;
    std::size_t step = 0;

    static AdamState fresh(const std::vector<std::size_t>& shape) {
        return {Tensor::zeros(shape), Tensor::zeros(shape), 0};
    }
};

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One bias-corrected Adam update; mutates the moment state, returns the
// updated tensor.
inline Tensor adam_step(AdamState& state, const Tensor& x, const Tensor& grad, double lr,
                        const AdamConfig& cfg = {}) {
    require_same_shape(x, grad, "adam_step");
    require_same_shape(x, state.m, "adam_step state");
    if (!grad.all_finite()) throw std::invalid_argument("adam_step: non-finite gradient");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    Tensor out = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        out[i] = x[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    return out;
}

// ---- perceptual loss ----------------------------------------------------

inline double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

// Weighted sum of per-layer MSEs between two traces over the same layer set.
inline double perceptual_loss(const ActivationTrace& trace_g, const ActivationTrace& trace_x,
                              const std::map<std::string, double>& weights) {
    if (trace_g.by_layer.size() != trace_x.by_layer.size() || trace_g.by_layer.size() != weights.size())
        throw std::invalid_argument("perceptual_loss: traces/weights disagree on the layer set");
    double total = 0.0;
    for (const auto& [id, w] : weights) {
        if (w < 0.0) throw std::invalid_argument("perceptual_loss: negative weight for '" + id + "'");
        total += w * mse(trace_g.at(id), trace_x.at(id));
    }
    return total;
}

// ---- value clipping -----------------------------------------------------

inline Tensor clip_values(const Tensor& x, const Bounds& bounds, bool enabled) {
    if (bounds.min.size() != x.numel() || bounds.max.size() != x.numel())
        throw std::invalid_argument("clip_values: bounds length != tensor size");
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (bounds.min[i] > bounds.max[i])
            throw std::invalid_argument("clip_values: min > max at feature " + std::to_string(i));
    if (!enabled) return x;
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::clamp(y[i], bounds.min[i], bounds.max[i]);
    return y;
}

// ---- activation obfuscation (defense) ------------------------------------

// Inference-time defense: each exposed activation tensor is normalized to
// zero mean / unit variance over its elements (variance floor guards the
// constant case) and perturbed with seeded Gaussian noise of scale sigma.
struct Obfuscation {
    double sigma = 0.0;
    std::uint64_t seed = 0;

    bool enabled() const { return sigma > 0.0; }
};

namespace detail {

constexpr double kObfVarFloor = 1e-12;

struct NormStats {
    double mu, var;
};

inline NormStats norm_stats(const Tensor& a) {
    double mu = 0.0;
    for (double v : a.data) mu += v;
    mu /= static_cast<double>(a.numel());
    double var = 0.0;
    for (double v : a.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(a.numel());
    return {mu, var};
}

inline Tensor obf_normalize(const Tensor& a) {
    NormStats st = norm_stats(a);
    double inv = 1.0 / std::sqrt(std::max(st.var, kObfVarFloor));
    Tensor z = a;
    for (double& v : z.data) v = (v - st.mu) * inv;
    return z;
}

// reverse-mode through obf_normalize (the additive noise is constant)
inline Tensor obf_normalize_backward(const Tensor& a, const Tensor& upstream) {
    NormStats st = norm_stats(a);
    double n = static_cast<double>(a.numel());
    double inv = 1.0 / std::sqrt(std::max(st.var, kObfVarFloor));
    double up_mean = 0.0;
    for (double v : upstream.data) up_mean += v;
    up_mean /= n;
    Tensor grad = Tensor::zeros(a.shape);
    if (st.var > kObfVarFloor) {
        double uz_mean = 0.0;
        std::vector<double> z(a.numel());
        for (std::size_t i = 0; i < a.numel(); ++i) {
            z[i] = (a[i] - st.mu) * inv;
            uz_mean += upstream[i] * z[i];
        }
        uz_mean /= n;
        for (std::size_t i = 0; i < a.numel(); ++i)
            grad[i] = (upstream[i] - up_mean - z[i] * uz_mean) * inv;
    } else {
        // variance floor active: scale is constant, only the mean-shift remains
        for (std::size_t i = 0; i < a.numel(); ++i) grad[i] = (upstream[i] - up_mean) * inv;
    }
    return grad;
}

inline Tensor obf_noise(const std::vector<std::size_t>& shape, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    Tensor noise = Tensor::zeros(shape);
    for (double& v : noise.data) v = sigma * rng.gaussian();
    return noise;
}

}  // namespace detail

// Normalize-then-perturb every activation in the trace. Noise streams are
// derived per layer id so map ordering cannot change the result.
inline ActivationTrace obfuscate_trace(const ActivationTrace& trace, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("obfuscate_trace: sigma must be >= 0");
    ActivationTrace out;
    for (const auto& [id, a] : trace.by_layer) {
        Tensor z = detail::obf_normalize(a);
        if (sigma > 0.0) {
            Tensor noise = detail::obf_noise(a.shape, sigma, derive_seed(seed, "obf-layer") ^ fnv1a64(id));
            for (std::size_t i = 0; i < z.numel(); ++i) z[i] += noise[i];
        }
        out.by_layer.emplace(id, std::move(z));
    }
    return out;
}

// ---- interrogation (Algorithm 1) -----------------------------------------

struct InterrogationConfig {
    GroupName group = GroupName::Late;
    std::map<std::string, double> layer_weights;  // empty = equal weight 1 per layer
    std::size_t steps = 80;
    double lr = 0.05;
    AdamConfig adam;
    bool clip = true;
    std::uint64_t init_seed = 0;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("InterrogationConfig: steps must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("InterrogationConfig: lr must be positive");
        if (!layer_weights.empty()) {
            bool any_positive = false;
            for (const auto& [id, w] : layer_weights) {
                if (w < 0.0) throw std::invalid_argument("InterrogationConfig: negative weight for '" + id + "'");
                any_positive |= w > 0.0;
            }
            if (!any_positive) throw std::invalid_argument("InterrogationConfig: all layer weights zero");
        }
    }
};

// Seeded standard-Gaussian start clamped into the data bounds. Training
// inputs are consumed raw in this lab, so the "normalize like training
// inputs" step is the identity.
inline Tensor interrogation_init(const std::vector<std::size_t>& shape, const Bounds& bounds,
                                 std::uint64_t seed) {
    Rng rng(derive_seed(seed, "interrogate-init"));
    Tensor x = Tensor::zeros(shape);
    for (double& v : x.data) v = rng.gaussian();
    return clip_values(x, bounds, true);
}

namespace detail {

struct ResolvedObjective {
    std::set<std::string> layer_ids;
    std::map<std::string, double> weights;
};

inline ResolvedObjective resolve_objective(const Model& m, const InterrogationConfig& cfg) {
    ResolvedObjective r;
    const auto groups = layer_groups(m.spec);
    for (const std::string& id : find_group(groups, cfg.group).layer_ids) {
        r.layer_ids.insert(id);
        double w = 1.0;
        if (!cfg.layer_weights.empty()) {
            auto it = cfg.layer_weights.find(id);
            if (it == cfg.layer_weights.end())
                throw std::invalid_argument("interrogate: no weight for layer '" + id + "'");
            w = it->second;
        }
        r.weights[id] = w;
    }
    return r;
}

}  // namespace detail

// One perceptual-loss evaluation plus its gradient w.r.t. the probe input.
// Factored out so tests can check the defended path against finite
// differences; `step_tag` selects the per-step obfuscation noise stream.
inline std::pair<double, Tensor> perceptual_loss_grad(const Model& m, const Tensor& x_g,
                                                      const ActivationTrace& target,
                                                      const std::map<std::string, double>& weights,
                                                      const Obfuscation* defense, std::uint64_t step_tag) {
    std::size_t deepest = 0;
    for (const auto& [id, w] : weights) deepest = std::max(deepest, m.spec.index_of(id));
    ForwardCache cache = forward_cached(m, x_g, deepest);

    double loss = 0.0;
    std::map<std::string, Tensor> upstream;
    for (const auto& [id, w] : weights) {
        const Tensor& raw = cache.output_of(m.spec.index_of(id));
        const Tensor& h = target.at(id);
        Tensor seen = raw;
        if (defense && defense->enabled()) {
            seen = detail::obf_normalize(raw);
            Tensor noise = detail::obf_noise(raw.shape, defense->sigma,
                                             derive_seed(defense->seed, "obf-step", step_tag) ^ fnv1a64(id));
            for (std::size_t i = 0; i < seen.numel(); ++i) seen[i] += noise[i];
        }
        require_same_shape(seen, h, "perceptual objective at " + id);
        double n = static_cast<double>(seen.numel());
        Tensor up = Tensor::zeros(seen.shape);
        for (std::size_t i = 0; i < seen.numel(); ++i) {
            double d = seen[i] - h[i];
            loss += w * d * d / n;
            up[i] = 2.0 * w * d / n;
        }
        if (defense && defense->enabled()) up = detail::obf_normalize_backward(raw, up);
        upstream.emplace(id, std::move(up));
    }
    Gradients g = backprop_cached(m, cache, upstream);
    return {loss, std::move(g.wrt_input)};
}

// Synthesize the interrogation image: start from seeded clamped noise,
// compute the query's target trace once, then run exactly `steps` rounds of
// perceptual-loss gradient + Adam + optional value clipping. Pure in
// (params, x, cfg, bounds, seed); the query's label is never an input.
inline Tensor interrogate(const Model& m, const Tensor& x, const InterrogationConfig& cfg,
                          const Bounds& bounds, const Obfuscation* defense = nullptr) {
    cfg.validate();
    if (x.shape != m.spec.input_shape)
        throw std::invalid_argument("interrogate: query shape " + shape_str(x.shape) +
                                    " != model input " + shape_str(m.spec.input_shape));
    detail::ResolvedObjective obj = detail::resolve_objective(m, cfg);

    ActivationTrace target = forward_with_trace(m, x, obj.layer_ids).trace;
    if (defense && defense->enabled())
        target = obfuscate_trace(target, defense->sigma, derive_seed(defense->seed, "obf-target"));

    Tensor x_g = interrogation_init(x.shape, bounds, cfg.init_seed);
    AdamState adam = AdamState::fresh(x.shape);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        Tensor grad;
        try {
            grad = perceptual_loss_grad(m, x_g, target, obj.weights, defense, t).second;
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("interrogate: step " + std::to_string(t) + ": " + e.what());
        }
        x_g = adam_step(adam, x_g, grad, cfg.lr, cfg.adam);
        x_g = clip_values(x_g, bounds, cfg.clip);
    }
    return x_g;
}

}  // namespace mialab
