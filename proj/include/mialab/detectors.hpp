#pragma once

#include <memory>

#include "mialab/interrogate.hpp"
#include "mialab/split.hpp"
#include "mialab/train.hpp"

namespace mialab {

// ---- flattened parameter view -------------------------------------------

// Parameters flatten layer-major, tensor-major, row-major; the same order
// the checkpoint format serializes.
inline std::vector<double> flatten_params(const ParamSet& params) {
    std::vector<double> flat;
    for (const auto& lp : params.layers)
        for (const Tensor& t : lp) flat.insert(flat.end(), t.data.begin(), t.data.end());
    return flat;
}

struct FlatParamRef {
    std::size_t layer, tensor, elem;
};

inline std::vector<FlatParamRef> flat_param_map(const ParamSet& params) {
    std::vector<FlatParamRef> map;
    for (std::size_t li = 0; li < params.layers.size(); ++li)
        for (std::size_t pi = 0; pi < params.layers[li].size(); ++pi)
            for (std::size_t e = 0; e < params.layers[li][pi].numel(); ++e) map.push_back({li, pi, e});
    return map;
}

// ---- gradient features ----------------------------------------------------

// Exact d(cross-entropy)/d(theta) at (x, y), gathered at a fixed subsample
// index set over the flattened parameter vector.
inline std::vector<double> grad_feature(const Model& m, const Tensor& x, std::size_t y,
                                        std::span<const std::size_t> index_set) {
    ForwardCache cache = forward_cached(m, x, m.spec.layers.size() - 1);
    SoftmaxCrossEntropy ce = softmax_cross_entropy(cache.output, y);
    Gradients g = backprop_cached(m, cache, {{m.spec.layers.back().first, ce.grad_logits}});
    std::vector<double> flat = flatten_params(g.wrt_params);
    std::vector<double> out;
    out.reserve(index_set.size());
    for (std::size_t idx : index_set) {
        if (idx >= flat.size())
            throw std::invalid_argument("grad_feature: index " + std::to_string(idx) + " out of range (|theta|=" +
                                        std::to_string(flat.size()) + ")");
        out.push_back(flat[idx]);
    }
    return out;
}

// ---- small SPD linear algebra ---------------------------------------------

namespace detail {

// in-place lower Cholesky; throws with the offending pivot when not PD
inline std::vector<std::vector<double>> cholesky_spd(const std::vector<std::vector<double>>& a) {
    std::size_t n = a.size();
    std::vector<std::vector<double>> l(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
            if (i == j) {
                if (!(s > 0.0) || !std::isfinite(s))
                    throw std::runtime_error("covariance not positive definite (pivot " + std::to_string(s) +
                                             " at row " + std::to_string(i) + "); increase the ridge");
                l[i][i] = std::sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    return l;
}

inline std::vector<double> cholesky_solve(const std::vector<std::vector<double>>& l,
                                          const std::vector<double>& b) {
    std::size_t n = l.size();
    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i][k] * y[k];
        y[i] = s / l[i][i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l[k][ii] * x[k];
        x[ii] = s / l[ii][ii];
    }
    return x;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline std::vector<double> matvec(const std::vector<std::vector<double>>& m, const std::vector<double>& v) {
    std::vector<double> out(m.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += m[i][j] * v[j];
    return out;
}

}  // namespace detail

// ---- GLiR -------------------------------------------------------------

enum class GlirScoreMode { ClosedForm, Chi2Normal };

// Gaussian hypothesis test on gradient features: g ~ N(mu0, Sigma) for
// non-members vs N(mu1, Sigma) for members, shared ridge-regularized
// covariance.
struct GlirModel {
    std::vector<double> mu0, mu1;
    std::vector<std::vector<double>> sigma;  // before the ridge
    double tau = 0.0;
    std::vector<std::size_t> indices;
    std::vector<double> w;  // (Sigma + tau I)^-1 (mu1 - mu0)
    std::vector<std::vector<double>> chol;               // of Sigma + tau I
    GlirScoreMode mode = GlirScoreMode::ClosedForm;
};

struct GlirSpec {
    std::size_t d_sub = 5000;   // capped at |theta|
    double tau = -1.0;          // < 0: auto = 1e-3 * trace(Sigma) / d
    GlirScoreMode mode = GlirScoreMode::ClosedForm;
    std::uint64_t seed = 0;
};

inline std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t d_sub, std::uint64_t seed) {
    std::size_t d = std::min(d_sub, total);
    Rng rng(derive_seed(seed, "grad-subsample"));
    return rng.sample_without_replacement(total, d);
}

// Fit from precomputed feature matrices (rows are per-sample gradient
// features). mu1 is the member mean, mu0 the non-member mean; Sigma pools
// both groups' sample covariance and tau adds the ridge.
inline GlirModel glir_fit_features(const std::vector<std::vector<double>>& member_feats,
                                   const std::vector<std::vector<double>>& nonmember_feats,
                                   std::vector<std::size_t> indices, double tau,
                                   GlirScoreMode mode = GlirScoreMode::ClosedForm) {
    if (member_feats.empty() || nonmember_feats.empty())
        throw std::invalid_argument("glir_fit: both calibration sets must be non-empty");
    std::size_t d = member_feats.front().size();

    GlirModel glir;
    glir.indices = std::move(indices);
    glir.mode = mode;
    glir.mu1.assign(d, 0.0);
    glir.mu0.assign(d, 0.0);
    for (const auto& f : member_feats)
        for (std::size_t j = 0; j < d; ++j) glir.mu1[j] += f[j];
    for (const auto& f : nonmember_feats)
        for (std::size_t j = 0; j < d; ++j) glir.mu0[j] += f[j];
    for (std::size_t j = 0; j < d; ++j) {
        glir.mu1[j] /= static_cast<double>(member_feats.size());
        glir.mu0[j] /= static_cast<double>(nonmember_feats.size());
    }

    glir.sigma.assign(d, std::vector<double>(d, 0.0));
    auto accumulate = [&](const std::vector<std::vector<double>>& feats, const std::vector<double>& mu) {
        std::vector<double> c(d);
        for (const auto& f : feats) {
            for (std::size_t j = 0; j < d; ++j) c[j] = f[j] - mu[j];
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j <= i; ++j) glir.sigma[i][j] += c[i] * c[j];
        }
    };
    accumulate(member_feats, glir.mu1);
    accumulate(nonmember_feats, glir.mu0);
    double denom = std::max<double>(1.0, static_cast<double>(member_feats.size() + nonmember_feats.size()) - 2.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            glir.sigma[i][j] /= denom;
            glir.sigma[j][i] = glir.sigma[i][j];
        }

    if (tau < 0.0) {
        double trace = 0.0;
        for (std::size_t i = 0; i < d; ++i) trace += glir.sigma[i][i];
        tau = 1e-3 * trace / static_cast<double>(d);
    }
    glir.tau = tau;

    std::vector<std::vector<double>> ridged = glir.sigma;
    for (std::size_t i = 0; i < d; ++i) ridged[i][i] += tau;
    glir.chol = detail::cholesky_spd(ridged);

    std::vector<double> diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = glir.mu1[j] - glir.mu0[j];
    glir.w = detail::cholesky_solve(glir.chol, diff);
    return glir;
}

// Standard fit: gradient features of natural calibration inputs drawn from
// the attack-validation split only.
inline GlirModel glir_fit(const Model& m, const Dataset& ds, std::span<const std::size_t> calib_members,
                          std::span<const std::size_t> calib_nonmembers, const GlirSpec& spec) {
    std::vector<std::size_t> indices =
        subsample_indices(m.params.total_scalars(), spec.d_sub, spec.seed);
    auto featurize = [&](std::span<const std::size_t> ids) {
        std::vector<std::vector<double>> feats;
        feats.reserve(ids.size());
        for (std::size_t id : ids) feats.push_back(grad_feature(m, ds.xs[id], ds.ys[id], indices));
        return feats;
    };
    std::vector<std::vector<double>> member_feats = featurize(calib_members);
    std::vector<std::vector<double>> nonmember_feats = featurize(calib_nonmembers);
    return glir_fit_features(std::move(member_feats), std::move(nonmember_feats), std::move(indices),
                             spec.tau, spec.mode);
}

// Log-likelihood ratio Lambda(g) = (g - (mu0+mu1)/2)^T Sigma^-1 (mu1-mu0),
// evaluated through the precomputed w. Higher = more member-like.
inline double glir_score(const GlirModel& glir, const std::vector<double>& g) {
    std::size_t d = glir.w.size();
    if (g.size() != d)
        throw std::invalid_argument("glir_score: feature length " + std::to_string(g.size()) + " != " +
                                    std::to_string(d));
    if (glir.mode == GlirScoreMode::ClosedForm) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (g[j] - 0.5 * (glir.mu0[j] + glir.mu1[j])) * glir.w[j];
        return s;
    }
    // Experimental: normal approximation of the chi^2-distributed quadratic
    // forms Q_h = (g-mu_h)^T Sigma^-1 (g-mu_h) ~ chi^2_d ~ N(d, 2d); the
    // score is the approximate log-probability difference.
    std::vector<double> c(d);
    auto quad = [&](const std::vector<double>& mu) {
        for (std::size_t j = 0; j < d; ++j) c[j] = g[j] - mu[j];
        return detail::dot(c, detail::cholesky_solve(glir.chol, c));
    };
    double q1 = quad(glir.mu1), q0 = quad(glir.mu0);
    double dd = static_cast<double>(d);
    return ((q0 - dd) * (q0 - dd) - (q1 - dd) * (q1 - dd)) / (4.0 * dd);
}

// ---- loss threshold ------------------------------------------------------

// score = -cross_entropy(x, y); lower loss scores as more member-like.
inline double loss_score(const Model& m, const Tensor& x, std::size_t y) {
    return -softmax_cross_entropy(forward(m, x), y).loss;
}

// ---- LAEQ ---------------------------------------------------------------

struct LaeqSpec {
    double step = 0.05;
    std::size_t budget = 25;

    void validate() const {
        if (!(step > 0.0)) throw std::invalid_argument("LaeqSpec: step must be positive");
        if (budget == 0) throw std::invalid_argument("LaeqSpec: budget must be positive");
    }
};

// Adversarial-distance signal: signed-gradient ascent on the loss until the
// prediction flips; the score is the L2 norm of the perturbation at the
// first misclassification (members need stronger perturbations). Saturates
// at budget * step * sqrt(dim) when the budget runs out.
inline double laeq_score(const Model& m, const Tensor& x, std::size_t y, const LaeqSpec& spec) {
    spec.validate();
    auto l2_delta = [&](const Tensor& cur) {
        double s = 0.0;
        for (std::size_t i = 0; i < cur.numel(); ++i) {
            double d = cur[i] - x[i];
            s += d * d;
        }
        return std::sqrt(s);
    };
    Tensor cur = x;
    for (std::size_t t = 0; t < spec.budget; ++t) {
        ForwardCache cache = forward_cached(m, cur, m.spec.layers.size() - 1);
        if (argmax_class(cache.output) != y) return l2_delta(cur);  // t == 0: initially misclassified -> 0
        SoftmaxCrossEntropy ce = softmax_cross_entropy(cache.output, y);
        Gradients g = backprop_cached(m, cache, {{m.spec.layers.back().first, ce.grad_logits}});
        for (std::size_t i = 0; i < cur.numel(); ++i) {
            double gi = g.wrt_input[i];
            cur[i] += gi > 0.0 ? spec.step : (gi < 0.0 ? -spec.step : 0.0);
        }
    }
    if (argmax_class(forward(m, cur)) != y) return l2_delta(cur);
    return static_cast<double>(spec.budget) * spec.step * std::sqrt(static_cast<double>(x.numel()));
}

// ---- SIF ----------------------------------------------------------------

struct SifSpec {
    double damping = 0.01;
    std::size_t d_sub = 256;
    std::size_t hessian_batch = 32;
    double fd_step = 1e-4;  // central-difference step for Hessian columns
    std::uint64_t seed = 0;
};

// Misclassified samples are treated as non-members outright; the sentinel is
// the lowest finite double so score tables stay finite.
constexpr double kSifNonMemberSentinel = -std::numeric_limits<double>::max();

// Damped training-loss curvature restricted to the subsample index set.
// Built once per fitted detector from a seeded batch of member samples; the
// per-query LiSSA/CG arithmetic then runs against this explicit matrix.
struct SifModel {
    std::vector<std::size_t> indices;
    std::vector<std::vector<double>> hessian;  // damped: H + damping * I
    double damping = 0.0;
};

inline SifModel sif_fit(const Model& m, const Dataset& ds, std::span<const std::size_t> member_ids,
                        const SifSpec& spec) {
    if (member_ids.empty()) throw std::invalid_argument("sif_fit: no member samples");
    SifModel sif;
    sif.damping = spec.damping;
    sif.indices = subsample_indices(m.params.total_scalars(), spec.d_sub, derive_seed(spec.seed, "sif"));
    std::size_t d = sif.indices.size();

    Rng rng(derive_seed(spec.seed, "sif-batch"));
    std::vector<std::size_t> batch = member_ids.size() <= spec.hessian_batch
                                         ? std::vector<std::size_t>(member_ids.begin(), member_ids.end())
                                         : std::vector<std::size_t>();
    if (batch.empty()) {
        std::vector<std::size_t> picks = rng.sample_without_replacement(member_ids.size(), spec.hessian_batch);
        for (std::size_t p : picks) batch.push_back(member_ids[p]);
    }

    std::vector<FlatParamRef> pmap = flat_param_map(m.params);
    Model probe = m;
    auto batch_grad = [&]() {
        std::vector<double> g(d, 0.0);
        for (std::size_t id : batch) {
            std::vector<double> gi = grad_feature(probe, ds.xs[id], ds.ys[id], sif.indices);
            for (std::size_t j = 0; j < d; ++j) g[j] += gi[j];
        }
        for (double& v : g) v /= static_cast<double>(batch.size());
        return g;
    };

    sif.hessian.assign(d, std::vector<double>(d, 0.0));
    for (std::size_t col = 0; col < d; ++col) {
        FlatParamRef ref = pmap[sif.indices[col]];
        double& theta = probe.params.layers[ref.layer][ref.tensor][ref.elem];
        double orig = theta;
        theta = orig + spec.fd_step;
        std::vector<double> gp = batch_grad();
        theta = orig - spec.fd_step;
        std::vector<double> gm = batch_grad();
        theta = orig;
        for (std::size_t row = 0; row < d; ++row)
            sif.hessian[row][col] = (gp[row] - gm[row]) / (2.0 * spec.fd_step);
    }
    // symmetrize (finite differences break symmetry in the last digits)
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            double avg = 0.5 * (sif.hessian[i][j] + sif.hessian[j][i]);
            sif.hessian[i][j] = sif.hessian[j][i] = avg;
        }
    for (std::size_t i = 0; i < d; ++i) sif.hessian[i][i] += spec.damping;
    return sif;
}

// Self-influence score: -g^T Htilde^-1 g with the inverse-Hessian product
// approximated by one damped LiSSA recursion (depth 1, v = 2g - Htilde g)
// refined by a single conjugate-gradient iteration.
inline double sif_score(const SifModel& sif, const Model& m, const Tensor& x, std::size_t y) {
    if (argmax_class(forward(m, x)) != y) return kSifNonMemberSentinel;
    std::vector<double> g = grad_feature(m, x, y, sif.indices);

    std::vector<double> hg = detail::matvec(sif.hessian, g);
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) v[i] = 2.0 * g[i] - hg[i];

    std::vector<double> hv = detail::matvec(sif.hessian, v);
    std::vector<double> r(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) r[i] = g[i] - hv[i];
    double rr = detail::dot(r, r);
    if (rr > 0.0) {
        std::vector<double> hr = detail::matvec(sif.hessian, r);
        double rhr = detail::dot(r, hr);
        double alpha = rr / rhr;
        if (!std::isfinite(alpha)) throw std::runtime_error("sif_score: non-finite curvature product");
        for (std::size_t i = 0; i < g.size(); ++i) v[i] += alpha * r[i];
    }
    double score = -detail::dot(g, v);
    if (!std::isfinite(score)) throw std::runtime_error("sif_score: non-finite curvature product");
    return score;
}

// ---- IA (shadow-model meta-classifier) -------------------------------------

struct IaSpec {
    std::size_t hidden = 32;
    double lr_start = 1e-3, lr_end = 1e-4;  // linear decay across epochs
    std::size_t batch = 128;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
};

struct IaMeta {
    Model net;                         // Dense(3m -> hidden), ReLU, Dense(hidden -> 2)
    std::vector<double> feat_mean, feat_std;
    std::string penultimate_layer;     // layer whose output feeds the final Dense
    std::size_t penultimate_dim = 0;
};

namespace detail {

inline std::uint64_t tensor_bytes_hash(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : t.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

inline std::size_t final_dense_index(const ModelSpec& spec) {
    if (spec.layers.empty() || !std::holds_alternative<Dense>(spec.layers.back().second))
        throw std::invalid_argument("IA: model must end in a Dense classifier layer");
    return spec.layers.size() - 1;
}

}  // namespace detail

// Per-sample IA feature vector: [penultimate activations; d loss / d those
// activations; activation * final-layer weight row of the true class]. When
// a defense is active the observed activations are the obfuscated ones and
// the derived components are recomputed from what is observed; the noise
// stream is keyed by the input bytes so scoring stays deterministic.
inline std::vector<double> ia_features(const Model& m, const Tensor& x, std::size_t y,
                                       const Obfuscation* defense = nullptr) {
    std::size_t fin = detail::final_dense_index(m.spec);
    const Dense& head = std::get<Dense>(m.spec.layers[fin].second);
    if (y >= head.out) throw std::invalid_argument("ia_features: label out of range");

    ForwardCache cache = forward_cached(m, x, fin);
    Tensor act = cache.inputs[fin];  // input to the final Dense
    if (defense && defense->enabled()) {
        ActivationTrace one;
        one.by_layer.emplace("penultimate", act);
        std::uint64_t noise_seed = derive_seed(defense->seed, "ia-defense") ^ detail::tensor_bytes_hash(x);
        act = obfuscate_trace(one, defense->sigma, noise_seed).by_layer.at("penultimate");
    }

    // recompute head outputs from the (possibly obfuscated) activations
    Tensor logits = apply_layer(m.spec.layers[fin].second, m.params.layers[fin], act);
    SoftmaxCrossEntropy ce = softmax_cross_entropy(logits, y);
    LayerGrads hg = layer_backward(m.spec.layers[fin].second, m.params.layers[fin], act, ce.grad_logits);

    const Tensor& w = m.params.layers[fin][0];
    std::size_t dim = act.numel();
    std::vector<double> feats;
    feats.reserve(3 * dim);
    for (std::size_t i = 0; i < dim; ++i) feats.push_back(act[i]);
    for (std::size_t i = 0; i < dim; ++i) feats.push_back(hg.wrt_input[i]);
    for (std::size_t i = 0; i < dim; ++i) feats.push_back(act[i] * w.data[y * dim + i]);
    return feats;
}

namespace detail {

struct MetaExample {
    std::vector<double> feats;
    std::uint16_t is_member;
};

// Adam-trained two-layer softmax classifier over standardized features with
// early stopping on held-out accuracy.
inline Model train_meta_classifier(std::vector<MetaExample>& train_set,
                                   const std::vector<MetaExample>& val_set, const IaSpec& spec,
                                   const std::vector<double>& mean, const std::vector<double>& stdev) {
    std::size_t fdim = mean.size();
    Model net;
    net.spec = {{{"m_fc1", Dense{fdim, spec.hidden}}, {"m_relu", ReLU{}}, {"m_fc2", Dense{spec.hidden, 2}}},
                {fdim},
                2};
    net.spec.validate();
    init_params(net, derive_seed(spec.seed, "ia-meta-init"));

    auto standardized = [&](const std::vector<double>& f) {
        Tensor t = Tensor::zeros({fdim});
        for (std::size_t i = 0; i < fdim; ++i) t[i] = (f[i] - mean[i]) / stdev[i];
        return t;
    };
    auto eval_acc = [&](const std::vector<MetaExample>& set) {
        std::size_t hit = 0;
        for (const auto& ex : set)
            if (argmax_class(forward(net, standardized(ex.feats))) == ex.is_member) ++hit;
        return static_cast<double>(hit) / static_cast<double>(set.size());
    };

    std::vector<AdamState> adam_w, adam_b;
    for (const auto& lp : net.params.layers) {
        adam_w.push_back(lp.empty() ? AdamState{} : AdamState::fresh(lp[0].shape));
        adam_b.push_back(lp.empty() ? AdamState{} : AdamState::fresh(lp[1].shape));
    }

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double best_val = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        double t = spec.max_epochs > 1
                       ? static_cast<double>(epoch - 1) / static_cast<double>(spec.max_epochs - 1)
                       : 0.0;
        double lr = spec.lr_start + (spec.lr_end - spec.lr_start) * t;
        Rng rng(derive_seed(spec.seed, "ia-meta-epoch", epoch));
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += spec.batch) {
            std::size_t stop = std::min(order.size(), start + spec.batch);
            ParamSet grad;
            grad.layers.resize(net.params.layers.size());
            for (std::size_t li = 0; li < net.params.layers.size(); ++li)
                for (const auto& p : net.params.layers[li]) grad.layers[li].push_back(Tensor::zeros(p.shape));
            for (std::size_t k = start; k < stop; ++k) {
                const MetaExample& ex = train_set[order[k]];
                Tensor in = standardized(ex.feats);
                ForwardCache cache = forward_cached(net, in, net.spec.layers.size() - 1);
                SoftmaxCrossEntropy ce = softmax_cross_entropy(cache.output, ex.is_member);
                Gradients g = backprop_cached(net, cache, {{"m_fc2", ce.grad_logits}});
                for (std::size_t li = 0; li < grad.layers.size(); ++li)
                    for (std::size_t pi = 0; pi < grad.layers[li].size(); ++pi)
                        for (std::size_t e = 0; e < grad.layers[li][pi].numel(); ++e)
                            grad.layers[li][pi][e] += g.wrt_params.layers[li][pi][e];
            }
            double inv_n = 1.0 / static_cast<double>(stop - start);
            for (std::size_t li = 0; li < net.params.layers.size(); ++li) {
                if (net.params.layers[li].empty()) continue;
                for (double& v : grad.layers[li][0].data) v *= inv_n;
                for (double& v : grad.layers[li][1].data) v *= inv_n;
                net.params.layers[li][0] = adam_step(adam_w[li], net.params.layers[li][0], grad.layers[li][0], lr);
                net.params.layers[li][1] = adam_step(adam_b[li], net.params.layers[li][1], grad.layers[li][1], lr);
            }
        }
        double val_acc = eval_acc(val_set);
        if (val_acc > best_val) {
            best_val = val_acc;
            since_best = 0;
        } else if (++since_best >= spec.patience) {
            break;
        }
    }
    return net;
}

}  // namespace detail

// Fit the IA meta-classifier from 5 shadow models trained like the target.
// The last shadow is reserved for meta-validation; the others provide
// meta-training examples (their attack-split samples, featurized through the
// shadow that owns them).
inline IaMeta ia_fit(const ModelSpec& target_spec, std::span<const Model> shadows,
                     std::span<const SplitPlan> shadow_splits, const Dataset& ds, const IaSpec& spec) {
    if (shadows.size() != 5 || shadow_splits.size() != 5)
        throw std::invalid_argument("ia_fit: expected exactly 5 shadow models with split plans");
    for (const Model& s : shadows) {
        bool same = s.spec.layers.size() == target_spec.layers.size() &&
                    s.spec.input_shape == target_spec.input_shape && s.spec.classes == target_spec.classes;
        for (std::size_t i = 0; same && i < s.spec.layers.size(); ++i)
            same = s.spec.layers[i].second == target_spec.layers[i].second;
        if (!same) throw std::invalid_argument("ia_fit: shadow architecture differs from the target");
    }

    std::size_t fin = detail::final_dense_index(target_spec);
    IaMeta meta;
    meta.penultimate_layer = fin > 0 ? target_spec.layers[fin - 1].first : "";
    meta.penultimate_dim = std::get<Dense>(target_spec.layers[fin].second).in;

    auto collect = [&](std::size_t shadow_idx) {
        std::vector<detail::MetaExample> out;
        const Model& s = shadows[shadow_idx];
        const SplitPlan& plan = shadow_splits[shadow_idx];
        auto add = [&](const std::vector<std::size_t>& ids, std::uint16_t label) {
            for (std::size_t id : ids) out.push_back({ia_features(s, ds.xs[id], ds.ys[id]), label});
        };
        add(plan.attack_val_members, 1);
        add(plan.attack_test_members, 1);
        add(plan.attack_val_nonmembers, 0);
        add(plan.attack_test_nonmembers, 0);
        return out;
    };

    std::vector<detail::MetaExample> train_set, val_set;
    for (std::size_t si = 0; si + 1 < shadows.size(); ++si) {
        auto part = collect(si);
        train_set.insert(train_set.end(), part.begin(), part.end());
    }
    val_set = collect(shadows.size() - 1);

    std::size_t fdim = 3 * meta.penultimate_dim;
    meta.feat_mean.assign(fdim, 0.0);
    meta.feat_std.assign(fdim, 0.0);
    for (const auto& ex : train_set)
        for (std::size_t i = 0; i < fdim; ++i) meta.feat_mean[i] += ex.feats[i];
    for (double& v : meta.feat_mean) v /= static_cast<double>(train_set.size());
    for (const auto& ex : train_set)
        for (std::size_t i = 0; i < fdim; ++i) {
            double d = ex.feats[i] - meta.feat_mean[i];
            meta.feat_std[i] += d * d;
        }
    for (double& v : meta.feat_std) v = std::max(std::sqrt(v / static_cast<double>(train_set.size())), 1e-12);

    meta.net = detail::train_meta_classifier(train_set, val_set, spec, meta.feat_mean, meta.feat_std);
    return meta;
}

// Meta-classifier membership probability for (x, y) under the target model.
inline double ia_score(const IaMeta& meta, const Model& m, const Tensor& x, std::size_t y,
                       const Obfuscation* defense = nullptr) {
    std::vector<double> feats = ia_features(m, x, y, defense);
    if (feats.size() != meta.feat_mean.size())
        throw std::invalid_argument("ia_score: feature dimension mismatch (meta fitted for another model)");
    Tensor in = Tensor::zeros({feats.size()});
    for (std::size_t i = 0; i < feats.size(); ++i) in[i] = (feats[i] - meta.feat_mean[i]) / meta.feat_std[i];
    Tensor logits = forward(meta.net, in);
    SoftmaxCrossEntropy sm = softmax_cross_entropy(logits, 0);  // probabilities only
    return sm.probs[1];
}

// ---- detector abstraction and Algorithm 2 ---------------------------------

struct ScoreRow {
    std::size_t sample_id;
    bool is_member;
    std::string detector;
    bool boosted;
    double score;
};

using ScoreTable = std::vector<ScoreRow>;

// A fitted, immutable membership detector: pure per-sample scoring.
class Detector {
public:
    virtual ~Detector() = default;
    virtual std::string name() const = 0;
    virtual double score(const Model& m, const Tensor& x, std::size_t y) const = 0;
};

class LossDetector final : public Detector {
public:
    std::string name() const override { return "loss"; }
    double score(const Model& m, const Tensor& x, std::size_t y) const override { return loss_score(m, x, y); }
};

class GlirDetector final : public Detector {
public:
    explicit GlirDetector(GlirModel glir) : glir_(std::move(glir)) {}
    std::string name() const override { return "glir"; }
    double score(const Model& m, const Tensor& x, std::size_t y) const override {
        return glir_score(glir_, grad_feature(m, x, y, glir_.indices));
    }
    const GlirModel& model() const { return glir_; }

private:
    GlirModel glir_;
};

class LaeqDetector final : public Detector {
public:
    explicit LaeqDetector(LaeqSpec spec) : spec_(spec) {}
    std::string name() const override { return "laeq"; }
    double score(const Model& m, const Tensor& x, std::size_t y) const override {
        return laeq_score(m, x, y, spec_);
    }

private:
    LaeqSpec spec_;
};

class SifDetector final : public Detector {
public:
    explicit SifDetector(SifModel sif) : sif_(std::move(sif)) {}
    std::string name() const override { return "sif"; }
    double score(const Model& m, const Tensor& x, std::size_t y) const override {
        return sif_score(sif_, m, x, y);
    }

private:
    SifModel sif_;
};

class IaDetector final : public Detector {
public:
    IaDetector(IaMeta meta, Obfuscation defense = {}) : meta_(std::move(meta)), defense_(defense) {}
    std::string name() const override { return "ia"; }
    double score(const Model& m, const Tensor& x, std::size_t y) const override {
        return ia_score(meta_, m, x, y, defense_.enabled() ? &defense_ : nullptr);
    }

private:
    IaMeta meta_;
    Obfuscation defense_;
};

// End-to-end attack (interrogate, then detect): the detector code path is
// exactly the one used on natural inputs; only the input is replaced by the
// interrogation image.
inline double boosted_attack(const Model& m, const Tensor& x, std::size_t y,
                               const InterrogationConfig& icfg, const Detector& detector,
                               const Bounds& bounds, const Obfuscation* defense = nullptr) {
    return detector.score(m, interrogate(m, x, icfg, bounds, defense), y);
}

}  // namespace mialab
