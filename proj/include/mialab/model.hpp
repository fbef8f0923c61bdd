#pragma once

#include <map>
#include <set>

#include "mialab/layers.hpp"
#include "mialab/rng.hpp"

namespace mialab {

// Ordered layer stack with unique ids; consecutive shapes must compose and
// the final output length must equal the class count.
struct ModelSpec {
    std::vector<std::pair<std::string, LayerKind>> layers;
    std::vector<std::size_t> input_shape;
    std::size_t classes = 0;

    std::size_t index_of(const std::string& layer_id) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].first == layer_id) return i;
        throw std::invalid_argument("ModelSpec: unknown layer id '" + layer_id + "'");
    }

    void validate() const {
        if (classes < 2) throw std::invalid_argument("ModelSpec: classes must be >= 2");
        if (layers.empty()) throw std::invalid_argument("ModelSpec: no layers");
        std::set<std::string> seen;
        std::vector<std::size_t> shape = input_shape;
        for (const auto& [id, kind] : layers) {
            if (!seen.insert(id).second) throw std::invalid_argument("ModelSpec: duplicate layer id '" + id + "'");
            shape = layer_output_shape(kind, shape);
        }
        if (shape_numel(shape) != classes)
            throw std::invalid_argument("ModelSpec: final output " + shape_str(shape) + " != classes " +
                                        std::to_string(classes));
    }
};

struct Model {
    ModelSpec spec;
    ParamSet params;
};

// Captured post-layer activations for one input, keyed by layer id.
struct ActivationTrace {
    std::map<std::string, Tensor> by_layer;

    bool empty() const { return by_layer.empty(); }
    const Tensor& at(const std::string& id) const {
        auto it = by_layer.find(id);
        if (it == by_layer.end()) throw std::invalid_argument("ActivationTrace: missing layer '" + id + "'");
        return it->second;
    }
};

inline Tensor forward(const Model& m, const Tensor& x) {
    Tensor cur = x;
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i)
        cur = apply_layer(m.spec.layers[i].second, m.params.layers[i], cur);
    return cur;
}

struct TracedForward {
    Tensor logits;
    ActivationTrace trace;
};

// Forward pass capturing exactly the requested layer outputs. The logits are
// the same values a traceless forward produces (same code path).
inline TracedForward forward_with_trace(const Model& m, const Tensor& x,
                                        const std::set<std::string>& capture) {
    for (const auto& id : capture) m.spec.index_of(id);  // rejects unknown ids by name
    TracedForward out;
    Tensor cur = x;
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        cur = apply_layer(m.spec.layers[i].second, m.params.layers[i], cur);
        if (capture.count(m.spec.layers[i].first)) out.trace.by_layer.emplace(m.spec.layers[i].first, cur);
    }
    out.logits = std::move(cur);
    return out;
}

struct Gradients {
    Tensor wrt_input;
    ParamSet wrt_params;
};

namespace detail {

inline void check_finite_or_throw(const Tensor& t, const std::string& layer_id, const char* phase) {
    if (!t.all_finite())
        throw std::runtime_error(std::string("numerical failure: non-finite values in ") + phase +
                                 " at layer '" + layer_id + "'");
}

}  // namespace detail

// Forward pass retaining every layer input up to (and including) layer
// `upto`, so a backward pass can reuse it instead of re-running the stack.
struct ForwardCache {
    std::vector<Tensor> inputs;  // inputs[i] = input fed to layer i
    Tensor output;               // output of layer `upto`
    std::size_t upto = 0;

    // output of layer i (only valid for i <= upto)
    const Tensor& output_of(std::size_t i) const { return i + 1 < inputs.size() ? inputs[i + 1] : output; }
};

inline ForwardCache forward_cached(const Model& m, const Tensor& x, std::size_t upto) {
    if (upto >= m.spec.layers.size()) throw std::invalid_argument("forward_cached: layer index out of range");
    ForwardCache cache;
    cache.upto = upto;
    cache.inputs.reserve(upto + 1);
    Tensor cur = x;
    for (std::size_t i = 0; i <= upto; ++i) {
        cache.inputs.push_back(std::move(cur));
        cur = apply_layer(m.spec.layers[i].second, m.params.layers[i], cache.inputs.back());
        detail::check_finite_or_throw(cur, m.spec.layers[i].first, "forward");
    }
    cache.output = std::move(cur);
    return cache;
}

// Reverse-mode pass with gradient injections at arbitrary layer outputs.
// `upstream_by_layer` maps layer id -> dScalar/d(output of that layer); the
// contributions are accumulated while walking from the deepest injection back
// to the input. Returns exact d/dx and d/dtheta of the implied scalar.
inline Gradients backprop_cached(const Model& m, const ForwardCache& cache,
                                 const std::map<std::string, Tensor>& upstream_by_layer) {
    if (upstream_by_layer.empty()) throw std::invalid_argument("backprop: no upstream gradients given");
    std::size_t deepest = 0;
    for (const auto& [id, up] : upstream_by_layer) deepest = std::max(deepest, m.spec.index_of(id));
    if (deepest > cache.upto) throw std::invalid_argument("backprop: cache does not reach the deepest injection");
    const std::vector<Tensor>& inputs = cache.inputs;

    Gradients g;
    g.wrt_params.layers.resize(m.spec.layers.size());
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i)
        g.wrt_params.layers[i] = layer_zero_params(m.spec.layers[i].second);

    Tensor flowing;  // gradient w.r.t. the current layer's output
    for (std::size_t ii = deepest + 1; ii-- > 0;) {
        const auto& [id, kind] = m.spec.layers[ii];
        auto inj = upstream_by_layer.find(id);
        if (inj != upstream_by_layer.end()) {
            std::vector<std::size_t> out_shape = layer_output_shape(kind, inputs[ii].shape);
            if (inj->second.shape != out_shape)
                throw std::invalid_argument("backprop_at: upstream for '" + id + "' has shape " +
                                            shape_str(inj->second.shape) + ", layer output is " +
                                            shape_str(out_shape));
            if (flowing.numel() == 0) {
                flowing = inj->second;
            } else {
                for (std::size_t k = 0; k < flowing.numel(); ++k) flowing[k] += inj->second[k];
            }
        }
        LayerGrads lg = layer_backward(kind, m.params.layers[ii], inputs[ii], flowing);
        detail::check_finite_or_throw(lg.wrt_input, id, "backward");
        g.wrt_params.layers[ii] = std::move(lg.wrt_params);
        flowing = std::move(lg.wrt_input);
    }
    g.wrt_input = std::move(flowing);
    return g;
}

inline Gradients backprop_at(const Model& m, const Tensor& x,
                             const std::map<std::string, Tensor>& upstream_by_layer) {
    if (upstream_by_layer.empty()) throw std::invalid_argument("backprop: no upstream gradients given");
    std::size_t deepest = 0;
    for (const auto& [id, up] : upstream_by_layer) deepest = std::max(deepest, m.spec.index_of(id));
    return backprop_cached(m, forward_cached(m, x, deepest), upstream_by_layer);
}

// Single-cut form: upstream gradient at the output of `cut_layer` (default:
// the final layer). Layers past the cut receive zero parameter gradients.
inline Gradients backprop(const Model& m, const Tensor& x, const Tensor& upstream,
                          const std::string& cut_layer = "") {
    std::string cut = cut_layer.empty() ? m.spec.layers.back().first : cut_layer;
    return backprop_at(m, x, {{cut, upstream}});
}

struct SoftmaxCrossEntropy {
    double loss;
    Tensor probs;
    Tensor grad_logits;  // d loss / d logits = probs - onehot(y)
};

inline SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    if (label >= logits.numel())
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(logits.numel()) + " classes");
    double mx = logits[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double sum = 0.0;
    Tensor probs = logits;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    SoftmaxCrossEntropy out;
    out.loss = -(logits[label] - mx - std::log(sum));
    for (double& p : probs.data) p /= sum;
    out.grad_logits = probs;
    out.grad_logits[label] -= 1.0;
    out.probs = std::move(probs);
    return out;
}

inline std::size_t argmax_class(const Tensor& logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.numel(); ++i)
        if (logits[i] > logits[best]) best = i;  // ties keep the lowest index
    return best;
}

// ---- architectures ----------------------------------------------------

enum class Arch { TinyMLP, TinyCNN };

inline Arch arch_from_string(const std::string& s) {
    if (s == "tiny_mlp") return Arch::TinyMLP;
    if (s == "tiny_cnn") return Arch::TinyCNN;
    throw std::invalid_argument("unknown architecture '" + s + "'");
}

inline std::string arch_to_string(Arch a) { return a == Arch::TinyMLP ? "tiny_mlp" : "tiny_cnn"; }

namespace detail {

inline void init_params(Model& m, std::uint64_t seed) {
    m.params.layers.clear();
    m.params.layers.resize(m.spec.layers.size());
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        const LayerKind& kind = m.spec.layers[i].second;
        LayerParams lp = layer_zero_params(kind);
        if (std::holds_alternative<LayerNorm>(kind)) {
            for (double& v : lp[0].data) v = 1.0;  // gain 1, bias 0
        } else if (!lp.empty()) {
            Rng rng(derive_seed(seed, "init", i));
            double scale = 1.0 / std::sqrt(static_cast<double>(layer_fan_in(kind)));
            for (double& v : lp[0].data) v = rng.gaussian() * scale;  // weights; biases stay 0
        }
        m.params.layers[i] = std::move(lp);
    }
}

}  // namespace detail

// Desk-scale stand-in architectures. TinyMLP: three Dense layers with ReLU
// between. TinyCNN: three conv blocks (conv-relu-meanpool) and a two-layer
// classifier head; input must be square with side a positive multiple of 8.
// Parameters are seeded scaled-Gaussian (fan-in), deterministic per seed.
inline Model build_model(Arch arch, const std::vector<std::size_t>& input_shape, std::size_t classes,
                         std::uint64_t seed, std::size_t hidden = 0) {
    if (classes < 2) throw std::invalid_argument("build_model: classes must be >= 2");
    Model m;
    m.spec.input_shape = input_shape;
    m.spec.classes = classes;
    if (arch == Arch::TinyMLP) {
        if (input_shape.size() != 1)
            throw std::invalid_argument("build_model: TinyMLP needs a flat input shape, got " +
                                        shape_str(input_shape));
        std::size_t d = input_shape[0];
        std::size_t h = hidden ? hidden : 32;
        m.spec.layers = {{"fc1", Dense{d, h}},   {"relu1", ReLU{}}, {"fc2", Dense{h, h}},
                         {"relu2", ReLU{}},      {"fc3", Dense{h, classes}}};
    } else {
        if (input_shape.size() != 3 || input_shape[1] != input_shape[2] || input_shape[1] < 8 ||
            input_shape[1] % 8 != 0)
            throw std::invalid_argument(
                "build_model: TinyCNN needs a square [C x S x S] input with S a multiple of 8 and >= 8, got " +
                shape_str(input_shape));
        std::size_t ch = input_shape[0], side = input_shape[1];
        std::size_t h = hidden ? hidden : 64;
        std::size_t flat = 24 * (side / 8) * (side / 8);
        m.spec.layers = {{"conv1", Conv2d{ch, 6, 3, 1, 1}},  {"relu1", ReLU{}}, {"pool1", MeanPool2d{2}},
                         {"conv2", Conv2d{6, 12, 3, 1, 1}},  {"relu2", ReLU{}}, {"pool2", MeanPool2d{2}},
                         {"conv3", Conv2d{12, 24, 3, 1, 1}}, {"relu3", ReLU{}}, {"pool3", MeanPool2d{2}},
                         {"flatten", Flatten{}},             {"fc1", Dense{flat, h}},
                         {"relu4", ReLU{}},                  {"fc2", Dense{h, classes}}};
    }
    m.spec.validate();
    detail::init_params(m, seed);
    return m;
}

// ---- layer groups ------------------------------------------------------

enum class GroupName { Early, Mid, Late, All };

inline GroupName group_from_string(const std::string& s) {
    if (s == "early") return GroupName::Early;
    if (s == "mid") return GroupName::Mid;
    if (s == "late") return GroupName::Late;
    if (s == "all") return GroupName::All;
    throw std::invalid_argument("unknown layer group '" + s + "'");
}

inline std::string group_to_string(GroupName g) {
    switch (g) {
        case GroupName::Early: return "early";
        case GroupName::Mid: return "mid";
        case GroupName::Late: return "late";
        default: return "all";
    }
}

struct LayerGroup {
    GroupName name;
    std::vector<std::string> layer_ids;
};

// Partition the parametric layers by depth into thirds. When the count is
// not divisible by three, the extra layers go to the later groups (e.g. four
// layers split 1/1/2, five split 1/2/2). All is the full union.
inline std::vector<LayerGroup> layer_groups(const ModelSpec& spec) {
    std::vector<std::string> parametric;
    for (const auto& [id, kind] : spec.layers)
        if (layer_has_params(kind)) parametric.push_back(id);
    std::size_t n = parametric.size();
    if (n < 3)
        throw std::invalid_argument("layer_groups: need >= 3 parametric layers, model has " + std::to_string(n));

    std::size_t base = n / 3, extra = n % 3;
    std::size_t sizes[3];
    for (std::size_t i = 0; i < 3; ++i) sizes[i] = base + (i >= 3 - extra ? 1 : 0);

    std::vector<LayerGroup> groups(4);
    groups[0].name = GroupName::Early;
    groups[1].name = GroupName::Mid;
    groups[2].name = GroupName::Late;
    groups[3].name = GroupName::All;
    std::size_t pos = 0;
    for (std::size_t gi = 0; gi < 3; ++gi)
        for (std::size_t k = 0; k < sizes[gi]; ++k) groups[gi].layer_ids.push_back(parametric[pos++]);
    groups[3].layer_ids = parametric;
    return groups;
}

inline const LayerGroup& find_group(const std::vector<LayerGroup>& groups, GroupName name) {
    for (const auto& g : groups)
        if (g.name == name) return g;
    throw std::invalid_argument("find_group: group not present");
}

}  // namespace mialab
