#pragma once

#include <span>

#include "mialab/dataset.hpp"
#include "mialab/model.hpp"
#include "mialab/split.hpp"

namespace mialab {

struct TrainConfig {
    double lr = 0.1;
    double momentum = 0.9;  // Nesterov
    double weight_decay = 1e-4;
    std::size_t batch = 100;
    std::size_t max_epochs = 100;
    std::size_t warmup_epochs = 5;
    std::size_t patience = 20;
    bool flip_augment = false;
    std::uint64_t seed = 0;

    void validate() const {
        // lr == 0 is a degenerate no-op permitted for the zero-step contract
        if (lr < 0.0) throw std::invalid_argument("TrainConfig: lr must not be negative");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
        if (batch == 0) throw std::invalid_argument("TrainConfig: batch must be positive");
        if (max_epochs == 0) throw std::invalid_argument("TrainConfig: max_epochs must be positive");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
        if (warmup_epochs > max_epochs) throw std::invalid_argument("TrainConfig: warmup exceeds max_epochs");
    }
};

// Per-epoch schedule (epochs are 1-based): linear warmup from lr/warmup to
// exactly lr at the warmup boundary, then cosine decay reaching 0 at
// max_epochs.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (epoch == 0 || epoch > cfg.max_epochs) throw std::invalid_argument("lr_at_epoch: epoch out of range");
    if (cfg.warmup_epochs > 0 && epoch <= cfg.warmup_epochs)
        return cfg.lr * static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    double span = static_cast<double>(cfg.max_epochs - cfg.warmup_epochs);
    double t = static_cast<double>(epoch - cfg.warmup_epochs) / span;
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

struct EpochStats {
    std::size_t epoch;
    double lr, train_loss, train_acc, val_acc;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;  // epoch with the best validation accuracy
};

// Exact fraction of argmax-correct predictions over the given ids; argmax
// ties resolve to the lowest class index.
inline double accuracy(const Model& m, const Dataset& ds, std::span<const std::size_t> ids) {
    if (ids.empty()) throw std::invalid_argument("accuracy: empty id set");
    std::size_t hits = 0;
    for (std::size_t id : ids) {
        if (id >= ds.size()) throw std::invalid_argument("accuracy: id " + std::to_string(id) + " out of range");
        if (argmax_class(forward(m, ds.xs[id])) == ds.ys[id]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ids.size());
}

// Minibatch SGD with Nesterov momentum and weight decay on the member split.
// Early-stops after `patience` epochs without a validation-accuracy
// improvement. Deterministic per cfg.seed.
inline TrainResult train(Model& m, const Dataset& ds, const SplitPlan& split, const TrainConfig& cfg) {
    cfg.validate();
    if (split.member_ids.empty()) throw std::invalid_argument("train: no member ids to train on");
    if (split.validation_ids.empty()) throw std::invalid_argument("train: empty validation split");
    for (std::size_t id : split.member_ids)
        if (id >= ds.size()) throw std::invalid_argument("train: member id out of range");
    bool can_flip = cfg.flip_augment && ds.example_shape.size() == 3;

    // momentum buffers mirror the parameter layout
    ParamSet velocity;
    velocity.layers.reserve(m.params.layers.size());
    for (const auto& lp : m.params.layers) {
        LayerParams v;
        for (const auto& t : lp) v.push_back(Tensor::zeros(t.shape));
        velocity.layers.push_back(std::move(v));
    }

    TrainResult result;
    std::vector<std::size_t> order = split.member_ids;
    double best_val = -1.0;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double lr = lr_at_epoch(cfg, epoch);
        Rng rng(derive_seed(cfg.seed, "train-epoch", epoch));
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t hit = 0;
        try {
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::size_t stop = std::min(order.size(), start + cfg.batch);
            double inv_n = 1.0 / static_cast<double>(stop - start);

            ParamSet grad;
            grad.layers.resize(m.params.layers.size());
            for (std::size_t li = 0; li < m.params.layers.size(); ++li)
                for (const auto& t : m.params.layers[li]) grad.layers[li].push_back(Tensor::zeros(t.shape));

            for (std::size_t k = start; k < stop; ++k) {
                std::size_t id = order[k];
                Tensor x = can_flip ? augment_flip(ds.xs[id], rng.coin()) : ds.xs[id];
                ForwardCache cache = forward_cached(m, x, m.spec.layers.size() - 1);
                SoftmaxCrossEntropy ce = softmax_cross_entropy(cache.output, ds.ys[id]);
                if (!std::isfinite(ce.loss)) throw std::runtime_error("non-finite loss");
                loss_sum += ce.loss;
                if (argmax_class(ce.probs) == ds.ys[id]) ++hit;
                Gradients g = backprop_cached(m, cache, {{m.spec.layers.back().first, ce.grad_logits}});
                for (std::size_t li = 0; li < grad.layers.size(); ++li)
                    for (std::size_t pi = 0; pi < grad.layers[li].size(); ++pi)
                        for (std::size_t e = 0; e < grad.layers[li][pi].numel(); ++e)
                            grad.layers[li][pi][e] += g.wrt_params.layers[li][pi][e];
            }

            for (std::size_t li = 0; li < m.params.layers.size(); ++li)
                for (std::size_t pi = 0; pi < m.params.layers[li].size(); ++pi) {
                    Tensor& theta = m.params.layers[li][pi];
                    Tensor& vel = velocity.layers[li][pi];
                    const Tensor& gsum = grad.layers[li][pi];
                    for (std::size_t e = 0; e < theta.numel(); ++e) {
                        double g = gsum[e] * inv_n + cfg.weight_decay * theta[e];
                        vel[e] = cfg.momentum * vel[e] + g;
                        double step = cfg.momentum > 0.0 ? g + cfg.momentum * vel[e] : vel[e];
                        theta[e] -= lr * step;
                    }
                }
        }
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }

        double val_acc = accuracy(m, ds, split.validation_ids);
        result.history.push_back({epoch, lr, loss_sum / static_cast<double>(order.size()),
                                  static_cast<double>(hit) / static_cast<double>(order.size()), val_acc});
        if (val_acc > best_val) {
            best_val = val_acc;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return result;
}

}  // namespace mialab
