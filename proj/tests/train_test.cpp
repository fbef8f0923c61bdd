#include <gtest/gtest.h>

#include "mialab/train.hpp"

using namespace mialab;

namespace {

// Minimal split over a dataset: train on everything except one validation
// example per class; no attack strata.
SplitPlan trivial_split(const Dataset& ds) {
    SplitPlan plan;
    std::vector<bool> val_taken(ds.classes, false);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!val_taken[ds.ys[i]]) {
            plan.validation_ids.push_back(i);
            val_taken[ds.ys[i]] = true;
        } else {
            plan.member_ids.push_back(i);
        }
    }
    return plan;
}

}  // namespace

TEST(LrSchedule, WarmupBoundaryIsExactAndDecaysToZero) {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.warmup_epochs = 5;
    cfg.max_epochs = 40;
    EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 1), 0.1 / 5.0);  // starts at lr/warmup
    EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 5), 0.1);        // exactly lr at the boundary
    for (std::size_t e = 2; e <= 5; ++e) EXPECT_GT(lr_at_epoch(cfg, e), lr_at_epoch(cfg, e - 1));
    for (std::size_t e = 6; e <= 40; ++e) EXPECT_LT(lr_at_epoch(cfg, e), lr_at_epoch(cfg, e - 1));
    EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 40), 0.0);  // cosine reaches zero at max_epochs
}

TEST(LrSchedule, ConfigValidation) {
    TrainConfig cfg;
    cfg.momentum = 1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.momentum = 0.9;
    cfg.warmup_epochs = 200;
    cfg.max_epochs = 100;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.warmup_epochs = 5;
    cfg.patience = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
    Dataset ds = synth_blobs(2, 20, {4}, 1.0, 3);
    Model m = build_model(Arch::TinyMLP, {4}, 2, 5, 8);
    Model before = m;
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.max_epochs = 3;
    cfg.warmup_epochs = 1;
    cfg.patience = 10;
    cfg.weight_decay = 0.0;
    train(m, ds, trivial_split(ds), cfg);
    for (std::size_t li = 0; li < m.params.layers.size(); ++li)
        for (std::size_t pi = 0; pi < m.params.layers[li].size(); ++pi)
            EXPECT_EQ(m.params.layers[li][pi].data, before.params.layers[li][pi].data);
}

TEST(Train, DeterministicPerSeed) {
    Dataset ds = synth_blobs(2, 30, {4}, 2.0, 8);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.batch = 8;
    cfg.max_epochs = 6;
    cfg.warmup_epochs = 2;
    cfg.seed = 77;
    Model m1 = build_model(Arch::TinyMLP, {4}, 2, 5, 8);
    Model m2 = build_model(Arch::TinyMLP, {4}, 2, 5, 8);
    TrainResult r1 = train(m1, ds, trivial_split(ds), cfg);
    TrainResult r2 = train(m2, ds, trivial_split(ds), cfg);
    ASSERT_EQ(r1.history.size(), r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        EXPECT_EQ(r1.history[i].train_loss, r2.history[i].train_loss);
        EXPECT_EQ(r1.history[i].val_acc, r2.history[i].val_acc);
    }
    for (std::size_t li = 0; li < m1.params.layers.size(); ++li)
        for (std::size_t pi = 0; pi < m1.params.layers[li].size(); ++pi)
            EXPECT_EQ(m1.params.layers[li][pi].data, m2.params.layers[li][pi].data);
}

// One epoch with full batch, zero momentum/decay, warmup 1 of 1 epoch (so the
// step size is exactly cfg.lr) must equal a hand-stepped gradient-descent
// update on a one-layer softmax model.
TEST(Train, FullBatchEpochMatchesHandSteppedDescent) {
    Dataset ds;
    ds.classes = 2;
    ds.example_shape = {1};
    ds.xs = {Tensor({1}, {1.0}), Tensor({1}, {-2.0}), Tensor({1}, {0.5}), Tensor({1}, {3.0})};
    ds.ys = {0, 1, 1, 0};
    ds.bounds = empirical_bounds(ds);

    Model m;
    m.spec = {{{"fc", Dense{1, 2}}}, {1}, 2};
    m.params.layers = {{Tensor({2, 1}, {0.3, -0.2}), Tensor({2}, {0.1, 0.0})}};

    SplitPlan split;
    split.member_ids = {0, 1, 2, 3};
    split.validation_ids = {0};

    TrainConfig cfg;
    cfg.lr = 0.25;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.batch = 4;
    cfg.max_epochs = 1;
    cfg.warmup_epochs = 1;
    cfg.patience = 1;

    // hand-stepped oracle: logits = [w0 x + b0, w1 x + b1]
    double w[2] = {0.3, -0.2}, b[2] = {0.1, 0.0};
    double gw[2] = {0, 0}, gb[2] = {0, 0};
    for (std::size_t i = 0; i < 4; ++i) {
        double x = ds.xs[i][0];
        double l0 = w[0] * x + b[0], l1 = w[1] * x + b[1];
        double mx = std::max(l0, l1);
        double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        double d0 = p0 - (ds.ys[i] == 0 ? 1.0 : 0.0);
        double d1 = p1 - (ds.ys[i] == 1 ? 1.0 : 0.0);
        gw[0] += d0 * x;
        gw[1] += d1 * x;
        gb[0] += d0;
        gb[1] += d1;
    }
    for (int i = 0; i < 2; ++i) {
        w[i] -= cfg.lr * gw[i] / 4.0;
        b[i] -= cfg.lr * gb[i] / 4.0;
    }

    train(m, ds, split, cfg);
    EXPECT_NEAR(m.params.layers[0][0][0], w[0], 1e-15);
    EXPECT_NEAR(m.params.layers[0][0][1], w[1], 1e-15);
    EXPECT_NEAR(m.params.layers[0][1][0], b[0], 1e-15);
    EXPECT_NEAR(m.params.layers[0][1][1], b[1], 1e-15);
}

TEST(Train, FitsSeparableBlobs) {
    // well-separated clusters: TinyMLP should fit nearly perfectly
    Dataset ds = synth_blobs(3, 60, {6}, 0.15, 21);
    Model m = build_model(Arch::TinyMLP, {6}, 3, 4, 16);
    SplitPlan plan = stratified_split(ds, {.val_fraction = 0.05, .attack_val_per_side = 3,
                                           .attack_test_per_side = 3, .seed = 2});
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    cfg.batch = 16;
    cfg.max_epochs = 40;
    cfg.warmup_epochs = 3;
    cfg.patience = 40;
    cfg.seed = 9;
    train(m, ds, plan, cfg);
    EXPECT_GE(accuracy(m, ds, plan.member_ids), 0.99);
}

TEST(Train, DivergenceAbortsWithEpochIndex) {
    Dataset ds = synth_blobs(2, 20, {4}, 1.0, 3);
    Model m = build_model(Arch::TinyMLP, {4}, 2, 5, 8);
    TrainConfig cfg;
    cfg.lr = 1e100;  // blows activations up multiplicatively across layers
    cfg.warmup_epochs = 0;
    cfg.max_epochs = 50;
    cfg.weight_decay = 0.0;
    try {
        train(m, ds, trivial_split(ds), cfg);
        FAIL() << "expected divergence";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
}

TEST(Accuracy, ConstantPredictorEndpoints) {
    Dataset ds;
    ds.classes = 2;
    ds.example_shape = {2};
    for (int i = 0; i < 10; ++i) {
        ds.xs.push_back(Tensor({2}, {1.0 * i, 0.5}));
        ds.ys.push_back(0);
    }
    ds.bounds = empirical_bounds(ds);
    // bias strongly favors class 0 regardless of input
    Model m;
    m.spec = {{{"fc", Dense{2, 2}}}, {2}, 2};
    m.params.layers = {{Tensor::zeros({2, 2}), Tensor({2}, {5.0, -5.0})}};
    std::vector<std::size_t> ids = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    EXPECT_DOUBLE_EQ(accuracy(m, ds, ids), 1.0);
    for (auto& y : ds.ys) y = 1;
    EXPECT_DOUBLE_EQ(accuracy(m, ds, ids), 0.0);
    EXPECT_THROW(accuracy(m, ds, std::span<const std::size_t>{}), std::invalid_argument);
}

TEST(Accuracy, UntrainedModelNearChanceOnRandomLabels) {
    // 500 random 2-class labels, fresh model: binomial bound ~0.5 +- 0.1
    Dataset ds = synth_blobs(2, 250, {8}, 1.0, 6);
    Rng rng(31);
    for (auto& y : ds.ys) y = static_cast<std::uint16_t>(rng.index(2));
    Model m = build_model(Arch::TinyMLP, {8}, 2, 77, 16);
    std::vector<std::size_t> ids(ds.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    double acc = accuracy(m, ds, ids);
    EXPECT_NEAR(acc, 0.5, 0.1);
}
