#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mialab/dataset.hpp"
#include "mialab/split.hpp"

using namespace mialab;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST(SynthBlobs, CountContractAndFiniteBounds) {
    Dataset ds = synth_blobs(2, 100, {8}, 1.0, 42);
    EXPECT_EQ(ds.size(), 200u);
    EXPECT_EQ(std::count(ds.ys.begin(), ds.ys.end(), 0), 100);
    EXPECT_EQ(std::count(ds.ys.begin(), ds.ys.end(), 1), 100);
    for (double v : ds.bounds.min) EXPECT_TRUE(std::isfinite(v));
    for (double v : ds.bounds.max) EXPECT_TRUE(std::isfinite(v));
}

TEST(SynthBlobs, EpsilonSpreadHugsClassMean) {
    Dataset ds = synth_blobs(2, 20, {4}, 1e-9, 7);
    // within-class examples collapse onto the class mean
    for (std::size_t i = 1; i < 20; ++i)
        for (std::size_t f = 0; f < 4; ++f) EXPECT_NEAR(ds.xs[i][f], ds.xs[0][f], 1e-6);
    EXPECT_THROW(synth_blobs(2, 20, {4}, 0.0, 7), std::invalid_argument);
    EXPECT_THROW(synth_blobs(2, 20, {4}, -1.0, 7), std::invalid_argument);
}

TEST(SynthBlobs, DeterministicPerSeed) {
    Dataset a = synth_blobs(3, 15, {2, 3, 3}, 2.0, 9);
    Dataset b = synth_blobs(3, 15, {2, 3, 3}, 2.0, 9);
    Dataset c = synth_blobs(3, 15, {2, 3, 3}, 2.0, 10);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.xs[i].data, b.xs[i].data);
    EXPECT_NE(a.xs[0].data, c.xs[0].data);
}

TEST(EmpiricalBounds, DirectInspection) {
    Dataset ds;
    ds.classes = 2;
    ds.example_shape = {2};
    ds.xs = {Tensor({2}, {0, 1}), Tensor({2}, {2, -1})};
    ds.ys = {0, 1};
    Bounds b = empirical_bounds(ds);
    EXPECT_EQ(b.min, (std::vector<double>{0, -1}));
    EXPECT_EQ(b.max, (std::vector<double>{2, 1}));
}

TEST(EmpiricalBounds, SingleExampleDegenerate) {
    Dataset ds;
    ds.classes = 2;
    ds.example_shape = {3};
    ds.xs = {Tensor({3}, {5, -2, 0.5})};
    ds.ys = {0};
    Bounds b = empirical_bounds(ds);
    EXPECT_EQ(b.min, ds.xs[0].data);
    EXPECT_EQ(b.max, ds.xs[0].data);
}

TEST(EmpiricalBounds, EnvelopePropertyWithAttainment) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Dataset ds = synth_blobs(2, 12, {5}, 3.0, seed);
        Bounds b = empirical_bounds(ds);
        for (std::size_t f = 0; f < 5; ++f) {
            bool min_hit = false, max_hit = false;
            for (const Tensor& x : ds.xs) {
                EXPECT_GE(x[f], b.min[f]);
                EXPECT_LE(x[f], b.max[f]);
                min_hit |= x[f] == b.min[f];
                max_hit |= x[f] == b.max[f];
            }
            EXPECT_TRUE(min_hit && max_hit) << "bound not attained at feature " << f;
        }
    }
}

TEST(AugmentFlip, MirrorAndInvolution) {
    Tensor img({1, 2, 2}, {1, 2, 3, 4});
    Tensor flipped = augment_flip(img, true);
    EXPECT_EQ(flipped.data, (std::vector<double>{2, 1, 4, 3}));
    EXPECT_EQ(augment_flip(img, false).data, img.data);
    EXPECT_EQ(augment_flip(flipped, true).data, img.data);
    EXPECT_THROW(augment_flip(Tensor({4}, {1, 2, 3, 4}), true), std::invalid_argument);
}

TEST(MiadFile, RoundTripBitIdentical) {
    Dataset ds = synth_blobs(3, 11, {2, 4, 4}, 1.5, 123);
    auto path = temp_file("mialab_roundtrip.miad");
    save_dataset(ds, path.string());
    Dataset back = load_dataset(path.string());
    EXPECT_EQ(back.classes, ds.classes);
    EXPECT_EQ(back.example_shape, ds.example_shape);
    EXPECT_EQ(back.ys, ds.ys);
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.xs[i].data, ds.xs[i].data) << "example " << i;
    EXPECT_EQ(back.bounds.min, ds.bounds.min);
    EXPECT_EQ(back.bounds.max, ds.bounds.max);
    std::filesystem::remove(path);
}

TEST(MiadFile, RejectsBadMagicAndTruncation) {
    auto path = temp_file("mialab_bad.miad");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    EXPECT_THROW(load_dataset(path.string()), std::runtime_error);

    Dataset ds = synth_blobs(2, 10, {3}, 1.0, 5);
    save_dataset(ds, path.string());
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 7);
    EXPECT_THROW(load_dataset(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(StratifiedSplit, HalvesPerClass) {
    Dataset ds = synth_blobs(2, 100, {4}, 1.0, 1);
    SplitPlan plan = stratified_split(ds, {.val_fraction = 0.05, .attack_val_per_side = 10,
                                           .attack_test_per_side = 20, .seed = 3});
    // train half = members + validation = 50 per class
    std::vector<std::size_t> train_count(2, 0), held_count(2, 0);
    for (std::size_t id : plan.member_ids) train_count[ds.ys[id]]++;
    for (std::size_t id : plan.validation_ids) train_count[ds.ys[id]]++;
    for (std::size_t id : plan.nonmember_ids) held_count[ds.ys[id]]++;
    EXPECT_EQ(train_count, (std::vector<std::size_t>{50, 50}));
    EXPECT_EQ(held_count, (std::vector<std::size_t>{50, 50}));
    // validation is 5% of the train half, stratified: 2-3 per class
    std::vector<std::size_t> val_count(2, 0);
    for (std::size_t id : plan.validation_ids) val_count[ds.ys[id]]++;
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(static_cast<double>(val_count[c]), 2.5, 0.5);
}

TEST(StratifiedSplit, DisjointnessInvariants) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Dataset ds = synth_blobs(4, 40, {4}, 2.0, seed);
        SplitPlan plan = stratified_split(ds, {.val_fraction = 0.05, .attack_val_per_side = 8,
                                               .attack_test_per_side = 12, .seed = seed});
        std::set<std::size_t> members(plan.member_ids.begin(), plan.member_ids.end());
        std::set<std::size_t> nonmembers(plan.nonmember_ids.begin(), plan.nonmember_ids.end());
        std::set<std::size_t> validation(plan.validation_ids.begin(), plan.validation_ids.end());
        for (std::size_t id : members) EXPECT_EQ(nonmembers.count(id), 0u);
        for (std::size_t id : validation) {
            EXPECT_EQ(members.count(id), 0u);
            EXPECT_EQ(nonmembers.count(id), 0u);
        }
        std::set<std::size_t> av, at;
        for (std::size_t id : plan.attack_val_ids()) av.insert(id);
        for (std::size_t id : plan.attack_test_ids()) at.insert(id);
        for (std::size_t id : av) EXPECT_EQ(at.count(id), 0u) << "attack splits overlap";
        for (std::size_t id : plan.attack_val_members) EXPECT_EQ(members.count(id), 1u);
        for (std::size_t id : plan.attack_test_members) EXPECT_EQ(members.count(id), 1u);
        for (std::size_t id : plan.attack_val_nonmembers) EXPECT_EQ(nonmembers.count(id), 1u);
        for (std::size_t id : plan.attack_test_nonmembers) EXPECT_EQ(nonmembers.count(id), 1u);
        EXPECT_EQ(plan.attack_val_members.size(), plan.attack_val_nonmembers.size());
        EXPECT_EQ(plan.attack_test_members.size(), plan.attack_test_nonmembers.size());
    }
}

TEST(StratifiedSplit, DeterministicPerSeedAndRejectsTinyClasses) {
    Dataset ds = synth_blobs(2, 60, {4}, 1.0, 2);
    SplitConfig cfg{.val_fraction = 0.05, .attack_val_per_side = 6, .attack_test_per_side = 10, .seed = 11};
    SplitPlan a = stratified_split(ds, cfg);
    SplitPlan b = stratified_split(ds, cfg);
    EXPECT_EQ(a.member_ids, b.member_ids);
    EXPECT_EQ(a.attack_test_nonmembers, b.attack_test_nonmembers);

    Dataset tiny = synth_blobs(2, 10, {4}, 1.0, 2);
    try {
        stratified_split(tiny, {.val_fraction = 0.05, .attack_val_per_side = 20,
                                .attack_test_per_side = 20, .seed = 1});
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("class"), std::string::npos);
    }
}
