#pragma once

#include "mialab/dataset.hpp"

namespace mialab {

// Stratified member/non-member protocol. The dataset is halved per class
// (train half vs held-out half); a validation slice is reserved from the
// train half; attack-validation and attack-test draw members from the
// trained-on ids and non-members from the held-out half, disjointly.
struct SplitPlan {
    std::vector<std::size_t> member_ids;      // trained on (train half minus validation)
    std::vector<std::size_t> nonmember_ids;   // held-out half
    std::vector<std::size_t> validation_ids;  // early-stopping slice of the train half
    std::vector<std::size_t> attack_val_members, attack_val_nonmembers;
    std::vector<std::size_t> attack_test_members, attack_test_nonmembers;
    std::uint64_t seed = 0;

    std::vector<std::size_t> attack_val_ids() const {
        std::vector<std::size_t> v = attack_val_members;
        v.insert(v.end(), attack_val_nonmembers.begin(), attack_val_nonmembers.end());
        return v;
    }
    std::vector<std::size_t> attack_test_ids() const {
        std::vector<std::size_t> v = attack_test_members;
        v.insert(v.end(), attack_test_nonmembers.begin(), attack_test_nonmembers.end());
        return v;
    }
};

struct SplitConfig {
    double val_fraction = 0.05;
    std::size_t attack_val_per_side = 200;
    std::size_t attack_test_per_side = 500;
    std::uint64_t seed = 0;
};

namespace detail {

// Largest-remainder apportionment of `total` over strata proportional to
// their sizes; keeps per-stratum counts within one of the exact fraction.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& sizes) {
    std::size_t pool = 0;
    for (std::size_t s : sizes) pool += s;
    std::vector<std::size_t> out(sizes.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        double exact = static_cast<double>(total) * static_cast<double>(sizes[i]) / static_cast<double>(pool);
        out[i] = static_cast<std::size_t>(exact);
        assigned += out[i];
        rema.emplace_back(exact - static_cast<double>(out[i]), i);
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) out[rema[k % rema.size()].second] += 1;
    return out;
}

}  // namespace detail

inline SplitPlan stratified_split(const Dataset& ds, const SplitConfig& cfg) {
    if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
        throw std::invalid_argument("stratified_split: val_fraction must be in [0, 1)");

    // per-class id lists, shuffled once per class
    std::vector<std::vector<std::size_t>> by_class(ds.classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.ys[i]].push_back(i);
    for (std::size_t c = 0; c < ds.classes; ++c) {
        Rng rng(derive_seed(cfg.seed, "split-class", c));
        rng.shuffle(by_class[c]);
    }

    std::vector<std::size_t> class_sizes;
    for (const auto& ids : by_class) class_sizes.push_back(ids.size());
    std::vector<std::size_t> val_quota = detail::apportion(cfg.attack_val_per_side, class_sizes);
    std::vector<std::size_t> test_quota = detail::apportion(cfg.attack_test_per_side, class_sizes);

    SplitPlan plan;
    plan.seed = cfg.seed;
    for (std::size_t c = 0; c < ds.classes; ++c) {
        const auto& ids = by_class[c];
        std::size_t n = ids.size();
        std::size_t train_n = (n + 1) / 2;  // train half gets the odd extra
        std::size_t held_n = n - train_n;
        std::size_t val_n = cfg.val_fraction > 0.0
                                ? std::max<std::size_t>(1, static_cast<std::size_t>(
                                                               std::llround(cfg.val_fraction *
                                                                            static_cast<double>(train_n))))
                                : 0;
        std::size_t member_n = train_n > val_n ? train_n - val_n : 0;
        if (member_n < val_quota[c] + test_quota[c] || held_n < val_quota[c] + test_quota[c] || member_n == 0)
            throw std::invalid_argument("stratified_split: class " + std::to_string(c) + " too small (" +
                                        std::to_string(n) + " samples) for the requested strata");

        // train half: [0, train_n); validation is its tail
        for (std::size_t k = 0; k < member_n; ++k) plan.member_ids.push_back(ids[k]);
        for (std::size_t k = member_n; k < train_n; ++k) plan.validation_ids.push_back(ids[k]);
        for (std::size_t k = train_n; k < n; ++k) plan.nonmember_ids.push_back(ids[k]);

        // attack strata: disjoint prefixes of the member / held-out lists
        for (std::size_t k = 0; k < val_quota[c]; ++k) plan.attack_val_members.push_back(ids[k]);
        for (std::size_t k = val_quota[c]; k < val_quota[c] + test_quota[c]; ++k)
            plan.attack_test_members.push_back(ids[k]);
        for (std::size_t k = 0; k < val_quota[c]; ++k) plan.attack_val_nonmembers.push_back(ids[train_n + k]);
        for (std::size_t k = val_quota[c]; k < val_quota[c] + test_quota[c]; ++k)
            plan.attack_test_nonmembers.push_back(ids[train_n + k]);
    }
    return plan;
}

}  // namespace mialab
