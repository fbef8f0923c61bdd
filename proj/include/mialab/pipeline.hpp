#pragma once

#include <atomic>
#include <thread>

#include "mialab/config.hpp"
#include "mialab/evaluation.hpp"
#include "mialab/io.hpp"

namespace mialab {

namespace detail {

// Deterministic parallel map: each index writes only its own slot, so the
// thread count never changes the result.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---- experiment assembly ----------------------------------------------------

struct Experiment {
    Dataset ds;
    SplitPlan split;
    Model target;
    TrainResult target_history;
};

inline Dataset load_or_synth_data(const RunConfig& rc) {
    if (rc.data_source == "file") return load_dataset(rc.data_file);
    return synth_blobs(rc.synth.classes, rc.synth.per_class, rc.synth.shape, rc.synth.spread,
                       derive_seed(rc.seed, "data"));
}

inline Experiment prepare_experiment(const RunConfig& rc) {
    Experiment ex;
    ex.ds = load_or_synth_data(rc);
    SplitConfig scfg = rc.split;
    scfg.seed = derive_seed(rc.seed, "split");
    ex.split = stratified_split(ex.ds, scfg);
    ex.target = build_model(rc.arch, ex.ds.example_shape, ex.ds.classes,
                            derive_seed(rc.seed, "model-init"), rc.hidden);
    TrainConfig tcfg = rc.train;
    tcfg.seed = derive_seed(rc.seed, "train");
    ex.target_history = train(ex.target, ex.ds, ex.split, tcfg);
    return ex;
}

// Shadow models for the IA detector: same architecture and recipe as the
// target, each over its own stratified split of the dataset (training halves
// may partially overlap across shadows, as in the repeated-split protocol).
struct ShadowSet {
    std::vector<Model> models;
    std::vector<SplitPlan> plans;
};

inline ShadowSet train_shadows(const Dataset& ds, const RunConfig& rc, std::size_t count = 5) {
    ShadowSet set;
    set.models.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        SplitConfig scfg = rc.split;
        scfg.seed = derive_seed(rc.seed, "shadow-split", s);
        set.plans.push_back(stratified_split(ds, scfg));
        set.models.push_back(build_model(rc.arch, ds.example_shape, ds.classes,
                                         derive_seed(rc.seed, "shadow-init", s), rc.hidden));
    }
    detail::parallel_for(count, rc.threads, [&](std::size_t s) {
        TrainConfig tcfg = rc.train;
        tcfg.seed = derive_seed(rc.seed, "shadow-train", s);
        train(set.models[s], ds, set.plans[s], tcfg);
    });
    return set;
}

// ---- attack pipeline ---------------------------------------------------------

// Interrogation images for a set of sample ids, cached so every detector
// scores the same boosted input (interrogation never reads the label, so the
// image is shared across detectors).
inline std::map<std::size_t, Tensor> interrogate_ids(const Model& m, const Dataset& ds,
                                                     const std::vector<std::size_t>& ids,
                                                     const RunConfig& rc, const Obfuscation* defense) {
    std::vector<Tensor> images(ids.size());
    detail::parallel_for(ids.size(), rc.threads, [&](std::size_t k) {
        InterrogationConfig icfg = rc.interrogate;
        icfg.init_seed = derive_seed(rc.seed, "interrogate", ids[k]);
        images[k] = interrogate(m, ds.xs[ids[k]], icfg, ds.bounds, defense);
    });
    std::map<std::size_t, Tensor> out;
    for (std::size_t k = 0; k < ids.size(); ++k) out.emplace(ids[k], std::move(images[k]));
    return out;
}

struct FittedDetectors {
    // natural[i] scores raw queries; boosted[i] scores interrogation images.
    // They share the algorithm; GLiR is calibrated per input mode.
    std::vector<std::shared_ptr<const Detector>> natural, boosted;
};

inline FittedDetectors fit_detectors(const Model& target, const Dataset& ds, const SplitPlan& split,
                                     const RunConfig& rc, const std::map<std::size_t, Tensor>& boosted_val,
                                     const Obfuscation* defense) {
    FittedDetectors out;
    auto add_both = [&](std::shared_ptr<const Detector> d) {
        out.natural.push_back(d);
        out.boosted.push_back(std::move(d));
    };

    for (const std::string& name : rc.detectors) {
        if (name == "loss") {
            add_both(std::make_shared<LossDetector>());
        } else if (name == "laeq") {
            add_both(std::make_shared<LaeqDetector>(rc.laeq));
        } else if (name == "sif") {
            SifSpec spec = rc.sif;
            spec.seed = derive_seed(rc.seed, "sif");
            add_both(std::make_shared<SifDetector>(sif_fit(target, ds, split.member_ids, spec)));
        } else if (name == "glir") {
            GlirSpec spec = rc.glir;
            spec.seed = derive_seed(rc.seed, "glir");
            GlirModel natural =
                glir_fit(target, ds, split.attack_val_members, split.attack_val_nonmembers, spec);
            out.natural.push_back(std::make_shared<GlirDetector>(natural));

            // boosted calibration: same subsample indices, features computed
            // on the interrogation images of the attack-validation samples
            auto boosted_feats = [&](const std::vector<std::size_t>& ids) {
                std::vector<std::vector<double>> feats;
                for (std::size_t id : ids)
                    feats.push_back(grad_feature(target, boosted_val.at(id), ds.ys[id], natural.indices));
                return feats;
            };
            GlirModel boosted = glir_fit_features(boosted_feats(split.attack_val_members),
                                                  boosted_feats(split.attack_val_nonmembers),
                                                  natural.indices, spec.tau, spec.mode);
            out.boosted.push_back(std::make_shared<GlirDetector>(boosted));
        } else if (name == "ia") {
            ShadowSet shadows = train_shadows(ds, rc);
            IaSpec spec = rc.ia;
            spec.seed = derive_seed(rc.seed, "ia-meta");
            IaMeta meta = ia_fit(target.spec, shadows.models, shadows.plans, ds, spec);
            Obfuscation def = defense ? *defense : Obfuscation{};
            add_both(std::make_shared<IaDetector>(std::move(meta), def));
        } else {
            throw std::invalid_argument("unknown detector '" + name + "'");
        }
    }
    return out;
}

// Score the attack-test split with every configured detector, natural and
// boosted. One row per (sample, detector, boosted).
inline ScoreTable run_attack(const Model& target, const Dataset& ds, const SplitPlan& split,
                             const RunConfig& rc) {
    Obfuscation defense{rc.defense_sigma, derive_seed(rc.seed, "defense")};
    const Obfuscation* def = defense.enabled() ? &defense : nullptr;

    std::vector<std::size_t> val_ids = split.attack_val_ids();
    std::vector<std::size_t> test_ids = split.attack_test_ids();
    std::map<std::size_t, Tensor> boosted_val = interrogate_ids(target, ds, val_ids, rc, def);
    std::map<std::size_t, Tensor> boosted_test = interrogate_ids(target, ds, test_ids, rc, def);

    FittedDetectors dets = fit_detectors(target, ds, split, rc, boosted_val, def);

    std::set<std::size_t> member_set(split.attack_test_members.begin(), split.attack_test_members.end());
    ScoreTable table(test_ids.size() * dets.natural.size() * 2);
    detail::parallel_for(test_ids.size(), rc.threads, [&](std::size_t k) {
        std::size_t id = test_ids[k];
        bool is_member = member_set.count(id) > 0;
        const Tensor& xg = boosted_test.at(id);
        for (std::size_t di = 0; di < dets.natural.size(); ++di) {
            std::size_t base = (k * dets.natural.size() + di) * 2;
            table[base] = {id, is_member, dets.natural[di]->name(), false,
                           dets.natural[di]->score(target, ds.xs[id], ds.ys[id])};
            table[base + 1] = {id, is_member, dets.boosted[di]->name(), true,
                               dets.boosted[di]->score(target, xg, ds.ys[id])};
        }
    });
    return table;
}

// ---- sweep ------------------------------------------------------------------

struct SweepResult {
    struct Row {
        InterrogationConfig config;
        MetricsReport report;
    };
    std::vector<Row> rows;
    InterrogationConfig chosen;
};

// Evaluate the interrogation grid on the attack-validation split with one
// detector (boosted mode), then select by pAUC@1%FPR. Attack-test ids are
// never touched: scores are built from attack-validation samples only and
// wrapped in ValidationScores before selection.
inline SweepResult run_sweep(const Model& target, const Dataset& ds, const SplitPlan& split,
                             const RunConfig& rc) {
    std::vector<InterrogationConfig> grid;
    for (std::size_t steps : rc.sweep.steps)
        for (double lr : rc.sweep.lrs)
            for (bool clip : rc.sweep.clips)
                for (GroupName group : rc.sweep.groups) {
                    InterrogationConfig icfg;
                    icfg.steps = steps;
                    icfg.lr = lr;
                    icfg.clip = clip;
                    icfg.group = group;
                    grid.push_back(icfg);
                }
    if (grid.empty()) throw std::invalid_argument("run_sweep: empty hyperparameter grid");

    Obfuscation defense{rc.defense_sigma, derive_seed(rc.seed, "defense")};
    const Obfuscation* def = defense.enabled() ? &defense : nullptr;
    std::vector<std::size_t> val_ids = split.attack_val_ids();
    std::set<std::size_t> member_set(split.attack_val_members.begin(), split.attack_val_members.end());

    std::vector<TuneCandidate> candidates;
    SweepResult result;
    for (const InterrogationConfig& icfg : grid) {
        RunConfig rc_cfg = rc;
        rc_cfg.interrogate = icfg;
        rc_cfg.detectors = {rc.sweep.detector};
        std::map<std::size_t, Tensor> boosted = interrogate_ids(target, ds, val_ids, rc_cfg, def);
        FittedDetectors dets = fit_detectors(target, ds, split, rc_cfg, boosted, def);

        ScoreTable rows(val_ids.size());
        detail::parallel_for(val_ids.size(), rc.threads, [&](std::size_t k) {
            std::size_t id = val_ids[k];
            rows[k] = {id, member_set.count(id) > 0, dets.boosted[0]->name(), true,
                       dets.boosted[0]->score(target, boosted.at(id), ds.ys[id])};
        });
        ValidationScores vs = ValidationScores::from_attack_validation(rows, split);
        result.rows.push_back({icfg, metrics(roc_curve(vs.rows(), rc.sweep.detector, true))});
        candidates.push_back({icfg, std::move(vs)});
    }
    result.chosen = tune_select(candidates, rc.sweep.detector);
    return result;
}

}  // namespace mialab
