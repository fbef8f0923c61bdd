#pragma once

#include "mialab/detectors.hpp"

namespace mialab {

struct RocPoint {
    double fpr, tpr, threshold;
};

// Threshold sweep over distinct score values (descending; ties share one
// threshold), closed at (0,0) and (1,1). The integer cumulative counts per
// point are kept so area computations stay exact.
struct RocCurve {
    std::vector<RocPoint> points;
    std::vector<std::size_t> cum_members;     // members with score >= threshold, per point
    std::vector<std::size_t> cum_nonmembers;  // non-members with score >= threshold, per point
    std::size_t n_members = 0, n_nonmembers = 0;
};

inline std::vector<std::pair<double, bool>> slice_scores(const ScoreTable& table,
                                                         const std::string& detector, bool boosted) {
    std::vector<std::pair<double, bool>> out;
    for (const ScoreRow& row : table)
        if (row.detector == detector && row.boosted == boosted) out.emplace_back(row.score, row.is_member);
    return out;
}

inline RocCurve roc_curve(const std::vector<std::pair<double, bool>>& scored) {
    RocCurve curve;
    for (const auto& [score, member] : scored) {
        if (!std::isfinite(score)) throw std::invalid_argument("roc_curve: non-finite score");
        (member ? curve.n_members : curve.n_nonmembers) += 1;
    }
    if (curve.n_members == 0 || curve.n_nonmembers == 0)
        throw std::invalid_argument("roc_curve: need at least one member and one non-member");

    std::vector<std::pair<double, bool>> sorted = scored;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    curve.cum_members.push_back(0);
    curve.cum_nonmembers.push_back(0);

    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        double threshold = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == threshold) {
            (sorted[i].second ? tp : fp) += 1;
            ++i;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(curve.n_nonmembers),
                                static_cast<double>(tp) / static_cast<double>(curve.n_members), threshold});
        curve.cum_members.push_back(tp);
        curve.cum_nonmembers.push_back(fp);
    }
    return curve;
}

inline RocCurve roc_curve(const ScoreTable& table, const std::string& detector, bool boosted) {
    return roc_curve(slice_scores(table, detector, boosted));
}

struct MetricsReport {
    double auc = 0.0;
    double tpr_at_1pct = 0.0;
    double tpr_at_0p1pct = 0.0;
    double pauc_at_1pct = 0.0;  // unnormalized area over FPR in [0, 0.01]
    std::size_t n_members = 0, n_nonmembers = 0;
};

// Trapezoid AUC over the full curve, computed from the integer tie-group
// counts; identical to the tie-aware pairwise probability P(member score >
// non-member score) + P(equal)/2, including bit-for-bit.
inline double roc_auc(const RocCurve& curve) {
    unsigned long long twice_area = 0;  // 2 * area * n_members * n_nonmembers
    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
        unsigned long long f = curve.cum_nonmembers[i + 1] - curve.cum_nonmembers[i];
        unsigned long long mem = curve.cum_members[i + 1] - curve.cum_members[i];
        twice_area += f * (2ull * curve.cum_members[i] + mem);
    }
    return static_cast<double>(twice_area) /
           (2.0 * static_cast<double>(curve.n_members) * static_cast<double>(curve.n_nonmembers));
}

// Largest achievable TPR at FPR <= c, linearly interpolated toward the next
// operating point when c falls inside a segment.
inline double tpr_at_fpr(const RocCurve& curve, double c) {
    if (c < 0.0 || c > 1.0) throw std::invalid_argument("tpr_at_fpr: c must be in [0,1]");
    std::size_t last_le = 0;
    for (std::size_t i = 0; i < curve.points.size(); ++i)
        if (curve.points[i].fpr <= c) last_le = i;
    double tpr = curve.points[last_le].tpr;
    if (last_le + 1 < curve.points.size() && curve.points[last_le].fpr < c) {
        const RocPoint& a = curve.points[last_le];
        const RocPoint& b = curve.points[last_le + 1];
        tpr = a.tpr + (b.tpr - a.tpr) * (c - a.fpr) / (b.fpr - a.fpr);
    }
    return tpr;
}

// Unnormalized area under the curve over FPR in [0, c]. Full segments are
// accumulated in exact integer arithmetic (so pauc_at(1.0) == roc_auc
// bitwise); only a segment cut by c contributes a real-valued sliver.
inline double pauc_at_fpr(const RocCurve& curve, double c) {
    if (c < 0.0 || c > 1.0) throw std::invalid_argument("pauc_at_fpr: c must be in [0,1]");
    double n0 = static_cast<double>(curve.n_nonmembers);
    double n1 = static_cast<double>(curve.n_members);
    unsigned long long twice_area = 0;
    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
        bool segment_inside = static_cast<double>(curve.cum_nonmembers[i + 1]) <= c * n0;
        if (segment_inside) {
            unsigned long long f = curve.cum_nonmembers[i + 1] - curve.cum_nonmembers[i];
            unsigned long long mem = curve.cum_members[i + 1] - curve.cum_members[i];
            twice_area += f * (2ull * curve.cum_members[i] + mem);
        } else {
            const RocPoint& a = curve.points[i];
            const RocPoint& b = curve.points[i + 1];
            if (a.fpr < c) {
                double yc = a.tpr + (b.tpr - a.tpr) * (c - a.fpr) / (b.fpr - a.fpr);
                partial = (c - a.fpr) * (a.tpr + yc) * 0.5;
            }
            break;
        }
    }
    return static_cast<double>(twice_area) / (2.0 * n0 * n1) + partial;
}

inline MetricsReport metrics(const RocCurve& curve) {
    MetricsReport report;
    report.auc = roc_auc(curve);
    report.tpr_at_1pct = tpr_at_fpr(curve, 0.01);
    report.tpr_at_0p1pct = tpr_at_fpr(curve, 0.001);
    report.pauc_at_1pct = pauc_at_fpr(curve, 0.01);
    report.n_members = curve.n_members;
    report.n_nonmembers = curve.n_nonmembers;
    return report;
}

// ---- hyperparameter selection ----------------------------------------------

// Score table provably restricted to the attack-validation split: the only
// constructor checks every row id against the plan and rejects anything
// else, so tune_select cannot read attack-test rows by construction.
class ValidationScores {
public:
    static ValidationScores from_attack_validation(ScoreTable rows, const SplitPlan& plan) {
        std::set<std::size_t> val_members(plan.attack_val_members.begin(), plan.attack_val_members.end());
        std::set<std::size_t> val_nonmembers(plan.attack_val_nonmembers.begin(),
                                             plan.attack_val_nonmembers.end());
        for (const ScoreRow& row : rows) {
            bool is_val_member = val_members.count(row.sample_id) > 0;
            bool is_val_nonmember = val_nonmembers.count(row.sample_id) > 0;
            if (!is_val_member && !is_val_nonmember)
                throw std::invalid_argument("ValidationScores: sample " + std::to_string(row.sample_id) +
                                            " is not in the attack-validation split");
            if (row.is_member != is_val_member)
                throw std::invalid_argument("ValidationScores: membership bit mismatch for sample " +
                                            std::to_string(row.sample_id));
        }
        return ValidationScores(std::move(rows));
    }

    const ScoreTable& rows() const { return rows_; }

private:
    explicit ValidationScores(ScoreTable rows) : rows_(std::move(rows)) {}
    ScoreTable rows_;
};

struct TuneCandidate {
    InterrogationConfig config;
    ValidationScores scores;
};

// argmax pAUC@1%FPR over the candidates, deterministic tie-break by fewer
// steps, then lower lr, then clipping enabled first, then group order
// Early < Mid < Late < All.
inline InterrogationConfig tune_select(const std::vector<TuneCandidate>& candidates,
                                       const std::string& detector, bool boosted = true) {
    if (candidates.empty()) throw std::invalid_argument("tune_select: no candidate configs");
    auto rank = [](const InterrogationConfig& c) {
        return std::make_tuple(c.steps, c.lr, c.clip ? 0 : 1, static_cast<int>(c.group));
    };
    std::size_t best = 0;
    double best_pauc = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double pauc = pauc_at_fpr(roc_curve(candidates[i].scores.rows(), detector, boosted), 0.01);
        if (pauc > best_pauc ||
            (pauc == best_pauc && rank(candidates[i].config) < rank(candidates[best].config))) {
            best_pauc = pauc;
            best = i;
        }
    }
    return candidates[best].config;
}

}  // namespace mialab
