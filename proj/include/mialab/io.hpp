#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "mialab/evaluation.hpp"
#include "mialab/train.hpp"

namespace mialab {

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// ---- MIAM model checkpoint --------------------------------------------------
// little-endian: magic "MIAM", version u32=1, input ndim u32 + dims,
// classes u32, layer count u32, then per layer: id (u32 length + bytes),
// kind tag u32, extent count u32 + extents u32*, then all parameters as f64
// in declaration order.

namespace detail {

enum : std::uint32_t {
    kTagDense = 1,
    kTagConv2d = 2,
    kTagReLU = 3,
    kTagFlatten = 4,
    kTagMeanPool2d = 5,
    kTagLayerNorm = 6,
};

inline std::pair<std::uint32_t, std::vector<std::uint32_t>> encode_kind(const LayerKind& kind) {
    if (const auto* d = std::get_if<Dense>(&kind))
        return {kTagDense, {static_cast<std::uint32_t>(d->in), static_cast<std::uint32_t>(d->out)}};
    if (const auto* c = std::get_if<Conv2d>(&kind))
        return {kTagConv2d,
                {static_cast<std::uint32_t>(c->in_ch), static_cast<std::uint32_t>(c->out_ch),
                 static_cast<std::uint32_t>(c->kernel), static_cast<std::uint32_t>(c->stride),
                 static_cast<std::uint32_t>(c->pad)}};
    if (std::holds_alternative<ReLU>(kind)) return {kTagReLU, {}};
    if (std::holds_alternative<Flatten>(kind)) return {kTagFlatten, {}};
    if (const auto* p = std::get_if<MeanPool2d>(&kind)) return {kTagMeanPool2d, {static_cast<std::uint32_t>(p->k)}};
    const auto& ln = std::get<LayerNorm>(kind);
    return {kTagLayerNorm, {static_cast<std::uint32_t>(ln.dim)}};
}

inline LayerKind decode_kind(std::uint32_t tag, const std::vector<std::uint32_t>& ext) {
    auto need = [&](std::size_t n) {
        if (ext.size() != n) throw std::runtime_error("MIAM: wrong extent count for layer tag " + std::to_string(tag));
    };
    switch (tag) {
        case kTagDense: need(2); return Dense{ext[0], ext[1]};
        case kTagConv2d: need(5); return Conv2d{ext[0], ext[1], ext[2], ext[3], ext[4]};
        case kTagReLU: need(0); return ReLU{};
        case kTagFlatten: need(0); return Flatten{};
        case kTagMeanPool2d: need(1); return MeanPool2d{ext[0]};
        case kTagLayerNorm: need(1); return LayerNorm{ext[0]};
        default: throw std::runtime_error("MIAM: unknown layer tag " + std::to_string(tag));
    }
}

}  // namespace detail

inline void save_model(const Model& m, const std::string& path) {
    std::ostringstream os(std::ios::binary);
    os.write("MIAM", 4);
    detail::write_le<std::uint32_t>(os, 1);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.spec.input_shape.size()));
    for (std::size_t d : m.spec.input_shape) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.spec.classes));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.spec.layers.size()));
    for (const auto& [id, kind] : m.spec.layers) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(id.size()));
        os.write(id.data(), static_cast<std::streamsize>(id.size()));
        auto [tag, ext] = detail::encode_kind(kind);
        detail::write_le<std::uint32_t>(os, tag);
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ext.size()));
        for (std::uint32_t e : ext) detail::write_le<std::uint32_t>(os, e);
    }
    for (const auto& lp : m.params.layers)
        for (const Tensor& t : lp)
            for (double v : t.data) detail::write_le<double>(os, v);
    atomic_write(path, os.str());
}

inline Model load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MIAM", 4) != 0)
        throw std::runtime_error("'" + path + "' is not a MIAM checkpoint (bad magic)");
    std::uint32_t version = detail::read_le<std::uint32_t>(is, "version");
    if (version != 1) throw std::runtime_error("unsupported MIAM version " + std::to_string(version));

    Model m;
    std::uint32_t ndim = detail::read_le<std::uint32_t>(is, "input ndim");
    for (std::uint32_t i = 0; i < ndim; ++i)
        m.spec.input_shape.push_back(detail::read_le<std::uint32_t>(is, "input dims"));
    m.spec.classes = detail::read_le<std::uint32_t>(is, "classes");
    std::uint32_t n_layers = detail::read_le<std::uint32_t>(is, "layer count");
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        std::uint32_t id_len = detail::read_le<std::uint32_t>(is, "layer id length");
        if (id_len > 256) throw std::runtime_error("MIAM: implausible layer id length");
        std::string id(id_len, '\0');
        is.read(id.data(), id_len);
        if (!is) throw std::runtime_error("MIAM checkpoint truncated reading layer id");
        std::uint32_t tag = detail::read_le<std::uint32_t>(is, "layer tag");
        std::uint32_t n_ext = detail::read_le<std::uint32_t>(is, "extent count");
        if (n_ext > 16) throw std::runtime_error("MIAM: implausible extent count");
        std::vector<std::uint32_t> ext(n_ext);
        for (auto& e : ext) e = detail::read_le<std::uint32_t>(is, "extents");
        m.spec.layers.emplace_back(std::move(id), detail::decode_kind(tag, ext));
    }
    m.spec.validate();
    for (const auto& [id, kind] : m.spec.layers) {
        LayerParams lp = layer_zero_params(kind);
        for (Tensor& t : lp)
            for (double& v : t.data) v = detail::read_le<double>(is, "parameters");
        m.params.layers.push_back(std::move(lp));
    }
    is.peek();
    if (!is.eof()) throw std::runtime_error("'" + path + "': trailing bytes after MIAM payload");
    return m;
}

// ---- CSV formats ------------------------------------------------------------

inline std::string history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,train_acc,val_acc\n";
    for (const EpochStats& e : history)
        os << e.epoch << ',' << detail::fmt_double(e.lr) << ',' << detail::fmt_double(e.train_loss) << ','
           << detail::fmt_double(e.train_acc) << ',' << detail::fmt_double(e.val_acc) << '\n';
    return os.str();
}

inline void save_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    atomic_write(path, history_csv(history));
}

// one row per (sample, detector, boosted); the optional leading comment line
// carries the master seed for downstream reports
inline std::string score_table_csv(const ScoreTable& table, std::uint64_t seed) {
    std::ostringstream os;
    os << "# seed=" << seed << '\n';
    os << "sample_id,is_member,detector,boosted,score\n";
    for (const ScoreRow& row : table) {
        if (!std::isfinite(row.score))
            throw std::invalid_argument("score_table_csv: non-finite score for sample " +
                                        std::to_string(row.sample_id));
        os << row.sample_id << ',' << (row.is_member ? 1 : 0) << ',' << row.detector << ','
           << (row.boosted ? 1 : 0) << ',' << detail::fmt_double(row.score) << '\n';
    }
    return os.str();
}

inline void save_score_table_csv(const ScoreTable& table, std::uint64_t seed, const std::string& path) {
    atomic_write(path, score_table_csv(table, seed));
}

struct LoadedScores {
    ScoreTable table;
    std::uint64_t seed = 0;
};

inline LoadedScores load_score_table_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    LoadedScores out;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::set<std::string> seen_keys;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto pos = line.find("seed=");
            if (pos != std::string::npos) out.seed = std::strtoull(line.c_str() + pos + 5, nullptr, 10);
            continue;
        }
        if (!header_seen) {
            if (line != "sample_id,is_member,detector,boosted,score")
                throw std::runtime_error(path + ": row " + std::to_string(lineno) + ": bad header '" + line + "'");
            header_seen = true;
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 5)
            throw std::runtime_error(path + ": row " + std::to_string(lineno) + ": expected 5 columns, got " +
                                     std::to_string(cells.size()));
        try {
            ScoreRow row;
            row.sample_id = std::stoull(cells[0]);
            row.is_member = std::stoi(cells[1]) != 0;
            row.detector = cells[2];
            row.boosted = std::stoi(cells[3]) != 0;
            row.score = std::stod(cells[4]);
            if (!std::isfinite(row.score)) throw std::invalid_argument("non-finite score");
            std::string key = cells[2] + "/" + cells[3] + "/" + cells[0];
            if (!seen_keys.insert(key).second)
                throw std::invalid_argument("duplicate sample id " + cells[0] + " for detector " + cells[2]);
            out.table.push_back(std::move(row));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": row " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!header_seen) throw std::runtime_error(path + ": missing score table header");
    return out;
}

struct ReportRow {
    std::string detector;
    bool boosted;
    MetricsReport report;
    std::uint64_t seed;
};

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << "detector,boosted,auc,tpr_at_1pct,tpr_at_0p1pct,pauc_at_1pct,n_members,n_nonmembers,seed\n";
    for (const ReportRow& r : rows)
        os << r.detector << ',' << (r.boosted ? 1 : 0) << ',' << detail::fmt_double(r.report.auc) << ','
           << detail::fmt_double(r.report.tpr_at_1pct) << ',' << detail::fmt_double(r.report.tpr_at_0p1pct)
           << ',' << detail::fmt_double(r.report.pauc_at_1pct) << ',' << r.report.n_members << ','
           << r.report.n_nonmembers << ',' << r.seed << '\n';
    return os.str();
}

}  // namespace mialab
