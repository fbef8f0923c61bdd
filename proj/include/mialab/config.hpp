#pragma once

#include "mialab/detectors.hpp"
#include "mialab/train.hpp"

namespace mialab {

// Config files are UTF-8 text, one `section.key = value` per line, `#`
// comments, blank lines ignored. Parse errors carry the line number.
class ConfigText {
public:
    static ConfigText parse(const std::string& text, const std::string& origin = "<config>") {
        ConfigText cfg;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string_view sv = trim(line);
            if (sv.empty() || sv[0] == '#') continue;
            std::size_t eq = sv.find('=');
            if (eq == std::string_view::npos)
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            std::string key(trim(sv.substr(0, eq)));
            std::string value(trim(sv.substr(eq + 1)));
            if (key.empty() || key.find('.') == std::string::npos)
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": key must be 'section.name'");
            if (!cfg.values_.emplace(key, value).second)
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.lines_[key] = lineno;
        }
        cfg.origin_ = origin;
        return cfg;
    }

    static ConfigText parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open config '" + path + "'");
        std::ostringstream buf;
        buf << is.rdbuf();
        return parse(buf.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument(where(key) + ": '" + it->second + "' is not a number");
        }
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            long long v = std::stoll(it->second, &used);
            if (used != it->second.size() || v < 0) throw std::invalid_argument("bad");
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw std::invalid_argument(where(key) + ": '" + it->second + "' is not a non-negative integer");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            unsigned long long v = std::stoull(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("bad");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument(where(key) + ": '" + it->second + "' is not an unsigned integer");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::invalid_argument(where(key) + ": '" + it->second + "' is not a bool (true/false)");
    }

    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<std::string> out;
        std::string_view sv = it->second;
        std::size_t start = 0;
        while (start <= sv.size()) {
            std::size_t comma = sv.find(',', start);
            std::string item(trim(sv.substr(start, comma - start)));
            if (!item.empty()) out.push_back(std::move(item));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return out;
    }

private:
    static std::string_view trim(std::string_view sv) {
        while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t' || sv.front() == '\r')) sv.remove_prefix(1);
        while (!sv.empty() && (sv.back() == ' ' || sv.back() == '\t' || sv.back() == '\r')) sv.remove_suffix(1);
        return sv;
    }

    std::string where(const std::string& key) const {
        auto it = lines_.find(key);
        return origin_ + ":" + (it == lines_.end() ? "?" : std::to_string(it->second));
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, std::size_t> lines_;
    std::string origin_;
};

// ---- RunConfig ------------------------------------------------------------

struct SynthParams {
    std::size_t classes = 4;
    std::size_t per_class = 500;
    std::vector<std::size_t> shape = {3, 8, 8};
    double spread = 10.0;
};

struct SweepGrid {
    std::vector<std::size_t> steps = {80, 120, 200};
    std::vector<double> lrs = {0.05, 0.1, 0.2};
    std::vector<bool> clips = {true, false};
    std::vector<GroupName> groups = {GroupName::Early, GroupName::Mid, GroupName::Late, GroupName::All};
    std::string detector = "glir";
};

struct RunConfig {
    std::string data_source = "synth";  // synth | file
    std::string data_file;
    SynthParams synth;

    Arch arch = Arch::TinyCNN;
    std::size_t hidden = 0;  // 0 = architecture default

    TrainConfig train;
    SplitConfig split;

    InterrogationConfig interrogate;
    SweepGrid sweep;

    std::vector<std::string> detectors = {"loss", "glir", "laeq", "sif", "ia"};
    GlirSpec glir;
    LaeqSpec laeq;
    SifSpec sif;
    IaSpec ia;

    double defense_sigma = 0.0;
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0 = hardware concurrency

    static RunConfig from_text(const ConfigText& cfg) {
        RunConfig rc;
        rc.data_source = cfg.get_string("data.source", rc.data_source);
        if (rc.data_source != "synth" && rc.data_source != "file")
            throw std::invalid_argument("data.source must be 'synth' or 'file'");
        rc.data_file = cfg.get_string("data.file", rc.data_file);
        if (rc.data_source == "file" && rc.data_file.empty())
            throw std::invalid_argument("data.source = file requires data.file");
        rc.synth.classes = cfg.get_size("data.classes", rc.synth.classes);
        rc.synth.per_class = cfg.get_size("data.per_class", rc.synth.per_class);
        rc.synth.spread = cfg.get_double("data.spread", rc.synth.spread);
        if (cfg.has("data.shape")) {
            rc.synth.shape.clear();
            for (const std::string& dim : cfg.get_list("data.shape", {}))
                rc.synth.shape.push_back(std::stoull(dim));
        }

        rc.arch = arch_from_string(cfg.get_string("model.arch", arch_to_string(rc.arch)));
        rc.hidden = cfg.get_size("model.hidden", rc.hidden);

        rc.train.lr = cfg.get_double("train.lr", 0.03);
        if (!(rc.train.lr > 0.0)) throw std::invalid_argument("train.lr must be positive");
        rc.train.momentum = cfg.get_double("train.momentum", 0.9);
        rc.train.weight_decay = cfg.get_double("train.weight_decay", 0.0);
        rc.train.batch = cfg.get_size("train.batch", 32);
        rc.train.max_epochs = cfg.get_size("train.epochs", 40);
        rc.train.warmup_epochs = cfg.get_size("train.warmup", 5);
        rc.train.patience = cfg.get_size("train.patience", rc.train.max_epochs);
        rc.train.flip_augment = cfg.get_bool("train.flip", false);
        rc.train.validate();

        rc.split.val_fraction = cfg.get_double("split.val_fraction", 0.05);
        rc.split.attack_val_per_side = cfg.get_size("split.attack_val", 200);
        rc.split.attack_test_per_side = cfg.get_size("split.attack_test", 500);

        rc.interrogate.group = group_from_string(cfg.get_string("interrogate.group", "late"));
        rc.interrogate.steps = cfg.get_size("interrogate.steps", 80);
        rc.interrogate.lr = cfg.get_double("interrogate.lr", 0.05);
        rc.interrogate.clip = cfg.get_bool("interrogate.clip", true);
        rc.interrogate.validate();

        if (cfg.has("sweep.steps")) {
            rc.sweep.steps.clear();
            for (const std::string& s : cfg.get_list("sweep.steps", {})) rc.sweep.steps.push_back(std::stoull(s));
        }
        if (cfg.has("sweep.lrs")) {
            rc.sweep.lrs.clear();
            for (const std::string& s : cfg.get_list("sweep.lrs", {})) rc.sweep.lrs.push_back(std::stod(s));
        }
        if (cfg.has("sweep.clips")) {
            rc.sweep.clips.clear();
            for (const std::string& s : cfg.get_list("sweep.clips", {})) {
                if (s != "true" && s != "false") throw std::invalid_argument("sweep.clips entries must be true/false");
                rc.sweep.clips.push_back(s == "true");
            }
        }
        if (cfg.has("sweep.groups")) {
            rc.sweep.groups.clear();
            for (const std::string& s : cfg.get_list("sweep.groups", {}))
                rc.sweep.groups.push_back(group_from_string(s));
        }
        rc.sweep.detector = cfg.get_string("sweep.detector", rc.sweep.detector);

        rc.detectors = cfg.get_list("detector.list", rc.detectors);
        rc.glir.d_sub = cfg.get_size("glir.d_sub", 5000);
        rc.glir.tau = cfg.get_double("glir.tau", -1.0);
        std::string mode = cfg.get_string("glir.mode", "closed_form");
        if (mode == "closed_form")
            rc.glir.mode = GlirScoreMode::ClosedForm;
        else if (mode == "chi2_normal")
            rc.glir.mode = GlirScoreMode::Chi2Normal;
        else
            throw std::invalid_argument("glir.mode must be closed_form or chi2_normal");
        rc.laeq.step = cfg.get_double("laeq.step", 0.5);
        rc.laeq.budget = cfg.get_size("laeq.budget", 25);
        rc.laeq.validate();
        rc.sif.damping = cfg.get_double("sif.damping", 0.01);
        rc.sif.d_sub = cfg.get_size("sif.d_sub", 256);
        rc.sif.hessian_batch = cfg.get_size("sif.hessian_batch", 32);
        rc.ia.hidden = cfg.get_size("ia.hidden", 32);

        rc.defense_sigma = cfg.get_double("defense.sigma", 0.0);
        if (rc.defense_sigma < 0.0) throw std::invalid_argument("defense.sigma must be >= 0");
        rc.seed = cfg.get_u64("run.seed", 1);
        rc.threads = cfg.get_size("run.threads", 0);
        return rc;
    }

    static RunConfig from_file(const std::string& path) { return from_text(ConfigText::parse_file(path)); }

    // Render back to config text (used by `sweep` to echo the chosen config).
    std::string render() const {
        std::ostringstream os;
        os << "data.source = " << data_source << "\n";
        if (!data_file.empty()) os << "data.file = " << data_file << "\n";
        os << "data.classes = " << synth.classes << "\n";
        os << "data.per_class = " << synth.per_class << "\n";
        os << "data.shape = ";
        for (std::size_t i = 0; i < synth.shape.size(); ++i) os << (i ? "," : "") << synth.shape[i];
        os << "\n";
        os << "data.spread = " << synth.spread << "\n";
        os << "model.arch = " << arch_to_string(arch) << "\n";
        if (hidden) os << "model.hidden = " << hidden << "\n";
        os << "train.lr = " << train.lr << "\n";
        os << "train.momentum = " << train.momentum << "\n";
        os << "train.weight_decay = " << train.weight_decay << "\n";
        os << "train.batch = " << train.batch << "\n";
        os << "train.epochs = " << train.max_epochs << "\n";
        os << "train.warmup = " << train.warmup_epochs << "\n";
        os << "train.patience = " << train.patience << "\n";
        os << "train.flip = " << (train.flip_augment ? "true" : "false") << "\n";
        os << "split.val_fraction = " << split.val_fraction << "\n";
        os << "split.attack_val = " << split.attack_val_per_side << "\n";
        os << "split.attack_test = " << split.attack_test_per_side << "\n";
        os << "interrogate.group = " << group_to_string(interrogate.group) << "\n";
        os << "interrogate.steps = " << interrogate.steps << "\n";
        os << "interrogate.lr = " << interrogate.lr << "\n";
        os << "interrogate.clip = " << (interrogate.clip ? "true" : "false") << "\n";
        os << "detector.list = ";
        for (std::size_t i = 0; i < detectors.size(); ++i) os << (i ? "," : "") << detectors[i];
        os << "\n";
        os << "glir.d_sub = " << glir.d_sub << "\n";
        os << "glir.tau = " << glir.tau << "\n";
        os << "laeq.step = " << laeq.step << "\n";
        os << "laeq.budget = " << laeq.budget << "\n";
        os << "sif.damping = " << sif.damping << "\n";
        os << "sif.d_sub = " << sif.d_sub << "\n";
        os << "sif.hessian_batch = " << sif.hessian_batch << "\n";
        os << "ia.hidden = " << ia.hidden << "\n";
        os << "defense.sigma = " << defense_sigma << "\n";
        os << "run.seed = " << seed << "\n";
        os << "run.threads = " << threads << "\n";
        return os.str();
    }
};

}  // namespace mialab
