// mialab: membership-inference lab runner.
//
// Subcommands: synth-data, train, attack, sweep, report. Every output is a
// deterministic function of the config file and its master seed.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "mialab/pipeline.hpp"
#include "mialab/svg.hpp"

namespace fs = std::filesystem;
using namespace mialab;

namespace {

int cmd_synth_data(const std::string& config_path, const std::string& out_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    Dataset ds = load_or_synth_data(rc);
    save_dataset(ds, out_path);
    std::cout << "wrote " << out_path << " (" << ds.size() << " examples, " << ds.classes << " classes, shape "
              << shape_str(ds.example_shape) << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    Experiment ex = prepare_experiment(rc);
    save_model(ex.target, out_path);
    fs::path history = fs::path(out_path);
    history.replace_extension(".history.csv");
    save_history_csv(ex.target_history.history, history.string());

    double train_acc = accuracy(ex.target, ex.ds, ex.split.member_ids);
    double test_acc = accuracy(ex.target, ex.ds, ex.split.nonmember_ids);
    std::cout << "wrote " << out_path << " and " << history.string() << "\n";
    std::cout << "train_acc=" << train_acc << " test_acc=" << test_acc << " gap=" << train_acc - test_acc
              << " epochs=" << ex.target_history.history.size() << "\n";
    return 0;
}

int cmd_attack(const std::string& model_path, const std::string& data_path, const std::string& config_path,
               const std::string& out_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    Model target = load_model(model_path);
    Dataset ds = load_dataset(data_path);
    SplitConfig scfg = rc.split;
    scfg.seed = derive_seed(rc.seed, "split");
    SplitPlan split = stratified_split(ds, scfg);
    ScoreTable table = run_attack(target, ds, split, rc);
    save_score_table_csv(table, rc.seed, out_path);
    std::cout << "wrote " << out_path << " (" << table.size() << " rows: " << split.attack_test_ids().size()
              << " samples x " << rc.detectors.size() << " detectors x {natural, boosted})\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir) {
    RunConfig rc = RunConfig::from_file(config_path);
    fs::create_directories(out_dir);
    Experiment ex = prepare_experiment(rc);
    SweepResult sweep = run_sweep(ex.target, ex.ds, ex.split, rc);

    std::ostringstream os;
    os << "group,steps,lr,clip,auc,tpr_at_1pct,tpr_at_0p1pct,pauc_at_1pct\n";
    for (const auto& row : sweep.rows) {
        char lr_buf[32], pauc_buf[32], auc_buf[32], t1_buf[32], t01_buf[32];
        std::snprintf(lr_buf, sizeof(lr_buf), "%.17g", row.config.lr);
        std::snprintf(auc_buf, sizeof(auc_buf), "%.17g", row.report.auc);
        std::snprintf(t1_buf, sizeof(t1_buf), "%.17g", row.report.tpr_at_1pct);
        std::snprintf(t01_buf, sizeof(t01_buf), "%.17g", row.report.tpr_at_0p1pct);
        std::snprintf(pauc_buf, sizeof(pauc_buf), "%.17g", row.report.pauc_at_1pct);
        os << group_to_string(row.config.group) << ',' << row.config.steps << ',' << lr_buf << ','
           << (row.config.clip ? 1 : 0) << ',' << auc_buf << ',' << t1_buf << ',' << t01_buf << ','
           << pauc_buf << '\n';
    }
    atomic_write((fs::path(out_dir) / "sweep_metrics.csv").string(), os.str());

    RunConfig chosen = rc;
    chosen.interrogate = sweep.chosen;
    atomic_write((fs::path(out_dir) / "chosen.cfg").string(), chosen.render());
    std::cout << "wrote " << out_dir << "/sweep_metrics.csv (" << sweep.rows.size() << " configs) and "
              << out_dir << "/chosen.cfg (group=" << group_to_string(sweep.chosen.group)
              << " steps=" << sweep.chosen.steps << " lr=" << sweep.chosen.lr
              << " clip=" << (sweep.chosen.clip ? "true" : "false") << ")\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& score_paths, const std::string& out_dir, bool log_fpr) {
    fs::create_directories(out_dir);
    std::vector<ReportRow> rows;
    std::vector<RocPlotSeries> series;
    for (const std::string& path : score_paths) {
        LoadedScores loaded = load_score_table_csv(path);
        // discover (detector, boosted) slices in first-appearance order
        std::vector<std::pair<std::string, bool>> slices;
        for (const ScoreRow& row : loaded.table) {
            std::pair<std::string, bool> key{row.detector, row.boosted};
            if (std::find(slices.begin(), slices.end(), key) == slices.end()) slices.push_back(key);
        }
        for (const auto& [det, boosted] : slices) {
            RocCurve curve = roc_curve(loaded.table, det, boosted);
            rows.push_back({det, boosted, metrics(curve), loaded.seed});
            series.push_back({det + (boosted ? "+boost" : ""), boosted, std::move(curve)});
        }
    }
    atomic_write((fs::path(out_dir) / "report.csv").string(), report_csv(rows));
    atomic_write((fs::path(out_dir) / "roc.svg").string(), roc_svg(series, log_fpr));
    std::cout << "wrote " << out_dir << "/report.csv (" << rows.size() << " rows) and " << out_dir
              << "/roc.svg\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"membership-inference lab: overfittable training, interrogation attack, detectors, metrics"};
    app.require_subcommand(1);

    std::string config_path, out_path, model_path, data_path;
    std::vector<std::string> score_paths;
    bool log_fpr = false;

    CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic blob dataset (MIAD file)");
    synth->add_option("--config", config_path, "run config file")->required();
    synth->add_option("--out", out_path, "output .miad path")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train the target model per config");
    train_cmd->add_option("--config", config_path, "run config file")->required();
    train_cmd->add_option("--out", out_path, "output checkpoint path (.bin); history CSV written beside it")
        ->required();

    CLI::App* attack = app.add_subcommand("attack", "score the attack-test split, natural and boosted");
    attack->add_option("--model", model_path, "MIAM checkpoint")->required();
    attack->add_option("--data", data_path, "MIAD dataset")->required();
    attack->add_option("--config", config_path, "run config file")->required();
    attack->add_option("--out", out_path, "output scores CSV")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "interrogation hyperparameter sweep on attack-validation");
    sweep->add_option("--config", config_path, "run config file")->required();
    sweep->add_option("--out", out_path, "output directory")->required();

    CLI::App* report = app.add_subcommand("report", "metrics report and ROC plot from score tables");
    report->add_option("--scores", score_paths, "score CSV paths")->required()->expected(-1);
    report->add_option("--out", out_path, "output directory")->required();
    report->add_flag("--log-fpr", log_fpr, "log-scale the FPR axis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);  // prints usage/help text
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_data(config_path, out_path);
        if (train_cmd->parsed()) return cmd_train(config_path, out_path);
        if (attack->parsed()) return cmd_attack(model_path, data_path, config_path, out_path);
        if (sweep->parsed()) return cmd_sweep(config_path, out_path);
        if (report->parsed()) return cmd_report(score_paths, out_path, log_fpr);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
