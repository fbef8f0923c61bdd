#include <gtest/gtest.h>

#include <filesystem>

#include "mialab/config.hpp"
#include "mialab/io.hpp"
#include "mialab/svg.hpp"

using namespace mialab;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST(Checkpoint, RoundTripReproducesForwardBitIdentically) {
    Model m = build_model(Arch::TinyCNN, {3, 8, 8}, 4, 11);
    auto path = temp_file("mialab_model.bin");
    save_model(m, path.string());
    Model back = load_model(path.string());

    EXPECT_EQ(back.spec.input_shape, m.spec.input_shape);
    EXPECT_EQ(back.spec.classes, m.spec.classes);
    ASSERT_EQ(back.spec.layers.size(), m.spec.layers.size());
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        EXPECT_EQ(back.spec.layers[i].first, m.spec.layers[i].first);
        EXPECT_TRUE(back.spec.layers[i].second == m.spec.layers[i].second);
    }

    Rng rng(5);
    Tensor x = Tensor::zeros({3, 8, 8});
    for (double& v : x.data) v = rng.gaussian();
    EXPECT_EQ(forward(back, x).data, forward(m, x).data);
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
    auto path = temp_file("mialab_model_bad.bin");
    {
        std::ofstream os(path, std::ios::binary);
        os << "MIAX1234";
    }
    EXPECT_THROW(load_model(path.string()), std::runtime_error);

    Model m = build_model(Arch::TinyMLP, {4}, 2, 1, 6);
    save_model(m, path.string());
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 11);
    EXPECT_THROW(load_model(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(AtomicWrite, OverwritesByteIdentically) {
    auto path = temp_file("mialab_atomic.txt");
    atomic_write(path.string(), "payload-a\n");
    EXPECT_EQ(slurp(path), "payload-a\n");
    atomic_write(path.string(), "payload-a\n");
    EXPECT_EQ(slurp(path), "payload-a\n");
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    std::filesystem::remove(path);
}

TEST(HistoryCsv, ColumnsAndRows) {
    std::vector<EpochStats> history = {{1, 0.02, 1.5, 0.5, 0.4}, {2, 0.1, 1.0, 0.75, 0.6}};
    std::string text = history_csv(history);
    EXPECT_NE(text.find("epoch,lr,train_loss,train_acc,val_acc\n"), std::string::npos);
    EXPECT_NE(text.find("1,0.02"), std::string::npos);
    EXPECT_NE(text.find("2,0.1"), std::string::npos);
}

TEST(ScoreCsv, RoundTripWithSeedComment) {
    ScoreTable table = {{7, true, "glir", false, 1.25}, {7, true, "glir", true, -0.5},
                        {9, false, "loss", false, -2.75}};
    auto path = temp_file("mialab_scores.csv");
    save_score_table_csv(table, 42, path.string());
    LoadedScores loaded = load_score_table_csv(path.string());
    EXPECT_EQ(loaded.seed, 42u);
    ASSERT_EQ(loaded.table.size(), table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        EXPECT_EQ(loaded.table[i].sample_id, table[i].sample_id);
        EXPECT_EQ(loaded.table[i].is_member, table[i].is_member);
        EXPECT_EQ(loaded.table[i].detector, table[i].detector);
        EXPECT_EQ(loaded.table[i].boosted, table[i].boosted);
        EXPECT_EQ(loaded.table[i].score, table[i].score);  // %.17g is lossless
    }
    std::filesystem::remove(path);
}

TEST(ScoreCsv, MalformedRowsReportLineNumbers) {
    auto path = temp_file("mialab_scores_bad.csv");
    atomic_write(path.string(), "sample_id,is_member,detector,boosted,score\n1,1,loss,0,0.5\n2,oops\n");
    try {
        load_score_table_csv(path.string());
        FAIL() << "expected rejection";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
    }

    atomic_write(path.string(),
                 "sample_id,is_member,detector,boosted,score\n1,1,loss,0,0.5\n1,1,loss,0,0.7\n");
    EXPECT_THROW(load_score_table_csv(path.string()), std::runtime_error);  // duplicate id per slice
    std::filesystem::remove(path);
}

TEST(RocSvg, PolylinesLegendAndStrokeStyles) {
    std::vector<std::pair<double, bool>> separable = {{0.9, true}, {0.8, true}, {0.2, false}, {0.1, false}};
    std::vector<RocPlotSeries> series;
    series.push_back({"glir", false, roc_curve(separable)});
    series.push_back({"glir+boost", true, roc_curve(separable)});
    std::string svg = roc_svg(series, false);
    EXPECT_NE(svg.find("<svg xmlns"), std::string::npos);
    std::size_t polylines = 0, pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
        ++polylines;
        pos += 9;
    }
    EXPECT_EQ(polylines, 2u);  // one curve per series
    EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);  // boosted is dashed
    EXPECT_NE(svg.find(">glir</text>"), std::string::npos);
    EXPECT_NE(svg.find(">glir+boost</text>"), std::string::npos);

    std::string svg_log = roc_svg(series, true);
    EXPECT_NE(svg_log.find("0.001"), std::string::npos);  // log axis decade label
}

TEST(ConfigText, ParsesSectionsCommentsAndTypes) {
    ConfigText cfg = ConfigText::parse(
        "# comment\n"
        "run.seed = 17\n"
        "\n"
        "train.lr = 0.25   \n"
        "train.flip = true\n"
        "detector.list = loss, glir ,ia\n");
    EXPECT_EQ(cfg.get_u64("run.seed", 0), 17u);
    EXPECT_DOUBLE_EQ(cfg.get_double("train.lr", 0), 0.25);
    EXPECT_TRUE(cfg.get_bool("train.flip", false));
    EXPECT_EQ(cfg.get_list("detector.list", {}), (std::vector<std::string>{"loss", "glir", "ia"}));
    EXPECT_EQ(cfg.get_string("absent.key", "fallback"), "fallback");
}

TEST(ConfigText, ErrorsCarryLineNumbers) {
    try {
        ConfigText::parse("run.seed = 1\nbroken line without equals\n", "test.cfg");
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("test.cfg:2"), std::string::npos);
    }
    try {
        ConfigText cfg = ConfigText::parse("train.lr = fast\n", "test.cfg");
        cfg.get_double("train.lr", 0.0);
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("test.cfg:1"), std::string::npos);
    }
    EXPECT_THROW(ConfigText::parse("a.b = 1\na.b = 2\n"), std::invalid_argument);
    EXPECT_THROW(ConfigText::parse("noselector = 1\n"), std::invalid_argument);
}

TEST(RunConfig, DefaultsAndValidation) {
    RunConfig rc = RunConfig::from_text(ConfigText::parse(""));
    EXPECT_EQ(rc.data_source, "synth");
    EXPECT_EQ(rc.detectors.size(), 5u);
    EXPECT_EQ(rc.split.attack_val_per_side, 200u);
    EXPECT_EQ(rc.split.attack_test_per_side, 500u);
    EXPECT_EQ(rc.interrogate.steps, 80u);
    EXPECT_DOUBLE_EQ(rc.interrogate.lr, 0.05);
    EXPECT_TRUE(rc.interrogate.clip);
    EXPECT_EQ(rc.glir.d_sub, 5000u);

    EXPECT_THROW(RunConfig::from_text(ConfigText::parse("train.lr = 0\n")), std::invalid_argument);
    EXPECT_THROW(RunConfig::from_text(ConfigText::parse("data.source = nowhere\n")), std::invalid_argument);
    EXPECT_THROW(RunConfig::from_text(ConfigText::parse("defense.sigma = -1\n")), std::invalid_argument);
    EXPECT_THROW(RunConfig::from_text(ConfigText::parse("glir.mode = sometimes\n")), std::invalid_argument);
}

TEST(RunConfig, RenderParsesBackEquivalently) {
    RunConfig rc = RunConfig::from_text(ConfigText::parse(
        "model.arch = tiny_mlp\ndata.shape = 16\ninterrogate.group = mid\ninterrogate.steps = 120\n"
        "run.seed = 99\ndefense.sigma = 0.25\n"));
    RunConfig back = RunConfig::from_text(ConfigText::parse(rc.render()));
    EXPECT_EQ(back.arch, rc.arch);
    EXPECT_EQ(back.interrogate.steps, rc.interrogate.steps);
    EXPECT_EQ(back.interrogate.group, rc.interrogate.group);
    EXPECT_EQ(back.seed, rc.seed);
    EXPECT_DOUBLE_EQ(back.defense_sigma, rc.defense_sigma);
    EXPECT_EQ(back.synth.shape, rc.synth.shape);
    EXPECT_EQ(back.render(), rc.render());  // render is a fixed point
}
