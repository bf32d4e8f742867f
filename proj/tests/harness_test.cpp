#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "pasam/harness/commands.hpp"

using namespace pasam;
using namespace pasam::harness;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("pasam_harness_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> micro_overrides(std::size_t epochs) {
    return {"image_size=64",   "encoder_widths=4,8,16", "mask_encoder_widths=2,4,8", "channels=16",
            "mlp_width=32",    "n_sample=2",            "epochs=" + std::to_string(epochs)};
}

// One small dataset plus trained baseline and adapter runs, shared by the tests.
struct Fixture {
    fs::path root, data;
    TrainOutcome base, adapter;
    std::ostringstream log;

    Fixture() {
        root = scratch("fixture");
        data = root / "data";
        gen_data({12, data.string(), 7, 64}, log);
        TrainOptions t;
        t.phase = "baseline";
        t.data = data.string();
        t.overrides = micro_overrides(2);
        t.out = (root / "base").string();
        base = train_command(t, log);
        t.phase = "adapter";
        t.baseline = base.checkpoint;
        t.out = (root / "adapter").string();
        adapter = train_command(t, log);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

std::string last_row_for(const std::string& csv, const std::string& split) {
    std::istringstream in(csv);
    std::string line, last;
    while (std::getline(in, line))
        if (line.find("," + split + ",") != std::string::npos) last = line;
    return last;
}

}  // namespace

TEST(Config, RoundTripsThroughText) {
    RunConfig c;
    set_value(c, "crm", "cross_attention");
    set_value(c, "encoder_widths", "8, 16,32");
    set_value(c, "learning_rate", "0.0005");
    RunConfig d;
    parse_config_text(d, to_config_text(c), "mem");
    EXPECT_EQ(to_config_text(c), to_config_text(d));
    EXPECT_EQ(d.model.sam.encoder_widths, (std::vector<std::size_t>{8, 16, 32}));
    EXPECT_EQ(get_value(RunConfig{}, "learning_rate"), "0.001");
}

TEST(Config, ErrorsCiteLineAndKey) {
    RunConfig c;
    try {
        parse_config_text(c, "# comment\nepochs = 3\n\nbatch_size=four\n", "run.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("run.cfg:4"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("batch_size"), std::string::npos);
    }
    EXPECT_EQ(c.train.epochs, 3u);
    EXPECT_THROW(parse_config_text(c, "nonsense\n", "x"), ConfigError);
    EXPECT_THROW(set_value(c, "warp_factor", "9"), ConfigError);
    EXPECT_THROW(set_value(c, "connection", "diagonal"), ConfigError);
    EXPECT_THROW(set_value(c, "adapter_connection", "diagonal"), ConfigError);
    EXPECT_THROW(set_value(c, "eval_train", "maybe"), ConfigError);
}

TEST(Png, RoundTrip) {
    auto dir = scratch("png");
    Image8 rgb{5, 3, 3, {}};
    for (std::size_t i = 0; i < 45; ++i) rgb.pixels.push_back(std::uint8_t(i * 5));
    write_png((dir / "a.png").string(), rgb);
    auto back = read_png((dir / "a.png").string(), 3);
    EXPECT_EQ(back.width, 5u);
    EXPECT_EQ(back.height, 3u);
    EXPECT_EQ(back.pixels, rgb.pixels);
    EXPECT_THROW(read_png((dir / "missing.png").string(), 1), IoError);
    EXPECT_THROW(write_png((dir / "no" / "such" / "dir.png").string(), rgb), IoError);
}

TEST(DatasetIo, SamplesRoundTripExactly) {
    auto dir = scratch("dsio");
    training::GeometryConfig g;
    g.resolution = 64;
    auto s = training::generate_sample(g, 4, 2);
    write_sample(dir, "x", s);
    auto r = read_sample(dir / "x", g.uncertain_radius);
    ASSERT_EQ(r.size, s.size);
    EXPECT_EQ(std::vector<float>(r.image.data().begin(), r.image.data().end()),
              std::vector<float>(s.image.data().begin(), s.image.data().end()));
    EXPECT_EQ(training::to_binary(r.gt_mask), training::to_binary(s.gt_mask));
    EXPECT_EQ(training::to_binary(r.gt_uncertain), training::to_binary(s.gt_uncertain));
    EXPECT_EQ(training::to_binary(r.coarse_mask), training::to_binary(s.coarse_mask));
    ASSERT_EQ(r.prompts.points.size(), s.prompts.points.size());
    for (std::size_t i = 0; i < r.prompts.points.size(); ++i) {
        EXPECT_EQ(r.prompts.points[i].x, s.prompts.points[i].x);
        EXPECT_EQ(r.prompts.points[i].y, s.prompts.points[i].y);
    }
    EXPECT_EQ(r.prompts.box->x1, s.prompts.box->x1);
}

TEST(GenData, WritesSplitsAtRequestedResolution) {
    auto& f = fixture();
    EXPECT_EQ(list_samples(f.data / "train").size(), 10u);
    EXPECT_EQ(list_samples(f.data / "val").size(), 2u);
    auto img = read_png((f.data / "train" / "000000_image.png").string(), 3);
    EXPECT_EQ(img.width, 64u);
    EXPECT_EQ(img.height, 64u);
    EXPECT_TRUE(fs::exists(f.data / "manifest.txt"));
}

TEST(GenData, SameFlagsGiveIdenticalFiles) {
    auto a = scratch("gen_a"), b = scratch("gen_b");
    std::ostringstream log;
    gen_data({6, a.string(), 3, 32}, log);
    gen_data({6, b.string(), 3, 32}, log);
    for (const char* split : {"train", "val"})
        for (const auto& e : fs::directory_iterator(a / split)) {
            EXPECT_EQ(slurp(e.path()), slurp(b / split / e.path().filename())) << e.path();
        }
}

TEST(GenData, Errors) {
    std::ostringstream log;
    EXPECT_THROW(gen_data({0, scratch("e1").string(), 0, 32}, log), UsageError);
    EXPECT_THROW(gen_data({2, scratch("e2").string(), 0, 40}, log), UsageError);
    const auto dir = scratch("e3");
    std::ofstream(dir / "file") << "x";
    EXPECT_THROW(gen_data({2, (dir / "file" / "sub").string(), 0, 32}, log), IoError);
}

TEST(Checkpoint, RoundTripAndHeader) {
    auto& f = fixture();
    auto ck = load_checkpoint(f.adapter.checkpoint);
    ASSERT_TRUE(ck.model->has_adapter());
    const auto bytes = slurp(f.adapter.checkpoint);
    EXPECT_EQ(bytes.rfind("PAADAPT1\n", 0), 0u);
    EXPECT_NE(bytes.find("param adapter."), std::string::npos);
    auto dir = scratch("ckpt");
    save_checkpoint((dir / "again.paadapt").string(), ck.config, *ck.model);
    EXPECT_EQ(slurp(dir / "again.paadapt"), bytes);
}

TEST(Checkpoint, CorruptFilesAreCompatibilityErrors) {
    auto& f = fixture();
    auto dir = scratch("ckpt_bad");
    const auto bytes = slurp(f.base.checkpoint);
    std::ofstream((dir / "magic").string(), std::ios::binary) << "PAADAPT0" << bytes.substr(8);
    std::ofstream((dir / "short").string(), std::ios::binary) << bytes.substr(0, bytes.size() - 4);
    std::ofstream((dir / "long").string(), std::ios::binary) << bytes << "xxxx";
    for (const char* name : {"magic", "short", "long"}) {
        EXPECT_THROW(load_checkpoint((dir / name).string()), CompatibilityError) << name;
    }
    EXPECT_THROW(load_checkpoint((dir / "absent").string()), IoError);
}

TEST(Train, ManifestRecordsDefaultLearningRate) {
    auto& f = fixture();
    auto m = read_manifest(f.base.manifest);
    EXPECT_EQ(m.get("config.learning_rate"), "0.001");
    EXPECT_EQ(m.get("phase"), "baseline");
    EXPECT_FALSE(m.get("git_describe").empty());
    EXPECT_FALSE(m.get("started").empty());
}

TEST(Train, LogHasHeaderAndFiniteRows) {
    auto& f = fixture();
    std::istringstream in(slurp(f.base.log));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,split,miou,mbiou,loss");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        const double loss = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_TRUE(std::isfinite(loss));
    }
    EXPECT_EQ(rows, 4u);  // 2 epochs x {train, val}
}

TEST(Train, AdapterRunKeepsBaselineBackbone) {
    auto& f = fixture();
    EXPECT_EQ(f.adapter.backbone_checksum, f.base.backbone_checksum);
    EXPECT_TRUE(f.adapter.result.dead_parameters.empty());
}

TEST(Train, ReplayingManifestGivesIdenticalLog) {
    auto& f = fixture();
    TrainOptions t;
    t.manifest = f.adapter.manifest;
    t.out = scratch("replay").string();
    auto again = train_command(t, f.log);
    EXPECT_EQ(slurp(again.log), slurp(f.adapter.log));
}

TEST(Train, StartupErrors) {
    auto& f = fixture();
    TrainOptions t;
    t.phase = "adapter";
    t.data = f.data.string();
    t.overrides = micro_overrides(1);
    t.out = scratch("err").string();
    EXPECT_THROW(train_command(t, f.log), UsageError);
    t.baseline = (f.root / "missing.paadapt").string();
    EXPECT_THROW(train_command(t, f.log), IoError);
    t.baseline.clear();
    t.phase = "sideways";
    EXPECT_THROW(train_command(t, f.log), UsageError);
    t.phase = "baseline";
    t.overrides.push_back("learning_rate=-1");
    EXPECT_THROW(train_command(t, f.log), ConfigError);
    t.overrides = {"epochs=1"};  // 128-px model against 64-px data
    EXPECT_THROW(train_command(t, f.log), CompatibilityError);
}

TEST(Eval, ReproducesFinalTrainingRow) {
    auto& f = fixture();
    EvalOptions e;
    e.checkpoint = f.adapter.checkpoint;
    e.data = f.data.string();
    auto rows = eval_command(e, f.log);
    ASSERT_EQ(rows.size(), 2u);
    const auto csv = slurp(f.adapter.log);
    for (const auto& r : rows) {
        const auto expect = last_row_for(csv, r.split);
        EXPECT_NE(expect.find("," + format_double(r.miou) + "," + format_double(r.mbiou) + ","), std::string::npos)
            << expect;
    }
}

TEST(Eval, GroundTruthAsPredictionsScoresOne) {
    auto& f = fixture();
    EvalOptions e;
    e.predictions = f.data.string();
    e.data = f.data.string();
    e.out = (scratch("eval") / "eval.csv").string();
    for (const auto& r : eval_command(e, f.log)) {
        EXPECT_EQ(r.miou, 1.0);
        EXPECT_EQ(r.mbiou, 1.0);
    }
    EXPECT_TRUE(fs::exists(e.out));
}

TEST(Eval, BaselineAndAdapterGiveComparableRows) {
    auto& f = fixture();
    EvalOptions e;
    e.data = f.data.string();
    e.split = "val";
    e.checkpoint = f.base.checkpoint;
    auto a = eval_command(e, f.log);
    e.checkpoint = f.adapter.checkpoint;
    auto b = eval_command(e, f.log);
    ASSERT_EQ(a.size(), 1u);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(a[0].count, b[0].count);
}

TEST(Eval, SizeMismatchIsCompatibilityError) {
    auto& f = fixture();
    auto big = scratch("small");
    std::ostringstream log;
    gen_data({2, big.string(), 1, 32}, log);
    EvalOptions e;
    e.checkpoint = f.base.checkpoint;
    e.data = big.string();
    EXPECT_THROW(eval_command(e, log), CompatibilityError);
    e.split = "test";
    EXPECT_THROW(eval_command(e, log), UsageError);
}

TEST(Ablate, NsampleRunsExactlyFourValuesOnOneBaseline) {
    auto& f = fixture();
    AblateOptions a;
    a.axis = "nsample";
    a.data = f.data.string();
    a.overrides = micro_overrides(1);
    a.overrides.push_back("eval_train=false");
    a.baseline = f.base.checkpoint;
    a.out = scratch("ablate").string();
    auto rows = ablate_command(a, f.log);
    ASSERT_EQ(rows.size(), 4u);
    std::vector<std::string> values;
    for (const auto& r : rows) {
        values.push_back(r.value);
        EXPECT_EQ(r.backbone_checksum, f.base.backbone_checksum);
    }
    EXPECT_EQ(values, (std::vector<std::string>{"0", "1", "4", "8"}));
    std::istringstream csv(slurp(fs::path(a.out) / "ablation_nsample.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "axis,value,crm,n_sample,connection,blocks,miou,mbiou,baseline_checksum");
    std::size_t n = 0;
    while (std::getline(csv, line)) ++n;
    EXPECT_EQ(n, 4u);
}

TEST(Ablate, AxisValues) {
    EXPECT_EQ(axis_values("crm").size(), 2u);
    EXPECT_EQ(axis_values("connection"), (std::vector<std::string>{"serial", "parallel", "fusion"}));
    EXPECT_EQ(axis_values("blocks").size(), 2u);
    EXPECT_THROW(axis_values("depth"), UsageError);
}

TEST(Visualize, WritesSixImagesAndTwoNPoints) {
    auto& f = fixture();
    VisualizeOptions v;
    v.checkpoint = f.adapter.checkpoint;
    v.sample = (f.data / "val" / "000010").string();
    v.out = scratch("vis").string();
    auto rep = visualize_command(v, f.log);
    EXPECT_EQ(rep.files.size(), 6u);
    std::size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(v.out)) on_disk += e.path().extension() == ".png";
    EXPECT_EQ(on_disk, 6u);
    EXPECT_EQ(rep.positive_points + rep.negative_points, 2u * 2u);

    // marked cells in the overlay: pure green / pure red 3x3 patches
    auto img = read_png((fs::path(v.out) / "points.png").string(), 3);
    std::size_t green = 0, red = 0;
    for (std::size_t i = 0; i < img.width * img.height; ++i) {
        const auto* p = &img.pixels[i * 3];
        green += p[0] == 0 && p[1] == 255 && p[2] == 0;
        red += p[0] == 255 && p[1] == 0 && p[2] == 0;
    }
    std::size_t green_only = 0;
    for (auto c : rep.positive_cells)
        green_only += std::count(rep.negative_cells.begin(), rep.negative_cells.end(), c) == 0;
    EXPECT_EQ(green, green_only * 9);  // negatives are drawn last
    EXPECT_EQ(red, rep.negative_cells.size() * 9);

    v.checkpoint = f.base.checkpoint;
    EXPECT_THROW(visualize_command(v, f.log), ConfigError);
}
