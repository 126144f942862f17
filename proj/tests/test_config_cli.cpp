#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mda/cli.hpp"

using namespace mda;
namespace fs = std::filesystem;

namespace {

const std::string kSmoke = std::string(MDA_SOURCE_DIR) + "/configs/smoke.json";

struct CliResult {
    int code;
    std::string out, err;
};

CliResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "mda");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("mda_cli_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& child = "") const { return (child.empty() ? path : path / child).string(); }
};

std::string error_path(const json& doc) {
    try {
        parse_experiment_config(doc);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<none>";
}

json smoke_doc() { return read_json_file(kSmoke); }

}  // namespace

TEST(Config, ErrorsCarryFieldPaths) {
    json d = smoke_doc();
    d["train"]["foo"] = 1;
    EXPECT_EQ(error_path(d), "train.foo");

    d = smoke_doc();
    d["train"]["iterations"] = "many";
    EXPECT_EQ(error_path(d), "train.iterations");

    d = smoke_doc();
    d["train"]["schedule"] = "cosine";
    EXPECT_EQ(error_path(d), "train.schedule");

    d = smoke_doc();
    d["model"]["k"] = 0;
    EXPECT_EQ(error_path(d), "model");

    d = smoke_doc();
    d["data"]["synthetic"]["source_transforms"][1]["bogus"] = true;
    EXPECT_EQ(error_path(d), "data.synthetic.source_transforms[1].bogus");

    d = smoke_doc();
    d["gradcheck"]["fault"] = "everything";
    EXPECT_EQ(error_path(d), "gradcheck.fault");

    d = smoke_doc();
    d["extra"] = 1;
    EXPECT_EQ(error_path(d), "extra");

    EXPECT_THROW(read_json_file("/nonexistent/config.json"), ConfigError);
}

TEST(Config, RoundTripThroughJson) {
    const ExperimentConfig c = parse_experiment_config(smoke_doc());
    const json once = to_json(c);
    EXPECT_EQ(to_json(parse_experiment_config(once)), once);
    EXPECT_EQ(c.train.iterations, 60u);
    EXPECT_EQ(c.train.batch.source_quota, 16u);
    EXPECT_EQ(c.data.synthetic.source_transforms.size(), 2u);
}

TEST(Config, OverridesTakePrecedence) {
    json d = smoke_doc();
    apply_override(d, "train.seed=7");
    apply_override(d, "train.schedule=step");
    apply_override(d, "model.trunk_widths=[3,2]");
    const ExperimentConfig c = parse_experiment_config(d);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.train.schedule, LrSchedule::Step);
    EXPECT_EQ(c.model.trunk_widths, (std::vector<std::size_t>{3, 2}));
    EXPECT_THROW(apply_override(d, "novalue"), ConfigError);

    cli::Options o;
    o.config = kSmoke;
    o.overrides = {"train.seed=7", "train.seed=9"};
    EXPECT_EQ(cli::load_config(o).cfg.train.seed, 9u);
}

TEST(Config, ManifestLoadsIdxFiles) {
    TempDir dir("manifest");
    IdxImages img{4, 2, 2, {}};
    for (int i = 0; i < 16; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 10));
    idx_write_images(dir.str("img.idx"), img);
    idx_write_labels(dir.str("lbl.idx"), {0, 1, 0, 1});
    json m = {{"sources",
               {{{"images", "img.idx"}, {"labels", "lbl.idx"}},
                {{"images", "img.idx"}, {"labels", "lbl.idx"}, {"transforms", {{{"kind", "invert"}}}}, {"limit", 3}}}},
              {"target", {{"images", "img.idx"}, {"labels", "lbl.idx"}}}};
    std::ofstream(dir.str("m.json")) << m.dump();
    ExperimentData data = load_manifest(dir.str("m.json"));
    EXPECT_EQ(data.source.size(), 7u);
    EXPECT_EQ(data.source.features.shape(), (Tensor::Shape{7, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(data.source.features.at(4, 0), 1.0);
    EXPECT_EQ(LatentDomains::of(data.source), (std::vector<int>{0, 0, 0, 0, 1, 1, 1}));
    EXPECT_EQ(data.target_test.size(), 4u);

    m["sources"][0]["labels"] = "missing.idx";
    std::ofstream(dir.str("bad.json")) << m.dump();
    EXPECT_THROW(load_manifest(dir.str("bad.json")), IdxError);
}

TEST(Cli, GitBlobHash) {
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Cli, HelpListsEverySubcommandAndFlag) {
    const CliResult r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const char* s : {"train", "gradcheck", "ablate-k", "sweep-labels", "baselines", "--config", "--out", "--set",
                          "--force", "--seeds", "--k", "--fractions"}) {
        EXPECT_NE(r.out.find(s), std::string::npos) << s;
    }
}

TEST(Cli, ConfigProblemsExitTwo) {
    EXPECT_EQ(run({"train", "--config", "/nonexistent.json"}).code, kExitConfig);
    EXPECT_EQ(run({"train"}).code, kExitConfig);
    EXPECT_EQ(run({"train", "--config", kSmoke, "--set", "train.nope=1"}).code, kExitConfig);
    EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
    EXPECT_EQ(run({"baselines", "--config", kSmoke, "--seeds", "0"}).code, kExitConfig);
}

TEST(Cli, TrainWritesRunDirectory) {
    TempDir dir("train");
    const std::string out = dir.str("run");
    const CliResult r = run({"train", "--config", kSmoke, "--out", out, "--set", "train.iterations=20"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("acc="), std::string::npos);
    for (const char* f : {"metrics.csv", "checkpoint.json", "summary.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;
    }
    const json manifest = read_json_file(out + "/manifest.json");
    EXPECT_EQ(manifest["command"], "train");
    EXPECT_EQ(manifest["config_document"]["train"]["iterations"], 20);
    EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 40u);
    EXPECT_TRUE(manifest.contains("finished_at"));

    EXPECT_EQ(run({"train", "--config", kSmoke, "--out", out}).code, kExitConfig);
    EXPECT_EQ(run({"train", "--config", kSmoke, "--out", out, "--force", "--set", "train.iterations=5"}).code, 0);
}

TEST(Cli, NonFiniteLossExitsThree) {
    TempDir dir("abort");
    const CliResult r = run({"train", "--config", kSmoke, "--out", dir.str("run"), "--set", "train.base_lr=1e250"});
    EXPECT_EQ(r.code, kExitNumerical) << r.out << r.err;
    EXPECT_NE(r.err.find("non-finite"), std::string::npos);
}

TEST(Cli, GradcheckExitCodes) {
    const CliResult ok = run({"gradcheck", "--config", kSmoke});
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_NE(ok.out.find("max_rel_err"), std::string::npos);
    const CliResult bad = run({"gradcheck", "--config", kSmoke, "--set", "gradcheck.fault=mda_grad_w"});
    EXPECT_EQ(bad.code, kExitCheckFailed);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(Cli, BaselinesEmitFourRows) {
    TempDir dir("baselines");
    const CliResult r = run({"baselines", "--config", kSmoke, "--out", dir.str("b"), "--seeds", "1", "--set",
                             "train.iterations=10"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) n += line.empty() ? 0 : 1;
    EXPECT_EQ(n, 5);  // header + 4 settings
    for (const char* f : {"summary.csv", "runs.csv", "summary.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(dir.path / "b" / f)) << f;
    }
}

TEST(Cli, AblateAndSweepRespectLists) {
    TempDir dir("lists");
    const CliResult k = run({"ablate-k", "--config", kSmoke, "--out", dir.str("k"), "--seeds", "1", "--k", "1,3",
                             "--set", "train.iterations=10"});
    ASSERT_EQ(k.code, 0) << k.err;
    EXPECT_NE(k.out.find("k=1"), std::string::npos);
    EXPECT_NE(k.out.find("k=3"), std::string::npos);
    const CliResult f = run({"sweep-labels", "--config", kSmoke, "--out", dir.str("f"), "--seeds", "1",
                             "--fractions", "0,1", "--set", "train.iterations=10"});
    ASSERT_EQ(f.code, 0) << f.err;
    EXPECT_NE(f.out.find("fraction=1"), std::string::npos);
}
