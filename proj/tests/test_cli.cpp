#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "pseudocl/pseudocl.hpp"

using namespace pseudocl;
namespace fs = std::filesystem;

namespace {

struct Result {
    int status;
    std::string out;
};

Result sh(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + PSEUDOCL_CLI + std::string(" ") + args + " 2>&1";
    Result r{-1, {}};
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[512];
    while (std::fgets(buf, sizeof buf, p)) r.out += buf;
    const int raw = pclose(p);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

fs::path work(const std::string& name) {
    const auto p = fs::path(PSEUDOCL_WORK_DIR) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

const std::string kConfig = PSEUDOCL_DEFAULT_CONFIG;

}  // namespace

TEST(Cli, RunWithDefaultConfigWritesArtifacts) {
    const auto dir = work("run_default");
    const auto r = sh("run --config " + kConfig + " --out " + dir.string());
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("Avg"), std::string::npos);
    EXPECT_NE(r.out.find("Last"), std::string::npos);
    for (const char* f : {"report.csv", "summary.csv", "config.txt", "run.meta", "dataset.csv",
                          "checkpoints/step_004.ckpt", "exemplars/step_004.csv", "clusters/step_002.csv"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_EQ(read_report(dir / "report.csv").size(), 4u);
}

TEST(Cli, UnknownFlagIsUsageErrorAndCreatesNothing) {
    const auto dir = work("unknown_flag");
    const auto r = sh("run --config " + kConfig + " --bogus 3 --out " + dir.string());
    EXPECT_EQ(r.status, 2);
    EXPECT_FALSE(fs::exists(dir));
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
    EXPECT_EQ(r.out.rfind("pseudocl: error[usage]:", 0), 0u);
}

TEST(Cli, BadConfigValueIsUsageError) {
    const auto dir = work("bad_value");
    EXPECT_EQ(sh("run --q 0 --out " + dir.string()).status, 2);
    EXPECT_EQ(sh("run --variant nonsense --out " + dir.string()).status, 2);
    EXPECT_EQ(sh("run --config /nonexistent.conf --out " + dir.string()).status, 2);
    EXPECT_FALSE(fs::exists(dir));
}

TEST(Cli, FlagsOverrideConfigAndAreRecorded) {
    const auto dir = work("overrides");
    const auto r = sh("run --config " + kConfig + " --epochs 3 --q 4 --temperature 3 --lr 0.05 --batch 16 " +
                      "--mode online --variant ffe --exemplar-policy random --seed 7 --bias-correction --out " +
                      dir.string());
    ASSERT_EQ(r.status, 0) << r.out;
    const auto cfg = parse_config(detail::read_file(dir / "config.txt"));
    EXPECT_EQ(cfg.run.epochs, 3u);
    EXPECT_EQ(cfg.run.q, 4u);
    EXPECT_EQ(cfg.run.temperature, 3.0);
    EXPECT_EQ(cfg.run.lr, 0.05);
    EXPECT_EQ(cfg.run.batch, 16u);
    EXPECT_EQ(cfg.run.mode, Mode::online);
    EXPECT_EQ(cfg.run.variant.kind, FeatureVariant::ffe);
    EXPECT_EQ(cfg.run.exemplar_policy, ExemplarPolicy::random);
    EXPECT_EQ(cfg.run.model_seed, 7u);
    EXPECT_TRUE(cfg.run.bias_correction);
    EXPECT_EQ(cfg.data.blobs.nuisance_dims, 11u);  // from the file
}

TEST(Cli, MatchesLibraryApi) {
    const auto dir = work("api_parity");
    ASSERT_EQ(sh("run --config " + kConfig + " --epochs 5 --out " + dir.string()).status, 0);
    auto cfg = parse_config(detail::read_file(kConfig));
    cfg.run.epochs = 5;
    const auto rep = run_experiment(cfg.run, generate_gaussian_stream(cfg.data.blobs));
    EXPECT_EQ(detail::read_file(dir / "report.csv"), report_to_csv(rep.steps));
}

TEST(Cli, EvalReproducesFinalAccuracy) {
    const auto dir = work("eval");
    ASSERT_EQ(sh("run --config " + kConfig + " --epochs 5 --out " + dir.string()).status, 0);
    const auto out_csv = dir / "eval.csv";
    const auto r = sh("eval --checkpoint " + (dir / "checkpoints/step_004.ckpt").string() + " --data " +
                      (dir / "dataset.csv").string() + " --out " + out_csv.string());
    ASSERT_EQ(r.status, 0) << r.out;
    const auto text = detail::read_file(out_csv);
    const auto rest = text.substr(text.find('\n') + 1);
    const auto line = rest.substr(0, rest.find('\n'));
    const auto fields = detail::split_fields(line);
    const double acc = std::stod(std::string(fields[1]));
    EXPECT_NEAR(acc, read_report(dir / "report.csv").back().acc, 1e-12);
}

TEST(Cli, GenDataAndRunOnFile) {
    const auto dir = work("gen");
    fs::create_directories(dir);
    const auto data = dir / "d.csv";
    ASSERT_EQ(sh("gen-data --data-classes 6 --data-samples-per-class 20 --data-dim 4 --out " + data.string()).status, 0);
    EXPECT_EQ(load_dataset(data).size(), 120u);
    const auto r = sh("run --data " + data.string() + " --step-size 3 --epochs 2 --out " + (dir / "run").string());
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_FALSE(fs::exists(dir / "run" / "dataset.csv"));
    EXPECT_EQ(sh("report " + (dir / "run").string()).status, 0);
}

TEST(Cli, RuntimeFailureExitsOne) {
    const auto dir = work("runtime_fail");
    fs::create_directories(dir);
    // 6 classes with step size 4 is a protocol error at run time
    const auto data = dir / "d.csv";
    ASSERT_EQ(sh("gen-data --data-classes 6 --data-samples-per-class 10 --out " + data.string()).status, 0);
    const auto r = sh("run --data " + data.string() + " --step-size 4 --out " + (dir / "run").string());
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.out.find("error[protocol]"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(dir / "run" / "run.meta"));
}

TEST(Cli, RunRootEnvironmentVariable) {
    const auto root = work("root");
    const auto r = sh("run --config " + kConfig + " --epochs 1 --seed 3", "PSEUDOCL_RUN_ROOT=" + root.string());
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_TRUE(fs::exists(root / "run-ours-seed3" / "report.csv"));
}

TEST(Cli, SweepWritesTable) {
    const auto dir = work("sweep");
    const auto r = sh("sweep --config " + kConfig + " --epochs 2 --axis exemplar.q=2,5 --repeats 2 --jobs 2 --out " +
                      dir.string());
    ASSERT_EQ(r.status, 0) << r.out;
    const auto text = detail::read_file(dir / "sweep.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
    EXPECT_EQ(sh("sweep --config " + kConfig + " --axis exemplar.q= --out " + (dir / "x").string()).status, 2);
    EXPECT_EQ(sh("sweep --config " + kConfig + " --axis nope=1 --out " + (dir / "y").string()).status, 2);
}
