#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "cehr/harness.hpp"
#include "cehr/run_config.hpp"
#include "test_util.hpp"

using namespace cehr;
using cehr::testing::read_file;
using cehr::testing::TempDir;
using cehr::testing::write_file;
namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string output;  // stdout and stderr
};

Run cli(const std::string& args, const TempDir& dir) {
    const std::string log = dir.file("cli.log");
    const std::string cmd = std::string(CEHR_CLI) + " " + args + " > " + log + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, read_file(log)};
}

std::string store_bytes(const fs::path& dir) {
    std::string all;
    for (const char* f : {"persons.csv", "visits.csv", "events.csv", "hierarchy.csv"}) all += read_file((dir / f).string());
    return all;
}

}  // namespace

TEST(Cli, SynthTwiceGivesIdenticalFiles) {
    TempDir dir;
    ASSERT_EQ(cli("synth --seed 7 --budget tiny --out " + dir.file("a"), dir).status, 0);
    ASSERT_EQ(cli("synth --seed 7 --budget tiny --out " + dir.file("b"), dir).status, 0);
    EXPECT_FALSE(store_bytes(dir.path() / "a").empty());
    EXPECT_EQ(store_bytes(dir.path() / "a"), store_bytes(dir.path() / "b"));
    ASSERT_EQ(cli("synth --seed 8 --budget tiny --out " + dir.file("c"), dir).status, 0);
    EXPECT_NE(store_bytes(dir.path() / "a"), store_bytes(dir.path() / "c"));
}

TEST(Cli, ResolvedConfigAloneReproducesTheRun) {
    TempDir dir;
    ASSERT_EQ(cli("synth --seed 3 --budget tiny --out " + dir.file("a"), dir).status, 0);
    const auto resolved = dir.file("a/resolved_config.toml");
    ASSERT_TRUE(fs::exists(resolved));
    ASSERT_EQ(cli("synth --config " + resolved + " --out " + dir.file("b"), dir).status, 0);
    EXPECT_EQ(store_bytes(dir.path() / "a"), store_bytes(dir.path() / "b"));
    // The copy written by the second run differs only in `out`.
    auto again = parse_run_config(read_file(dir.file("b/resolved_config.toml")), "b", {});
    again.out = dir.file("a");
    EXPECT_EQ(to_toml(again), read_file(resolved));
}

TEST(Cli, EvaluateWithoutCheckpointNamesThePath) {
    TempDir dir;
    ASSERT_EQ(cli("synth --budget tiny --out " + dir.file("d"), dir).status, 0);
    const auto missing = dir.file("nowhere/model.cehrw");
    const auto r = cli("evaluate --budget tiny --data " + dir.file("d") + " --checkpoint " + missing + " --out " +
                           dir.file("e"),
                       dir);
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
    EXPECT_EQ(r.output.rfind("error: ", 0), 0u) << r.output;
    EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1) << r.output;

    const auto none = cli("evaluate --budget tiny --data " + dir.file("d") + " --out " + dir.file("e"), dir);
    EXPECT_EQ(none.status, 2);
    EXPECT_NE(none.output.find("checkpoint"), std::string::npos);
}

TEST(Cli, HelpListsEveryFlagWithDefaults) {
    TempDir dir;
    const auto r = cli("evaluate --help", dir);
    EXPECT_EQ(r.status, 0);
    for (const char* flag : {"--config", "--out", "--seed", "--jobs", "--variant", "--fraction", "--task",
                             "--checkpoint", "--budget"})
        EXPECT_NE(r.output.find(flag), std::string::npos) << flag;
    EXPECT_NE(r.output.find("small"), std::string::npos);  // default budget shown
    EXPECT_NE(r.output.find("CEHR"), std::string::npos);   // default variant shown
    const auto top = cli("--help", dir);
    for (const char* sub : {"synth", "stats", "pretrain", "finetune", "evaluate", "fewshot", "ablate", "viz-att",
                            "lengths", "params"})
        EXPECT_NE(top.output.find(sub), std::string::npos) << sub;
}

TEST(Cli, ConfigErrorsListEveryViolationOnOneLine) {
    TempDir dir;
    write_file(dir.file("bad.toml"), "seed = 1\nbogus = 2\n[model]\nd_model = 30\nn_heads = 4\nwhat = 1\n");
    const auto r = cli("synth --config " + dir.file("bad.toml") + " --out " + dir.file("o"), dir);
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find("bogus"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("what"), std::string::npos) << r.output;
    EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1) << r.output;

    EXPECT_EQ(cli("synth --budget huge --out " + dir.file("o"), dir).status, 2);
    EXPECT_EQ(cli("synth --config " + dir.file("absent.toml"), dir).status, 2);
}

TEST(Cli, FlagsOverrideConfigFile) {
    TempDir dir;
    write_file(dir.file("c.toml"), "seed = 11\nbudget = \"tiny\"\n");
    ASSERT_EQ(cli("synth --config " + dir.file("c.toml") + " --seed 12 --out " + dir.file("o"), dir).status, 0);
    const auto cfg = parse_run_config(read_file(dir.file("o/resolved_config.toml")), "o", {});
    EXPECT_EQ(cfg.seed, 12u);
    EXPECT_EQ(cfg.budget, "tiny");
}

TEST(Cli, PipelineOutputs) {
    TempDir dir;
    const std::string d = dir.file("d"), p = dir.file("p");
    ASSERT_EQ(cli("synth --budget tiny --seed 4 --out " + d, dir).status, 0);
    ASSERT_EQ(cli("stats --budget tiny --data " + d + " --out " + dir.file("s"), dir).status, 0);
    EXPECT_TRUE(fs::exists(dir.file("s/stats.txt")));
    const auto pre = cli("pretrain --budget tiny --seed 4 --data " + d + " --out " + p, dir);
    ASSERT_EQ(pre.status, 0) << pre.output;
    for (const char* f : {"model.cehrw", "model.cehrw.json", "vocab.csv", "visit_types.csv", "loss_trace.csv",
                          "variant.txt", "resolved_config.toml"})
        EXPECT_TRUE(fs::exists(fs::path(p) / f)) << f;

    const auto ft = cli("finetune --budget tiny --data " + d + " --checkpoint " + p + "/model.cehrw --out " +
                            dir.file("f"),
                        dir);
    ASSERT_EQ(ft.status, 0) << ft.output;
    EXPECT_TRUE(fs::exists(dir.file("f/predictions.csv")));

    ASSERT_EQ(cli("viz-att --checkpoint " + p + "/model.cehrw --out " + dir.file("v"), dir).status, 0);
    EXPECT_EQ(read_file(dir.file("v/att_pca.csv")).rfind("token,x,y\n", 0), 0u);

    ASSERT_EQ(cli("lengths --budget tiny --data " + d + " --out " + dir.file("l"), dir).status, 0);
    EXPECT_EQ(read_file(dir.file("l/lengths.csv")).rfind("task,variant,patients,median,p95\n", 0), 0u);

    ASSERT_EQ(cli("params --checkpoint " + p + "/model.cehrw --out " + dir.file("q"), dir).status, 0);
    EXPECT_TRUE(fs::exists(dir.file("q/params.csv")));

    const auto wrong = cli("evaluate --budget tiny --variant M-BERT --data " + d + " --checkpoint " + p +
                               "/model.cehrw --out " + dir.file("w"),
                           dir);
    EXPECT_EQ(wrong.status, 2);
    EXPECT_NE(wrong.output.find("pretrained as CEHR"), std::string::npos) << wrong.output;
}

TEST(Cli, AblateTinyReportListsVariantsInOrder) {
    TempDir dir;
    const std::string d = dir.file("d");
    ASSERT_EQ(cli("synth --budget tiny --seed 5 --out " + d, dir).status, 0);
    const auto r = cli("ablate --tasks gap_signal --budget tiny --seed 5 --data " + d + " --out " + dir.file("a"), dir);
    ASSERT_EQ(r.status, 0) << r.output;
    const auto report = read_file(dir.file("a/report.md"));
    std::size_t pos = report.find("ROC-AUC");
    ASSERT_NE(pos, std::string::npos);
    for (const auto& v : ablation_variants()) {
        const auto at = report.find("| " + v.name + " |", pos);
        ASSERT_NE(at, std::string::npos) << v.name;
        pos = at;
    }
    const auto rows = read_metrics_csv(dir.file("a/metrics.csv"));
    EXPECT_EQ(rows.size(), ablation_variants().size() * 4);
}
