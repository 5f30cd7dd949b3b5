#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "chroma/metrics.hpp"
#include "chroma/scaling.hpp"

using namespace chroma;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& leaf) {
    fs::path dir = fs::path(CHROMA_TEST_SCRATCH) / "cli" / leaf;
    fs::create_directories(dir);
    return dir;
}

// Runs the installed-style binary through the shell; stdout/stderr land in
// `log`. Returns the exit code, or -1 when the process did not exit normally.
int run_cli(const std::string& args, const fs::path& log, const std::string& env_prefix = "") {
    const std::string cmd =
        env_prefix + "\"" + CHROMA_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& file, const std::string& text) {
    std::ofstream out(file);
    out << text;
}

// Generator config small enough for sub-second runs: one 64x64 scene.
const char* kGenConfig = R"({
  "seed": 5, "blocks": [17], "tile_side": 16, "bands": 4, "classes": 3,
  "noise_cell": 16, "coupling_cell": 8, "sites_per_tile": 6
})";

fs::path generated_dataset() {
    static fs::path dataset;
    if (dataset.empty()) {
        const fs::path dir = scratch_dir("dataset");
        write_file(dir / "gen.json", kGenConfig);
        REQUIRE(run_cli("gen-data --config \"" + (dir / "gen.json").string() + "\" --out \"" +
                            (dir / "data").string() + "\"",
                        dir / "gen.log") == 0);
        dataset = dir / "data";
    }
    return dataset;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and argument errors") {
    const auto dir = scratch_dir("help");
    CHECK(run_cli("--help", dir / "help.log") == 0);
    CHECK(slurp(dir / "help.log").find("gen-data") != std::string::npos);
    CHECK(run_cli("no-such-command", dir / "bad.log") == 2);
    CHECK(run_cli("", dir / "none.log") == 2);  // a subcommand is required
    CHECK(run_cli("gen-data", dir / "missing.log") == 2);  // --out is required
}

TEST_CASE("gen-data writes tiles, a manifest, and a run manifest") {
    const fs::path data = generated_dataset();
    CHECK(fs::exists(data / "manifest.json"));

    const json run = json::parse(slurp(data / "run_manifest.json"));
    CHECK(run.at("format") == "chroma-run-v1");
    CHECK(run.at("command") == "gen-data");
    CHECK(run.at("seed") == 5);
    CHECK(run.at("config").at("bands") == 4);
    CHECK(run.at("config").at("classes") == 3);
    REQUIRE(run.at("inputs").is_array());
    CHECK(run.at("inputs").size() == 1);
    CHECK(run.at("outputs").size() >= 17);  // manifest + 16 tiles
    CHECK(run.at("timings").at("total_seconds").get<double>() >= 0.0);

    std::size_t tiles_on_disk = 0;
    for (const auto& entry : fs::recursive_directory_iterator(data)) {
        if (entry.path().extension() == ".cft") ++tiles_on_disk;
    }
    CHECK(tiles_on_disk == 16);
}

TEST_CASE("exit codes distinguish i/o failures from bad configs") {
    const auto dir = scratch_dir("codes");
    // missing input file: i/o
    CHECK(run_cli("gen-data --config \"" + (dir / "absent.json").string() + "\" --out \"" +
                      (dir / "out").string() + "\"",
                  dir / "io.log") == 3);
    // unknown config key: validation
    write_file(dir / "typo.json", R"({"bandz": 4})");
    CHECK(run_cli("gen-data --config \"" + (dir / "typo.json").string() + "\" --out \"" +
                      (dir / "out").string() + "\"",
                  dir / "cfg.log") == 2);
    CHECK(slurp(dir / "cfg.log").find("unknown") != std::string::npos);
    // mutually exclusive flags: validation
    CHECK(run_cli("split-audit --out \"" + (dir / "out").string() + "\"", dir / "both.log") == 2);
    // unknown gradcheck scope: validation
    CHECK(run_cli("gradcheck --scope bogus", dir / "scope.log") == 2);
}

TEST_CASE("split-audit emits the fractions table") {
    const fs::path data = generated_dataset();
    const auto dir = scratch_dir("audit");
    REQUIRE(run_cli("split-audit --manifest \"" + (data / "manifest.json").string() + "\" --out \"" +
                        dir.string() + "\"",
                    dir / "audit.log") == 0);
    const std::string log = slurp(dir / "audit.log");
    CHECK(log.find("chi_squared train/val") != std::string::npos);
    const std::string csv = slurp(dir / "audit.csv");
    CHECK(csv.rfind("class,train_frac,val_frac,test_frac", 0) == 0);
    CHECK(csv.find("chi_squared_distance,") != std::string::npos);
    CHECK(json::parse(slurp(dir / "run_manifest.json")).at("command") == "split-audit");
}

TEST_CASE("train then eval round-trips through a checkpoint") {
    const fs::path data = generated_dataset();
    const auto dir = scratch_dir("train");
    const std::string run_config = std::string(R"({
  "manifest": ")") + (data / "manifest.json").string() + R"(",
  "model": {
    "family": "swin", "name": "smoke", "in_bands": 4, "num_classes": 3,
    "embed_dim": 8, "stage_depths": [1], "head_counts": [2],
    "window_side": 4, "mlp_ratio": 2.0, "patch_embed_side": 2
  },
  "train": {"epochs": 1, "batch": 8, "lr": 0.001, "seed": 3, "cell_side": 8, "patch_cells": 2}
})";
    write_file(dir / "run.json", run_config);
    REQUIRE(run_cli("train --config \"" + (dir / "run.json").string() + "\" --out \"" +
                        (dir / "out").string() + "\"",
                    dir / "train.log") == 0);
    const std::string log = slurp(dir / "train.log");
    CHECK(log.find("epoch 1") != std::string::npos);
    CHECK(log.find("done: 1 optimizer steps") != std::string::npos);  // 8 patches, window of 8
    CHECK(fs::exists(dir / "out" / "checkpoint.json"));
    CHECK(fs::exists(dir / "out" / "checkpoint.bin"));
    const auto records = metrics::parse_metrics_csv(dir / "out" / "metrics.csv");
    REQUIRE(records.size() == 1);
    CHECK(records[0].epoch == 1);
    CHECK(records[0].samples_seen == 8);

    const json run = json::parse(slurp(dir / "out" / "run_manifest.json"));
    CHECK(run.at("command") == "train");
    CHECK(run.at("seed") == 3);
    CHECK(run.at("config").at("model").at("family") == "swin");
    CHECK(run.at("config").at("train").at("epochs") == 1);

    const auto eval_dir = scratch_dir("eval");
    REQUIRE(run_cli("eval --checkpoint \"" + (dir / "out" / "checkpoint").string() + "\" --manifest \"" +
                        (data / "manifest.json").string() + "\" --split val --out \"" + eval_dir.string() +
                        "\"",
                    eval_dir / "eval.log") == 0);
    CHECK(slurp(eval_dir / "eval.log").find("OA ") != std::string::npos);
    const std::string confusion = slurp(eval_dir / "confusion.csv");
    CHECK(confusion.rfind("gt\\pred,", 0) == 0);

    // band-attention dumps need a model that has the module
    CHECK(run_cli("eval --checkpoint \"" + (dir / "out" / "checkpoint").string() + "\" --manifest \"" +
                      (data / "manifest.json").string() + "\" --attention att.cft --out \"" +
                      eval_dir.string() + "\"",
                  eval_dir / "att.log") == 2);
    CHECK(slurp(eval_dir / "att.log").find("chromaformer") != std::string::npos);
}

TEST_CASE("the output directory override beats the flag") {
    const auto dir = scratch_dir("override");
    write_file(dir / "fractions.csv",
               "class,train_frac,val_frac,test_frac\n"
               "a,0.6,0.5,0.55\n"
               "b,0.4,0.5,0.45\n");
    const fs::path env_out = dir / "env_out";
    const fs::path flag_out = dir / "flag_out";
    REQUIRE(run_cli("split-audit --fractions-csv \"" + (dir / "fractions.csv").string() + "\" --out \"" +
                        flag_out.string() + "\"",
                    dir / "override.log",
                    "CHROMA_OUT_DIR=\"" + env_out.string() + "\" ") == 0);
    CHECK(fs::exists(env_out / "audit.csv"));
    CHECK(!fs::exists(flag_out / "audit.csv"));
}

TEST_CASE("gradcheck subcommand writes its report") {
    const auto dir = scratch_dir("gradcheck");
    REQUIRE(run_cli("gradcheck --scope primitives --seeds 2 --out \"" + dir.string() + "\"",
                    dir / "grad.log") == 0);
    const std::string log = slurp(dir / "grad.log");
    CHECK(log.find("gradcheck primitives") != std::string::npos);
    CHECK(log.find("passed") != std::string::npos);
    const std::string csv = slurp(dir / "gradcheck.csv");
    CHECK(csv.rfind("target,scope,seeds,coords,max_rel_err,tolerance,seconds,passed", 0) == 0);
}

TEST_CASE("scaling-report and plot render csv plus svg") {
    const auto dir = scratch_dir("scaling");
    std::vector<scaling::RunRecord> records = {
        {"swin", "swin-t", 27, 8.7, 91.34},
        {"swin", "swin-s", 49, 12.6, 92.19},
        {"swin", "swin-b", 86, 14.8, 93.08},
    };
    write_file(dir / "records.csv", scaling::render_records_csv(records));
    REQUIRE(run_cli("scaling-report --records \"" + (dir / "records.csv").string() + "\" --out \"" +
                        (dir / "report").string() + "\"",
                    dir / "report.log") == 0);
    CHECK(fs::exists(dir / "report" / "scaling_report.csv"));
    CHECK(fs::exists(dir / "report" / "scaling_accuracy.svg"));
    CHECK(fs::exists(dir / "report" / "scaling_coefficient.svg"));
    CHECK(slurp(dir / "report" / "scaling_report.csv").find("Baseline") != std::string::npos);

    write_file(dir / "curve.csv",
               "epoch,samples_seen,loss,ma_loss,val_oa,seconds\n"
               "1,128,1.0,1.0,0.5,2.0\n"
               "2,256,0.8,0.9,0.6,2.0\n");
    REQUIRE(run_cli("plot --kind accuracy_curves --out \"" + (dir / "plots").string() + "\" \"" +
                        (dir / "curve.csv").string() + "\"",
                    dir / "plot.log") == 0);
    CHECK(fs::exists(dir / "plots" / "accuracy_curves.svg"));
    CHECK(run_cli("plot --kind sideways --out \"" + (dir / "plots").string() + "\" \"" +
                      (dir / "curve.csv").string() + "\"",
                  dir / "plot_bad.log") == 2);
}

}  // TEST_SUITE
