#include <cmath>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "surgidepth/commands.hpp"
#include "surgidepth/errors.hpp"
#include "surgidepth/image_io.hpp"
#include "surgidepth/runconfig.hpp"
#include "surgidepth/synth.hpp"

using namespace surgidepth;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("surgidepth_cfg_" + tag + "_" + std::to_string(++counter));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }

    std::string file(const std::string& name) const { return (path / name).string(); }

    std::string write(const std::string& name, const std::string& text) const {
        std::ofstream out(path / name, std::ios::binary);
        out << text;
        return (path / name).string();
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string usage_message(const FlagOverrides& flags) {
    try {
        parse_run_config(flags);
    } catch (const UsageError& e) {
        return e.what();
    }
    return "";
}

std::vector<double> parse_csv_row(const std::string& row) {
    std::vector<double> out;
    std::istringstream in(row);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(std::stod(cell));
    return out;
}

}  // namespace

TEST_CASE("parse_run_config: no flags gives the stock recipe") {
    const RunConfig cfg = parse_run_config({});
    CHECK(cfg.train.lr == 1e-5);
    CHECK(cfg.train.weight_decay == 1e-4);
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.epochs == 50);
    CHECK(cfg.train.loss.lambda1 == 1.0);
    CHECK(cfg.train.loss.lambda2 == 0.85);
    CHECK(cfg.train.loss.lambda3 == 0.5);
    CHECK(cfg.rank == 4);
    CHECK(cfg.seed == 0);
    CHECK(cfg.bins.n_bins == 256);
    CHECK(cfg.bins.d_max == 150.0);
    CHECK(cfg.encoder.depth == 4);
    CHECK(cfg.encoder.dim == 64);
    // Generation size defaults to the encoder input size.
    CHECK(cfg.gen_h == cfg.encoder.img_h);
    CHECK(cfg.gen_w == cfg.encoder.img_w);
}

TEST_CASE("parse_run_config: empty or blank config file keeps defaults") {
    TempDir dir("empty");
    FlagOverrides flags;
    flags.config_path = dir.write("empty.json", "");
    const RunConfig a = parse_run_config(flags);
    CHECK(a.train.lr == 1e-5);
    CHECK(a.rank == 4);

    flags.config_path = dir.write("blank.json", " \n\t\n");
    const RunConfig b = parse_run_config(flags);
    CHECK(b.train.epochs == 50);
}

TEST_CASE("parse_run_config: file values load and flags win over them") {
    TempDir dir("override");
    FlagOverrides flags;
    flags.config_path = dir.write("cfg.json",
                                  R"({"lr": 1e-5, "epochs": 9, "rank": 8, "seed": 21,
                                      "weight_decay": 0.01, "batch_size": 2,
                                      "lambda1": 2.0, "lambda2": 0.5, "lambda3": 0.25,
                                      "n_samples": 3, "height": 24, "width": 40,
                                      "out_dir": "somewhere"})");
    const RunConfig file_only = parse_run_config(flags);
    CHECK(file_only.train.lr == 1e-5);
    CHECK(file_only.train.epochs == 9);
    CHECK(file_only.rank == 8);
    CHECK(file_only.seed == 21);
    CHECK(file_only.train.seed == 21);
    CHECK(file_only.train.weight_decay == 0.01);
    CHECK(file_only.train.batch_size == 2);
    CHECK(file_only.train.loss.lambda1 == 2.0);
    CHECK(file_only.n_samples == 3);
    CHECK(file_only.gen_h == 24);
    CHECK(file_only.gen_w == 40);
    CHECK(file_only.out_dir == "somewhere");

    flags.lr = 1e-3;
    flags.rank = 2;
    flags.out_dir = "elsewhere";
    const RunConfig overridden = parse_run_config(flags);
    CHECK(overridden.train.lr == 1e-3);
    CHECK(overridden.rank == 2);
    CHECK(overridden.out_dir == "elsewhere");
    CHECK(overridden.train.epochs == 9);  // untouched file value survives
}

TEST_CASE("parse_run_config: encoder block applies field by field") {
    TempDir dir("encoder");
    FlagOverrides flags;
    flags.config_path = dir.write("cfg.json",
                                  R"({"encoder": {"patch": 7, "depth": 2, "dim": 32, "heads": 4,
                                      "img_h": 28, "img_w": 28, "extract_layers": [1, 2]}})");
    const RunConfig cfg = parse_run_config(flags);
    CHECK(cfg.encoder.patch == 7);
    CHECK(cfg.encoder.depth == 2);
    CHECK(cfg.encoder.dim == 32);
    CHECK(cfg.encoder.extract_layers == std::vector<int>{1, 2});
    CHECK(cfg.gen_h == 28);  // follows the overridden encoder size
}

TEST_CASE("parse_run_config: unknown keys are usage errors naming the key") {
    TempDir dir("unknown");
    FlagOverrides flags;
    flags.config_path = dir.write("bad.json", R"({"learning_rate": 0.1})");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);
    CHECK(usage_message(flags).find("learning_rate") != std::string::npos);

    flags.config_path = dir.write("nested.json", R"({"encoder": {"layers": 2}})");
    CHECK(usage_message(flags).find("encoder.layers") != std::string::npos);
}

TEST_CASE("parse_run_config: type mismatches are usage errors") {
    TempDir dir("types");
    FlagOverrides flags;
    flags.config_path = dir.write("a.json", R"({"lr": "fast"})");
    CHECK(usage_message(flags).find("lr") != std::string::npos);

    flags.config_path = dir.write("b.json", R"({"epochs": 2.5})");
    CHECK(usage_message(flags).find("epochs") != std::string::npos);

    flags.config_path = dir.write("c.json", R"({"seed": -4})");
    CHECK(usage_message(flags).find("seed") != std::string::npos);

    flags.config_path = dir.write("d.json", R"({"out_dir": 7})");
    CHECK(usage_message(flags).find("out_dir") != std::string::npos);

    flags.config_path = dir.write("e.json", R"([1, 2, 3])");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);

    flags.config_path = dir.write("f.json", "{nope");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);

    flags.config_path = dir.file("missing.json");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);
}

TEST_CASE("parse_run_config: constraint violations are usage errors") {
    FlagOverrides flags;
    flags.rank = -1;
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);

    TempDir dir("constraints");
    flags = {};
    flags.config_path = dir.write("a.json", R"({"epochs": 0})");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);

    flags.config_path = dir.write("b.json", R"({"lambda2": 1.5})");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);

    flags.config_path = dir.write("c.json", R"({"height": 8})");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);

    flags.config_path = dir.write("d.json", R"({"encoder": {"dim": 30}})");
    CHECK_THROWS_AS(parse_run_config(flags), UsageError);  // 30 not divisible by 4 heads
}

TEST_CASE("run_command: gen-data twice is byte-identical, unknown command is usage") {
    TempDir dir("gen");
    FlagOverrides flags;
    flags.config_path = dir.write("cfg.json", R"({"n_samples": 2, "height": 16, "width": 16})");
    flags.seed = 7;
    flags.out_dir = dir.file("a");
    CHECK(run_command("gen-data", flags) == 0);
    flags.out_dir = dir.file("b");
    CHECK(run_command("gen-data", flags) == 0);

    int files = 0;
    for (const auto& entry : fs::directory_iterator(dir.file("a"))) {
        const std::string name = entry.path().filename().string();
        CHECK(slurp(dir.file("a") + "/" + name) == slurp(dir.file("b") + "/" + name));
        ++files;
    }
    CHECK(files == 6);  // 2 samples x (ppm + pfm + pgm)

    CHECK(run_command("transmogrify", flags) == 2);
    FlagOverrides bad;
    bad.rank = -1;
    CHECK(run_command("gen-data", bad) == 2);
}

TEST_CASE("run_command: eval exit codes for mismatched and missing inputs") {
    TempDir dir("evalcmd");
    fs::create_directories(dir.file("pred"));
    fs::create_directories(dir.file("gt"));
    write_pfm(dir.file("gt") + "/depth_0000.pfm", synth_scene(3, 16, 16).gt);

    FlagOverrides flags;
    flags.pred_dir = dir.file("pred");
    flags.gt_dir = dir.file("gt");
    flags.out_dir = dir.file("out");
    CHECK(run_command("eval", flags) == 1);  // 0 preds vs 1 gt

    FlagOverrides missing;
    missing.gt_dir = dir.file("gt");
    missing.out_dir = dir.file("out");
    CHECK(run_command("eval", missing) == 2);  // no --pred at all
}

TEST_CASE("cmd_eval: perfect prediction writes the 0,0,0,0,1 row") {
    TempDir dir("perfect");
    fs::create_directories(dir.file("pred"));
    fs::create_directories(dir.file("gt"));
    const DepthMap gt = synth_scene(12, 16, 16).gt;
    write_pfm(dir.file("gt") + "/depth_0000.pfm", gt);
    write_pfm(dir.file("pred") + "/pred_0000.pfm", gt);

    FlagOverrides flags;
    flags.pred_dir = dir.file("pred");
    flags.gt_dir = dir.file("gt");
    flags.out_dir = dir.file("out");
    REQUIRE(run_command("eval", flags) == 0);
    CHECK(slurp(dir.file("out") + "/metrics.csv") ==
          "abs_rel,sq_rel,rmse,rmse_log,delta\n0,0,0,0,1\n");
}

TEST_CASE("cmd_eval: CSV row matches hand-computed metrics") {
    TempDir dir("handrow");
    fs::create_directories(dir.file("pred"));
    fs::create_directories(dir.file("gt"));
    // Medians match (both 2 under the lower-middle rule), so scaling is a
    // no-op and the metrics reduce to direct per-pixel arithmetic.
    write_pfm(dir.file("gt") + "/depth_0000.pfm", DepthMap::full_valid(2, 2, {2.0, 2.0, 4.0, 8.0}));
    write_pfm(dir.file("pred") + "/pred_0000.pfm",
              DepthMap::full_valid(2, 2, {2.0, 2.0, 2.0, 14.0}));

    FlagOverrides flags;
    flags.pred_dir = dir.file("pred");
    flags.gt_dir = dir.file("gt");
    flags.out_dir = dir.file("out");
    REQUIRE(run_command("eval", flags) == 0);

    const std::string csv = slurp(dir.file("out") + "/metrics.csv");
    const std::size_t line_break = csv.find('\n');
    const std::vector<double> row = parse_csv_row(csv.substr(line_break + 1));
    REQUIRE(row.size() == 5);
    CHECK(row[0] == doctest::Approx((0.5 + 0.75) / 4).epsilon(1e-12));
    CHECK(row[1] == doctest::Approx((1.0 + 4.5) / 4).epsilon(1e-12));
    CHECK(row[2] == doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
    const double log_half = std::log(0.5);
    const double log_ratio = std::log(14.0 / 8.0);
    CHECK(row[3] ==
          doctest::Approx(std::sqrt((log_half * log_half + log_ratio * log_ratio) / 4))
              .epsilon(1e-12));
    CHECK(row[4] == doctest::Approx(0.5).epsilon(1e-12));
}
