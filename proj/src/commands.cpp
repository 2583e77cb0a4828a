#include "surgidepth/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "surgidepth/checkpoint.hpp"
#include "surgidepth/errors.hpp"
#include "surgidepth/eval.hpp"
#include "surgidepth/image_io.hpp"
#include "surgidepth/rng.hpp"
#include "surgidepth/synth.hpp"

namespace surgidepth {

namespace fs = std::filesystem;

namespace {

std::string csv_real(double v) {
    char tmp[64];
    const auto res = std::to_chars(tmp, tmp + sizeof(tmp), v);
    return std::string(tmp, res.ptr);
}

std::string index_name(const std::string& prefix, int i, const std::string& ext) {
    char tmp[32];
    std::snprintf(tmp, sizeof(tmp), "%04d", i);
    return prefix + tmp + ext;
}

void require_dir_flag(const std::string& value, const std::string& flag,
                      const std::string& command) {
    if (value.empty()) {
        throw UsageError(command + " requires " + flag);
    }
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) {
        throw DataError(dir.string() + " is not a directory");
    }
    std::vector<fs::path> out;
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ext) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Pairs image_*.ppm files with their depth_*.pfm (preferred) or .pgm
// siblings and loads them at the model resolution.
std::vector<Sample> load_dataset(const std::string& data_dir, const EncoderConfig& enc) {
    const std::vector<fs::path> images = sorted_files(data_dir, ".ppm");
    if (images.empty()) {
        throw DataError("no .ppm images in " + data_dir);
    }
    std::vector<Sample> samples;
    samples.reserve(images.size());
    for (const fs::path& image_path : images) {
        std::string stem = image_path.stem().string();
        const std::string kImagePrefix = "image_";
        if (stem.rfind(kImagePrefix, 0) == 0) {
            stem = "depth_" + stem.substr(kImagePrefix.size());
        }
        fs::path depth_path = image_path.parent_path() / (stem + ".pfm");
        if (!fs::exists(depth_path)) {
            depth_path = image_path.parent_path() / (stem + ".pgm");
        }
        if (!fs::exists(depth_path)) {
            throw DataError("no depth file for " + image_path.string() + ", expected " + stem +
                            ".pfm or " + stem + ".pgm");
        }
        samples.push_back(
            load_sample(image_path.string(), depth_path.string(), enc.img_h, enc.img_w));
    }
    return samples;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    out << text;
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

std::string metrics_row(const MetricsReport& report) {
    return csv_real(report.abs_rel) + "," + csv_real(report.sq_rel) + "," +
           csv_real(report.rmse) + "," + csv_real(report.rmse_log) + "," + csv_real(report.delta);
}

MetricsReport eval_on_samples(const DepthModel& model, const std::vector<Sample>& samples) {
    std::vector<EvalPair> pairs;
    pairs.reserve(samples.size());
    for (const Sample& sample : samples) {
        pairs.push_back({model.predict(sample.image), sample.gt});
    }
    return evaluate_dataset(pairs);
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg) {
    require_dir_flag(cfg.out_dir, "--out", "gen-data");
    fs::create_directories(cfg.out_dir);
    Rng rng(cfg.seed);
    for (int i = 0; i < cfg.n_samples; ++i) {
        const Sample sample = synth_scene(rng.next_u64(), cfg.gen_h, cfg.gen_w);
        const fs::path out(cfg.out_dir);
        write_ppm((out / index_name("image_", i, ".ppm")).string(), sample.image);
        write_pfm((out / index_name("depth_", i, ".pfm")).string(), sample.gt);
        write_pgm16((out / index_name("depth_", i, ".pgm")).string(), sample.gt);
    }
}

void cmd_train(const RunConfig& cfg) {
    require_dir_flag(cfg.data_dir, "--data", "train");
    require_dir_flag(cfg.out_dir, "--out", "train");
    const std::vector<Sample> samples = load_dataset(cfg.data_dir, cfg.encoder);
    DepthModel model = make_model(cfg.encoder, cfg.bins, cfg.rank, cfg.seed);
    const std::vector<EpochLog> log = fit(model, samples, cfg.train);

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    save_checkpoint(model, (out / "model.json").string(), (out / "model.bin").string());
    std::string csv = "epoch,mean_loss\n";
    for (const EpochLog& entry : log) {
        csv += std::to_string(entry.epoch) + "," + csv_real(entry.mean_loss) + "\n";
    }
    write_text(out / "train_log.csv", csv);
}

void cmd_infer(const RunConfig& cfg) {
    require_dir_flag(cfg.model_path, "--model", "infer");
    require_dir_flag(cfg.data_dir, "--data", "infer");
    require_dir_flag(cfg.out_dir, "--out", "infer");
    const DepthModel model = load_checkpoint(cfg.model_path);
    const std::vector<fs::path> images = sorted_files(cfg.data_dir, ".ppm");
    if (images.empty()) {
        throw DataError("no .ppm images in " + cfg.data_dir);
    }

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    for (const fs::path& image_path : images) {
        Tensor image = read_ppm(image_path.string());
        {
            NoGradGuard guard;
            image = ops::bilinear_resize(image, cfg.encoder.img_h, cfg.encoder.img_w);
        }
        const DepthMap pred = model.predict(image);
        std::string stem = image_path.stem().string();
        const std::string kImagePrefix = "image_";
        if (stem.rfind(kImagePrefix, 0) == 0) {
            stem = stem.substr(kImagePrefix.size());
        }
        write_pfm((out / ("pred_" + stem + ".pfm")).string(), pred);
        write_pgm16((out / ("pred_" + stem + ".pgm")).string(), pred);
        write_pgm8_visualization((out / ("vis_" + stem + ".pgm")).string(), pred);
    }
}

void cmd_eval(const RunConfig& cfg) {
    require_dir_flag(cfg.pred_dir, "--pred", "eval");
    require_dir_flag(cfg.gt_dir, "--gt", "eval");
    require_dir_flag(cfg.out_dir, "--out", "eval");
    const std::vector<fs::path> preds = sorted_files(cfg.pred_dir, ".pfm");
    const std::vector<fs::path> gts = sorted_files(cfg.gt_dir, ".pfm");
    if (preds.size() != gts.size()) {
        throw DataError("mismatched pred/gt counts: " + std::to_string(preds.size()) + " vs " +
                        std::to_string(gts.size()));
    }
    if (preds.empty()) {
        throw DataError("no .pfm files to evaluate");
    }

    std::vector<EvalPair> pairs;
    pairs.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        pairs.push_back({read_pfm(preds[i].string()), read_pfm(gts[i].string())});
    }
    const MetricsReport report = evaluate_dataset(pairs);

    fs::create_directories(cfg.out_dir);
    const std::string csv = "abs_rel,sq_rel,rmse,rmse_log,delta\n" + metrics_row(report) + "\n";
    write_text(fs::path(cfg.out_dir) / "metrics.csv", csv);
    std::cout << csv;
}

void cmd_sweep_rank(const RunConfig& cfg) {
    require_dir_flag(cfg.data_dir, "--data", "sweep-rank");
    require_dir_flag(cfg.out_dir, "--out", "sweep-rank");
    const std::vector<Sample> samples = load_dataset(cfg.data_dir, cfg.encoder);

    std::string csv = "rank,trainable_params,abs_rel,sq_rel,rmse,rmse_log,delta\n";
    for (int rank : {1, 4, 8, 16}) {
        DepthModel model = make_model(cfg.encoder, cfg.bins, rank, cfg.seed);
        fit(model, samples, cfg.train);
        const MetricsReport report = eval_on_samples(model, samples);
        csv += std::to_string(rank) + "," +
               std::to_string(count_trainable_params(cfg.encoder, cfg.bins.n_bins, rank)) + "," +
               metrics_row(report) + "\n";
    }

    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "sweep.csv", csv);
    std::cout << csv;
}

int run_command(const std::string& command, const FlagOverrides& flags) {
    try {
        const RunConfig cfg = parse_run_config(flags);
        if (command == "gen-data") {
            cmd_gen_data(cfg);
        } else if (command == "train") {
            cmd_train(cfg);
        } else if (command == "infer") {
            cmd_infer(cfg);
        } else if (command == "eval") {
            cmd_eval(cfg);
        } else if (command == "sweep-rank") {
            cmd_sweep_rank(cfg);
        } else {
            throw UsageError("unknown command \"" + command + "\"");
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace surgidepth
