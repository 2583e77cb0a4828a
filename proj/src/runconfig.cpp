#include "surgidepth/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"
#include "surgidepth/errors.hpp"

namespace surgidepth {

namespace {

using nlohmann::json;

[[noreturn]] void key_error(const std::string& key, const std::string& why) {
    throw UsageError("config key \"" + key + "\" " + why);
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& prefix) {
    for (const auto& item : obj.items()) {
        if (known.find(item.key()) == known.end()) {
            key_error(prefix + item.key(), "is not recognized");
        }
    }
}

template <typename T>
void assign_number(const json& obj, const std::string& key, T& out) {
    if (!obj.contains(key)) {
        return;
    }
    const json& v = obj.at(key);
    if (!v.is_number()) {
        key_error(key, "must be a number");
    }
    if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) {
            key_error(key, "must be an integer");
        }
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) {
                key_error(key, "must be >= 0");
            }
        }
    }
    out = v.get<T>();
}

void assign_string(const json& obj, const std::string& key, std::string& out) {
    if (!obj.contains(key)) {
        return;
    }
    const json& v = obj.at(key);
    if (!v.is_string()) {
        key_error(key, "must be a string");
    }
    out = v.get<std::string>();
}

void apply_encoder(const json& obj, EncoderConfig& enc) {
    reject_unknown_keys(obj, {"patch", "depth", "dim", "heads", "img_h", "img_w", "channels",
                              "extract_layers", "ln_eps"},
                        "encoder.");
    assign_number(obj, "patch", enc.patch);
    assign_number(obj, "depth", enc.depth);
    assign_number(obj, "dim", enc.dim);
    assign_number(obj, "heads", enc.heads);
    assign_number(obj, "img_h", enc.img_h);
    assign_number(obj, "img_w", enc.img_w);
    assign_number(obj, "channels", enc.channels);
    assign_number(obj, "ln_eps", enc.ln_eps);
    if (obj.contains("extract_layers")) {
        const json& v = obj.at("extract_layers");
        if (!v.is_array()) {
            key_error("encoder.extract_layers", "must be an array of integers");
        }
        std::vector<int> layers;
        for (const json& e : v) {
            if (!e.is_number_integer()) {
                key_error("encoder.extract_layers", "must be an array of integers");
            }
            layers.push_back(e.get<int>());
        }
        enc.extract_layers = layers;
    }
}

void apply_file(const json& obj, RunConfig& cfg) {
    reject_unknown_keys(obj,
                        {"seed", "rank", "lr", "weight_decay", "batch_size", "epochs", "lambda1",
                         "lambda2", "lambda3", "grad_scales", "n_samples", "height", "width",
                         "n_bins", "d_min", "d_max", "encoder", "out_dir", "pred_dir", "gt_dir",
                         "model_path", "data_dir"},
                        "");
    assign_number(obj, "seed", cfg.seed);
    assign_number(obj, "rank", cfg.rank);
    assign_number(obj, "lr", cfg.train.lr);
    assign_number(obj, "weight_decay", cfg.train.weight_decay);
    assign_number(obj, "batch_size", cfg.train.batch_size);
    assign_number(obj, "epochs", cfg.train.epochs);
    assign_number(obj, "lambda1", cfg.train.loss.lambda1);
    assign_number(obj, "lambda2", cfg.train.loss.lambda2);
    assign_number(obj, "lambda3", cfg.train.loss.lambda3);
    assign_number(obj, "grad_scales", cfg.train.grad_scales);
    assign_number(obj, "n_samples", cfg.n_samples);
    assign_number(obj, "height", cfg.gen_h);
    assign_number(obj, "width", cfg.gen_w);
    assign_number(obj, "n_bins", cfg.bins.n_bins);
    assign_number(obj, "d_min", cfg.bins.d_min);
    assign_number(obj, "d_max", cfg.bins.d_max);
    assign_string(obj, "out_dir", cfg.out_dir);
    assign_string(obj, "pred_dir", cfg.pred_dir);
    assign_string(obj, "gt_dir", cfg.gt_dir);
    assign_string(obj, "model_path", cfg.model_path);
    assign_string(obj, "data_dir", cfg.data_dir);
    if (obj.contains("encoder")) {
        const json& enc = obj.at("encoder");
        if (!enc.is_object()) {
            key_error("encoder", "must be an object");
        }
        apply_encoder(enc, cfg.encoder);
    }
}

}  // namespace

void RunConfig::validate() const {
    try {
        encoder.validate();
        bins.validate();
        train.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (rank < 0) {
        throw UsageError("config key \"rank\" must be >= 0, got " + std::to_string(rank));
    }
    if (n_samples < 1) {
        throw UsageError("config key \"n_samples\" must be >= 1, got " +
                         std::to_string(n_samples));
    }
    if (gen_h < 16 || gen_w < 16) {
        throw UsageError("config keys \"height\"/\"width\" must be >= 16, got " +
                         std::to_string(gen_h) + "x" + std::to_string(gen_w));
    }
}

RunConfig parse_run_config(const FlagOverrides& flags) {
    RunConfig cfg;

    if (flags.config_path.has_value()) {
        std::ifstream in(*flags.config_path);
        if (!in) {
            throw UsageError("cannot open config file " + *flags.config_path);
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        const bool only_space =
            text.find_first_not_of(" \t\r\n") == std::string::npos;
        if (!only_space) {
            json obj;
            try {
                obj = json::parse(text);
            } catch (const json::parse_error& e) {
                throw UsageError(*flags.config_path + ": " + e.what());
            }
            if (!obj.is_object()) {
                throw UsageError(*flags.config_path + ": config must be a JSON object");
            }
            try {
                apply_file(obj, cfg);
            } catch (const json::exception& e) {
                throw UsageError(*flags.config_path + ": " + e.what());
            }
        }
    }

    if (flags.seed.has_value()) {
        cfg.seed = *flags.seed;
    }
    if (flags.rank.has_value()) {
        cfg.rank = *flags.rank;
    }
    if (flags.lr.has_value()) {
        cfg.train.lr = *flags.lr;
    }
    if (flags.epochs.has_value()) {
        cfg.train.epochs = *flags.epochs;
    }
    if (flags.out_dir.has_value()) {
        cfg.out_dir = *flags.out_dir;
    }
    if (flags.pred_dir.has_value()) {
        cfg.pred_dir = *flags.pred_dir;
    }
    if (flags.gt_dir.has_value()) {
        cfg.gt_dir = *flags.gt_dir;
    }
    if (flags.model_path.has_value()) {
        cfg.model_path = *flags.model_path;
    }
    if (flags.data_dir.has_value()) {
        cfg.data_dir = *flags.data_dir;
    }

    cfg.train.seed = cfg.seed;
    if (cfg.gen_h == 0) {
        cfg.gen_h = cfg.encoder.img_h;
    }
    if (cfg.gen_w == 0) {
        cfg.gen_w = cfg.encoder.img_w;
    }
    cfg.validate();
    return cfg;
}

}  // namespace surgidepth
