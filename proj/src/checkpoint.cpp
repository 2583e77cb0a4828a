#include "surgidepth/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "json.hpp"
#include "surgidepth/errors.hpp"

namespace surgidepth {

namespace {

using nlohmann::json;

constexpr const char* kFormatName = "surgidepth-checkpoint";
constexpr int kFormatVersion = 1;

struct TensorSlot {
    std::string name;
    Tensor* tensor;
    bool trainable;
};

// The one canonical tensor walk; save and load must agree on it exactly.
std::vector<TensorSlot> slot_walk(DepthModel& model) {
    std::vector<TensorSlot> slots;
    slots.push_back({"encoder.patch_w", &model.encoder.patch_w, false});
    slots.push_back({"encoder.patch_b", &model.encoder.patch_b, false});
    slots.push_back({"encoder.cls", &model.encoder.cls, false});
    slots.push_back({"encoder.pos", &model.encoder.pos, false});
    for (std::size_t i = 0; i < model.encoder.blocks.size(); ++i) {
        BlockWeights& b = model.encoder.blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        slots.push_back({p + "ln1_gain", &b.ln1_gain, false});
        slots.push_back({p + "ln1_bias", &b.ln1_bias, false});
        slots.push_back({p + "wq", &b.wq, false});
        slots.push_back({p + "bq", &b.bq, false});
        slots.push_back({p + "wk", &b.wk, false});
        slots.push_back({p + "bk", &b.bk, false});
        slots.push_back({p + "wv", &b.wv, false});
        slots.push_back({p + "bv", &b.bv, false});
        slots.push_back({p + "wo", &b.wo, false});
        slots.push_back({p + "bo", &b.bo, false});
        slots.push_back({p + "ln2_gain", &b.ln2_gain, false});
        slots.push_back({p + "ln2_bias", &b.ln2_bias, false});
        slots.push_back({p + "w1", &b.w1, false});
        slots.push_back({p + "b1", &b.b1, false});
        slots.push_back({p + "w2", &b.w2, false});
        slots.push_back({p + "b2", &b.b2, false});
    }
    for (std::size_t i = 0; i < model.adapters.size(); ++i) {
        QvLora& a = model.adapters[i];
        const std::string p = "block" + std::to_string(i) + ".";
        slots.push_back({p + "q.A", &a.q.A, true});
        slots.push_back({p + "q.B", &a.q.B, true});
        slots.push_back({p + "v.A", &a.v.A, true});
        slots.push_back({p + "v.B", &a.v.B, true});
    }
    slots.push_back({"head.weight", &model.head.weight, true});
    slots.push_back({"head.bias", &model.head.bias, true});
    return slots;
}

void append_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
}

double f64_from_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("cannot write " + path);
    }
}

template <typename T>
T require_field(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) {
        throw ParseError(path + ": manifest missing key \"" + key + "\"", 0);
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParseError(path + ": manifest key \"" + key + "\" has wrong type", 0);
    }
}

}  // namespace

void save_checkpoint(const DepthModel& model, const std::string& manifest_path,
                     const std::string& payload_path) {
    DepthModel& mutable_model = const_cast<DepthModel&>(model);
    const std::vector<TensorSlot> slots = slot_walk(mutable_model);

    json manifest;
    manifest["format"] = kFormatName;
    manifest["version"] = kFormatVersion;
    manifest["payload"] = std::filesystem::path(payload_path).filename().string();
    manifest["encoder"] = {
        {"patch", model.cfg.patch},       {"depth", model.cfg.depth},
        {"dim", model.cfg.dim},           {"heads", model.cfg.heads},
        {"img_h", model.cfg.img_h},       {"img_w", model.cfg.img_w},
        {"channels", model.cfg.channels}, {"extract_layers", model.cfg.extract_layers},
        {"ln_eps", model.cfg.ln_eps},
    };
    manifest["bins"] = {
        {"n_bins", model.bins.n_bins},
        {"d_min", model.bins.d_min},
        {"d_max", model.bins.d_max},
    };
    manifest["rank"] = model.rank;

    std::string payload;
    json tensors = json::array();
    long long offset = 0;
    for (const TensorSlot& slot : slots) {
        const Tensor& t = *slot.tensor;
        json entry;
        entry["name"] = slot.name;
        entry["shape"] = t.shape();
        entry["role"] = slot.trainable ? "trainable" : "frozen";
        entry["offset"] = offset;
        entry["count"] = t.numel();
        tensors.push_back(entry);
        for (double v : t.data()) {
            append_f64_le(payload, v);
        }
        offset += t.numel();
    }
    manifest["tensors"] = tensors;

    write_file(payload_path, payload);
    write_file(manifest_path, manifest.dump(2) + "\n");
}

DepthModel load_checkpoint(const std::string& manifest_path) {
    const std::string text = read_file(manifest_path);
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(manifest_path + ": " + e.what(), static_cast<long>(e.byte));
    }

    if (require_field<std::string>(manifest, "format", manifest_path) != kFormatName) {
        throw ParseError(manifest_path + ": unrecognized checkpoint format", 0);
    }
    if (require_field<int>(manifest, "version", manifest_path) != kFormatVersion) {
        throw ParseError(manifest_path + ": unsupported checkpoint version", 0);
    }

    const json enc = require_field<json>(manifest, "encoder", manifest_path);
    EncoderConfig cfg;
    cfg.patch = require_field<int>(enc, "patch", manifest_path);
    cfg.depth = require_field<int>(enc, "depth", manifest_path);
    cfg.dim = require_field<int>(enc, "dim", manifest_path);
    cfg.heads = require_field<int>(enc, "heads", manifest_path);
    cfg.img_h = require_field<int>(enc, "img_h", manifest_path);
    cfg.img_w = require_field<int>(enc, "img_w", manifest_path);
    cfg.channels = require_field<int>(enc, "channels", manifest_path);
    cfg.extract_layers = require_field<std::vector<int>>(enc, "extract_layers", manifest_path);
    cfg.ln_eps = require_field<double>(enc, "ln_eps", manifest_path);

    const json bj = require_field<json>(manifest, "bins", manifest_path);
    BinConfig bins;
    bins.n_bins = require_field<int>(bj, "n_bins", manifest_path);
    bins.d_min = require_field<double>(bj, "d_min", manifest_path);
    bins.d_max = require_field<double>(bj, "d_max", manifest_path);

    const int rank = require_field<int>(manifest, "rank", manifest_path);
    if (rank < 0) {
        throw ParseError(manifest_path + ": rank must be >= 0", 0);
    }

    DepthModel model;
    try {
        model = make_model(cfg, bins, rank, 0);
    } catch (const Error& e) {
        throw ParseError(manifest_path + ": invalid model configuration: " + e.what(), 0);
    }

    const std::filesystem::path payload_rel =
        require_field<std::string>(manifest, "payload", manifest_path);
    const std::filesystem::path payload_path =
        std::filesystem::path(manifest_path).parent_path() / payload_rel.filename();
    const std::string payload = read_file(payload_path.string());
    if (payload.size() % 8 != 0) {
        throw ParseError(payload_path.string() + ": payload size is not a multiple of 8",
                         static_cast<long>(payload.size()));
    }
    const long long total_values = static_cast<long long>(payload.size() / 8);

    const json tensors = require_field<json>(manifest, "tensors", manifest_path);
    if (!tensors.is_array()) {
        throw ParseError(manifest_path + ": \"tensors\" must be an array", 0);
    }
    const std::vector<TensorSlot> slots = slot_walk(model);
    if (tensors.size() != slots.size()) {
        throw ParseError(manifest_path + ": manifest lists " + std::to_string(tensors.size()) +
                             " tensors, model needs " + std::to_string(slots.size()),
                         0);
    }

    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(payload.data());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const json& entry = tensors.at(i);
        const std::string name = require_field<std::string>(entry, "name", manifest_path);
        if (name != slots[i].name) {
            throw ParseError(manifest_path + ": tensor " + std::to_string(i) + " is \"" + name +
                                 "\", expected \"" + slots[i].name + "\"",
                             0);
        }
        const std::string role = require_field<std::string>(entry, "role", manifest_path);
        const std::string expected_role = slots[i].trainable ? "trainable" : "frozen";
        if (role != expected_role) {
            throw ParseError(manifest_path + ": tensor \"" + name + "\" has role \"" + role +
                                 "\", expected \"" + expected_role + "\"",
                             0);
        }
        const std::vector<int> shape = require_field<std::vector<int>>(entry, "shape",
                                                                       manifest_path);
        if (shape != slots[i].tensor->shape()) {
            throw ParseError(manifest_path + ": tensor \"" + name + "\" has shape " +
                                 shape_str(shape) + ", expected " +
                                 shape_str(slots[i].tensor->shape()),
                             0);
        }
        const long long offset = require_field<long long>(entry, "offset", manifest_path);
        const long long count = require_field<long long>(entry, "count", manifest_path);
        if (count != slots[i].tensor->numel()) {
            throw ParseError(manifest_path + ": tensor \"" + name + "\" count mismatch", 0);
        }
        if (offset < 0 || offset + count > total_values) {
            throw ParseError(manifest_path + ": tensor \"" + name + "\" outside payload", 0);
        }
        std::span<double> dst = slots[i].tensor->raw();
        for (long long k = 0; k < count; ++k) {
            dst[static_cast<std::size_t>(k)] =
                f64_from_le(bytes + static_cast<std::size_t>(offset + k) * 8);
        }
    }
    return model;
}

}  // namespace surgidepth
