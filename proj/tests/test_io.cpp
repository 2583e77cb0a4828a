#include <cstdint>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "surgidepth/checkpoint.hpp"
#include "surgidepth/errors.hpp"
#include "surgidepth/image_io.hpp"
#include "surgidepth/model.hpp"
#include "surgidepth/rng.hpp"
#include "surgidepth/synth.hpp"
#include "surgidepth/trainer.hpp"

using namespace surgidepth;
namespace fs = std::filesystem;

namespace {

// Each test gets its own directory under the system temp root so parallel
// runs and reruns never collide on paths.
struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("surgidepth_io_" + tag + "_" + std::to_string(++counter));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }

    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i)) return false;
    return true;
}

bool depth_equal(const DepthMap& a, const DepthMap& b) {
    if (a.h != b.h || a.w != b.w) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        if (a.values[i] != b.values[i] || a.mask[i] != b.mask[i]) return false;
    return true;
}

EncoderConfig io_config() {
    EncoderConfig cfg;
    cfg.patch = 4;
    cfg.depth = 2;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.img_h = 16;
    cfg.img_w = 16;
    cfg.channels = 3;
    cfg.extract_layers = {1, 2};
    return cfg;
}

}  // namespace

TEST_CASE("synth_scene: shape, mask, and depth bounds") {
    const Sample s = synth_scene(42, 24, 32);
    CHECK(s.image.shape() == Shape{24, 32, 3});
    CHECK(s.gt.h == 24);
    CHECK(s.gt.w == 32);
    CHECK(s.gt.valid_count() == 24 * 32);
    double d_min = 1e9, d_max = -1e9;
    for (double v : s.gt.values) {
        d_min = std::min(d_min, v);
        d_max = std::max(d_max, v);
    }
    // The min-max mapping attains both endpoints exactly.
    CHECK(d_min == 20.0);
    CHECK(d_max == 150.0);
    for (double v : s.image.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("synth_scene: same seed is bitwise identical") {
    const Sample a = synth_scene(9001, 20, 20);
    const Sample b = synth_scene(9001, 20, 20);
    CHECK(bitwise_equal(a.image, b.image));
    CHECK(depth_equal(a.gt, b.gt));
}

TEST_CASE("synth_scene: depth extremes within [20, 150] for 100 seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Sample s = synth_scene(seed, 16, 16);
        for (double v : s.gt.values) {
            CHECK(v >= 20.0);
            CHECK(v <= 150.0);
        }
    }
}

TEST_CASE("synth_scene: different seeds differ in at least 1% of depth pixels") {
    const Sample a = synth_scene(1, 32, 32);
    const Sample b = synth_scene(2, 32, 32);
    int differing = 0;
    for (std::size_t i = 0; i < a.gt.values.size(); ++i)
        if (a.gt.values[i] != b.gt.values[i]) ++differing;
    CHECK(differing >= static_cast<int>(a.gt.values.size()) / 100);
}

TEST_CASE("synth_scene: rejects tiny scenes") {
    CHECK_THROWS_AS(synth_scene(0, 15, 64), ConfigError);
    CHECK_THROWS_AS(synth_scene(0, 64, 15), ConfigError);
}

TEST_CASE("PPM: hand-built bytes for a 2x1 image") {
    TempDir dir("ppm_hand");
    const Tensor image = Tensor::from_data({1, 2, 3}, {0.0, 1.0, 128.0 / 255.0,  //
                                                       1.0 / 255.0, 0.5, 1.0});
    write_ppm(dir.file("a.ppm"), image);
    const std::string bytes = slurp(dir.file("a.ppm"));
    const std::string expected = std::string("P6\n2 1\n255\n") +
                                 '\x00' + '\xFF' + '\x80' + '\x01' + '\x80' + '\xFF';
    CHECK(bytes == expected);

    const Tensor back = read_ppm(dir.file("a.ppm"));
    CHECK(back.shape() == Shape{1, 2, 3});
    CHECK(back.at(0) == 0.0);
    CHECK(back.at(1) == 1.0);
    CHECK(back.at(2) == 128.0 / 255.0);
    CHECK(back.at(3) == 1.0 / 255.0);
}

TEST_CASE("PPM: write-read-write is a byte-level fixpoint") {
    TempDir dir("ppm_fix");
    Rng rng(3);
    std::vector<double> values(6 * 5 * 3);
    for (double& v : values) v = rng.uniform(0.0, 1.0);
    write_ppm(dir.file("a.ppm"), Tensor::from_data({6, 5, 3}, values));
    write_ppm(dir.file("b.ppm"), read_ppm(dir.file("a.ppm")));
    CHECK(slurp(dir.file("a.ppm")) == slurp(dir.file("b.ppm")));
}

TEST_CASE("PPM: header comments are skipped") {
    TempDir dir("ppm_comment");
    spit(dir.file("c.ppm"), std::string("P6\n# a comment\n1 1\n255\n") + '\x40' + '\x41' + '\x42');
    const Tensor t = read_ppm(dir.file("c.ppm"));
    CHECK(t.at(0) == 0x40 / 255.0);
    CHECK(t.at(2) == 0x42 / 255.0);
}

TEST_CASE("PPM: malformed files raise ParseError with a byte offset") {
    TempDir dir("ppm_bad");
    spit(dir.file("magic.ppm"), "P5\n1 1\n255\n??");
    CHECK_THROWS_AS(read_ppm(dir.file("magic.ppm")), ParseError);
    try {
        read_ppm(dir.file("magic.ppm"));
    } catch (const ParseError& e) {
        CHECK(e.byte_offset == 0);
    }

    spit(dir.file("trunc.ppm"), std::string("P6\n2 2\n255\n") + "abc");
    try {
        read_ppm(dir.file("trunc.ppm"));
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(e.byte_offset == 14);  // file size: header 11 + 3 payload bytes
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    spit(dir.file("maxval.ppm"), "P6\n1 1\n65535\n..");
    CHECK_THROWS_AS(read_ppm(dir.file("maxval.ppm")), ParseError);
    CHECK_THROWS_AS(read_ppm(dir.file("missing.ppm")), DataError);
}

TEST_CASE("PGM16: 150 mm at scale 0.01 stores 15000, big-endian") {
    TempDir dir("pgm_store");
    DepthMap depth = DepthMap::full_valid(1, 2, {150.0, 0.05});
    depth.mask[1] = 0;
    depth.values[1] = 0.0;
    write_pgm16(dir.file("d.pgm"), depth, 0.01);
    const std::string bytes = slurp(dir.file("d.pgm"));
    const std::string header = "P5\n# scale_mm_per_unit=0.01\n2 1\n65535\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(bytes.compare(0, header.size(), header) == 0);
    // 15000 = 0x3A98 with the most significant byte first; invalid pixel 0.
    CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0x3A);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 0x98);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 0x00);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 0x00);
}

TEST_CASE("PGM16: zero pixel reads back masked-invalid, scale comment honored") {
    TempDir dir("pgm_zero");
    DepthMap depth = DepthMap::full_valid(2, 2, {20.0, 64.21, 150.0, 0.0});
    depth.mask[3] = 0;
    write_pgm16(dir.file("d.pgm"), depth, 0.01);
    double scale = 0.0;
    const DepthMap back = read_pgm16(dir.file("d.pgm"), &scale);
    CHECK(scale == 0.01);
    CHECK(back.mask[3] == 0);
    CHECK(back.values[3] == 0.0);
    CHECK(back.mask[0] == 1);
    CHECK(back.values[0] == 2000 * 0.01);
    CHECK(back.values[1] == 6421 * 0.01);
    CHECK(back.values[2] == 15000 * 0.01);
}

TEST_CASE("PGM16: round-trip is exact at the declared scale") {
    TempDir dir("pgm_round");
    Rng rng(11);
    std::vector<double> values(7 * 4);
    for (double& v : values) v = rng.uniform(1.0, 600.0);
    DepthMap depth = DepthMap::full_valid(7, 4, values);
    depth.mask[5] = 0;
    depth.values[5] = 0.0;

    write_pgm16(dir.file("a.pgm"), depth);
    const DepthMap once = read_pgm16(dir.file("a.pgm"));
    write_pgm16(dir.file("b.pgm"), once);
    CHECK(slurp(dir.file("a.pgm")) == slurp(dir.file("b.pgm")));
    CHECK(depth_equal(once, read_pgm16(dir.file("b.pgm"))));
}

TEST_CASE("PGM16: out-of-range depths are rejected") {
    TempDir dir("pgm_range");
    CHECK_THROWS_AS(write_pgm16(dir.file("big.pgm"), DepthMap::full_valid(1, 1, {656.0}), 0.01),
                    DataError);
    // Rounds to stored 0, which would silently flip the pixel invalid.
    CHECK_THROWS_AS(write_pgm16(dir.file("tiny.pgm"), DepthMap::full_valid(1, 1, {0.004}), 0.01),
                    DataError);
    CHECK_THROWS_AS(write_pgm16(dir.file("s.pgm"), DepthMap::full_valid(1, 1, {1.0}), 0.0),
                    ConfigError);
}

TEST_CASE("PFM: hand-built bytes, bottom-up rows, little-endian") {
    TempDir dir("pfm_hand");
    // Row 0 holds 1.0, row 1 holds 2.0; the file stores the bottom row
    // first, so the payload starts with 2.0f.
    write_pfm(dir.file("d.pfm"), DepthMap::full_valid(2, 1, {1.0, 2.0}));
    const std::string bytes = slurp(dir.file("d.pfm"));
    const std::string header = "Pf\n1 2\n-1.0\n";
    REQUIRE(bytes.size() == header.size() + 8);
    CHECK(bytes.compare(0, header.size(), header) == 0);
    const unsigned char expected[8] = {0x00, 0x00, 0x00, 0x40,   // 2.0f
                                      0x00, 0x00, 0x80, 0x3F};  // 1.0f
    for (int i = 0; i < 8; ++i)
        CHECK(static_cast<unsigned char>(bytes[header.size() + i]) == expected[i]);
}

TEST_CASE("PFM: write-then-read preserves 32-bit values exactly") {
    TempDir dir("pfm_round");
    Rng rng(5);
    std::vector<double> values(9 * 6);
    for (double& v : values) v = rng.uniform(0.1, 150.0);
    DepthMap depth = DepthMap::full_valid(9, 6, values);
    depth.mask[17] = 0;
    depth.values[17] = 0.0;

    write_pfm(dir.file("a.pfm"), depth);
    const DepthMap once = read_pfm(dir.file("a.pfm"));
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        CHECK(once.values[i] == static_cast<double>(static_cast<float>(depth.values[i])));
        CHECK(once.mask[i] == depth.mask[i]);
    }
    // Values are float-representable after one pass, so a second trip is
    // bitwise at both the value and the file level.
    write_pfm(dir.file("b.pfm"), once);
    CHECK(slurp(dir.file("a.pfm")) == slurp(dir.file("b.pfm")));
    CHECK(depth_equal(once, read_pfm(dir.file("b.pfm"))));
}

TEST_CASE("PFM: positive scale means big-endian payload") {
    TempDir dir("pfm_be");
    spit(dir.file("be.pfm"), std::string("Pf\n1 1\n1.0\n") + '\x40' + '\x00' + '\x00' + '\x00');
    const DepthMap back = read_pfm(dir.file("be.pfm"));
    CHECK(back.values[0] == 2.0);
    CHECK(back.mask[0] == 1);
}

TEST_CASE("PFM: malformed files are rejected") {
    TempDir dir("pfm_bad");
    spit(dir.file("color.pfm"), "PF\n1 1\n-1.0\n............");
    CHECK_THROWS_AS(read_pfm(dir.file("color.pfm")), ParseError);

    spit(dir.file("zscale.pfm"), std::string("Pf\n1 1\n0\n") + std::string(4, '\0'));
    CHECK_THROWS_AS(read_pfm(dir.file("zscale.pfm")), ParseError);

    spit(dir.file("trunc.pfm"), "Pf\n2 2\n-1.0\nxx");
    CHECK_THROWS_AS(read_pfm(dir.file("trunc.pfm")), ParseError);

    // -1.0f payload value: finite but negative, not a depth.
    spit(dir.file("neg.pfm"), std::string("Pf\n1 1\n-1.0\n") + '\x00' + '\x00' + '\x80' + '\xBF');
    CHECK_THROWS_AS(read_pfm(dir.file("neg.pfm")), ParseError);
}

TEST_CASE("visualization: min-max normalization and constant gray") {
    TempDir dir("vis");
    DepthMap depth = DepthMap::full_valid(1, 3, {20.0, 85.0, 150.0});
    depth.mask[1] = 0;
    write_pgm8_visualization(dir.file("v.pgm"), depth);
    const std::string bytes = slurp(dir.file("v.pgm"));
    const std::string header = "P5\n3 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 3);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);    // min
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 0);    // invalid
    CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);  // max

    write_pgm8_visualization(dir.file("c.pgm"), DepthMap::full_valid(2, 2, {7.0, 7.0, 7.0, 7.0}));
    const std::string constant = slurp(dir.file("c.pgm"));
    for (std::size_t i = constant.size() - 4; i < constant.size(); ++i)
        CHECK(static_cast<unsigned char>(constant[i]) == 128);
}

TEST_CASE("load_sample: at model size values pass through unchanged") {
    TempDir dir("load_same");
    const Sample scene = synth_scene(77, 16, 16);
    write_ppm(dir.file("image_0000.ppm"), scene.image);
    write_pfm(dir.file("depth_0000.pfm"), scene.gt);

    const Sample loaded = load_sample(dir.file("image_0000.ppm"), dir.file("depth_0000.pfm"), 16, 16);
    CHECK(bitwise_equal(loaded.image, read_ppm(dir.file("image_0000.ppm"))));
    CHECK(depth_equal(loaded.gt, read_pfm(dir.file("depth_0000.pfm"))));
}

TEST_CASE("load_sample: depth resize is nearest-neighbor, no new values") {
    TempDir dir("load_nn");
    const Sample scene = synth_scene(78, 16, 16);
    write_ppm(dir.file("image_0000.ppm"), scene.image);
    DepthMap gt = scene.gt;
    gt.mask[0] = 0;
    gt.values[0] = 0.0;
    write_pfm(dir.file("depth_0000.pfm"), gt);

    const Sample loaded = load_sample(dir.file("image_0000.ppm"), dir.file("depth_0000.pfm"), 32, 32);
    CHECK(loaded.gt.h == 32);
    CHECK(loaded.gt.w == 32);
    std::set<double> source_values;
    const DepthMap stored = read_pfm(dir.file("depth_0000.pfm"));
    for (std::size_t i = 0; i < stored.values.size(); ++i)
        if (stored.mask[i]) source_values.insert(stored.values[i]);
    for (std::size_t i = 0; i < loaded.gt.values.size(); ++i)
        if (loaded.gt.mask[i]) CHECK(source_values.count(loaded.gt.values[i]) == 1);
    // Doubling each dimension replicates every source pixel, top-left one
    // included; its invalidity lands on a 2x2 block, never blended away.
    CHECK(loaded.gt.mask[0] == 0);
    CHECK(loaded.gt.mask[1] == 0);
    CHECK(loaded.gt.mask[32] == 0);
    CHECK(loaded.gt.mask[33] == 0);
    CHECK(loaded.gt.valid_count() == 32 * 32 - 4);
}

TEST_CASE("load_sample: 32x32 to 16x16 image uses the shared bilinear kernel") {
    TempDir dir("load_half");
    const Sample scene = synth_scene(79, 32, 32);
    write_ppm(dir.file("image_0000.ppm"), scene.image);
    write_pfm(dir.file("depth_0000.pfm"), scene.gt);

    const Sample loaded = load_sample(dir.file("image_0000.ppm"), dir.file("depth_0000.pfm"), 16, 16);
    NoGradGuard guard;
    const Tensor expected = ops::bilinear_resize(read_ppm(dir.file("image_0000.ppm")), 16, 16);
    CHECK(bitwise_equal(loaded.image, expected));
}

TEST_CASE("load_sample: mismatched pair and bad extension are data errors") {
    TempDir dir("load_bad");
    write_ppm(dir.file("image_0000.ppm"), synth_scene(80, 16, 16).image);
    write_pfm(dir.file("depth_0000.pfm"), synth_scene(81, 16, 20).gt);
    CHECK_THROWS_AS(load_sample(dir.file("image_0000.ppm"), dir.file("depth_0000.pfm"), 16, 16),
                    DataError);
    CHECK_THROWS_AS(load_sample(dir.file("image_0000.ppm"), dir.file("depth_0000.txt"), 16, 16),
                    DataError);
    CHECK_THROWS_AS(load_sample(dir.file("image_0000.ppm"), dir.file("depth_0000.pfm"), 0, 16),
                    ConfigError);
}

TEST_CASE("checkpoint: round-trip is bitwise and preserves roles") {
    TempDir dir("ckpt_round");
    const DepthModel model = make_model(io_config(), BinConfig{}, 2, 123);
    save_checkpoint(model, dir.file("model.json"), dir.file("model.bin"));
    DepthModel back = load_checkpoint(dir.file("model.json"));

    CHECK(back.cfg.dim == model.cfg.dim);
    CHECK(back.cfg.extract_layers == model.cfg.extract_layers);
    CHECK(back.bins.n_bins == model.bins.n_bins);
    CHECK(back.rank == model.rank);
    CHECK(frozen_hash(back) == frozen_hash(model));
    REQUIRE(back.adapters.size() == model.adapters.size());
    for (std::size_t i = 0; i < model.adapters.size(); ++i) {
        CHECK(bitwise_equal(back.adapters[i].q.A, model.adapters[i].q.A));
        CHECK(bitwise_equal(back.adapters[i].q.B, model.adapters[i].q.B));
        CHECK(bitwise_equal(back.adapters[i].v.A, model.adapters[i].v.A));
        CHECK(bitwise_equal(back.adapters[i].v.B, model.adapters[i].v.B));
        CHECK(back.adapters[i].q.A.requires_grad());
        CHECK(back.adapters[i].v.B.requires_grad());
    }
    CHECK(bitwise_equal(back.head.weight, model.head.weight));
    CHECK(bitwise_equal(back.head.bias, model.head.bias));
    CHECK(back.head.weight.requires_grad());
    CHECK_FALSE(back.encoder.patch_w.requires_grad());
    CHECK_FALSE(back.encoder.blocks[0].wq.requires_grad());

    // Same weights, same predictions, bit for bit.
    const Sample probe = synth_scene(5, 16, 16);
    const DepthMap a = model.predict(probe.image);
    const DepthMap b = back.predict(probe.image);
    CHECK(depth_equal(a, b));
}

TEST_CASE("checkpoint: saving twice yields byte-identical files") {
    TempDir dir("ckpt_det");
    const DepthModel model = make_model(io_config(), BinConfig{}, 1, 9);
    save_checkpoint(model, dir.file("a.json"), dir.file("a.bin"));
    save_checkpoint(model, dir.file("b.json"), dir.file("b.bin"));
    CHECK(slurp(dir.file("a.bin")) == slurp(dir.file("b.bin")));
    // Manifests differ only in the payload basename they reference.
    std::string a = slurp(dir.file("a.json"));
    std::string b = slurp(dir.file("b.json"));
    const std::size_t at_a = a.find("a.bin");
    const std::size_t at_b = b.find("b.bin");
    REQUIRE(at_a != std::string::npos);
    a.replace(at_a, 5, "x.bin");
    b.replace(at_b, 5, "x.bin");
    CHECK(a == b);
}

TEST_CASE("checkpoint: rank-0 model round-trips") {
    TempDir dir("ckpt_r0");
    const DepthModel model = make_model(io_config(), BinConfig{}, 0, 4);
    save_checkpoint(model, dir.file("model.json"), dir.file("model.bin"));
    const DepthModel back = load_checkpoint(dir.file("model.json"));
    CHECK(back.adapters.empty());
    CHECK(frozen_hash(back) == frozen_hash(model));
    CHECK(bitwise_equal(back.head.weight, model.head.weight));
}

TEST_CASE("checkpoint: tampered manifests and payloads are rejected") {
    TempDir dir("ckpt_bad");
    const DepthModel model = make_model(io_config(), BinConfig{}, 1, 8);
    save_checkpoint(model, dir.file("model.json"), dir.file("model.bin"));

    std::string manifest = slurp(dir.file("model.json"));
    const std::size_t role_at = manifest.find("\"role\": \"trainable\"");
    REQUIRE(role_at != std::string::npos);
    std::string flipped = manifest;
    flipped.replace(role_at, 19, "\"role\": \"frozen\"\x20\x20\x20");
    spit(dir.file("model.json"), flipped);
    CHECK_THROWS_AS(load_checkpoint(dir.file("model.json")), ParseError);

    spit(dir.file("model.json"), "{not json");
    CHECK_THROWS_AS(load_checkpoint(dir.file("model.json")), ParseError);

    spit(dir.file("model.json"), "{\"format\": \"something-else\", \"version\": 1}");
    CHECK_THROWS_AS(load_checkpoint(dir.file("model.json")), ParseError);

    spit(dir.file("model.json"), manifest);
    const std::string payload = slurp(dir.file("model.bin"));
    spit(dir.file("model.bin"), payload.substr(0, payload.size() - 8));
    CHECK_THROWS_AS(load_checkpoint(dir.file("model.json")), ParseError);
}
