#include "surgidepth/image_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "surgidepth/errors.hpp"

namespace surgidepth {

namespace {

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

// Header scanner for the netpbm-style formats. Tracks the byte offset for
// error reporting and collects comment lines so PGM16 can recover its
// scale annotation.
struct HeaderScanner {
    const std::string& buf;
    const std::string& path;
    std::size_t pos = 0;
    std::vector<std::string> comments;

    HeaderScanner(const std::string& b, const std::string& p) : buf(b), path(p) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(path + ": " + what, static_cast<long>(pos));
    }

    void expect_magic(const std::string& magic) {
        if (buf.size() < magic.size() || buf.compare(0, magic.size(), magic) != 0) {
            pos = 0;
            fail("expected magic \"" + magic + "\"");
        }
        pos = magic.size();
    }

    void skip_separators() {
        while (pos < buf.size()) {
            const char c = buf[pos];
            if (c == '#') {
                const std::size_t line_start = pos + 1;
                while (pos < buf.size() && buf[pos] != '\n') {
                    ++pos;
                }
                comments.push_back(buf.substr(line_start, pos - line_start));
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    long next_uint(const std::string& what) {
        skip_separators();
        if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') {
            fail("expected " + what);
        }
        long value = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            value = value * 10 + (buf[pos] - '0');
            if (value > 1000000000L) {
                fail(what + " out of range");
            }
            ++pos;
        }
        return value;
    }

    double next_real(const std::string& what) {
        skip_separators();
        std::size_t end = pos;
        while (end < buf.size() && buf[end] != ' ' && buf[end] != '\t' && buf[end] != '\r' &&
               buf[end] != '\n') {
            ++end;
        }
        double value = 0.0;
        const auto res = std::from_chars(buf.data() + pos, buf.data() + end, value);
        if (res.ec != std::errc() || res.ptr != buf.data() + end || end == pos) {
            fail("expected " + what);
        }
        pos = end;
        return value;
    }

    // The netpbm header ends with exactly one whitespace byte before the
    // raster so that raster bytes are never eaten as separators.
    void expect_raster_start() {
        if (pos >= buf.size() || (buf[pos] != '\n' && buf[pos] != ' ' && buf[pos] != '\t' &&
                                  buf[pos] != '\r')) {
            fail("expected single whitespace before raster");
        }
        ++pos;
    }

    void require_payload(std::size_t bytes) const {
        if (buf.size() - pos < bytes) {
            throw ParseError(path + ": truncated raster, need " + std::to_string(bytes) +
                                 " bytes, have " + std::to_string(buf.size() - pos),
                             static_cast<long>(buf.size()));
        }
    }
};

std::string format_real(double v) {
    char tmp[64];
    const auto res = std::to_chars(tmp, tmp + sizeof(tmp), v);
    return std::string(tmp, res.ptr);
}

void append_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    out.push_back(static_cast<char>(bits & 0xFF));
    out.push_back(static_cast<char>((bits >> 8) & 0xFF));
    out.push_back(static_cast<char>((bits >> 16) & 0xFF));
    out.push_back(static_cast<char>((bits >> 24) & 0xFF));
}

float f32_from_bytes(const unsigned char* p, bool little_endian) {
    std::uint32_t bits;
    if (little_endian) {
        bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    } else {
        bits = static_cast<std::uint32_t>(p[3]) | (static_cast<std::uint32_t>(p[2]) << 8) |
               (static_cast<std::uint32_t>(p[1]) << 16) | (static_cast<std::uint32_t>(p[0]) << 24);
    }
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(2) != 3) {
        throw ShapeError("PPM image must be [h x w x 3], got " + shape_str(image.shape()));
    }
    const int h = image.dim(0);
    const int w = image.dim(1);
    std::string out;
    out.reserve(32 + static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
    out += "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (double v : image.data()) {
        const long byte = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        out.push_back(static_cast<char>(byte));
    }
    write_file(path, out);
}

Tensor read_ppm(const std::string& path) {
    const std::string buf = read_file(path);
    HeaderScanner scan(buf, path);
    scan.expect_magic("P6");
    const long w = scan.next_uint("width");
    const long h = scan.next_uint("height");
    const long maxval = scan.next_uint("maxval");
    if (w < 1 || h < 1) {
        scan.fail("image size must be positive");
    }
    if (maxval != 255) {
        scan.fail("unsupported maxval " + std::to_string(maxval) + ", expected 255");
    }
    scan.expect_raster_start();
    const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    scan.require_payload(count);
    std::vector<double> values(count);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + scan.pos;
    for (std::size_t i = 0; i < count; ++i) {
        values[i] = static_cast<double>(p[i]) / 255.0;
    }
    return Tensor::from_data({static_cast<int>(h), static_cast<int>(w), 3}, values);
}

void write_pgm16(const std::string& path, const DepthMap& depth, double scale_mm_per_unit) {
    depth.check_consistent();
    if (!(scale_mm_per_unit > 0.0) || !std::isfinite(scale_mm_per_unit)) {
        throw ConfigError("PGM16 scale must be positive and finite");
    }
    std::string out;
    out += "P5\n# scale_mm_per_unit=" + format_real(scale_mm_per_unit) + "\n" +
           std::to_string(depth.w) + " " + std::to_string(depth.h) + "\n65535\n";
    const std::size_t count = depth.values.size();
    for (std::size_t i = 0; i < count; ++i) {
        long unit = 0;
        if (depth.mask[i]) {
            unit = std::lround(depth.values[i] / scale_mm_per_unit);
            if (unit < 1 || unit > 65535) {
                throw DataError("depth " + std::to_string(depth.values[i]) +
                                " mm not representable at scale " + format_real(scale_mm_per_unit));
            }
        }
        out.push_back(static_cast<char>((unit >> 8) & 0xFF));
        out.push_back(static_cast<char>(unit & 0xFF));
    }
    write_file(path, out);
}

DepthMap read_pgm16(const std::string& path, double* scale_mm_per_unit) {
    const std::string buf = read_file(path);
    HeaderScanner scan(buf, path);
    scan.expect_magic("P5");
    const long w = scan.next_uint("width");
    const long h = scan.next_uint("height");
    const long maxval = scan.next_uint("maxval");
    if (w < 1 || h < 1) {
        scan.fail("image size must be positive");
    }
    if (maxval != 65535) {
        scan.fail("unsupported maxval " + std::to_string(maxval) + ", expected 65535");
    }
    scan.expect_raster_start();

    double scale = kDefaultPgmScale;
    for (const std::string& comment : scan.comments) {
        const std::string key = "scale_mm_per_unit=";
        const std::size_t at = comment.find(key);
        if (at == std::string::npos) {
            continue;
        }
        const char* first = comment.data() + at + key.size();
        const char* last = comment.data() + comment.size();
        const auto res = std::from_chars(first, last, scale);
        if (res.ec != std::errc() || !(scale > 0.0)) {
            throw ParseError(path + ": bad scale_mm_per_unit comment", 0);
        }
    }
    if (scale_mm_per_unit != nullptr) {
        *scale_mm_per_unit = scale;
    }

    const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    scan.require_payload(count * 2);
    DepthMap out;
    out.h = static_cast<int>(h);
    out.w = static_cast<int>(w);
    out.values.resize(count);
    out.mask.resize(count);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + scan.pos;
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned unit = (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
        out.values[i] = unit == 0 ? 0.0 : static_cast<double>(unit) * scale;
        out.mask[i] = unit == 0 ? 0 : 1;
    }
    return out;
}

void write_pfm(const std::string& path, const DepthMap& depth) {
    depth.check_consistent();
    std::string out;
    out += "Pf\n" + std::to_string(depth.w) + " " + std::to_string(depth.h) + "\n-1.0\n";
    for (int r = depth.h - 1; r >= 0; --r) {
        for (int c = 0; c < depth.w; ++c) {
            const std::size_t i =
                static_cast<std::size_t>(r) * static_cast<std::size_t>(depth.w) +
                static_cast<std::size_t>(c);
            const float v = depth.mask[i] ? static_cast<float>(depth.values[i]) : 0.0f;
            append_f32_le(out, v);
        }
    }
    write_file(path, out);
}

DepthMap read_pfm(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == 'F') {
        throw ParseError(path + ": color PFM not supported, expected grayscale \"Pf\"", 0);
    }
    HeaderScanner scan(buf, path);
    scan.expect_magic("Pf");
    const long w = scan.next_uint("width");
    const long h = scan.next_uint("height");
    const double scale = scan.next_real("scale");
    if (w < 1 || h < 1) {
        scan.fail("image size must be positive");
    }
    if (scale == 0.0) {
        scan.fail("scale must be nonzero");
    }
    scan.expect_raster_start();
    const bool little_endian = scale < 0.0;

    const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    scan.require_payload(count * 4);
    DepthMap out;
    out.h = static_cast<int>(h);
    out.w = static_cast<int>(w);
    out.values.resize(count);
    out.mask.resize(count);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + scan.pos;
    for (long file_row = 0; file_row < h; ++file_row) {
        const long r = h - 1 - file_row;
        for (long c = 0; c < w; ++c) {
            const std::size_t src = (static_cast<std::size_t>(file_row) *
                                     static_cast<std::size_t>(w) +
                                     static_cast<std::size_t>(c)) *
                                    4;
            const float v = f32_from_bytes(p + src, little_endian);
            if (!std::isfinite(v) || v < 0.0f) {
                throw ParseError(path + ": bad depth value", static_cast<long>(scan.pos + src));
            }
            const std::size_t dst = static_cast<std::size_t>(r) * static_cast<std::size_t>(w) +
                                    static_cast<std::size_t>(c);
            out.values[dst] = static_cast<double>(v);
            out.mask[dst] = v == 0.0f ? 0 : 1;
        }
    }
    return out;
}

void write_pgm8_visualization(const std::string& path, const DepthMap& depth) {
    depth.check_consistent();
    double v_min = std::numeric_limits<double>::infinity();
    double v_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        if (depth.mask[i]) {
            v_min = std::min(v_min, depth.values[i]);
            v_max = std::max(v_max, depth.values[i]);
        }
    }
    std::string out;
    out += "P5\n" + std::to_string(depth.w) + " " + std::to_string(depth.h) + "\n255\n";
    const double range = v_max - v_min;
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        long byte = 0;
        if (depth.mask[i]) {
            byte = range > 0.0 ? std::lround((depth.values[i] - v_min) / range * 255.0) : 128;
        }
        out.push_back(static_cast<char>(byte));
    }
    write_file(path, out);
}

namespace {

DepthMap resize_depth_nearest(const DepthMap& in, int out_h, int out_w) {
    DepthMap out;
    out.h = out_h;
    out.w = out_w;
    out.values.resize(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
    out.mask.resize(out.values.size());
    for (int r = 0; r < out_h; ++r) {
        const int src_r = std::min(in.h - 1, static_cast<int>((r + 0.5) * in.h / out_h));
        for (int c = 0; c < out_w; ++c) {
            const int src_c = std::min(in.w - 1, static_cast<int>((c + 0.5) * in.w / out_w));
            const std::size_t src = static_cast<std::size_t>(src_r) *
                                        static_cast<std::size_t>(in.w) +
                                    static_cast<std::size_t>(src_c);
            const std::size_t dst = static_cast<std::size_t>(r) *
                                        static_cast<std::size_t>(out_w) +
                                    static_cast<std::size_t>(c);
            out.values[dst] = in.values[src];
            out.mask[dst] = in.mask[src];
        }
    }
    return out;
}

}  // namespace

Sample load_sample(const std::string& image_path, const std::string& depth_path, int model_h,
                   int model_w) {
    if (model_h < 1 || model_w < 1) {
        throw ConfigError("model resolution must be positive, got " + std::to_string(model_h) +
                          "x" + std::to_string(model_w));
    }
    Tensor image = read_ppm(image_path);

    DepthMap depth;
    if (depth_path.size() >= 4 && depth_path.compare(depth_path.size() - 4, 4, ".pfm") == 0) {
        depth = read_pfm(depth_path);
    } else if (depth_path.size() >= 4 &&
               depth_path.compare(depth_path.size() - 4, 4, ".pgm") == 0) {
        depth = read_pgm16(depth_path);
    } else {
        throw DataError("unrecognized depth extension on " + depth_path +
                        ", expected .pfm or .pgm");
    }
    if (image.dim(0) != depth.h || image.dim(1) != depth.w) {
        throw DataError("image is " + std::to_string(image.dim(0)) + "x" +
                        std::to_string(image.dim(1)) + " but depth is " + std::to_string(depth.h) +
                        "x" + std::to_string(depth.w));
    }

    Sample out;
    {
        NoGradGuard guard;
        out.image = ops::bilinear_resize(image, model_h, model_w);
    }
    out.gt = (depth.h == model_h && depth.w == model_w)
                 ? depth
                 : resize_depth_nearest(depth, model_h, model_w);
    return out;
}

}  // namespace surgidepth
