#include "surgidepth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "surgidepth/errors.hpp"
#include "surgidepth/rng.hpp"

namespace surgidepth {

namespace {

struct Bump {
    double cx;
    double cy;
    double sigma;
    double amp;
};

// Pretend pixel pitch for normal estimation; keeps slopes moderate so the
// shading stays informative instead of saturating at grazing angles.
constexpr double kPixelPitchMm = 4.0;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Sample synth_scene(std::uint64_t seed, int h, int w) {
    if (h < 16 || w < 16) {
        throw ConfigError("synthetic scene needs h, w >= 16, got " + std::to_string(h) + "x" +
                          std::to_string(w));
    }

    Rng rng(seed);

    // All random draws happen up front in a fixed order; the pixel loops
    // below are pure functions of these values.
    const int n_bumps = 3 + static_cast<int>(rng.next_below(6));
    std::vector<Bump> bumps(static_cast<std::size_t>(n_bumps));
    const double min_dim = static_cast<double>(std::min(h, w));
    for (Bump& b : bumps) {
        b.cx = rng.uniform(0.0, static_cast<double>(w - 1));
        b.cy = rng.uniform(0.0, static_cast<double>(h - 1));
        b.sigma = rng.uniform(0.12, 0.35) * min_dim;
        b.amp = rng.uniform(-1.0, 1.0);
    }

    double lx = rng.uniform(-0.6, 0.6);
    double ly = rng.uniform(-0.6, 0.6);
    double lz = 1.0;
    const double l_norm = std::sqrt(lx * lx + ly * ly + lz * lz);
    lx /= l_norm;
    ly /= l_norm;
    lz /= l_norm;

    double base[3];
    double freq_x[3];
    double freq_y[3];
    double phase[3];
    double tex_amp[3];
    const double two_pi = 2.0 * std::acos(-1.0);
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.35, 0.85);
        freq_x[c] = rng.uniform(0.5, 3.0) * two_pi / static_cast<double>(w);
        freq_y[c] = rng.uniform(0.5, 3.0) * two_pi / static_cast<double>(h);
        phase[c] = rng.uniform(0.0, two_pi);
        tex_amp[c] = rng.uniform(0.05, 0.15);
    }

    std::vector<double> surface(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    double s_min = std::numeric_limits<double>::infinity();
    double s_max = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double s = 0.0;
            for (const Bump& b : bumps) {
                const double dx = static_cast<double>(c) - b.cx;
                const double dy = static_cast<double>(r) - b.cy;
                s += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            surface[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) +
                    static_cast<std::size_t>(c)] = s;
            s_min = std::min(s_min, s);
            s_max = std::max(s_max, s);
        }
    }

    std::vector<double> depth(surface.size());
    const double range = s_max - s_min;
    for (std::size_t i = 0; i < surface.size(); ++i) {
        const double t = range > 1e-12 ? (surface[i] - s_min) / range : 0.5;
        depth[i] = 20.0 + 130.0 * t;
    }

    auto depth_at = [&](int r, int c) {
        r = std::clamp(r, 0, h - 1);
        c = std::clamp(c, 0, w - 1);
        return depth[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) +
                     static_cast<std::size_t>(c)];
    };

    std::vector<double> image(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double gx = (depth_at(r, c + 1) - depth_at(r, c - 1)) / 2.0;
            const double gy = (depth_at(r + 1, c) - depth_at(r - 1, c)) / 2.0;
            double nx = -gx;
            double ny = -gy;
            double nz = kPixelPitchMm;
            const double n_norm = std::sqrt(nx * nx + ny * ny + nz * nz);
            nx /= n_norm;
            ny /= n_norm;
            nz /= n_norm;
            const double shade = std::max(0.0, nx * lx + ny * ly + nz * lz);
            for (int ch = 0; ch < 3; ++ch) {
                const double albedo =
                    std::clamp(base[ch] + tex_amp[ch] * std::sin(freq_x[ch] * c + freq_y[ch] * r +
                                                                 phase[ch]),
                               0.05, 1.0);
                const std::size_t idx =
                    (static_cast<std::size_t>(r) * static_cast<std::size_t>(w) +
                     static_cast<std::size_t>(c)) *
                        3 +
                    static_cast<std::size_t>(ch);
                image[idx] = clamp01(albedo * (0.3 + 0.7 * shade));
            }
        }
    }

    Sample out;
    out.image = Tensor::from_data({h, w, 3}, image);
    out.gt = DepthMap::full_valid(h, w, depth);
    return out;
}

}  // namespace surgidepth
