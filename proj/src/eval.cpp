#include "surgidepth/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

#include "surgidepth/errors.hpp"

namespace surgidepth {

double median_of(std::vector<double> v) {
    if (v.empty()) throw ProtocolError("median of an empty set");
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
}

namespace {

std::vector<std::uint8_t> joint_mask(const DepthMap& pred, const DepthMap& gt) {
    pred.check_consistent();
    gt.check_consistent();
    if (pred.h != gt.h || pred.w != gt.w)
        throw ShapeError("prediction is " + std::to_string(pred.h) + "x" + std::to_string(pred.w) +
                         ", ground truth " + std::to_string(gt.h) + "x" + std::to_string(gt.w));
    std::vector<std::uint8_t> mask(pred.mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (pred.mask[i] && gt.mask[i]) ? 1 : 0;
    return mask;
}

std::vector<double> masked_values(const DepthMap& m, const std::vector<std::uint8_t>& mask) {
    std::vector<double> out;
    out.reserve(m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i)
        if (mask[i]) out.push_back(m.values[i]);
    return out;
}

int worker_count(std::size_t jobs) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("SURGIDEPTH_THREADS")) {
        char* end = nullptr;
        const long parsed = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && parsed >= 1) n = static_cast<unsigned>(parsed);
    }
    return static_cast<int>(std::min<std::size_t>(n, jobs));
}

}  // namespace

DepthMap median_scale(const DepthMap& pred, const DepthMap& gt) {
    std::vector<std::uint8_t> mask = joint_mask(pred, gt);
    std::vector<double> pv = masked_values(pred, mask);
    if (pv.empty()) throw ProtocolError("no jointly valid pixels to scale on");
    const double med_pred = median_of(pv);
    const double med_gt = median_of(masked_values(gt, mask));
    if (!(med_pred > 0.0)) throw ProtocolError("prediction median is not positive: " + std::to_string(med_pred));
    const double factor = med_gt / med_pred;

    DepthMap out = pred;
    for (double& v : out.values) v *= factor;
    return out;
}

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt) {
    std::vector<std::uint8_t> mask = joint_mask(pred, gt);
    long long n = 0;
    double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, sq_log = 0.0;
    long long within = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double p = pred.values[i];
        const double g = gt.values[i];
        if (!(p > 0.0) || !(g > 0.0))
            throw DomainError("metrics need strictly positive depths, got pred " + std::to_string(p) +
                              " gt " + std::to_string(g));
        const double diff = p - g;
        abs_rel += std::abs(diff) / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        const double dl = std::log(p) - std::log(g);
        sq_log += dl * dl;
        if (std::max(p / g, g / p) < kDeltaThreshold) ++within;
        ++n;
    }
    if (n == 0) throw ProtocolError("no jointly valid pixels to evaluate");

    MetricsReport r;
    r.abs_rel = abs_rel / n;
    r.sq_rel = sq_rel / n;
    r.rmse = std::sqrt(sq / n);
    r.rmse_log = std::sqrt(sq_log / n);
    r.delta = static_cast<double>(within) / n;
    r.n_pixels = n;
    return r;
}

namespace {

MetricsReport evaluate_pair(const EvalPair& pair, double cap_mm) {
    DepthMap scaled = median_scale(pair.pred, pair.gt);
    DepthMap gt = pair.gt;
    for (double& v : scaled.values) v = std::min(v, cap_mm);
    for (double& v : gt.values) v = std::min(v, cap_mm);
    return compute_metrics(scaled, gt);
}

}  // namespace

MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs, double cap_mm) {
    if (pairs.empty()) throw ProtocolError("evaluation needs at least one prediction pair");
    if (!(cap_mm > 0.0)) throw ConfigError("depth cap must be positive");

    std::vector<MetricsReport> reports(pairs.size());
    std::vector<std::exception_ptr> failures(pairs.size());
    const int workers = worker_count(pairs.size());

    if (workers <= 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            try {
                reports[i] = evaluate_pair(pairs[i], cap_mm);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&]() {
                for (std::size_t i = next.fetch_add(1); i < pairs.size(); i = next.fetch_add(1)) {
                    try {
                        reports[i] = evaluate_pair(pairs[i], cap_mm);
                    } catch (...) {
                        failures[i] = std::current_exception();
                    }
                }
            });
        for (std::thread& t : pool) t.join();
    }

    // First failing image wins, independent of thread timing.
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i]) continue;
        try {
            std::rethrow_exception(failures[i]);
        } catch (const std::exception& e) {
            throw ProtocolError("pair " + std::to_string(i) + ": " + e.what());
        }
    }

    MetricsReport mean;
    for (const MetricsReport& r : reports) {
        mean.abs_rel += r.abs_rel;
        mean.sq_rel += r.sq_rel;
        mean.rmse += r.rmse;
        mean.rmse_log += r.rmse_log;
        mean.delta += r.delta;
        mean.n_pixels += r.n_pixels;
    }
    const double n = static_cast<double>(pairs.size());
    mean.abs_rel /= n;
    mean.sq_rel /= n;
    mean.rmse /= n;
    mean.rmse_log /= n;
    mean.delta /= n;
    return mean;
}

}  // namespace surgidepth
