#include "surgidepth/trainer.hpp"

#include <cmath>
#include <cstddef>
#include <cstring>
#include <numeric>
#include <string>
#include <utility>

#include "surgidepth/errors.hpp"
#include "surgidepth/rng.hpp"

namespace surgidepth {

void TrainConfig::validate() const {
    if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1, got " + std::to_string(batch_size));
    if (epochs < 1) throw ConfigError("epoch count must be at least 1, got " + std::to_string(epochs));
    if (grad_scales < 1) throw ConfigError("gradient-loss scale count must be at least 1");
    loss.validate();
}

std::vector<ParamRef> trainable_params(DepthModel& model) {
    std::vector<ParamRef> params;
    params.reserve(model.adapters.size() * 4 + 2);
    for (std::size_t b = 0; b < model.adapters.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        params.push_back({model.adapters[b].q.A, true, prefix + "q.A"});
        params.push_back({model.adapters[b].q.B, true, prefix + "q.B"});
        params.push_back({model.adapters[b].v.A, true, prefix + "v.A"});
        params.push_back({model.adapters[b].v.B, true, prefix + "v.B"});
    }
    params.push_back({model.head.weight, true, "head.weight"});
    params.push_back({model.head.bias, false, "head.bias"});
    return params;
}

OptimizerState init_optimizer(const std::vector<ParamRef>& params) {
    OptimizerState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const ParamRef& p : params) {
        state.m.emplace_back(p.tensor.numel(), 0.0);
        state.v.emplace_back(p.tensor.numel(), 0.0);
    }
    return state;
}

void optimizer_step(std::vector<ParamRef>& params, OptimizerState& state, double lr, double weight_decay) {
    if (params.size() != state.m.size())
        throw ContractError("optimizer state covers " + std::to_string(state.m.size()) + " parameters, got " +
                            std::to_string(params.size()));
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;

    state.step += 1;
    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi].tensor;
        auto raw = p.raw();
        const bool has = p.has_grad();
        auto g = has ? p.grad() : std::span<const double>();
        std::vector<double>& m = state.m[pi];
        std::vector<double>& v = state.v[pi];
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            if (!std::isfinite(gi))
                throw TrainError("non-finite gradient in " + params[pi].name + " at step " +
                                 std::to_string(state.step));
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            double update = m_hat / (std::sqrt(v_hat) + eps);
            if (params[pi].decay) update += weight_decay * raw[i];
            raw[i] -= lr * update;
        }
    }
}

std::vector<EpochLog> fit(DepthModel& model, const std::vector<Sample>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DataError("training set is empty");
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i].gt.valid_count() == 0)
            throw DataError("sample " + std::to_string(i) + " has no valid ground-truth pixels");

    std::vector<ParamRef> params = trainable_params(model);
    OptimizerState state = init_optimizer(params);
    Rng shuffle_rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochLog> log;
    log.reserve(cfg.epochs);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            for (ParamRef& p : params) p.tensor.zero_grad();

            Tensor batch_loss;
            try {
                for (std::size_t i = start; i < stop; ++i) {
                    const Sample& s = data[order[i]];
                    Tensor loss = total_loss(model.forward(s.image), s.gt, cfg.loss, cfg.grad_scales);
                    batch_loss = batch_loss.defined() ? ops::add(batch_loss, loss) : loss;
                }
                batch_loss = ops::scale(batch_loss, 1.0 / static_cast<double>(stop - start));
                backward(batch_loss);
                optimizer_step(params, state, cfg.lr, cfg.weight_decay);
            } catch (const Error& e) {
                clear_graph();
                throw TrainError("epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(start / cfg.batch_size) + ": " + e.what());
            }
            epoch_loss += batch_loss.item() * static_cast<double>(stop - start);
        }
        log.push_back({epoch, epoch_loss / static_cast<double>(data.size())});
    }
    return log;
}

namespace {

void hash_tensor(std::uint64_t& h, const Tensor& t) {
    for (double d : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof(bits));
        for (int byte = 0; byte < 8; ++byte) {
            h ^= (bits >> (8 * byte)) & 0xFF;
            h *= 0x100000001B3ull;
        }
    }
}

}  // namespace

std::uint64_t frozen_hash(const DepthModel& model) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    hash_tensor(h, model.encoder.patch_w);
    hash_tensor(h, model.encoder.patch_b);
    hash_tensor(h, model.encoder.cls);
    hash_tensor(h, model.encoder.pos);
    for (const BlockWeights& b : model.encoder.blocks) {
        hash_tensor(h, b.ln1_gain);
        hash_tensor(h, b.ln1_bias);
        hash_tensor(h, b.wq);
        hash_tensor(h, b.bq);
        hash_tensor(h, b.wk);
        hash_tensor(h, b.bk);
        hash_tensor(h, b.wv);
        hash_tensor(h, b.bv);
        hash_tensor(h, b.wo);
        hash_tensor(h, b.bo);
        hash_tensor(h, b.ln2_gain);
        hash_tensor(h, b.ln2_bias);
        hash_tensor(h, b.w1);
        hash_tensor(h, b.b1);
        hash_tensor(h, b.w2);
        hash_tensor(h, b.b2);
    }
    return h;
}

}  // namespace surgidepth
