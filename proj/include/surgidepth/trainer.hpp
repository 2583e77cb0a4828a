#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "surgidepth/losses.hpp"
#include "surgidepth/model.hpp"
#include "surgidepth/sample.hpp"

namespace surgidepth {

struct TrainConfig {
    double lr = 1e-5;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int epochs = 50;
    LossWeights loss;
    int grad_scales = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

// A trainable tensor plus whether decoupled weight decay applies to it
// (weight matrices yes, biases no).
struct ParamRef {
    Tensor tensor;
    bool decay = true;
    std::string name;
};

// Deterministic order: per block q.A, q.B, v.A, v.B; then head weight, head
// bias. Exactly the adapter factors and decoder head, never the backbone.
std::vector<ParamRef> trainable_params(DepthModel& model);

// First/second moment accumulators, one slot per parameter, plus the shared
// step counter.
struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long long step = 0;
};

OptimizerState init_optimizer(const std::vector<ParamRef>& params);

// One decoupled-weight-decay adaptive-moment update (beta1 0.9, beta2 0.999,
// eps 1e-8, bias correction). Parameters with no accumulated gradient are
// treated as having zero gradient.
void optimizer_step(std::vector<ParamRef>& params, OptimizerState& state, double lr, double weight_decay);

struct EpochLog {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
};

// Seeded-shuffle epoch loop: forward, total_loss averaged over the batch,
// backward, optimizer_step. Returns one log entry per epoch with the mean
// sample loss. Frozen weights are bitwise unchanged on exit.
std::vector<EpochLog> fit(DepthModel& model, const std::vector<Sample>& data, const TrainConfig& cfg);

// Order-stable FNV-1a over every frozen tensor's bytes; equal hashes before
// and after training certify the freeze contract.
std::uint64_t frozen_hash(const DepthModel& model);

}  // namespace surgidepth
