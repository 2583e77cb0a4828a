#pragma once

#include <cstdint>
#include <vector>

#include "surgidepth/tensor.hpp"

namespace surgidepth {

struct BlockWeights;

// Trainable low-rank factor pair attached to one frozen projection.
// A: [rank x d_in], B: [d_out x rank]. B starts at zero so a freshly injected
// model reproduces the frozen model exactly.
struct LoRAPair {
    Tensor A;
    Tensor B;
    int rank = 0;
    // Multiplier on the low-rank branch; 1 leaves the update as B*A.
    double scale = 1.0;
};

// Frozen projection plus its adapter. Effective weight is W0 + scale * B * A.
struct AdaptedProjection {
    Tensor weight;  // [d_out x d_in], frozen
    Tensor bias;    // [d_out], frozen; may be undefined
    LoRAPair lora;
};

// The q/v adapter set for one transformer block.
struct QvLora {
    LoRAPair q;
    LoRAPair v;
};

LoRAPair init_pair(int rank, int d_in, int d_out, std::uint64_t seed, double scale = 1.0);

// Two-step low-rank path: W0*x + B*(A*x) + bias, for row-major token input
// x: [T x d_in]. The product B*A is never materialized.
Tensor lora_forward(const AdaptedProjection& proj, const Tensor& x);

// Applies the low-rank branch of `pair` on top of a frozen weight/bias
// projection; used inside attention where projections are stored unpacked.
Tensor project_with_lora(const Tensor& x, const Tensor& weight, const Tensor& bias, const LoRAPair* pair);

// One independent q and v pair per block, seeded from one stream.
std::vector<QvLora> inject_qv(const std::vector<BlockWeights>& blocks, int rank, std::uint64_t seed,
                              double scale = 1.0);

struct MergedProjection {
    Tensor weight;
    Tensor bias;
};

// Deployment form: folds the adapter into a plain frozen weight.
MergedProjection merge(const AdaptedProjection& proj);
// Subtracts the low-rank product back out of a merged weight.
Tensor unmerge(const Tensor& merged_weight, const LoRAPair& lora);

// 4*L*D*r adapter parameters (q and v, each A and B, per block) plus the
// decoder head.
long long count_trainable(int layers, int dim, int rank, long long decoder_params);

}  // namespace surgidepth
