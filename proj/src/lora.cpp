#include "surgidepth/lora.hpp"

#include <cstddef>
#include <string>
#include <utility>

#include "surgidepth/errors.hpp"
#include "surgidepth/rng.hpp"
#include "surgidepth/vit.hpp"

namespace surgidepth {

LoRAPair init_pair(int rank, int d_in, int d_out, std::uint64_t seed, double scale) {
    if (rank < 1) throw ConfigError("adapter rank must be at least 1, got " + std::to_string(rank));
    if (d_in < 1 || d_out < 1) throw ConfigError("projection dims must be positive");
    if (rank > d_in || rank > d_out)
        throw ConfigError("adapter rank " + std::to_string(rank) + " exceeds projection dims " +
                          std::to_string(d_out) + "x" + std::to_string(d_in));
    Rng rng(seed);
    std::vector<double> a(static_cast<std::size_t>(rank) * d_in);
    for (double& v : a) v = rng.normal() * 0.02;

    LoRAPair pair;
    pair.A = Tensor::param({rank, d_in}, std::move(a));
    // B at zero makes the adapted projection coincide with the frozen one.
    pair.B = Tensor::param({d_out, rank}, std::vector<double>(static_cast<std::size_t>(d_out) * rank, 0.0));
    pair.rank = rank;
    pair.scale = scale;
    return pair;
}

Tensor project_with_lora(const Tensor& x, const Tensor& weight, const Tensor& bias, const LoRAPair* pair) {
    Tensor y = ops::matmul(x, ops::transpose(weight));
    if (pair) {
        Tensor low = ops::matmul(ops::matmul(x, ops::transpose(pair->A)), ops::transpose(pair->B));
        y = ops::add(y, pair->scale == 1.0 ? low : ops::scale(low, pair->scale));
    }
    return bias.defined() ? ops::add_rowvec(y, bias) : y;
}

Tensor lora_forward(const AdaptedProjection& proj, const Tensor& x) {
    return project_with_lora(x, proj.weight, proj.bias, &proj.lora);
}

std::vector<QvLora> inject_qv(const std::vector<BlockWeights>& blocks, int rank, std::uint64_t seed,
                              double scale) {
    Rng master(seed);
    std::vector<QvLora> adapters;
    adapters.reserve(blocks.size());
    for (const BlockWeights& b : blocks) {
        const int d_in = b.wq.dim(1);
        QvLora qv;
        qv.q = init_pair(rank, d_in, b.wq.dim(0), master.next_u64(), scale);
        qv.v = init_pair(rank, d_in, b.wv.dim(0), master.next_u64(), scale);
        adapters.push_back(std::move(qv));
    }
    return adapters;
}

MergedProjection merge(const AdaptedProjection& proj) {
    NoGradGuard ng;
    Tensor delta = ops::matmul(proj.lora.B, proj.lora.A);
    if (proj.lora.scale != 1.0) delta = ops::scale(delta, proj.lora.scale);
    MergedProjection out;
    out.weight = ops::add(proj.weight, delta).clone_detached();
    out.bias = proj.bias.defined() ? proj.bias.clone_detached() : Tensor();
    return out;
}

Tensor unmerge(const Tensor& merged_weight, const LoRAPair& lora) {
    NoGradGuard ng;
    Tensor delta = ops::matmul(lora.B, lora.A);
    if (lora.scale != 1.0) delta = ops::scale(delta, lora.scale);
    return ops::sub(merged_weight, delta).clone_detached();
}

long long count_trainable(int layers, int dim, int rank, long long decoder_params) {
    if (layers < 0 || dim < 0 || rank < 0 || decoder_params < 0)
        throw ConfigError("parameter counts must be non-negative");
    return 4LL * layers * dim * rank + decoder_params;
}

}  // namespace surgidepth
