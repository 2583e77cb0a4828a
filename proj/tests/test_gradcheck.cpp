#include <doctest.h>

#include "gradcheck.hpp"

TEST_CASE("gradient oracle: every kernel matches central differences over seeded trials") {
    const double kTol = 1e-5;
    int total_trials = 0;

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (const testsupport::KernelCheck& entry : testsupport::kernel_gradient_suite(seed)) {
            INFO("kernel: " << entry.name << ", seed: " << seed);
            CHECK(entry.result.max_err < kTol);
            CHECK(entry.result.checked > 0);
            ++total_trials;
        }
    }

    // The invariant asks for at least 100 seeded trials across the kernels.
    CHECK(total_trials >= 100);
}
