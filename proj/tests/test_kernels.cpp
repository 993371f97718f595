#include <doctest.h>

#include <cmath>
#include <random>

#include "fsr/nn.hpp"
#include "test_util.hpp"

using namespace fsr;
using namespace fsr::testutil;

// The OpenMP kernels must agree with the serial reference implementation to
// floating-point roundoff, independent of thread count (each output slot is
// accumulated serially in a fixed order).

TEST_CASE("forward kernel matches the serial reference on varied shapes") {
    std::mt19937_64 rng(60);
    for (int trial = 0; trial < 8; ++trial) {
        const int d = 2 + trial % 4;
        const int c = 2 + trial % 3;
        const int b = 1 + (trial * 37) % 128;
        std::vector<int> hidden;
        if (trial % 3 != 0) hidden.push_back(8 + trial);
        if (trial % 3 == 2) hidden.push_back(5);
        ModelParams params = random_net(rng, d, hidden, c);
        Batch batch = random_batch(rng, b, d, c);
        const Matrix got = forward(params, batch.features).logits();
        const Matrix want = ref::forward_logits(params, batch.features);
        REQUIRE(got.data.size() == want.data.size());
        for (std::size_t k = 0; k < got.data.size(); ++k)
            CHECK(got.data[k] == doctest::Approx(want.data[k]).epsilon(1e-13));
    }
}

TEST_CASE("loss kernel matches the serial reference") {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 6; ++trial) {
        const int c = 2 + trial % 4;
        const int b = 1 + (trial * 53) % 200;
        ModelParams params = random_net(rng, 3, {6}, c);
        Batch batch = random_batch(rng, b, 3, c, trial % 2 == 0);
        const Matrix logits = forward(params, batch.features).logits();
        const double s = (trial % 2 == 0) ? 0.1 : 0.0;
        const auto got = softmax_xent(logits, batch.labels, s);
        const auto want = ref::softmax_xent(logits, batch.labels, s);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
}

TEST_CASE("backward kernel matches the serial reference") {
    std::mt19937_64 rng(62);
    std::uniform_real_distribution<double> wdist(-0.5, 1.5);
    for (int trial = 0; trial < 6; ++trial) {
        const int d = 2 + trial % 3;
        const int c = 2 + trial % 3;
        const int b = 2 + (trial * 29) % 96;
        ModelParams params = random_net(rng, d, {7, 5}, c);
        Batch batch = random_batch(rng, b, d, c);
        std::vector<double> w(b);
        for (double& v : w) v = wdist(rng);
        const GradientSet got = backward_weighted(params, batch, w, 0.0);
        const GradientSet want = ref::backward_weighted(params, batch, w, 0.0);
        CHECK(max_rel_err(got, want) < 1e-11);
    }
}

TEST_CASE("kernels are bit-stable across repeated invocations") {
    std::mt19937_64 rng(63);
    ModelParams params = random_net(rng, 3, {16}, 4);
    Batch batch = random_batch(rng, 64, 3, 4);
    std::vector<double> w(64, 1.0 / 64.0);
    const Matrix l1 = forward(params, batch.features).logits();
    const Matrix l2 = forward(params, batch.features).logits();
    CHECK(l1 == l2);
    const GradientSet g1 = backward_weighted(params, batch, w, 0.0);
    const GradientSet g2 = backward_weighted(params, batch, w, 0.0);
    for (std::size_t l = 0; l < g1.size(); ++l) {
        CHECK(g1[l].dW == g2[l].dW);
        CHECK(g1[l].db == g2[l].db);
    }
}

TEST_CASE("masked backward agrees with the full backward on masked layers") {
    std::mt19937_64 rng(64);
    for (int last_k : {1, 2}) {
        ModelParams params = random_net(rng, 3, {6, 5}, 3);
        set_meta_last_k(params, last_k);
        Batch batch = random_batch(rng, 10, 3, 3);
        std::vector<double> w(10, 0.1);
        const ForwardCache cache = forward(params, batch.features);
        const GradientSet full = backward_weighted(params, batch, cache, w, 0.0);
        const GradientSet masked = backward_weighted_masked(params, batch, cache, w, 0.0);
        REQUIRE(masked.size() == full.size());
        for (int l = 0; l < params.num_layers(); ++l) {
            if (params.meta_mask[l]) {
                CHECK(masked[l].dW == full[l].dW);
                CHECK(masked[l].db == full[l].db);
            } else {
                CHECK(masked[l].dW.data.empty());
            }
        }
    }
}
