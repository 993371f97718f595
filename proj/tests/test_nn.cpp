#include <doctest.h>

#include <cmath>
#include <random>

#include "fsr/nn.hpp"
#include "test_util.hpp"

using namespace fsr;
using namespace fsr::testutil;

TEST_CASE("forward: zero-parameter net gives zero logits and uniform softmax") {
    ModelParams params;
    params.layers.emplace_back(3, 2); // zero-initialized
    params.meta_mask = {true};
    Matrix x(4, 2);
    x(0, 0) = 1.0;
    x(1, 1) = -2.5;
    x(2, 0) = 0.3;
    x(3, 1) = 7.0;
    const ForwardCache cache = forward(params, x);
    for (double v : cache.logits().data) CHECK(v == 0.0);
    const Matrix probs = softmax_rows(cache.logits());
    for (double v : probs.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("forward: identity single layer is the identity map") {
    ModelParams params;
    params.layers.emplace_back(2, 2);
    params.layers[0].W(0, 0) = 1.0;
    params.layers[0].W(1, 1) = 1.0;
    params.meta_mask = {true};
    Matrix x(1, 2);
    x(0, 0) = 1.0;
    x(0, 1) = 0.0;
    const ForwardCache cache = forward(params, x);
    CHECK(cache.logits()(0, 0) == 1.0);
    CHECK(cache.logits()(0, 1) == 0.0);
}

TEST_CASE("forward: matches the flat scalar reference loop") {
    std::mt19937_64 rng(0);
    ModelParams params = random_net(rng, 3, {5, 4}, 3);
    Batch batch = random_batch(rng, 7, 3, 3);
    const Matrix got = forward(params, batch.features).logits();
    const Matrix want = ref::forward_logits(params, batch.features);
    REQUIRE(got.rows == want.rows);
    REQUIRE(got.cols == want.cols);
    for (std::size_t k = 0; k < got.data.size(); ++k)
        CHECK(got.data[k] == doctest::Approx(want.data[k]).epsilon(1e-12));
}

TEST_CASE("forward: dimension mismatch raises ConfigError") {
    std::mt19937_64 rng(1);
    ModelParams params = random_net(rng, 3, {4}, 2);
    Matrix x(2, 5);
    CHECK_THROWS_AS(forward(params, x), ConfigError);
}

TEST_CASE("softmax_xent: frozen scalar values") {
    Matrix logits(1, 2);
    Matrix labels(1, 2);
    labels(0, 0) = 1.0;

    SUBCASE("uniform softmax gives ln 2") {
        const auto loss = softmax_xent(logits, labels, 0.0);
        CHECK(loss[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct logits give the closed-form log-sum-exp") {
        logits(0, 0) = 10.0;
        logits(0, 1) = -10.0;
        const auto loss = softmax_xent(logits, labels, 0.0);
        // loss = log(1 + exp(-20))
        CHECK(loss[0] == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
        CHECK(loss[0] == doctest::Approx(2.06e-9).epsilon(2e-3));
    }
    SUBCASE("smoothing does not change the loss under uniform softmax") {
        const auto loss = softmax_xent(logits, labels, 0.1);
        CHECK(loss[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("softmax_xent: non-negative, exactly ln C at zero logits") {
    std::mt19937_64 rng(2);
    for (int c : {2, 3, 6, 10}) {
        Matrix logits(3, c);
        Batch batch = random_batch(rng, 3, 1, c);
        const auto loss = softmax_xent(logits, batch.labels, 0.0);
        for (double l : loss) {
            CHECK(l >= 0.0);
            CHECK(l == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward_weighted: zero weights give zero gradients") {
    std::mt19937_64 rng(3);
    ModelParams params = random_net(rng, 2, {4}, 3);
    Batch batch = random_batch(rng, 5, 2, 3);
    std::vector<double> w(5, 0.0);
    const GradientSet grads = backward_weighted(params, batch, w, 0.0);
    for (const LayerGrad& g : grads) {
        for (double v : g.dW.data) CHECK(v == 0.0);
        for (double v : g.db) CHECK(v == 0.0);
    }
}

TEST_CASE("backward_weighted: one-hot weight selects one sample's gradient") {
    std::mt19937_64 rng(4);
    ModelParams params = random_net(rng, 2, {4}, 3);
    Batch batch = random_batch(rng, 5, 2, 3);
    std::vector<double> w(5, 0.0);
    w[2] = 1.0;
    const GradientSet picked = backward_weighted(params, batch, w, 0.0);

    Batch solo;
    solo.features = Matrix(1, 2);
    solo.labels = Matrix(1, 3);
    for (int k = 0; k < 2; ++k) solo.features(0, k) = batch.features(2, k);
    for (int c = 0; c < 3; ++c) solo.labels(0, c) = batch.labels(2, c);
    solo.indices = {0};
    std::vector<double> one{1.0};
    const GradientSet alone = backward_weighted(params, solo, one, 0.0);
    CHECK(max_rel_err(picked, alone) < 1e-12);
}

TEST_CASE("backward_weighted: matches finite differences on 10 random configs") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> wdist(-0.5, 1.5);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 2 + trial % 3;
        const int c = 2 + trial % 2;
        const int h = 3 + trial % 3;
        const int b = 2 + trial % 4;
        ModelParams params = random_net(rng, d, {h}, c);
        Batch batch = random_batch(rng, b, d, c, trial % 2 == 0);
        std::vector<double> w(b);
        for (double& v : w) v = wdist(rng);
        const double s = (trial % 3 == 0) ? 0.1 : 0.0;
        const GradientSet analytic = backward_weighted(params, batch, w, s);
        const GradientSet fd = fd_gradient(params, batch, w, s);
        CHECK(max_rel_err(analytic, fd) < 1e-4);
    }
}

TEST_CASE("per_sample_grad_meta: closed form at zero logits gives +/-0.5 column") {
    ModelParams params;
    params.layers.emplace_back(2, 1); // zero final layer, input doubles as h=[1]
    params.meta_mask = {true};
    Batch batch;
    batch.features = Matrix(1, 1);
    batch.features(0, 0) = 1.0;
    batch.labels = Matrix(1, 2);
    batch.labels(0, 0) = 1.0; // class 0
    batch.indices = {0};
    const PerSampleGrads psg = per_sample_grad_meta(params, batch, 0.0);
    REQUIRE(psg.layers.size() == 1);
    CHECK(psg.layers[0].dW(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(psg.layers[0].dW(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(psg.layers[0].db(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(psg.layers[0].db(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("per_sample_grad_meta: duplicate samples have identical rows") {
    std::mt19937_64 rng(6);
    ModelParams params = random_net(rng, 3, {4}, 3);
    Batch batch = random_batch(rng, 2, 3, 3);
    // duplicate sample 0 into slot 1
    for (int k = 0; k < 3; ++k) batch.features(1, k) = batch.features(0, k);
    for (int c = 0; c < 3; ++c) batch.labels(1, c) = batch.labels(0, c);
    const PerSampleGrads psg = per_sample_grad_meta(params, batch, 0.0);
    for (const PerSampleLayerGrad& lg : psg.layers) {
        for (int k = 0; k < lg.dW.cols; ++k) CHECK(lg.dW(0, k) == lg.dW(1, k));
        for (int k = 0; k < lg.db.cols; ++k) CHECK(lg.db(0, k) == lg.db(1, k));
    }
}

TEST_CASE("per_sample_grad_meta: mean over samples equals uniform backward_weighted") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        ModelParams params = random_net(rng, 3, {5, 4}, 3);
        const int last_k = 1 + trial % 2;
        set_meta_last_k(params, last_k);
        const int b = 6;
        Batch batch = random_batch(rng, b, 3, 3);
        std::vector<double> uniform(b, 1.0 / b);
        const GradientSet agg = backward_weighted(params, batch, uniform, 0.0);
        const PerSampleGrads psg = per_sample_grad_meta(params, batch, 0.0);
        for (const PerSampleLayerGrad& lg : psg.layers) {
            const LayerGrad& want = agg[lg.layer];
            for (std::size_t k = 0; k < want.dW.data.size(); ++k) {
                double mean = 0.0;
                for (int i = 0; i < b; ++i) mean += lg.dW(i, static_cast<int>(k));
                mean /= b;
                CHECK(std::abs(mean - want.dW.data[k]) < 1e-10);
            }
            for (std::size_t k = 0; k < want.db.size(); ++k) {
                double mean = 0.0;
                for (int i = 0; i < b; ++i) mean += lg.db(i, static_cast<int>(k));
                mean /= b;
                CHECK(std::abs(mean - want.db[k]) < 1e-10);
            }
        }
    }
}

TEST_CASE("sgd_step: lr=0 leaves params unchanged; masking freezes layers") {
    std::mt19937_64 rng(8);
    ModelParams params = random_net(rng, 2, {3}, 2);
    Batch batch = random_batch(rng, 3, 2, 2);
    std::vector<double> w(3, 1.0 / 3.0);
    const GradientSet grads = backward_weighted(params, batch, w, 0.0);

    SUBCASE("lr = 0") {
        ModelParams copy = params;
        sgd_step(copy, grads, 0.0);
        for (int l = 0; l < copy.num_layers(); ++l) {
            CHECK(copy.layers[l].W == params.layers[l].W);
            CHECK(copy.layers[l].b == params.layers[l].b);
        }
    }
    SUBCASE("mask = final layer only") {
        ModelParams copy = params;
        std::vector<bool> mask{false, true};
        sgd_step(copy, grads, 0.1, &mask);
        CHECK(copy.layers[0].W == params.layers[0].W);
        CHECK(copy.layers[0].b == params.layers[0].b);
        CHECK(copy.layers[1].W != params.layers[1].W);
    }
    SUBCASE("scalar arithmetic: 1 - 0.1*2 = 0.8") {
        ModelParams scalar;
        scalar.layers.emplace_back(1, 1);
        scalar.layers[0].W(0, 0) = 1.0;
        scalar.meta_mask = {true};
        GradientSet g(1);
        g[0].dW = Matrix(1, 1);
        g[0].dW(0, 0) = 2.0;
        g[0].db = {0.0};
        sgd_step(scalar, g, 0.1);
        CHECK(scalar.layers[0].W(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
    }
}

TEST_CASE("cosine_lr: endpoints, midpoint, monotonicity") {
    const int total = 100;
    CHECK(cosine_lr(0, total, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(cosine_lr(total / 2, total, 0.3) == doctest::Approx(0.15).epsilon(1e-12));
    double prev = cosine_lr(0, total, 0.3);
    for (int s = 1; s < total; ++s) {
        const double cur = cosine_lr(s, total, 0.3);
        CHECK(cur <= prev);
        CHECK(cur > 0.0);
        prev = cur;
    }
}

TEST_CASE("make_mlp: deterministic per seed, meta mask defaults to final layer") {
    const ModelParams a = make_mlp(2, {8, 8}, 6, 42);
    const ModelParams b = make_mlp(2, {8, 8}, 6, 42);
    const ModelParams c = make_mlp(2, {8, 8}, 6, 43);
    REQUIRE(a.num_layers() == 3);
    CHECK(a.layers[0].W == b.layers[0].W);
    CHECK(a.layers[2].W == b.layers[2].W);
    CHECK(a.layers[0].W != c.layers[0].W);
    CHECK(a.meta_mask == std::vector<bool>{false, false, true});
    a.validate();
}

TEST_CASE("validate: rejects non-composing layers and empty meta mask") {
    ModelParams params;
    params.layers.emplace_back(4, 2);
    params.layers.emplace_back(3, 5); // 5 != 4
    params.meta_mask = {false, true};
    CHECK_THROWS_AS(params.validate(), ConfigError);

    ModelParams nometa;
    nometa.layers.emplace_back(3, 2);
    nometa.meta_mask = {false};
    CHECK_THROWS_AS(nometa.validate(), ConfigError);
}

TEST_CASE("forward_from: recomputes only upper layers, matches full forward") {
    std::mt19937_64 rng(9);
    ModelParams params = random_net(rng, 3, {5, 4}, 3);
    Batch batch = random_batch(rng, 6, 3, 3);
    const ForwardCache base = forward(params, batch.features);

    ModelParams upper = params;
    for (double& v : upper.layers[2].W.data) v += 0.01;
    const ForwardCache partial = forward_from(upper, base, 2);
    const ForwardCache full = forward(upper, batch.features);
    for (std::size_t k = 0; k < full.logits().data.size(); ++k)
        CHECK(partial.logits().data[k] == doctest::Approx(full.logits().data[k]).epsilon(1e-14));
}
