#include "fsr/relabel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fsr {

void update_pseudo_label(SampleState& state, std::span<const double> prediction, double beta) {
    if (beta < 0.0 || beta > 1.0) throw ConfigError("pseudo-label beta must be in [0,1]");
    if (state.pseudo_label.empty()) {
        state.pseudo_label.assign(prediction.begin(), prediction.end());
        return;
    }
    if (state.pseudo_label.size() != prediction.size())
        throw ConfigError("pseudo-label dimension changed");
    for (std::size_t c = 0; c < prediction.size(); ++c)
        state.pseudo_label[c] = beta * state.pseudo_label[c] + (1.0 - beta) * prediction[c];
}

Batch mixup_batch_fixed(const Batch& batch, std::span<const double> lams,
                        std::span<const int> partners) {
    const int b = batch.size();
    Batch out;
    out.features = Matrix(b, batch.features.cols);
    out.labels = Matrix(b, batch.labels.cols);
    out.indices = batch.indices;
    for (int i = 0; i < b; ++i) {
        const int j = partners[i];
        const double lam = lams[i];
        for (int k = 0; k < batch.features.cols; ++k)
            out.features(i, k) = lam * batch.features(i, k) + (1.0 - lam) * batch.features(j, k);
        for (int c = 0; c < batch.labels.cols; ++c)
            out.labels(i, c) = lam * batch.labels(i, c) + (1.0 - lam) * batch.labels(j, c);
    }
    return out;
}

namespace {

struct MixDraw {
    std::vector<double> lams;
    std::vector<int> partners;
};

MixDraw draw_mixup(int b, double mixup_alpha, std::mt19937_64& rng) {
    if (b < 2) throw ConfigError("mixup needs at least 2 samples");
    if (mixup_alpha <= 0.0) throw ConfigError("mixup alpha must be positive");
    std::gamma_distribution<double> gamma(mixup_alpha, 1.0);
    MixDraw d;
    d.lams.resize(b);
    for (int i = 0; i < b; ++i) {
        const double x = gamma(rng);
        const double y = gamma(rng);
        d.lams[i] = x / (x + y);
    }
    d.partners.resize(b);
    std::iota(d.partners.begin(), d.partners.end(), 0);
    std::shuffle(d.partners.begin(), d.partners.end(), rng);
    return d;
}

} // namespace

Batch mixup_batch(const Batch& batch, double mixup_alpha, std::mt19937_64& rng) {
    const MixDraw d = draw_mixup(batch.size(), mixup_alpha, rng);
    return mixup_batch_fixed(batch, d.lams, d.partners);
}

std::pair<double, GradientSet> total_loss(const ModelParams& params, const Batch& batch,
                                          const WeightVector& weights, const Matrix& pseudo_labels,
                                          const RelabelConfig& cfg, double smoothing,
                                          std::mt19937_64& rng,
                                          const ForwardCache* unmixed_cache) {
    const int b = batch.size();
    if (weights.size() != b) throw ConfigError("total_loss: weight/batch size mismatch");

    // Weighted term, optionally on the MixUp-transformed batch. A mixed
    // sample carries the convex combination of its parents' weights so that
    // down-weighted label mass stays down-weighted after mixing.
    const Batch* term1 = &batch;
    Batch mixed;
    std::vector<double> mixed_weights;
    const std::vector<double>* w1 = &weights.values;
    const bool mix = cfg.mixup_enabled && b >= 2;
    if (mix) {
        const MixDraw d = draw_mixup(b, cfg.mixup_alpha, rng);
        mixed = mixup_batch_fixed(batch, d.lams, d.partners);
        term1 = &mixed;
        mixed_weights.resize(b);
        for (int i = 0; i < b; ++i)
            mixed_weights[i] = d.lams[i] * weights.values[i] +
                               (1.0 - d.lams[i]) * weights.values[d.partners[i]];
        w1 = &mixed_weights;
    }
    ForwardCache own_cache;
    const ForwardCache* cache1 = (!mix && unmixed_cache) ? unmixed_cache : &own_cache;
    if (cache1 == &own_cache) own_cache = forward(params, term1->features);
    std::vector<double> losses1 = softmax_xent(cache1->logits(), term1->labels, smoothing);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) loss += (*w1)[i] * losses1[i];
    GradientSet grads = backward_weighted(params, *term1, *cache1, *w1, smoothing);

    // Pseudo-label term on the untransformed batch, uniform 1/b averaging.
    if (cfg.p > 0.0) {
        Batch pseudo = batch;
        pseudo.labels = pseudo_labels;
        ForwardCache pseudo_cache;
        const ForwardCache* c2 = unmixed_cache;
        if (!c2) {
            pseudo_cache = forward(params, pseudo.features);
            c2 = &pseudo_cache;
        }
        const ForwardCache& cache2 = *c2;
        std::vector<double> losses2 = softmax_xent(cache2.logits(), pseudo.labels, 0.0);
        loss += cfg.p * std::accumulate(losses2.begin(), losses2.end(), 0.0) / b;
        std::vector<double> w2(b, cfg.p / b);
        GradientSet g2 = backward_weighted(params, pseudo, cache2, w2, 0.0);
        for (std::size_t l = 0; l < grads.size(); ++l) {
            for (std::size_t k = 0; k < grads[l].dW.data.size(); ++k)
                grads[l].dW.data[k] += g2[l].dW.data[k];
            for (std::size_t k = 0; k < grads[l].db.size(); ++k) grads[l].db[k] += g2[l].db[k];
        }
    }
    return {loss, std::move(grads)};
}

} // namespace fsr
