#include "fsr/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fsr {

ModelParams virtual_meta_step(const ModelParams& params, const Batch& train_batch,
                              const MetaConfig& cfg) {
    cfg.validate();
    params.validate();
    if (train_batch.size() < 1) throw ConfigError("virtual_meta_step: empty batch");
    const int b = train_batch.size();
    std::vector<double> uniform(b, cfg.base_weight(b));
    GradientSet grads = backward_weighted(params, train_batch, uniform, cfg.smoothing);
    ModelParams meta = params;
    sgd_step(meta, grads, cfg.alpha * cfg.eta, &params.meta_mask);
    return meta;
}

std::vector<double> meta_gradient(const PerSampleGrads& per_sample, const GradientSet& reward_grad) {
    std::vector<double> dots(per_sample.batch, 0.0);
    for (const PerSampleLayerGrad& psl : per_sample.layers) {
        if (psl.layer < 0 || psl.layer >= static_cast<int>(reward_grad.size()))
            throw ConfigError("meta_gradient: layer index out of range");
        const LayerGrad& rg = reward_grad[psl.layer];
        if (rg.dW.size() != static_cast<std::size_t>(psl.dW.cols) ||
            rg.db.size() != static_cast<std::size_t>(psl.db.cols))
            throw ConfigError("meta_gradient: reward/train gradient shape mismatch");
#pragma omp parallel for schedule(static)
        for (int i = 0; i < per_sample.batch; ++i) {
            const double* gw = psl.dW.row(i);
            const double* gb = psl.db.row(i);
            double s = 0.0;
            for (std::size_t k = 0; k < rg.dW.data.size(); ++k) s += rg.dW.data[k] * gw[k];
            for (std::size_t k = 0; k < rg.db.size(); ++k) s += rg.db[k] * gb[k];
            dots[i] += s;
        }
    }
    return dots;
}

namespace {

// Inner one-step model used when the reward gradient is evaluated at
// theta_{t+1}: theta - eta * grad(sum_i w0 L_i), masked layers only.
ModelParams inner_step(const ModelParams& params, const Batch& train_batch, const MetaConfig& cfg) {
    const int b = train_batch.size();
    std::vector<double> uniform(b, cfg.base_weight(b));
    GradientSet grads = backward_weighted(params, train_batch, uniform, cfg.smoothing);
    ModelParams next = params;
    sgd_step(next, grads, cfg.eta, &params.meta_mask);
    return next;
}

GradientSet mean_reward_grad(const ModelParams& at, const Batch& reward_batch, double smoothing) {
    const int q = reward_batch.size();
    std::vector<double> mean_w(q, 1.0 / q);
    return backward_weighted(at, reward_batch, mean_w, smoothing);
}

} // namespace

WeightVector compute_weights(const ModelParams& params, const Batch& train_batch,
                             const Batch& reward_batch, const MetaConfig& cfg) {
    cfg.validate();
    if (reward_batch.size() < 1) throw ConfigError("compute_weights: empty reward batch");
    const int b = train_batch.size();

    PerSampleGrads psg = per_sample_grad_meta(params, train_batch, cfg.smoothing);
    GradientSet reward_grad;
    if (cfg.meta_eval_point == MetaEvalPoint::at_theta_t) {
        reward_grad = mean_reward_grad(params, reward_batch, cfg.smoothing);
    } else {
        reward_grad = mean_reward_grad(inner_step(params, train_batch, cfg), reward_batch, cfg.smoothing);
    }
    std::vector<double> dots = meta_gradient(psg, reward_grad);

    WeightVector w;
    w.mode = cfg.norm_mode;
    w.values.resize(b);
    const double w0 = cfg.base_weight(b);
    for (int i = 0; i < b; ++i) w.values[i] = w0 + cfg.alpha * cfg.eta * dots[i];
    return w;
}

void normalize_weights(WeightVector& w, int b) {
    if (w.size() != b) throw ConfigError("normalize_weights: length mismatch");
    if (w.mode == NormMode::clip_nonneg) {
        for (double& v : w.values) v = std::max(0.0, v);
        const double sum = std::accumulate(w.values.begin(), w.values.end(), 0.0);
        if (sum <= 0.0) {
            std::fill(w.values.begin(), w.values.end(), 1.0 / b);
            return;
        }
        for (double& v : w.values) v /= sum;
    } else {
        const double lo = *std::min_element(w.values.begin(), w.values.end());
        for (double& v : w.values) v = v - lo + 1.0 / b;
        const double sum = std::accumulate(w.values.begin(), w.values.end(), 0.0);
        for (double& v : w.values) v /= sum;
    }
}

double fd_weight_oracle(const ModelParams& params, const Batch& train_batch,
                        const Batch& reward_batch, const MetaConfig& cfg, int i, double eps) {
    cfg.validate();
    if (eps <= 0.0) throw ConfigError("fd_weight_oracle: eps must be positive");
    const int b = train_batch.size();
    if (i < 0 || i >= b) throw ConfigError("fd_weight_oracle: sample index out of range");

    auto reward_loss_at = [&](double wi) {
        std::vector<double> w(b, cfg.base_weight(b));
        w[i] = wi;
        GradientSet grads = backward_weighted(params, train_batch, w, cfg.smoothing);
        ModelParams stepped = params;
        sgd_step(stepped, grads, cfg.eta, &params.meta_mask);
        std::vector<double> losses = softmax_xent(forward(stepped, reward_batch.features).logits(),
                                                  reward_batch.labels, cfg.smoothing);
        return std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
    };

    const double w0 = cfg.base_weight(b);
    return (reward_loss_at(w0 + eps) - reward_loss_at(w0 - eps)) / (2.0 * eps);
}

WeightVector l2r_baseline_weights(const ModelParams& params, const Batch& train_batch,
                                  const Batch& external_reward_batch, const MetaConfig& cfg) {
    MetaConfig l2r = cfg;
    l2r.weight_init = 0.0;
    l2r.norm_mode = NormMode::clip_nonneg;
    WeightVector w = compute_weights(params, train_batch, external_reward_batch, l2r);
    normalize_weights(w, train_batch.size());
    return w;
}

} // namespace fsr
