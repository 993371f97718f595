#pragma once

#include <optional>
#include <vector>

#include "fsr/nn.hpp"

namespace fsr {

enum class NormMode { clip_nonneg, shift_positive };

// Per-mini-batch sample weights. After normalize_weights the values sum to 1
// and satisfy the sign invariant of their mode.
struct WeightVector {
    std::vector<double> values;
    NormMode mode = NormMode::clip_nonneg;

    int size() const { return static_cast<int>(values.size()); }
};

enum class MetaEvalPoint { at_theta_t, at_theta_t_plus_1 };

struct MetaConfig {
    double alpha = 1.0; // weight step size
    double eta = 0.1;   // inner model step size
    MetaEvalPoint meta_eval_point = MetaEvalPoint::at_theta_t;
    // Initial weight value; unset means uniform 1/b.
    std::optional<double> weight_init;
    NormMode norm_mode = NormMode::clip_nonneg;
    double smoothing = 0.0;

    void validate() const {
        if (alpha <= 0.0 || eta <= 0.0) throw ConfigError("alpha and eta must be positive");
    }
    double base_weight(int b) const { return weight_init ? *weight_init : 1.0 / b; }
};

// One masked descent step with uniform base weights; only meta-masked layers
// move. Step size is alpha*eta.
ModelParams virtual_meta_step(const ModelParams& params, const Batch& train_batch,
                              const MetaConfig& cfg);

// dot_i = sum over meta layers of <reward_grad_l, train_grad_{i,l}>.
// reward_grad must hold gradients for every model layer (unmasked entries
// are ignored); per_sample carries the masked subset.
std::vector<double> meta_gradient(const PerSampleGrads& per_sample, const GradientSet& reward_grad);

// Unnormalized weights: w_i = w0 + alpha*eta*dot_i, with the reward gradient
// evaluated at theta_t (default) or at the inner-step model theta_{t+1}.
WeightVector compute_weights(const ModelParams& params, const Batch& train_batch,
                             const Batch& reward_batch, const MetaConfig& cfg);

// Normalizes in place: clip mode applies max(0,.) first, shift mode applies
// (w - min w + 1/b) first; then divides by the sum. All-nonpositive clip
// input falls back to uniform 1/b.
void normalize_weights(WeightVector& w, int b);

// Central-difference estimate of dL^R/dw_i: perturb w_i around the uniform
// base value, take the inner step theta_{t+1}(w) with step size eta over the
// meta-masked layers, evaluate the mean reward loss.
double fd_weight_oracle(const ModelParams& params, const Batch& train_batch,
                        const Batch& reward_batch, const MetaConfig& cfg, int i, double eps);

// L2R baseline: compute_weights with w0 = 0 and clip_nonneg normalization
// against an explicit clean reward batch. Returns normalized weights.
WeightVector l2r_baseline_weights(const ModelParams& params, const Batch& train_batch,
                                  const Batch& external_reward_batch, const MetaConfig& cfg);

} // namespace fsr
