#pragma once

#include <random>
#include <utility>

#include "fsr/dictionary.hpp"
#include "fsr/reweight.hpp"

namespace fsr {

struct RelabelConfig {
    double beta = 0.1;        // pseudo-label EMA decay
    double p = 2.0;           // pseudo-loss multiplier; 0 disables the term exactly
    double mixup_alpha = 1.0; // Beta(alpha, alpha) shape
    bool mixup_enabled = true;
};

// EMA pseudo-label update from a softmax probability vector; the first
// observation initializes the label directly.
void update_pseudo_label(SampleState& state, std::span<const double> prediction, double beta);

// Convex combinations with per-sample Beta(alpha,alpha) coefficients and a
// shuffled partner permutation.
Batch mixup_batch(const Batch& batch, double mixup_alpha, std::mt19937_64& rng);
// Deterministic core with explicit coefficients and partners, for testing.
Batch mixup_batch_fixed(const Batch& batch, std::span<const double> lams,
                        std::span<const int> partners);

// Total loss: weighted term on the (optionally MixUp-transformed) batch plus
// p times the uniform-mean pseudo-label term on the untransformed batch.
// Mixed samples keep the weight of their first parent.
std::pair<double, GradientSet> total_loss(const ModelParams& params, const Batch& batch,
                                          const WeightVector& weights, const Matrix& pseudo_labels,
                                          const RelabelConfig& cfg, double smoothing,
                                          std::mt19937_64& rng,
                                          const ForwardCache* unmixed_cache = nullptr);

} // namespace fsr
