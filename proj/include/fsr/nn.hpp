#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fsr/common.hpp"
#include "fsr/matrix.hpp"

namespace fsr {

// One dense layer. W is [out x in], b is [out].
struct DenseLayer {
    Matrix W;
    std::vector<double> b;

    DenseLayer() = default;
    DenseLayer(int out, int in) : W(out, in), b(out, 0.0) {}
    int out_dim() const { return W.rows; }
    int in_dim() const { return W.cols; }
};

// MLP with rectifier hidden activations. meta_mask selects the layers that
// participate in meta optimization (the meta model shares the rest).
struct ModelParams {
    std::vector<DenseLayer> layers;
    std::vector<bool> meta_mask;

    int input_dim() const { return layers.front().in_dim(); }
    int num_classes() const { return layers.back().out_dim(); }
    int num_layers() const { return static_cast<int>(layers.size()); }

    // Throws ConfigError if adjacent dimensions do not compose or no layer
    // is meta-masked.
    void validate() const;
};

// Mini-batch: features [b x d], label probability rows [b x C], dataset row ids.
struct Batch {
    Matrix features;
    Matrix labels;
    std::vector<int> indices;

    int size() const { return features.rows; }
};

struct LayerGrad {
    Matrix dW;
    std::vector<double> db;
};
using GradientSet = std::vector<LayerGrad>;

// Per-sample gradients for a subset of layers. dW row i is the flattened
// [out x in] gradient of sample i; db row i is its bias gradient.
struct PerSampleLayerGrad {
    int layer = 0;
    Matrix dW; // [b x out*in]
    Matrix db; // [b x out]
};
struct PerSampleGrads {
    int batch = 0;
    std::vector<PerSampleLayerGrad> layers;
};

// Activations cached by the forward pass. act[0] is the input; act[l+1] is
// the post-activation output of layer l (raw logits for the last layer).
struct ForwardCache {
    std::vector<Matrix> act;
    std::vector<Matrix> pre; // pre-activation per layer

    const Matrix& logits() const { return act.back(); }
};

ForwardCache forward(const ModelParams& params, const Matrix& features);

// Recomputes the forward pass from layer `first_layer` on, reusing cached
// activations below it. Used for meta models that differ only in top layers.
ForwardCache forward_from(const ModelParams& params, const ForwardCache& base, int first_layer);

Matrix softmax_rows(const Matrix& logits);

// Per-sample softmax cross-entropy. Label smoothing s replaces each label
// row y with (1-s)*y + s/C before the cross-entropy.
std::vector<double> softmax_xent(const Matrix& logits, const Matrix& labels, double smoothing);

// Gradient of sum_i weights[i] * L_i w.r.t. every parameter.
GradientSet backward_weighted(const ModelParams& params, const Batch& batch,
                              std::span<const double> weights, double smoothing);
GradientSet backward_weighted(const ModelParams& params, const Batch& batch, const ForwardCache& cache,
                              std::span<const double> weights, double smoothing);

// Same, but fills gradients only for meta-masked layers and stops
// propagating below the lowest masked layer. Unmasked entries stay empty.
GradientSet backward_weighted_masked(const ModelParams& params, const Batch& batch,
                                     const ForwardCache& cache, std::span<const double> weights,
                                     double smoothing);

// Per-sample gradients restricted to meta-masked layers. The final dense
// layer uses the closed form (softmax(z_i) - y_i) (x) h_i.
PerSampleGrads per_sample_grad_meta(const ModelParams& params, const Batch& batch, double smoothing);
PerSampleGrads per_sample_grad_meta(const ModelParams& params, const Batch& batch, const ForwardCache& cache,
                                    double smoothing);

// In-place SGD update. When mask is given, only masked layers move.
void sgd_step(ModelParams& params, const GradientSet& grads, double lr,
              const std::vector<bool>* mask = nullptr);

double cosine_lr(int step, int total_steps, double base_lr);

// He-normal initialization, deterministic per seed.
ModelParams make_mlp(int input_dim, const std::vector<int>& hidden, int num_classes,
                     std::uint64_t seed);

// Sets meta_mask to the trailing `last_k` layers (1 = final layer only).
void set_meta_last_k(ModelParams& params, int last_k);

// Serial straight-line reference kernels, kept independent of the OpenMP
// implementations above for testing and benchmarking.
namespace ref {
Matrix forward_logits(const ModelParams& params, const Matrix& features);
std::vector<double> softmax_xent(const Matrix& logits, const Matrix& labels, double smoothing);
GradientSet backward_weighted(const ModelParams& params, const Batch& batch,
                              std::span<const double> weights, double smoothing);
} // namespace ref

} // namespace fsr
