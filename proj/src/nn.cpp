#include "fsr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fsr {

void ModelParams::validate() const {
    if (layers.empty()) throw ConfigError("model has no layers");
    if (meta_mask.size() != layers.size())
        throw ConfigError("meta_mask size does not match layer count");
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        if (layers[l + 1].in_dim() != layers[l].out_dim())
            throw ConfigError("layer " + std::to_string(l + 1) + " input dim " +
                              std::to_string(layers[l + 1].in_dim()) + " != previous output dim " +
                              std::to_string(layers[l].out_dim()));
    }
    if (std::none_of(meta_mask.begin(), meta_mask.end(), [](bool m) { return m; }))
        throw ConfigError("meta_mask selects no layers");
}

namespace {

// out[b x m] = in[b x n] * W^T + bias, optionally relu'd.
void dense_forward(const Matrix& in, const DenseLayer& layer, Matrix& pre, Matrix& post, bool relu) {
    const int b = in.rows, n = in.cols, m = layer.out_dim();
    pre = Matrix(b, m);
    post = Matrix(b, m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < b; ++i) {
        const double* x = in.row(i);
        double* z = pre.row(i);
        double* a = post.row(i);
        for (int j = 0; j < m; ++j) {
            const double* w = layer.W.row(j);
            double s = layer.b[j];
            for (int k = 0; k < n; ++k) s += w[k] * x[k];
            z[j] = s;
            a[j] = relu ? std::max(0.0, s) : s;
        }
    }
}

} // namespace

ForwardCache forward(const ModelParams& params, const Matrix& features) {
    if (features.cols != params.input_dim())
        throw ConfigError("feature width " + std::to_string(features.cols) +
                          " does not match model input dim " + std::to_string(params.input_dim()));
    ForwardCache cache;
    const int L = params.num_layers();
    cache.act.resize(L + 1);
    cache.pre.resize(L);
    cache.act[0] = features;
    for (int l = 0; l < L; ++l)
        dense_forward(cache.act[l], params.layers[l], cache.pre[l], cache.act[l + 1], l + 1 < L);
    return cache;
}

ForwardCache forward_from(const ModelParams& params, const ForwardCache& base, int first_layer) {
    const int L = params.num_layers();
    ForwardCache cache;
    cache.act.resize(L + 1);
    cache.pre.resize(L);
    for (int l = 0; l <= first_layer; ++l) cache.act[l] = base.act[l];
    for (int l = 0; l < first_layer; ++l) cache.pre[l] = base.pre[l];
    for (int l = first_layer; l < L; ++l)
        dense_forward(cache.act[l], params.layers[l], cache.pre[l], cache.act[l + 1], l + 1 < L);
    return cache;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double* q = p.row(i);
        double zmax = z[0];
        for (int c = 1; c < logits.cols; ++c) zmax = std::max(zmax, z[c]);
        double sum = 0.0;
        for (int c = 0; c < logits.cols; ++c) {
            q[c] = std::exp(z[c] - zmax);
            sum += q[c];
        }
        for (int c = 0; c < logits.cols; ++c) q[c] /= sum;
    }
    return p;
}

std::vector<double> softmax_xent(const Matrix& logits, const Matrix& labels, double smoothing) {
    if (logits.rows != labels.rows || logits.cols != labels.cols)
        throw ConfigError("logits/labels shape mismatch");
    const int b = logits.rows, C = logits.cols;
    std::vector<double> loss(b, 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < b; ++i) {
        const double* z = logits.row(i);
        const double* y = labels.row(i);
        double zmax = z[0];
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(z[c] - zmax);
        const double lse = zmax + std::log(sum);
        double li = 0.0;
        for (int c = 0; c < C; ++c) {
            const double yc = (1.0 - smoothing) * y[c] + smoothing / C;
            li -= yc * (z[c] - lse);
        }
        loss[i] = li;
    }
    return loss;
}

namespace {

// delta at the output layer: delta[i,c] = weights[i] * (softmax(z)[i,c] - y'[i,c]).
Matrix output_delta(const Matrix& logits, const Matrix& labels, std::span<const double> weights,
                    double smoothing) {
    const int b = logits.rows, C = logits.cols;
    Matrix delta = softmax_rows(logits);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < b; ++i) {
        const double* y = labels.row(i);
        double* d = delta.row(i);
        for (int c = 0; c < C; ++c)
            d[c] = weights[i] * (d[c] - ((1.0 - smoothing) * y[c] + smoothing / C));
    }
    return delta;
}

// dW = delta^T * act, db = column sums of delta. Each output element
// accumulates over the batch serially so results do not depend on the
// thread count.
LayerGrad layer_grad(const Matrix& delta, const Matrix& act) {
    const int b = delta.rows, m = delta.cols, n = act.cols;
    LayerGrad g{Matrix(m, n), std::vector<double>(m, 0.0)};
#pragma omp parallel for schedule(static)
    for (int j = 0; j < m; ++j) {
        double* gw = g.dW.row(j);
        double gb = 0.0;
        for (int i = 0; i < b; ++i) {
            const double d = delta(i, j);
            gb += d;
            const double* a = act.row(i);
            for (int k = 0; k < n; ++k) gw[k] += d * a[k];
        }
        g.db[j] = gb;
    }
    return g;
}

// delta_prev = (delta * W) masked by relu'(pre_prev).
Matrix propagate_delta(const Matrix& delta, const DenseLayer& layer, const Matrix& pre_prev) {
    const int b = delta.rows, m = delta.cols, n = layer.in_dim();
    Matrix out(b, n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < b; ++i) {
        const double* d = delta.row(i);
        const double* z = pre_prev.row(i);
        double* o = out.row(i);
        for (int j = 0; j < m; ++j) {
            const double dj = d[j];
            if (dj == 0.0) continue;
            const double* w = layer.W.row(j);
            for (int k = 0; k < n; ++k) o[k] += dj * w[k];
        }
        for (int k = 0; k < n; ++k)
            if (z[k] <= 0.0) o[k] = 0.0;
    }
    return out;
}

} // namespace

GradientSet backward_weighted(const ModelParams& params, const Batch& batch, const ForwardCache& cache,
                              std::span<const double> weights, double smoothing) {
    const int L = params.num_layers();
    GradientSet grads(L);
    Matrix delta = output_delta(cache.logits(), batch.labels, weights, smoothing);
    for (int l = L - 1; l >= 0; --l) {
        grads[l] = layer_grad(delta, cache.act[l]);
        if (l > 0) delta = propagate_delta(delta, params.layers[l], cache.pre[l - 1]);
    }
    return grads;
}

GradientSet backward_weighted(const ModelParams& params, const Batch& batch,
                              std::span<const double> weights, double smoothing) {
    return backward_weighted(params, batch, forward(params, batch.features), weights, smoothing);
}

GradientSet backward_weighted_masked(const ModelParams& params, const Batch& batch,
                                     const ForwardCache& cache, std::span<const double> weights,
                                     double smoothing) {
    const int L = params.num_layers();
    GradientSet grads(L);
    Matrix delta = output_delta(cache.logits(), batch.labels, weights, smoothing);
    for (int l = L - 1; l >= 0; --l) {
        if (params.meta_mask[l]) grads[l] = layer_grad(delta, cache.act[l]);
        bool more = false;
        for (int k = 0; k < l; ++k) more = more || params.meta_mask[k];
        if (!more) break;
        delta = propagate_delta(delta, params.layers[l], cache.pre[l - 1]);
    }
    return grads;
}

PerSampleGrads per_sample_grad_meta(const ModelParams& params, const Batch& batch,
                                    const ForwardCache& cache, double smoothing) {
    params.validate();
    const int L = params.num_layers();
    const int b = batch.size();
    PerSampleGrads out;
    out.batch = b;

    std::vector<double> ones(b, 1.0);
    Matrix delta = output_delta(cache.logits(), batch.labels, ones, smoothing);
    std::vector<PerSampleLayerGrad> rev;
    for (int l = L - 1; l >= 0; --l) {
        if (params.meta_mask[l]) {
            const int m = params.layers[l].out_dim();
            const int n = params.layers[l].in_dim();
            PerSampleLayerGrad psg{l, Matrix(b, m * n), Matrix(b, m)};
            const Matrix& act = cache.act[l];
#pragma omp parallel for schedule(static)
            for (int i = 0; i < b; ++i) {
                const double* d = delta.row(i);
                const double* a = act.row(i);
                double* gw = psg.dW.row(i);
                double* gb = psg.db.row(i);
                for (int j = 0; j < m; ++j) {
                    gb[j] = d[j];
                    for (int k = 0; k < n; ++k) gw[j * n + k] = d[j] * a[k];
                }
            }
            rev.push_back(std::move(psg));
        }
        // No masked layers below: stop propagating.
        bool more = false;
        for (int k = 0; k < l; ++k) more = more || params.meta_mask[k];
        if (!more) break;
        delta = propagate_delta(delta, params.layers[l], cache.pre[l - 1]);
    }
    out.layers.assign(rev.rbegin(), rev.rend());
    return out;
}

PerSampleGrads per_sample_grad_meta(const ModelParams& params, const Batch& batch, double smoothing) {
    return per_sample_grad_meta(params, batch, forward(params, batch.features), smoothing);
}

void sgd_step(ModelParams& params, const GradientSet& grads, double lr,
              const std::vector<bool>* mask) {
    if (grads.size() != params.layers.size()) throw ConfigError("gradient/layer count mismatch");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        if (mask && !(*mask)[l]) continue;
        DenseLayer& layer = params.layers[l];
        const LayerGrad& g = grads[l];
        if (g.dW.data.empty()) continue; // masked-out gradient entry
        for (std::size_t k = 0; k < layer.W.data.size(); ++k) layer.W.data[k] -= lr * g.dW.data[k];
        for (std::size_t k = 0; k < layer.b.size(); ++k) layer.b[k] -= lr * g.db[k];
    }
}

double cosine_lr(int step, int total_steps, double base_lr) {
    if (step < 0 || step >= total_steps) throw ConfigError("cosine_lr: step out of range");
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

ModelParams make_mlp(int input_dim, const std::vector<int>& hidden, int num_classes,
                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ModelParams params;
    int in = input_dim;
    std::vector<int> dims = hidden;
    dims.push_back(num_classes);
    for (int out : dims) {
        DenseLayer layer(out, in);
        const double scale = std::sqrt(2.0 / in);
        for (double& w : layer.W.data) w = scale * gauss(rng);
        params.layers.push_back(std::move(layer));
        in = out;
    }
    params.meta_mask.assign(params.layers.size(), false);
    params.meta_mask.back() = true;
    params.validate();
    return params;
}

void set_meta_last_k(ModelParams& params, int last_k) {
    const int L = params.num_layers();
    if (last_k < 1 || last_k > L) throw ConfigError("meta layer count out of range");
    params.meta_mask.assign(L, false);
    for (int l = L - last_k; l < L; ++l) params.meta_mask[l] = true;
}

namespace ref {

Matrix forward_logits(const ModelParams& params, const Matrix& features) {
    Matrix cur = features;
    for (int l = 0; l < params.num_layers(); ++l) {
        const DenseLayer& layer = params.layers[l];
        Matrix next(cur.rows, layer.out_dim());
        for (int i = 0; i < cur.rows; ++i)
            for (int j = 0; j < layer.out_dim(); ++j) {
                double s = layer.b[j];
                for (int k = 0; k < layer.in_dim(); ++k) s += layer.W(j, k) * cur(i, k);
                if (l + 1 < params.num_layers() && s < 0.0) s = 0.0;
                next(i, j) = s;
            }
        cur = next;
    }
    return cur;
}

std::vector<double> softmax_xent(const Matrix& logits, const Matrix& labels, double smoothing) {
    const int C = logits.cols;
    std::vector<double> loss(logits.rows, 0.0);
    for (int i = 0; i < logits.rows; ++i) {
        double zmax = logits(i, 0);
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, logits(i, c));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(logits(i, c) - zmax);
        const double lse = zmax + std::log(sum);
        for (int c = 0; c < C; ++c) {
            const double yc = (1.0 - smoothing) * labels(i, c) + smoothing / C;
            loss[i] -= yc * (logits(i, c) - lse);
        }
    }
    return loss;
}

GradientSet backward_weighted(const ModelParams& params, const Batch& batch,
                              std::span<const double> weights, double smoothing) {
    const int L = params.num_layers();
    const int b = batch.size();
    // Forward, keeping pre- and post-activations.
    std::vector<Matrix> act(L + 1), pre(L);
    act[0] = batch.features;
    for (int l = 0; l < L; ++l) {
        const DenseLayer& layer = params.layers[l];
        pre[l] = Matrix(b, layer.out_dim());
        act[l + 1] = Matrix(b, layer.out_dim());
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < layer.out_dim(); ++j) {
                double s = layer.b[j];
                for (int k = 0; k < layer.in_dim(); ++k) s += layer.W(j, k) * act[l](i, k);
                pre[l](i, j) = s;
                act[l + 1](i, j) = (l + 1 < L) ? std::max(0.0, s) : s;
            }
    }
    const int C = params.num_classes();
    Matrix delta(b, C);
    for (int i = 0; i < b; ++i) {
        double zmax = act[L](i, 0);
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, act[L](i, c));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(act[L](i, c) - zmax);
        for (int c = 0; c < C; ++c) {
            const double p = std::exp(act[L](i, c) - zmax) / sum;
            const double yc = (1.0 - smoothing) * batch.labels(i, c) + smoothing / C;
            delta(i, c) = weights[i] * (p - yc);
        }
    }
    GradientSet grads(L);
    for (int l = L - 1; l >= 0; --l) {
        const DenseLayer& layer = params.layers[l];
        grads[l].dW = Matrix(layer.out_dim(), layer.in_dim());
        grads[l].db.assign(layer.out_dim(), 0.0);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < layer.out_dim(); ++j) {
                grads[l].db[j] += delta(i, j);
                for (int k = 0; k < layer.in_dim(); ++k)
                    grads[l].dW(j, k) += delta(i, j) * act[l](i, k);
            }
        if (l > 0) {
            Matrix prev(b, layer.in_dim());
            for (int i = 0; i < b; ++i)
                for (int k = 0; k < layer.in_dim(); ++k) {
                    double s = 0.0;
                    for (int j = 0; j < layer.out_dim(); ++j) s += delta(i, j) * layer.W(j, k);
                    prev(i, k) = pre[l - 1](i, k) > 0.0 ? s : 0.0;
                }
            delta = prev;
        }
    }
    return grads;
}

} // namespace ref

} // namespace fsr
