#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fsr/nn.hpp"

namespace fsr {

enum class Split { train, test };
enum class NoiseKind { none, uniform, asymmetric };

// Feature vectors with observed (possibly corrupted) labels. Clean labels
// exist for evaluation-only diagnostics; training code paths receive
// observed labels only (batches are assembled from observed labels).
struct BiasedDataset {
    Matrix features;
    std::vector<int> clean_labels;
    std::vector<int> observed_labels;
    int num_classes = 0;
    Split split = Split::train;

    int size() const { return features.rows; }
    int dim() const { return features.cols; }
    void validate() const;
};

struct BiasSpec {
    NoiseKind noise_kind = NoiseKind::none;
    double noise_ratio = 0.0;
    double imbalance_ratio = 1.0;
    std::optional<std::vector<int>> confusion_map; // class -> class
    std::uint64_t seed = 0;
};

// C Gaussian clusters centered on a unit ring in the first two dimensions.
BiasedDataset make_gaussian_clusters(int C, int per_class, int d, double spread,
                                     std::uint64_t seed, Split split = Split::train);

// Resamples floor(ratio*N) observed labels uniformly from the other C-1
// classes. Clean labels are untouched; refuses to corrupt a test split.
BiasedDataset inject_uniform_noise(const BiasedDataset& ds, double ratio, std::uint64_t seed);

// Same selection, but observed := confusion_map(clean) for selected rows.
BiasedDataset inject_asymmetric_noise(const BiasedDataset& ds, double ratio,
                                      const std::vector<int>& confusion_map, std::uint64_t seed);

// Cyclic shift map c -> (c+1) mod C, the default asymmetric confusion.
std::vector<int> cyclic_confusion_map(int C);

// Exponential class-size profile: class c keeps round(n_max * mu^(-c/(C-1))).
BiasedDataset make_long_tailed(const BiasedDataset& ds, double mu, std::uint64_t seed);

// Per-epoch shuffled sequential sampler; every sample appears exactly once
// per epoch.
class EpochSampler {
public:
    EpochSampler(int n, std::uint64_t seed);
    // Row indices of the next batch; reshuffles at epoch boundaries.
    std::vector<int> next(int b);
    bool epoch_done() const { return pos_ >= static_cast<int>(perm_.size()); }
    int epoch() const { return epoch_; }

private:
    void reshuffle();
    std::vector<int> perm_;
    int pos_ = 0;
    int epoch_ = 0;
    std::mt19937_64 rng_;
};

// Assembles a Batch (one-hot observed labels) from dataset rows.
Batch make_batch(const BiasedDataset& ds, const std::vector<int>& rows);
std::vector<int> one_hot_argmax_rows(const Matrix& labels);

// CSV schema: f0,...,f{d-1},clean_label,observed_label,split
void save_csv(const std::string& path, const BiasedDataset& train, const BiasedDataset& test);
std::pair<BiasedDataset, BiasedDataset> load_csv(const std::string& path);

} // namespace fsr
