#pragma once

#include <random>
#include <string>
#include <vector>

#include "fsr/data.hpp"

namespace fsr {

// Per-sample bookkeeping for pusher scoring and re-labeling.
struct SampleState {
    double momentum_score = 0.0;
    bool raw_score_seen = false;
    std::vector<double> pseudo_label; // empty until first prediction
    bool prev_correct = false;
    int forget_count = 0;
    double aum_sum = 0.0;
    int aum_count = 0;
};

enum class PusherKind { meta_margin, negative_loss, max_margin, forgetting_event, aum };

// Class-balanced fixed-capacity buffer of training-sample indices serving
// as proxy reward data.
struct ProxyDictionary {
    int capacity = 0;
    int num_classes = 0;
    std::vector<std::vector<int>> entries; // per class

    int total() const;
    bool empty() const { return total() == 0; }
    std::vector<int> all_indices() const;
};

// Loss drop of one sample under the one-step meta model: positive when the
// meta step reduced its loss.
inline double meta_margin(double loss_before, double loss_after) {
    return loss_before - loss_after;
}

// Alternative pusher scores from the ablation set. Larger is better.
double alt_pusher(PusherKind kind, const SampleState& state, std::span<const double> logits,
                  int label, double loss);

// logit margin of the labeled class over the best other class
double margin_to_best_other(std::span<const double> logits, int label);

// EMA update; the first observation initializes the score directly.
void update_momentum_score(SampleState& state, double raw_score, double lambda);

// Counts correct -> incorrect transitions between scoring passes.
void update_forgetting(SampleState& state, bool correct_now);

// Adds one per-step margin observation for the AUM pusher.
void accumulate_aum(SampleState& state, std::span<const double> logits, int label);

// Top-k per observed class by momentum score; quota floor(capacity/C) with
// the remainder given to the lowest class ids, ties broken by lower index.
// Only samples with raw_score_seen are eligible.
ProxyDictionary rebuild_dictionary(const std::vector<SampleState>& states,
                                   const std::vector<int>& observed_labels, int capacity, int C,
                                   std::vector<std::string>* warnings = nullptr);

// q/C per class drawn uniformly without replacement (with replacement when a
// class bucket is smaller than its quota).
Batch fetch_balanced_batch(const ProxyDictionary& dict, const BiasedDataset& ds, int q,
                           std::mt19937_64& rng);

// Uniform random class-balanced draw on observed labels.
ProxyDictionary init_dictionary(const BiasedDataset& ds, int capacity, std::mt19937_64& rng);

// Fraction of entries whose observed label equals the hidden clean label.
// Diagnostic only; never feeds back into training.
double dictionary_purity(const ProxyDictionary& dict, const BiasedDataset& ds);

// Audit export: dataset_index, observed_label, clean_label, momentum_score.
void export_dictionary_csv(const std::string& path, const ProxyDictionary& dict,
                           const BiasedDataset& ds, const std::vector<SampleState>& states);

} // namespace fsr
