#include "fsr/dictionary.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

namespace fsr {

int ProxyDictionary::total() const {
    int n = 0;
    for (const auto& bucket : entries) n += static_cast<int>(bucket.size());
    return n;
}

std::vector<int> ProxyDictionary::all_indices() const {
    std::vector<int> out;
    for (const auto& bucket : entries) out.insert(out.end(), bucket.begin(), bucket.end());
    return out;
}

double margin_to_best_other(std::span<const double> logits, int label) {
    double best_other = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(logits.size()); ++c)
        if (c != label) best_other = std::max(best_other, logits[c]);
    return logits[label] - best_other;
}

double alt_pusher(PusherKind kind, const SampleState& state, std::span<const double> logits,
                  int label, double loss) {
    switch (kind) {
        case PusherKind::negative_loss:
            return -loss;
        case PusherKind::max_margin:
            return margin_to_best_other(logits, label);
        case PusherKind::forgetting_event:
            return -static_cast<double>(state.forget_count); // Forget-event^{-1}
        case PusherKind::aum:
            return state.aum_sum / std::max(1, state.aum_count);
        default:
            throw ConfigError("alt_pusher: unknown pusher kind");
    }
}

void update_momentum_score(SampleState& state, double raw_score, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("momentum lambda must be in [0,1]");
    if (!state.raw_score_seen) {
        state.momentum_score = raw_score;
        state.raw_score_seen = true;
    } else {
        state.momentum_score = lambda * state.momentum_score + (1.0 - lambda) * raw_score;
    }
}

void update_forgetting(SampleState& state, bool correct_now) {
    if (state.prev_correct && !correct_now) ++state.forget_count;
    state.prev_correct = correct_now;
}

void accumulate_aum(SampleState& state, std::span<const double> logits, int label) {
    state.aum_sum += margin_to_best_other(logits, label);
    ++state.aum_count;
}

ProxyDictionary rebuild_dictionary(const std::vector<SampleState>& states,
                                   const std::vector<int>& observed_labels, int capacity, int C,
                                   std::vector<std::string>* warnings) {
    if (capacity < C) throw ConfigError("dictionary capacity must be >= class count");
    if (states.size() != observed_labels.size())
        throw ConfigError("rebuild_dictionary: state/label size mismatch");

    std::vector<std::vector<int>> candidates(C);
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].raw_score_seen) candidates[observed_labels[i]].push_back(static_cast<int>(i));

    ProxyDictionary dict;
    dict.capacity = capacity;
    dict.num_classes = C;
    dict.entries.resize(C);
    for (int c = 0; c < C; ++c) {
        const int quota = capacity / C + (c < capacity % C ? 1 : 0);
        auto& rows = candidates[c];
        if (rows.empty()) {
            if (warnings)
                warnings->push_back("class " + std::to_string(c) + " has no scored samples");
            continue;
        }
        std::sort(rows.begin(), rows.end(), [&](int a, int b) {
            if (states[a].momentum_score != states[b].momentum_score)
                return states[a].momentum_score > states[b].momentum_score;
            return a < b;
        });
        if (static_cast<int>(rows.size()) > quota) rows.resize(quota);
        dict.entries[c] = rows;
    }
    return dict;
}

Batch fetch_balanced_batch(const ProxyDictionary& dict, const BiasedDataset& ds, int q,
                           std::mt19937_64& rng) {
    if (dict.empty()) throw ConfigError("fetch_balanced_batch: empty dictionary");
    const int C = dict.num_classes;
    std::vector<int> rows;
    for (int c = 0; c < C; ++c) {
        const int quota = q / C + (c < q % C ? 1 : 0);
        const auto& bucket = dict.entries[c];
        if (bucket.empty()) continue;
        if (static_cast<int>(bucket.size()) >= quota) {
            std::vector<int> pool = bucket;
            std::shuffle(pool.begin(), pool.end(), rng);
            rows.insert(rows.end(), pool.begin(), pool.begin() + quota);
        } else {
            std::uniform_int_distribution<int> pick(0, static_cast<int>(bucket.size()) - 1);
            for (int k = 0; k < quota; ++k) rows.push_back(bucket[pick(rng)]);
        }
    }
    return make_batch(ds, rows);
}

ProxyDictionary init_dictionary(const BiasedDataset& ds, int capacity, std::mt19937_64& rng) {
    const int C = ds.num_classes;
    if (capacity < C) throw ConfigError("dictionary capacity must be >= class count");
    std::vector<std::vector<int>> by_class(C);
    for (int i = 0; i < ds.size(); ++i) by_class[ds.observed_labels[i]].push_back(i);

    ProxyDictionary dict;
    dict.capacity = capacity;
    dict.num_classes = C;
    dict.entries.resize(C);
    for (int c = 0; c < C; ++c) {
        const int quota = capacity / C + (c < capacity % C ? 1 : 0);
        auto& rows = by_class[c];
        std::shuffle(rows.begin(), rows.end(), rng);
        if (static_cast<int>(rows.size()) > quota) rows.resize(quota);
        dict.entries[c] = rows;
    }
    return dict;
}

double dictionary_purity(const ProxyDictionary& dict, const BiasedDataset& ds) {
    int clean = 0, total = 0;
    for (const auto& bucket : dict.entries)
        for (int row : bucket) {
            ++total;
            if (ds.observed_labels[row] == ds.clean_labels[row]) ++clean;
        }
    return total == 0 ? 0.0 : static_cast<double>(clean) / total;
}

void export_dictionary_csv(const std::string& path, const ProxyDictionary& dict,
                           const BiasedDataset& ds, const std::vector<SampleState>& states) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << "dataset_index,observed_label,clean_label,momentum_score\n";
    for (const auto& bucket : dict.entries)
        for (int row : bucket)
            out << row << ',' << ds.observed_labels[row] << ',' << ds.clean_labels[row] << ','
                << states[row].momentum_score << '\n';
}

} // namespace fsr
