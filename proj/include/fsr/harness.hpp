#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>

#include "fsr/relabel.hpp"

namespace fsr {

enum class Mode { vanilla, fsr, fsr_raw, l2r };
enum class MetaLayerSel { fc, last_k, all };

struct SyntheticSpec {
    int classes = 6;
    int per_class = 1000;
    int test_per_class = 200;
    int dim = 2;
    double spread = 0.18;
};

struct ExperimentConfig {
    Mode mode = Mode::fsr;
    int epochs = 60;
    int warm_up = 5;
    int batch = 100;
    int reward_batch = 120;
    int dict_capacity = 600;
    double lambda = 0.9;
    double eta = 0.1;
    double alpha = 1.0;
    double beta = 0.1;
    double pseudo_mult = 2.0;
    double smoothing = 0.0;
    double mixup_alpha = 1.0;
    bool mixup = true;
    PusherKind pusher = PusherKind::meta_margin;
    MetaLayerSel meta_layers = MetaLayerSel::fc;
    int meta_last_k = 1;
    NormMode norm = NormMode::clip_nonneg;
    NoiseKind noise = NoiseKind::none;
    double noise_ratio = 0.0;
    double imbalance = 1.0;
    bool deferred = false;
    std::uint64_t seed = 0;
    std::vector<int> hidden = {64, 64};
    double base_lr = 0.1;
    std::string data = "synthetic:";
    std::string out_dir;

    // Throws ConfigError on invalid combinations; returns warnings for
    // soft issues (e.g. q > |R|).
    std::vector<std::string> validate() const;
    // Deferred schedule maps to a late warm-up boundary.
    int effective_warm_up() const;
};

struct MetricsRecord {
    int step = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double dict_purity = 0.0;
    double zero_weight_ratio = 0.0;
    bool zero_weight_defined = true; // false under shift normalization
    std::map<std::string, double> phase_times;
};

struct StepResult {
    int step = 0;
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    bool meta_active = false;
    std::vector<double> weights;
};

// Argmax accuracy against clean labels; ties go to the lowest class id.
double evaluate(const ModelParams& params, const BiasedDataset& test_set);

// Trailing-window zero-weight diagnostic over normalized weight vectors.
class ZeroWeightWindow {
public:
    explicit ZeroWeightWindow(int window = 50) : window_(window) {}
    void push(const std::vector<double>& weights);
    double ratio() const;

private:
    int window_;
    std::deque<double> ratios_;
};

// Runs Algorithm-1-style training for one experiment configuration.
class Trainer {
public:
    Trainer(const ExperimentConfig& cfg, BiasedDataset train, BiasedDataset test,
            std::optional<BiasedDataset> reward_set = std::nullopt);

    StepResult step();
    void run(); // all epochs; records one MetricsRecord per epoch
    int total_steps() const { return total_steps_; }
    int steps_done() const { return step_; }
    int steps_per_epoch() const { return steps_per_epoch_; }

    const ModelParams& params() const { return params_; }
    const ProxyDictionary& dictionary() const { return dict_; }
    const std::vector<SampleState>& sample_states() const { return states_; }
    const std::vector<MetricsRecord>& metrics() const { return metrics_; }
    const BiasedDataset& train_set() const { return train_; }
    // Diagnostics: inputs of the most recent step (reward batch only when the
    // step fetched one).
    const Batch& last_batch() const { return last_batch_; }
    const std::optional<Batch>& last_reward_batch() const { return last_reward_batch_; }
    double last_dict_purity() const { return dict_purity_; }
    double zero_weight_ratio() const;
    bool zero_weight_defined() const { return cfg_.norm == NormMode::clip_nonneg; }
    const std::map<std::string, double>& phase_totals() const { return phase_total_; }

    MetricsRecord make_record();

private:
    Batch fetch_reward_batch();
    void score_batch(const Batch& batch, const std::vector<double>& losses_before,
                     const ForwardCache& cache_before, const ModelParams& meta_model);

    ExperimentConfig cfg_;
    BiasedDataset train_;
    BiasedDataset test_;
    ProxyDictionary dict_;        // proxy dictionary (fsr modes)
    ProxyDictionary reward_dict_; // grouped external reward set (l2r)
    std::optional<BiasedDataset> reward_set_;
    std::vector<SampleState> states_;
    ModelParams params_;
    EpochSampler sampler_;
    std::mt19937_64 fetch_rng_;
    std::mt19937_64 mixup_rng_;
    RelabelConfig relabel_;
    MetaConfig meta_cfg_;
    ZeroWeightWindow zw_window_;
    Batch last_batch_;
    std::optional<Batch> last_reward_batch_;
    std::vector<MetricsRecord> metrics_;
    std::map<std::string, double> phase_epoch_;
    std::map<std::string, double> phase_total_;
    int step_ = 0;
    int total_steps_ = 0;
    int steps_per_epoch_ = 0;
    int warm_up_ = 0;
    double epoch_loss_sum_ = 0.0;
    int epoch_loss_count_ = 0;
    double dict_purity_ = 0.0;
};

struct RunSummary {
    double final_accuracy = 0.0;
    double mean_purity_last10 = 0.0;
    double mean_zero_weight_ratio = 0.0;
    double total_seconds = 0.0;
    int epochs = 0;
};

// Materializes the dataset(s) named by cfg.data ("synthetic:k=v,..." or a
// CSV path) with cfg bias injection applied to the train split.
std::pair<BiasedDataset, BiasedDataset> build_datasets(const ExperimentConfig& cfg);

// Clean class-balanced reward set for the L2R baseline.
BiasedDataset build_l2r_reward_set(const ExperimentConfig& cfg, const BiasedDataset& train);

// Full experiment: data, training, metrics files (JSONL + CSV mirror),
// dictionary audit export, final model export. Files go to cfg.out_dir when
// set.
RunSummary run_experiment(const ExperimentConfig& cfg);

SyntheticSpec parse_synthetic_spec(const std::string& spec);

} // namespace fsr
