#include "fsr/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace fsr {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int argmax_lowest(const double* v, int n) {
    int best = 0;
    for (int c = 1; c < n; ++c)
        if (v[c] > v[best]) best = c;
    return best;
}

} // namespace

std::vector<std::string> ExperimentConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (epochs > 0 && warm_up >= epochs && !deferred)
        throw ConfigError("warm-up must be smaller than the epoch count");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (reward_batch < 1) throw ConfigError("reward batch size must be >= 1");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
    if (eta <= 0.0 || alpha <= 0.0) throw ConfigError("alpha and eta must be positive");
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must be in [0,1]");
    if (pseudo_mult < 0.0) throw ConfigError("pseudo multiplier must be >= 0");
    if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("smoothing must be in [0,1)");
    if (mixup_alpha <= 0.0) throw ConfigError("mixup alpha must be positive");
    if (noise_ratio < 0.0 || noise_ratio >= 1.0) throw ConfigError("noise ratio must be in [0,1)");
    if (imbalance < 1.0) throw ConfigError("imbalance ratio must be >= 1");
    if (meta_layers == MetaLayerSel::last_k && meta_last_k < 1)
        throw ConfigError("meta last_k must be >= 1");
    std::vector<std::string> warnings;
    if (reward_batch > dict_capacity)
        warnings.push_back("reward batch " + std::to_string(reward_batch) +
                           " exceeds dictionary capacity " + std::to_string(dict_capacity));
    return warnings;
}

int ExperimentConfig::effective_warm_up() const {
    if (!deferred) return warm_up;
    // Deferred schedule: enable re-weighting after the first learning-rate
    // decay, which for the cosine schedule we place at 80% of the run.
    return std::max(warm_up, static_cast<int>(std::lround(0.8 * epochs)));
}

double evaluate(const ModelParams& params, const BiasedDataset& test_set) {
    if (test_set.size() == 0) throw ConfigError("evaluate: empty test set");
    const Matrix logits = forward(params, test_set.features).logits();
    int correct = 0;
    for (int i = 0; i < logits.rows; ++i)
        if (argmax_lowest(logits.row(i), logits.cols) == test_set.clean_labels[i]) ++correct;
    return static_cast<double>(correct) / test_set.size();
}

void ZeroWeightWindow::push(const std::vector<double>& weights) {
    int zeros = 0;
    for (double w : weights)
        if (w <= 1e-12) ++zeros;
    ratios_.push_back(weights.empty() ? 0.0 : static_cast<double>(zeros) / weights.size());
    while (static_cast<int>(ratios_.size()) > window_) ratios_.pop_front();
}

double ZeroWeightWindow::ratio() const {
    if (ratios_.empty()) return 0.0;
    return std::accumulate(ratios_.begin(), ratios_.end(), 0.0) / ratios_.size();
}

Trainer::Trainer(const ExperimentConfig& cfg, BiasedDataset train, BiasedDataset test,
                 std::optional<BiasedDataset> reward_set)
    : cfg_(cfg),
      train_(std::move(train)),
      test_(std::move(test)),
      reward_set_(std::move(reward_set)),
      sampler_(train_.size(), derive_seed(cfg.seed, 2)),
      fetch_rng_(derive_seed(cfg.seed, 3)),
      mixup_rng_(derive_seed(cfg.seed, 4)) {
    cfg_.validate();
    train_.validate();
    test_.validate();
    warm_up_ = cfg_.effective_warm_up();
    steps_per_epoch_ = (train_.size() + cfg_.batch - 1) / cfg_.batch;
    total_steps_ = cfg_.epochs * steps_per_epoch_;

    params_ = make_mlp(train_.dim(), cfg_.hidden, train_.num_classes, derive_seed(cfg_.seed, 1));
    switch (cfg_.meta_layers) {
        case MetaLayerSel::fc: set_meta_last_k(params_, 1); break;
        case MetaLayerSel::last_k: set_meta_last_k(params_, cfg_.meta_last_k); break;
        case MetaLayerSel::all: set_meta_last_k(params_, params_.num_layers()); break;
    }

    states_.resize(train_.size());
    if (cfg_.mode == Mode::fsr || cfg_.mode == Mode::fsr_raw) {
        std::mt19937_64 init_rng(derive_seed(cfg_.seed, 5));
        dict_ = init_dictionary(train_, cfg_.dict_capacity, init_rng);
    }
    if (cfg_.mode == Mode::l2r) {
        if (!reward_set_) throw ConfigError("l2r mode requires an external reward set");
        reward_set_->validate();
        reward_dict_.capacity = reward_set_->size();
        reward_dict_.num_classes = reward_set_->num_classes;
        reward_dict_.entries.resize(reward_set_->num_classes);
        for (int i = 0; i < reward_set_->size(); ++i)
            reward_dict_.entries[reward_set_->observed_labels[i]].push_back(i);
    }

    // Momentum re-labeling and MixUp belong to full fsr only; the other
    // modes run the identical path with the terms disabled.
    if (cfg_.mode == Mode::fsr) {
        relabel_ = {cfg_.beta, cfg_.pseudo_mult, cfg_.mixup_alpha, cfg_.mixup};
    } else {
        relabel_ = {cfg_.beta, 0.0, cfg_.mixup_alpha, false};
    }

    meta_cfg_.alpha = cfg_.alpha;
    meta_cfg_.eta = cfg_.eta;
    meta_cfg_.meta_eval_point = MetaEvalPoint::at_theta_t;
    meta_cfg_.norm_mode = cfg_.norm;
    meta_cfg_.smoothing = cfg_.smoothing;
    if (cfg_.mode == Mode::l2r) meta_cfg_.weight_init = 0.0;
}

Batch Trainer::fetch_reward_batch() {
    if (cfg_.mode == Mode::l2r)
        return fetch_balanced_batch(reward_dict_, *reward_set_, cfg_.reward_batch, fetch_rng_);
    return fetch_balanced_batch(dict_, train_, cfg_.reward_batch, fetch_rng_);
}

void Trainer::score_batch(const Batch& batch, const std::vector<double>& losses_before,
                          const ForwardCache& cache_before, const ModelParams& meta_model) {
    const int b = batch.size();
    std::vector<int> labels = one_hot_argmax_rows(batch.labels);
    std::vector<double> raw(b, 0.0);

    if (cfg_.pusher == PusherKind::meta_margin) {
        // Loss drop under the one-step meta model, with feature sharing: only
        // the meta layers differ, so lower-layer activations are reused from
        // the pre-update forward pass.
        int first_meta = 0;
        while (!params_.meta_mask[first_meta]) ++first_meta;
        const ForwardCache after = forward_from(meta_model, cache_before, first_meta);
        std::vector<double> losses_after =
            softmax_xent(after.logits(), batch.labels, cfg_.smoothing);
        for (int i = 0; i < b; ++i) raw[i] = meta_margin(losses_before[i], losses_after[i]);
    } else {
        const Matrix logits_new = forward(params_, batch.features).logits();
        const std::vector<double> losses_new =
            softmax_xent(logits_new, batch.labels, cfg_.smoothing);
        for (int i = 0; i < b; ++i) {
            SampleState& st = states_[batch.indices[i]];
            std::span<const double> row(logits_new.row(i), logits_new.cols);
            if (cfg_.pusher == PusherKind::forgetting_event)
                update_forgetting(st, argmax_lowest(row.data(), logits_new.cols) == labels[i]);
            if (cfg_.pusher == PusherKind::aum) accumulate_aum(st, row, labels[i]);
            raw[i] = alt_pusher(cfg_.pusher, st, row, labels[i], losses_new[i]);
        }
    }
    for (int i = 0; i < b; ++i)
        update_momentum_score(states_[batch.indices[i]], raw[i], cfg_.lambda);
}

StepResult Trainer::step() {
    if (step_ >= total_steps_) throw ConfigError("step() called past the end of the schedule");
    const int epoch = step_ / steps_per_epoch_;
    const double lr = cosine_lr(step_, total_steps_, cfg_.base_lr);
    const Clock::time_point t_begin = Clock::now();
    double t_forward = 0.0, t_meta_step = 0.0, t_meta_gradient = 0.0, t_backward = 0.0,
           t_dict = 0.0;

    std::vector<int> rows = sampler_.next(cfg_.batch);
    Batch batch = make_batch(train_, rows);
    const int b = batch.size();
    last_batch_ = batch;
    last_reward_batch_.reset();

    Clock::time_point t0 = Clock::now();
    ForwardCache cache_t = forward(params_, batch.features);
    std::vector<double> losses_t = softmax_xent(cache_t.logits(), batch.labels, cfg_.smoothing);
    t_forward = seconds_since(t0);

    const bool meta_active = cfg_.mode != Mode::vanilla && epoch >= warm_up_ &&
                             (cfg_.mode == Mode::l2r || !dict_.empty());

    // The meta model for meta-margin scoring is the one-step masked descent
    // on the reward objective, so the margin measures alignment with the
    // dictionary's reward signal rather than self-memorization within the
    // train batch.
    const bool want_meta_model = (cfg_.mode == Mode::fsr || cfg_.mode == Mode::fsr_raw) &&
                                 cfg_.pusher == PusherKind::meta_margin && !dict_.empty();
    std::optional<ModelParams> meta_model;
    std::optional<GradientSet> reward_grad;
    if (meta_active || want_meta_model) {
        // Meta objective gradient: mean loss gradient over a balanced reward
        // batch, restricted to the meta layers.
        t0 = Clock::now();
        Batch reward = fetch_reward_batch();
        std::vector<double> reward_mean(reward.size(), 1.0 / reward.size());
        reward_grad = backward_weighted_masked(
            params_, reward, forward(params_, reward.features), reward_mean, cfg_.smoothing);
        if (want_meta_model) {
            meta_model = params_;
            sgd_step(*meta_model, *reward_grad, cfg_.alpha * cfg_.eta, &params_.meta_mask);
        }
        t_meta_step = seconds_since(t0);
        last_reward_batch_ = std::move(reward);
    }

    WeightVector w;
    w.mode = cfg_.norm;
    if (meta_active) {
        t0 = Clock::now();
        PerSampleGrads psg = per_sample_grad_meta(params_, batch, cache_t, cfg_.smoothing);
        std::vector<double> dots = meta_gradient(psg, *reward_grad);
        const double w0 = meta_cfg_.base_weight(b);
        w.values.resize(b);
        for (int i = 0; i < b; ++i) w.values[i] = w0 + cfg_.alpha * cfg_.eta * dots[i];
        normalize_weights(w, b);
        t_meta_gradient = seconds_since(t0);
    } else {
        w.values.assign(b, 1.0 / b);
    }

    t0 = Clock::now();
    RelabelConfig effective = relabel_;
    if (epoch < warm_up_) {
        effective.p = 0.0;
        effective.mixup_enabled = false;
    }
    Matrix pseudo;
    if (relabel_.p > 0.0) {
        const Matrix probs = softmax_rows(cache_t.logits());
        for (int i = 0; i < b; ++i)
            update_pseudo_label(states_[batch.indices[i]],
                                std::span<const double>(probs.row(i), probs.cols), cfg_.beta);
        if (effective.p > 0.0) {
            pseudo = Matrix(b, train_.num_classes);
            for (int i = 0; i < b; ++i)
                std::copy(states_[batch.indices[i]].pseudo_label.begin(),
                          states_[batch.indices[i]].pseudo_label.end(), pseudo.row(i));
        }
    }
    auto [loss, grads] =
        total_loss(params_, batch, w, pseudo, effective, cfg_.smoothing, mixup_rng_, &cache_t);
    if (!std::isfinite(loss))
        throw NumericError("non-finite loss at step " + std::to_string(step_) + " (epoch " +
                           std::to_string(epoch) + ")");
    sgd_step(params_, grads, lr);
    t_backward = seconds_since(t0);

    t0 = Clock::now();
    if (cfg_.mode == Mode::fsr || cfg_.mode == Mode::fsr_raw) {
        score_batch(batch, losses_t, cache_t, meta_model ? *meta_model : params_);
        if ((step_ + 1) % steps_per_epoch_ == 0) {
            dict_ = rebuild_dictionary(states_, train_.observed_labels, cfg_.dict_capacity,
                                       train_.num_classes);
            dict_purity_ = dictionary_purity(dict_, train_);
        }
    }
    t_dict = seconds_since(t0);

    phase_epoch_["forward"] += t_forward;
    phase_epoch_["meta_step"] += t_meta_step;
    phase_epoch_["meta_gradient"] += t_meta_gradient;
    phase_epoch_["backward"] += t_backward;
    phase_epoch_["dict_update"] += t_dict;
    phase_epoch_["other"] += std::max(
        0.0, seconds_since(t_begin) - t_forward - t_meta_step - t_meta_gradient - t_backward - t_dict);

    zw_window_.push(w.values);
    epoch_loss_sum_ += loss;
    ++epoch_loss_count_;
    ++step_;
    return {step_ - 1, epoch, loss, lr, meta_active, w.values};
}

double Trainer::zero_weight_ratio() const {
    return zero_weight_defined() ? zw_window_.ratio() : 0.0;
}

MetricsRecord Trainer::make_record() {
    MetricsRecord rec;
    rec.step = step_;
    rec.epoch = step_ == 0 ? 0 : (step_ - 1) / steps_per_epoch_;
    rec.train_loss = epoch_loss_count_ > 0 ? epoch_loss_sum_ / epoch_loss_count_ : 0.0;
    rec.test_accuracy = evaluate(params_, test_);
    rec.dict_purity = dict_purity_;
    rec.zero_weight_ratio = zero_weight_ratio();
    rec.zero_weight_defined = zero_weight_defined();
    rec.phase_times = phase_epoch_;
    for (const auto& [k, v] : phase_epoch_) phase_total_[k] += v;
    phase_epoch_.clear();
    epoch_loss_sum_ = 0.0;
    epoch_loss_count_ = 0;
    return rec;
}

void Trainer::run() {
    if (cfg_.epochs == 0) {
        metrics_.push_back(make_record());
        return;
    }
    while (step_ < total_steps_) {
        step();
        if (step_ % steps_per_epoch_ == 0) metrics_.push_back(make_record());
    }
}

SyntheticSpec parse_synthetic_spec(const std::string& spec) {
    const std::string prefix = "synthetic:";
    if (spec.rfind(prefix, 0) != 0) throw ConfigError("not a synthetic data spec: " + spec);
    SyntheticSpec out;
    std::stringstream ss(spec.substr(prefix.size()));
    std::string kv;
    while (std::getline(ss, kv, ',')) {
        if (kv.empty()) continue;
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("bad synthetic spec entry: " + kv);
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "classes") out.classes = std::stoi(val);
        else if (key == "per_class") out.per_class = std::stoi(val);
        else if (key == "test_per_class") out.test_per_class = std::stoi(val);
        else if (key == "dim") out.dim = std::stoi(val);
        else if (key == "spread") out.spread = std::stod(val);
        else throw ConfigError("unknown synthetic spec key: " + key);
    }
    return out;
}

std::pair<BiasedDataset, BiasedDataset> build_datasets(const ExperimentConfig& cfg) {
    BiasedDataset train, test;
    if (cfg.data.rfind("synthetic:", 0) == 0) {
        const SyntheticSpec spec = parse_synthetic_spec(cfg.data);
        train = make_gaussian_clusters(spec.classes, spec.per_class, spec.dim, spec.spread,
                                       derive_seed(cfg.seed, 100), Split::train);
        test = make_gaussian_clusters(spec.classes, spec.test_per_class, spec.dim, spec.spread,
                                      derive_seed(cfg.seed, 101), Split::test);
    } else {
        std::tie(train, test) = load_csv(cfg.data);
    }
    if (cfg.imbalance > 1.0) train = make_long_tailed(train, cfg.imbalance, derive_seed(cfg.seed, 102));
    if (cfg.noise == NoiseKind::uniform)
        train = inject_uniform_noise(train, cfg.noise_ratio, derive_seed(cfg.seed, 103));
    else if (cfg.noise == NoiseKind::asymmetric)
        train = inject_asymmetric_noise(train, cfg.noise_ratio,
                                        cyclic_confusion_map(train.num_classes),
                                        derive_seed(cfg.seed, 103));
    return {std::move(train), std::move(test)};
}

BiasedDataset build_l2r_reward_set(const ExperimentConfig& cfg, const BiasedDataset& train) {
    // Clean balanced subset of the training rows. The baseline is granted
    // clean labels by definition; the FSR modes never see them.
    const int C = train.num_classes;
    std::vector<std::vector<int>> clean_rows(C);
    for (int i = 0; i < train.size(); ++i)
        if (train.observed_labels[i] == train.clean_labels[i])
            clean_rows[train.clean_labels[i]].push_back(i);
    std::mt19937_64 rng(derive_seed(cfg.seed, 104));
    std::vector<int> keep;
    for (int c = 0; c < C; ++c) {
        const int quota = cfg.dict_capacity / C + (c < cfg.dict_capacity % C ? 1 : 0);
        if (static_cast<int>(clean_rows[c].size()) < quota)
            throw ConfigError("not enough clean rows of class " + std::to_string(c) +
                              " for the l2r reward set");
        std::shuffle(clean_rows[c].begin(), clean_rows[c].end(), rng);
        keep.insert(keep.end(), clean_rows[c].begin(), clean_rows[c].begin() + quota);
    }
    BiasedDataset out;
    out.num_classes = C;
    out.split = Split::train;
    out.features = Matrix(static_cast<int>(keep.size()), train.dim());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::copy_n(train.features.row(keep[i]), train.dim(), out.features.row(static_cast<int>(i)));
        out.clean_labels.push_back(train.clean_labels[keep[i]]);
        out.observed_labels.push_back(train.observed_labels[keep[i]]);
    }
    return out;
}

namespace {

nlohmann::json record_to_json(const MetricsRecord& rec) {
    nlohmann::json j{{"step", rec.step},
                     {"epoch", rec.epoch},
                     {"train_loss", rec.train_loss},
                     {"test_accuracy", rec.test_accuracy},
                     {"dict_purity", rec.dict_purity},
                     {"zero_weight_ratio", rec.zero_weight_ratio},
                     {"zero_weight_defined", rec.zero_weight_defined}};
    j["phase_times"] = rec.phase_times;
    return j;
}

void export_model_json(const std::string& path, const ModelParams& params) {
    nlohmann::json j;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const DenseLayer& layer = params.layers[l];
        nlohmann::json jl{{"out", layer.out_dim()},
                          {"in", layer.in_dim()},
                          {"meta", static_cast<bool>(params.meta_mask[l])},
                          {"W", layer.W.data},
                          {"b", layer.b}};
        j["layers"].push_back(std::move(jl));
    }
    std::ofstream out(path);
    out << j.dump() << '\n';
}

} // namespace

RunSummary run_experiment(const ExperimentConfig& cfg) {
    for (const std::string& warning : cfg.validate())
        std::fprintf(stderr, "warning: %s\n", warning.c_str());

    auto [train, test] = build_datasets(cfg);
    std::optional<BiasedDataset> reward;
    if (cfg.mode == Mode::l2r) reward = build_l2r_reward_set(cfg, train);

    const Clock::time_point t0 = Clock::now();
    Trainer trainer(cfg, std::move(train), std::move(test), std::move(reward));
    trainer.run();
    const double total_seconds = seconds_since(t0);

    RunSummary summary;
    summary.epochs = cfg.epochs;
    summary.total_seconds = total_seconds;
    const auto& records = trainer.metrics();
    summary.final_accuracy = records.empty() ? 0.0 : records.back().test_accuracy;
    const int tail = std::min<int>(10, static_cast<int>(records.size()));
    double purity_sum = 0.0, zw_sum = 0.0;
    for (int k = 0; k < tail; ++k) purity_sum += records[records.size() - 1 - k].dict_purity;
    for (const MetricsRecord& rec : records) zw_sum += rec.zero_weight_ratio;
    summary.mean_purity_last10 = tail > 0 ? purity_sum / tail : 0.0;
    summary.mean_zero_weight_ratio = records.empty() ? 0.0 : zw_sum / records.size();

    if (!cfg.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out_dir);
        const fs::path dir(cfg.out_dir);

        std::ofstream jsonl(dir / "metrics.jsonl");
        std::ofstream csv(dir / "metrics.csv");
        csv << "step,epoch,train_loss,test_accuracy,dict_purity,zero_weight_ratio\n";
        for (const MetricsRecord& rec : records) {
            jsonl << record_to_json(rec).dump() << '\n';
            csv << rec.step << ',' << rec.epoch << ',' << rec.train_loss << ','
                << rec.test_accuracy << ',' << rec.dict_purity << ',' << rec.zero_weight_ratio
                << '\n';
        }
        nlohmann::json js{{"record", "summary"},
                          {"final_accuracy", summary.final_accuracy},
                          {"mean_purity_last10", summary.mean_purity_last10},
                          {"mean_zero_weight_ratio", summary.mean_zero_weight_ratio},
                          {"total_seconds", summary.total_seconds}};
        jsonl << js.dump() << '\n';

        export_model_json((dir / "model.json").string(), trainer.params());
        if (!trainer.dictionary().empty())
            export_dictionary_csv((dir / "dictionary.csv").string(), trainer.dictionary(),
                                  trainer.train_set(), trainer.sample_states());
    }
    return summary;
}

} // namespace fsr
