#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsr/harness.hpp"

namespace {

fsr::Mode parse_mode(const std::string& s) {
    if (s == "vanilla") return fsr::Mode::vanilla;
    if (s == "fsr") return fsr::Mode::fsr;
    if (s == "fsr_raw") return fsr::Mode::fsr_raw;
    if (s == "l2r") return fsr::Mode::l2r;
    throw fsr::ConfigError("unknown mode: " + s);
}

fsr::PusherKind parse_pusher(const std::string& s) {
    if (s == "meta_margin") return fsr::PusherKind::meta_margin;
    if (s == "negative_loss") return fsr::PusherKind::negative_loss;
    if (s == "max_margin") return fsr::PusherKind::max_margin;
    if (s == "forgetting_event") return fsr::PusherKind::forgetting_event;
    if (s == "aum") return fsr::PusherKind::aum;
    throw fsr::ConfigError("unknown pusher: " + s);
}

void parse_meta_layers(const std::string& s, fsr::ExperimentConfig& cfg) {
    if (s == "fc") {
        cfg.meta_layers = fsr::MetaLayerSel::fc;
    } else if (s == "all") {
        cfg.meta_layers = fsr::MetaLayerSel::all;
    } else if (s.rfind("last_k:", 0) == 0) {
        cfg.meta_layers = fsr::MetaLayerSel::last_k;
        cfg.meta_last_k = std::stoi(s.substr(7));
    } else {
        throw fsr::ConfigError("unknown meta layer selection: " + s);
    }
}

fsr::NoiseKind parse_noise(const std::string& s) {
    if (s == "none") return fsr::NoiseKind::none;
    if (s == "uniform") return fsr::NoiseKind::uniform;
    if (s == "asymmetric") return fsr::NoiseKind::asymmetric;
    throw fsr::ConfigError("unknown noise kind: " + s);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fast sample re-weighting training harness"};
    app.set_config("--config", "", "Load options from a config file (CLI flags override)");

    fsr::ExperimentConfig cfg;
    std::string mode = "fsr", pusher = "meta_margin", meta_layers = "fc", norm = "clip",
                noise = "none";
    int seeds = 1;
    bool no_mixup = false;

    app.add_option("--mode", mode, "vanilla | fsr | fsr_raw | l2r");
    app.add_option("--epochs", cfg.epochs, "Training epochs");
    app.add_option("--warm-up", cfg.warm_up, "Warm-up epochs with uniform weights");
    app.add_option("--batch", cfg.batch, "Mini-batch size");
    app.add_option("--reward-batch", cfg.reward_batch, "Reward mini-batch size q");
    app.add_option("--dict-size", cfg.dict_capacity, "Dictionary capacity |R|");
    app.add_option("--lambda", cfg.lambda, "Momentum pusher decay");
    app.add_option("--eta", cfg.eta, "Inner model step size");
    app.add_option("--alpha", cfg.alpha, "Meta weight step size");
    app.add_option("--beta", cfg.beta, "Pseudo-label EMA decay");
    app.add_option("--pseudo-mult", cfg.pseudo_mult, "Pseudo-loss multiplier p");
    app.add_option("--smoothing", cfg.smoothing, "Softmax label smoothing");
    app.add_option("--mixup-alpha", cfg.mixup_alpha, "MixUp Beta shape");
    app.add_flag("--no-mixup", no_mixup, "Disable MixUp in fsr mode");
    app.add_option("--pusher", pusher,
                   "meta_margin | negative_loss | max_margin | forgetting_event | aum");
    app.add_option("--meta-layers", meta_layers, "fc | last_k:<k> | all");
    app.add_option("--norm", norm, "clip | shift");
    app.add_option("--noise", noise, "none | uniform | asymmetric");
    app.add_option("--noise-ratio", cfg.noise_ratio, "Label corruption ratio");
    app.add_option("--imbalance", cfg.imbalance, "Long-tail imbalance ratio");
    app.add_flag("--deferred", cfg.deferred, "Enable re-weighting only late in training");
    app.add_option("--seed", cfg.seed, "Base RNG seed");
    app.add_option("--seeds", seeds, "Run a sweep over this many consecutive seeds");
    app.add_option("--data", cfg.data, "CSV path or synthetic:k=v,... spec");
    app.add_option("--out", cfg.out_dir, "Output directory for metrics and exports");
    app.add_option("--lr", cfg.base_lr, "Base learning rate (cosine schedule)");
    app.add_option("--hidden", cfg.hidden, "Hidden layer widths");

    CLI11_PARSE(app, argc, argv);

    try {
        cfg.mode = parse_mode(mode);
        cfg.pusher = parse_pusher(pusher);
        parse_meta_layers(meta_layers, cfg);
        if (norm == "clip") cfg.norm = fsr::NormMode::clip_nonneg;
        else if (norm == "shift") cfg.norm = fsr::NormMode::shift_positive;
        else throw fsr::ConfigError("unknown normalization mode: " + norm);
        cfg.noise = parse_noise(noise);
        cfg.mixup = !no_mixup;
        if (seeds < 1) throw fsr::ConfigError("--seeds must be >= 1");

        if (seeds == 1) {
            fsr::RunSummary s = fsr::run_experiment(cfg);
            std::printf("final_accuracy=%.4f purity_last10=%.4f zero_weight_ratio=%.4f time=%.1fs\n",
                        s.final_accuracy, s.mean_purity_last10, s.mean_zero_weight_ratio,
                        s.total_seconds);
            return 0;
        }

        std::vector<double> accs;
        const std::string base_out = cfg.out_dir;
        for (int k = 0; k < seeds; ++k) {
            fsr::ExperimentConfig run = cfg;
            run.seed = cfg.seed + static_cast<std::uint64_t>(k);
            if (!base_out.empty())
                run.out_dir = (std::filesystem::path(base_out) /
                               ("seed_" + std::to_string(run.seed))).string();
            fsr::RunSummary s = fsr::run_experiment(run);
            std::printf("seed=%llu final_accuracy=%.4f\n",
                        static_cast<unsigned long long>(run.seed), s.final_accuracy);
            accs.push_back(s.final_accuracy);
        }
        double mean = 0.0, var = 0.0;
        for (double a : accs) mean += a;
        mean /= accs.size();
        for (double a : accs) var += (a - mean) * (a - mean);
        const double std_dev = accs.size() > 1 ? std::sqrt(var / (accs.size() - 1)) : 0.0;
        std::printf("sweep mean=%.4f std=%.4f over %d seeds\n", mean, std_dev, seeds);
        if (!base_out.empty()) {
            std::filesystem::create_directories(base_out);
            nlohmann::json j{{"mean_final_accuracy", mean},
                             {"std_final_accuracy", std_dev},
                             {"per_seed_accuracy", accs}};
            std::ofstream(std::filesystem::path(base_out) / "summary.json") << j.dump(2) << '\n';
        }
        return 0;
    } catch (const fsr::NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
