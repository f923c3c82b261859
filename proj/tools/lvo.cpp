// lvo: command-line driver for the analyze -> prior -> visualize -> evaluate
// pipeline, the parameter sweep, and the toy checkpoint trainers.
//
// Exit status: 0 success, 1 error, 2 success with warnings.

#include "lvo/config.hpp"
#include "lvo/pipeline.hpp"
#include "lvo/sae.hpp"
#include "lvo/sweep.hpp"
#include "lvo/toy_model.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct StageOptions {
    std::string config;
    std::string out;
    std::string features;
    std::string seeds;
    int workers = -1;
};

void add_stage_options(CLI::App* cmd, StageOptions& o) {
    cmd->add_option("--config", o.config, "Stage config (YAML)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "Output directory (overrides the config)");
    cmd->add_option("--features", o.features, "Feature ids \"0,3,5\" or \"first 6\"");
    cmd->add_option("--seed", o.seeds, "Comma-separated seed list");
    cmd->add_option("--workers", o.workers, "Worker threads (0: all cores)");
}

lvo::StageConfig resolve_config(const std::string& stage, const StageOptions& o) {
    lvo::StageConfig cfg = lvo::load_stage_config(o.config);
    if (!cfg.stage.empty() && cfg.stage != stage)
        throw std::invalid_argument("config " + o.config + " is for stage '" + cfg.stage + "', not '" + stage + "'");
    cfg.stage = stage;
    if (!o.out.empty()) cfg.output = fs::absolute(o.out).string();
    if (!o.features.empty()) cfg.features = lvo::FeatureSelection::parse(o.features);
    if (!o.seeds.empty()) {
        cfg.seeds.clear();
        std::stringstream ss(o.seeds);
        std::string part;
        while (std::getline(ss, part, ',')) cfg.seeds.push_back(std::stoull(part));
        if (cfg.seeds.empty()) throw std::invalid_argument("--seed list is empty");
    }
    if (o.workers >= 0) cfg.workers = o.workers;
    return cfg;
}

int finish(const lvo::StageReport& r) {
    for (const auto& n : r.notes) spdlog::info("{}", n);
    for (const auto& w : r.warnings) spdlog::warn("{}", w);
    if (!r.manifest.empty()) spdlog::info("{}: wrote {}", r.stage, r.manifest.string());
    if (!r.warnings.empty()) spdlog::warn("{}: {} warning(s)", r.stage, r.warnings.size());
    return r.exit_code();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent visualization by optimization"};
    app.require_subcommand(1);

    StageOptions analyze_o, prior_o, visualize_o, evaluate_o, sweep_o;
    auto* analyze = app.add_subcommand("analyze", "Time-step activity profiles, peaks, and dataset examples");
    auto* prior = app.add_subcommand("prior", "Steered prior images and their encoded latents");
    auto* visualize = app.add_subcommand("visualize", "Optimize latents per (feature, peak, seed)");
    auto* evaluate = app.add_subcommand("evaluate", "Assemble the HTML report");
    auto* sweep = app.add_subcommand("sweep", "One-parameter sweep over preset or listed levels");
    add_stage_options(analyze, analyze_o);
    add_stage_options(prior, prior_o);
    add_stage_options(visualize, visualize_o);
    add_stage_options(evaluate, evaluate_o);
    add_stage_options(sweep, sweep_o);
    std::string sweep_parameter, sweep_noise;
    sweep->add_option("--parameter", sweep_parameter, "Parameter group (robustness, tv_weight, steering_gamma, ...)");
    sweep->add_option("--noise", sweep_noise, "on, off, or feature_dependent");

    std::string toy_out = "assets/toy/model";
    std::size_t toy_samples = 1200;
    std::uint64_t toy_data_seed = 1;
    lvo::ToyRecipe recipe;
    auto* train_toy = app.add_subcommand("train-toy", "Train the toy latent diffusion model on the shapes dataset");
    train_toy->add_option("--out", toy_out, "Checkpoint directory");
    train_toy->add_option("--samples", toy_samples, "Dataset size");
    train_toy->add_option("--data-seed", toy_data_seed, "Dataset seed");
    train_toy->add_option("--seed", recipe.seed, "Initialization and batching seed");
    train_toy->add_option("--vae-epochs", recipe.vae_epochs);
    train_toy->add_option("--denoiser-epochs", recipe.denoiser_epochs);

    std::string sae_model = "assets/toy/model", sae_out = "assets/toy/sae", sae_layer = "up.attn";
    std::size_t sae_samples = 400;
    int sae_dict = 128, sae_k = 8, sae_per_sample = 4;
    lvo::SaeTrainingOptions sae_opts;
    auto* train_sae = app.add_subcommand("train-sae", "Train a top-k SAE on one layer of a checkpoint");
    train_sae->add_option("--model", sae_model, "Model checkpoint directory")->check(CLI::ExistingDirectory);
    train_sae->add_option("--out", sae_out, "SAE checkpoint directory");
    train_sae->add_option("--layer", sae_layer);
    train_sae->add_option("--samples", sae_samples, "Dataset images to draw activations from");
    train_sae->add_option("--per-sample", sae_per_sample, "Noised time-steps per image");
    train_sae->add_option("--dict-size", sae_dict);
    train_sae->add_option("--k", sae_k);
    train_sae->add_option("--epochs", sae_opts.epochs);
    train_sae->add_option("--seed", sae_opts.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze) return finish(lvo::stage_analyze(resolve_config("analyze", analyze_o)));
        if (*prior) return finish(lvo::stage_prior(resolve_config("prior", prior_o)));
        if (*visualize) return finish(lvo::stage_visualize(resolve_config("visualize", visualize_o)));
        if (*evaluate) return finish(lvo::stage_evaluate(resolve_config("evaluate", evaluate_o)));
        if (*sweep) {
            lvo::StageConfig cfg = resolve_config("sweep", sweep_o);
            if (!sweep_parameter.empty()) {
                cfg.sweep.parameter = sweep_parameter;
                cfg.sweep.levels = nlohmann::json::array();
            }
            if (!sweep_noise.empty()) cfg.sweep.noise = lvo::noise_mode_from_string(sweep_noise);
            const lvo::Backend b = lvo::load_backend(cfg, cfg.target_kind == lvo::FeatureTarget::Kind::SaeFeature);
            return finish(lvo::run_sweep(lvo::make_sweep_plan(cfg, b.feature_count(cfg))));
        }
        if (*train_toy) {
            lvo::check_device();
            lvo::ShapesDataset data(toy_samples, toy_data_seed);
            lvo::ToyTrainingLog log;
            spdlog::info("training toy model on {} samples ({} + {} epochs)", toy_samples, recipe.vae_epochs,
                         recipe.denoiser_epochs);
            const lvo::ToyLdm model = lvo::train_toy(data, recipe, &log);
            lvo::save_toy(model, toy_out);
            spdlog::info("reconstruction MAE {:.4f}; denoising loss {:.4f} -> {:.4f}", log.reconstruction_mae,
                         log.initial_denoising_loss, log.final_denoising_loss);
            spdlog::info("wrote {}", toy_out);
            return 0;
        }
        if (*train_sae) {
            lvo::check_device();
            const lvo::ToyLdm model = lvo::load_toy(sae_model);
            lvo::ShapesDataset data(sae_samples, sae_opts.seed + 1000);
            const auto corpus = lvo::collect_layer_activations(model, data, sae_layer, sae_per_sample, sae_opts.seed);
            lvo::SaeTrainingLog log;
            lvo::SparseAutoencoder sae = lvo::train_toy_sae(corpus, sae_dict, sae_k, sae_opts, &log);
            sae.set_layer(sae_layer);
            sae.save(sae_out);
            spdlog::info("SAE reconstruction MSE {:.5f} -> {:.5f}", log.initial_loss, log.final_loss);
            spdlog::info("wrote {}", sae_out);
            return 0;
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 1;
}
