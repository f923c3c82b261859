#include "lvo/sweep.hpp"

#include "lvo/artifacts.hpp"
#include "lvo/array_io.hpp"
#include "lvo/parallel.hpp"
#include "lvo/steering.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>

namespace lvo {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::vector<std::string> sweep_keys(const std::string& parameter) {
    if (parameter == "robustness") return {"jitter_px", "rotation_deg", "scale_factor"};
    static const std::set<std::string> single{"tv_weight",     "range_weight",   "moment_weight",
                                              "spectral_filter", "smoothing_sigma0", "learning_rate",
                                              "steps",         "steering_gamma", "jitter_px",
                                              "rotation_deg",  "scale_factor"};
    if (single.count(parameter)) return {parameter};
    throw std::invalid_argument("unknown sweep parameter '" + parameter + "'");
}

std::vector<SweepLevel> preset_levels(const std::string& parameter) {
    std::vector<SweepLevel> out;
    if (parameter == "tv_weight" || parameter == "range_weight" || parameter == "moment_weight") {
        const double w[] = {0.0, 0.5, 1.0, 5.0};
        for (int i = 0; i < 4; ++i) out.push_back({std::to_string(i), {{parameter, w[i]}}});
    } else if (parameter == "robustness") {
        const int jitter[] = {0, 1, 8, 16};
        const double rot[] = {0.0, 5.0, 15.0, 45.0};
        const double scale[] = {1.0, 1.1, 1.2, 1.8};
        for (int i = 0; i < 4; ++i)
            out.push_back({std::to_string(i),
                           {{"jitter_px", jitter[i]}, {"rotation_deg", rot[i]}, {"scale_factor", scale[i]}}});
    } else if (parameter == "steering_gamma") {
        for (double g : {1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0})
            out.push_back({format_double(g), {{"steering_gamma", g}}});
    } else if (parameter == "spectral_filter") {
        out.push_back({"off", {{"spectral_filter", false}}});
        out.push_back({"on", {{"spectral_filter", true}}});
    } else {
        sweep_keys(parameter);  // throws on unknown names
        throw std::invalid_argument("sweep parameter '" + parameter + "' has no preset; list its levels explicitly");
    }
    return out;
}

std::vector<SweepLevel> levels_from_json(const std::string& parameter, const json& levels) {
    if (!levels.is_array()) throw std::invalid_argument("sweep levels must be a list");
    const std::vector<std::string> keys = sweep_keys(parameter);
    std::vector<SweepLevel> out;
    for (const json& l : levels) {
        SweepLevel lv;
        if (l.is_object()) {
            for (const auto& [k, v] : l.items()) {
                if (std::find(keys.begin(), keys.end(), k) == keys.end())
                    throw std::invalid_argument("sweep level sets '" + k + "', outside parameter " + parameter);
                lv.values[k] = v;
            }
        } else {
            if (keys.size() != 1) throw std::invalid_argument("levels of " + parameter + " must be maps");
            lv.values[keys.front()] = l;
        }
        lv.name = l.is_object() ? std::to_string(out.size()) : l.dump();
        out.push_back(std::move(lv));
    }
    return out;
}

void SweepPlan::validate() const {
    if (levels.empty()) throw std::invalid_argument("sweep has no levels");
    std::set<std::string> seen;
    for (const SweepLevel& l : levels)
        if (!seen.insert(l.values.dump()).second)
            throw std::invalid_argument("duplicate sweep level " + l.values.dump());
    if (noise.empty()) throw std::invalid_argument("sweep has no noise condition");
    baseline.lvo_template();  // validates the weights
    if (baseline.seeds.empty()) throw std::invalid_argument("sweep baseline has no seed");
}

SweepPlan make_sweep_plan(const StageConfig& cfg, int feature_count) {
    SweepPlan plan;
    plan.parameter = cfg.sweep.parameter;
    plan.levels = cfg.sweep.levels.empty() ? preset_levels(cfg.sweep.parameter)
                                           : levels_from_json(cfg.sweep.parameter, cfg.sweep.levels);
    plan.baseline = cfg;
    plan.features = cfg.features.resolve(feature_count);
    plan.noise = noise_conditions(cfg.sweep.noise.value_or(NoiseMode::Off));
    plan.validate();
    return plan;
}

json cell_settings(const StageConfig& baseline, bool noise) {
    const LvoConfig tmpl = baseline.lvo_template();
    json s = to_json(tmpl.weights);
    s["learning_rate"] = tmpl.learning_rate;
    s["steps"] = tmpl.steps;
    s["aggregation"] = to_string(tmpl.aggregation);
    s["steering_gamma"] = baseline.steering_gamma();
    s["steering_timesteps"] = to_string(baseline.steering_timesteps());
    s["schedule_noise"] = noise;
    return s;
}

json apply_level(json settings, const SweepLevel& level) {
    for (const auto& [k, v] : level.values.items()) {
        if (!settings.contains(k)) throw std::invalid_argument("sweep key '" + k + "' is not a cell setting");
        settings[k] = v;
    }
    return settings;
}

std::vector<std::string> config_diff(const json& a, const json& b) {
    std::vector<std::string> out;
    for (const auto& [k, v] : a.items())
        if (!b.contains(k) || b[k] != v) out.push_back(k);
    for (const auto& [k, v] : b.items())
        if (!a.contains(k)) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

LvoConfig lvo_from_settings(const json& s, const StageConfig& base) {
    LvoConfig c = base.lvo_template();
    RegularizerWeights w;
    for (const char* k : {"tv_weight", "range_weight", "moment_weight", "spectral_filter", "smoothing_sigma0",
                          "jitter_px", "rotation_deg", "scale_factor"})
        apply_weight_override(w, k, s.at(k));
    c.weights = w;
    c.learning_rate = s.at("learning_rate").get<double>();
    c.steps = s.at("steps").get<int>();
    c.schedule_noise = s.at("schedule_noise").get<bool>();
    c.validate();
    return c;
}

} // namespace

StageReport run_sweep(const SweepPlan& plan) {
    plan.validate();
    const StageConfig& cfg = plan.baseline;
    StageReport rep{"sweep", {}, {}, {}};
    const fs::path pdir = profiles_dir(cfg);
    for (const char* f : {"activity.csv", "max_activation.csv", "peaks.json"})
        if (!fs::exists(pdir / f)) throw std::runtime_error("sweep needs analyze output " + (pdir / f).string());

    const bool use_sae = cfg.target_kind == FeatureTarget::Kind::SaeFeature;
    const Backend b = load_backend(cfg, use_sae);
    const auto profiles = read_profiles_csv(pdir / "activity.csv");
    const auto max_table = read_max_activation_csv(pdir / "max_activation.csv");
    std::map<int, std::vector<int>> peaks_of;
    const json peaks = read_json(pdir / "peaks.json");
    for (const json& f : peaks["features"])
        peaks_of[f["feature"].get<int>()] = f["peaks"].get<std::vector<int>>();
    for (int f : plan.features)
        if (f >= static_cast<int>(profiles.size()) || f >= static_cast<int>(max_table.size()))
            throw std::runtime_error("analyze artifacts do not cover feature " + std::to_string(f));

    const std::size_t seed_index = static_cast<std::size_t>(std::max(0, cfg.sweep.seed_index));
    if (seed_index >= cfg.seeds.size()) throw std::invalid_argument("sweep seed_index outside the seed list");
    const std::uint64_t seed = cfg.seeds[seed_index];

    const fs::path dir = sweeps_dir(cfg) / plan.parameter;
    fs::create_directories(dir / "cells");

    struct Cell {
        std::size_t level;
        int feature;
        bool noise;
    };
    std::vector<Cell> cells;
    for (std::size_t l = 0; l < plan.levels.size(); ++l)
        for (int f : plan.features)
            for (bool n : plan.noise) cells.push_back({l, f, n});
    spdlog::info("sweep {}: {} levels x {} features x {} noise conditions", plan.parameter, plan.levels.size(),
                 plan.features.size(), plan.noise.size());

    // priors depend only on (feature, gamma); share them across cells
    std::mutex prior_mutex;
    std::map<std::pair<int, double>, LatentGrid> prior_cache;
    auto prior_for = [&](int f, double gamma, TimestepMode mode) {
        {
            std::lock_guard lock(prior_mutex);
            auto it = prior_cache.find({f, gamma});
            if (it != prior_cache.end()) return it->second;
        }
        SteeringSpec spec{{cfg.target_kind, f, cfg.layer}, gamma, mode, profiles[f].frequency, max_table[f]};
        const Prior p = generate_prior(b.model.denoiser, b.model.vae, b.model.scheduler, spec,
                                       Conditioning::unconditional(), seed, b.sae_ptr());
        std::lock_guard lock(prior_mutex);
        return prior_cache.emplace(std::pair{f, gamma}, p.latent).first->second;
    };

    const std::vector<std::string> allowed = sweep_keys(plan.parameter);
    std::vector<json> cell_json(cells.size());
    std::vector<Image> cell_image(cells.size());
    parallel_for(cells.size(), cfg.workers, [&](std::size_t i) {
        const Cell& c = cells[i];
        const json base = cell_settings(cfg, c.noise);
        const json settings = apply_level(base, plan.levels[c.level]);
        const std::vector<std::string> diff = config_diff(base, settings);
        for (const auto& k : diff)
            if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
                throw std::logic_error("sweep cell changed '" + k + "' outside parameter " + plan.parameter);

        json entry = {{"feature", c.feature}, {"schedule_noise", c.noise}, {"settings", settings},
                      {"config_diff", diff}};
        const auto& pk = peaks_of[c.feature];
        const auto shape = b.model.vae.image_shape();
        if (pk.empty()) {
            entry["peak"] = nullptr;
            entry["image"] = nullptr;
            entry["note"] = "never active";
            cell_image[i] = Image(shape, 0.5);
        } else {
            LvoConfig lc = lvo_from_settings(settings, cfg);
            lc.target = {cfg.target_kind, c.feature, cfg.layer};
            lc.timestep = pk.front();
            lc.seed = seed;
            const LatentGrid prior = prior_for(c.feature, settings["steering_gamma"].get<double>(),
                                               timestep_mode_from_string(settings["steering_timesteps"]));
            const VisualizationResult r =
                lvo_run(b.model.denoiser, b.model.vae, b.model.scheduler, b.sae_ptr(), lc, prior, "sweep prior");
            const std::string stem = "cells/L" + std::to_string(c.level) + "_f" + std::to_string(c.feature) + "_" +
                                     (c.noise ? "noise-on" : "noise-off");
            write_png(dir / (stem + ".png"), r.image, 4);
            save_npy(dir / (stem + ".npy"), r.latent.tensor());
            entry["peak"] = lc.timestep;
            entry["image"] = stem + ".png";
            entry["latent"] = stem + ".npy";
            entry["initial_activation"] = r.activation_trace.empty() ? 0.0 : r.activation_trace.front();
            entry["final_activation"] = r.activation_trace.empty() ? 0.0 : r.activation_trace.back();
            cell_image[i] = r.image;
        }
        cell_json[i] = std::move(entry);
    });

    std::vector<std::vector<Image>> grid(plan.levels.size());
    json rows = json::array();
    std::size_t k = 0;
    for (std::size_t l = 0; l < plan.levels.size(); ++l) {
        json row_cells = json::array();
        for (std::size_t j = 0; j < plan.features.size() * plan.noise.size(); ++j, ++k) {
            grid[l].push_back(cell_image[k]);
            row_cells.push_back(cell_json[k]);
        }
        rows.push_back({{"level", l},
                        {"name", plan.levels[l].name},
                        {"values", plan.levels[l].values},
                        {"cells", row_cells}});
    }
    Image tiled = tile_images(grid, 1, 1.0);
    write_png(dir / "grid.png", tiled, 4);

    json columns = json::array();
    for (int f : plan.features)
        for (bool n : plan.noise) columns.push_back({{"feature", f}, {"schedule_noise", n}});
    json baseline = json::object();
    for (bool n : plan.noise) baseline[n ? "noise_on" : "noise_off"] = cell_settings(cfg, n);
    const json manifest = {{"stage", "sweep"},
                           {"parameter", plan.parameter},
                           {"keys", allowed},
                           {"config_hash", cfg.hash()},
                           {"seed", seed},
                           {"baseline", baseline},
                           {"columns", columns},
                           {"rows", rows},
                           {"cell_count", cells.size()},
                           {"grid", "grid.png"}};
    rep.manifest = dir / "manifest.json";
    write_json(rep.manifest, manifest);
    rep.notes.push_back(std::to_string(cells.size()) + " cells written to " + dir.string());
    return rep;
}

} // namespace lvo
