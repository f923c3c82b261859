#include "lvo/pipeline.hpp"

#include "lvo/artifacts.hpp"
#include "lvo/array_io.hpp"
#include "lvo/hash.hpp"
#include "lvo/parallel.hpp"
#include "lvo/report.hpp"
#include "lvo/steering.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>
#include <stdexcept>

namespace lvo {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kCaptureStream = 0xa11a;

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p))
        throw std::runtime_error("missing " + what + " artifact " + p.string() + " (run the earlier stage first)");
}

json stage_header(const StageConfig& cfg, const std::string& stage) {
    return {{"stage", stage}, {"config_hash", cfg.hash()}, {"config", cfg.to_json()}};
}

std::string rel(const fs::path& p, const fs::path& root) { return p.lexically_relative(root).generic_string(); }

json hash_inputs(const fs::path& root, const std::vector<fs::path>& files) {
    json out = json::object();
    for (const auto& f : files) out[rel(f, root)] = sha256_file(f);
    return out;
}

std::string feature_dir(int f) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "f%03d", f);
    return buf;
}

std::string noise_tag(bool on) { return on ? "noise-on" : "noise-off"; }

} // namespace

fs::path profiles_dir(const StageConfig& cfg) { return cfg.output_dir() / "profiles"; }
fs::path priors_dir(const StageConfig& cfg) { return cfg.output_dir() / "priors"; }
fs::path visualizations_dir(const StageConfig& cfg) { return cfg.output_dir() / "visualizations"; }
fs::path reports_dir(const StageConfig& cfg) { return cfg.output_dir() / "reports"; }
fs::path sweeps_dir(const StageConfig& cfg) { return cfg.output_dir() / "sweeps"; }

json hash_outputs(const fs::path& root, const std::vector<fs::path>& files) {
    json out = json::object();
    for (const auto& f : files)
        if (fs::exists(f)) out[rel(f, root)] = sha256_file(f);
    return out;
}

std::string prior_stem(int feature, std::uint64_t seed, TimestepMode mode, double gamma) {
    return feature_dir(feature) + "/s" + std::to_string(seed) + "_" + to_string(mode) + "_g" + format_double(gamma);
}

void check_device() {
    const char* dev = std::getenv("LVO_DEVICE");
    if (!dev || std::string(dev).empty() || std::string(dev) == "cpu") return;
    throw std::runtime_error(std::string("LVO_DEVICE=") + dev + " is not available: the toy backend runs on cpu only");
}

int Backend::feature_count(const StageConfig& cfg) const {
    if (cfg.target_kind == FeatureTarget::Kind::SaeFeature) {
        if (!sae) throw std::runtime_error("SAE targets need an SAE checkpoint");
        return sae->dict_size();
    }
    return model.denoiser.layer(cfg.layer).channels;
}

Backend load_backend(const StageConfig& cfg, bool need_sae) {
    check_device();
    const fs::path mdir = cfg.model_dir();
    if (!fs::exists(mdir / "manifest.json")) throw std::runtime_error("model checkpoint not found: " + mdir.string());
    const json manifest = read_json(mdir / "manifest.json");
    const std::string backend = manifest.value("backend", "");
    if (backend != "toy") throw std::runtime_error("unsupported model backend '" + backend + "' in " + mdir.string());

    Backend b{load_toy(mdir), std::nullopt, json::object()};
    b.inputs["model/manifest.json"] = sha256_file(mdir / "manifest.json");
    b.inputs["model/" + manifest.value("weights", std::string("weights.bin"))] =
        sha256_file(mdir / manifest.value("weights", std::string("weights.bin")));
    b.model.denoiser.layer(cfg.layer);  // validates the layer name

    if (need_sae) {
        const fs::path sdir = cfg.sae_dir();
        if (!fs::exists(sdir / "manifest.json")) throw std::runtime_error("SAE checkpoint not found: " + sdir.string());
        b.sae = SparseAutoencoder::load(sdir);
        if (!b.sae->layer().empty() && b.sae->layer() != cfg.layer)
            throw std::runtime_error("SAE was trained on layer '" + b.sae->layer() + "', config targets '" + cfg.layer +
                                     "'");
        if (b.sae->input_dim() != b.model.denoiser.layer(cfg.layer).channels)
            throw std::runtime_error("SAE width does not match layer " + cfg.layer);
        b.inputs["sae/manifest.json"] = sha256_file(sdir / "manifest.json");
        b.inputs["sae/weights.bin"] = sha256_file(sdir / "weights.bin");
    }
    return b;
}

std::unique_ptr<Dataset> make_dataset(const DatasetConfig& cfg) {
    if (cfg.kind != "shapes") throw std::runtime_error("unknown dataset kind '" + cfg.kind + "'");
    if (cfg.count == 0) throw std::runtime_error("dataset is empty");
    return std::make_unique<ShapesDataset>(cfg.count, cfg.seed, 16);
}

ActivationSweep capture_activations(const Backend& b, const StageConfig& cfg, const Dataset& data) {
    const SchedulerTable& s = b.model.scheduler;
    const int n = static_cast<int>(data.size());
    const int features = b.feature_count(cfg);
    const bool use_sae = cfg.target_kind == FeatureTarget::Kind::SaeFeature;
    ActivationSweep sweep(n, s.num_steps, features);

    parallel_for(static_cast<std::size_t>(n), cfg.workers, [&](std::size_t i) {
        const Sample smp = data.get(i);
        sweep.sample_ids()[i] = smp.id;
        const LatentGrid z0 = b.model.vae.encode(smp.image);
        const Conditioning cond = Conditioning::label(smp.class_label);
        for (int t = 0; t < s.num_steps; ++t) {
            Rng rng = Rng::derive(cfg.analyze.dataset.seed, static_cast<std::uint64_t>(smp.id), t, kCaptureStream);
            const LatentGrid zt = inject_schedule_noise(z0, t, s, rng);
            const HookedForward fw = forward_with_hook(b.model.denoiser, zt, t, cond, cfg.layer);
            const Tensor& acts = fw.activations.value();
            auto row = sweep.row(static_cast<int>(i), t);
            if (use_sae) {
                const std::vector<double> f = b.sae->feature_activations(acts);
                std::copy(f.begin(), f.end(), row.begin());
            } else {
                for (int c = 0; c < acts.dim(1); ++c) {
                    double m = acts.at(0, c);
                    for (int tok = 1; tok < acts.dim(0); ++tok) m = std::max(m, acts.at(tok, c));
                    row[c] = m;
                }
            }
        }
    });
    return sweep;
}

std::vector<Tensor> collect_layer_activations(const ToyLdm& model, const Dataset& data, const std::string& layer,
                                              int timesteps_per_sample, std::uint64_t seed) {
    model.denoiser.layer(layer);
    std::vector<Tensor> out;
    out.reserve(data.size() * static_cast<std::size_t>(std::max(timesteps_per_sample, 0)));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Sample smp = data.get(i);
        const LatentGrid z0 = model.vae.encode(smp.image);
        Rng rng = Rng::derive(seed, i, 0x5ae);
        for (int k = 0; k < timesteps_per_sample; ++k) {
            const int t = rng.uniform_int(0, model.scheduler.num_steps - 1);
            const LatentGrid zt = inject_schedule_noise(z0, t, model.scheduler, rng);
            const Conditioning cond = rng.uniform(0.0, 1.0) < 0.5 ? Conditioning::label(smp.class_label)
                                                                  : Conditioning::unconditional();
            out.push_back(forward_with_hook(model.denoiser, zt, t, cond, layer).activations.value());
        }
    }
    return out;
}

StageReport stage_analyze(const StageConfig& cfg) {
    StageReport rep{"analyze", {}, {}, {}};
    const bool use_sae = cfg.target_kind == FeatureTarget::Kind::SaeFeature;
    const Backend b = load_backend(cfg, use_sae);
    const auto data = make_dataset(cfg.analyze.dataset);
    const int T = b.model.scheduler.num_steps;
    const int min_sep = cfg.analyze.min_separation > 0 ? cfg.analyze.min_separation : scaled_min_separation(T);

    spdlog::info("analyze: {} samples x {} time-steps at layer {}", data->size(), T, cfg.layer);
    const ActivationSweep sweep = capture_activations(b, cfg, *data);
    const int F = sweep.num_features();
    const std::vector<ActivityProfile> profiles = build_profiles(sweep.records(cfg.analyze.k), F, T);
    std::vector<std::vector<double>> max_table(F);
    for (int f = 0; f < F; ++f) max_table[f] = max_activation_profile(f, sweep);

    const fs::path dir = profiles_dir(cfg);
    fs::create_directories(dir);
    std::vector<fs::path> outputs{dir / "activity.csv", dir / "max_activation.csv", dir / "peaks.json"};
    write_profiles_csv(outputs[0], profiles);
    write_max_activation_csv(outputs[1], max_table);

    std::map<int, std::size_t> index_of;
    for (std::size_t i = 0; i < sweep.sample_ids().size(); ++i) index_of[sweep.sample_ids()[i]] = i;
    std::set<int> example_ids;
    json features = json::array();
    for (int f : cfg.features.resolve(F)) {
        const PeakSet peaks = select_peaks(profiles[f], cfg.analyze.p, min_sep);
        json examples = json::array();
        for (int t : peaks.timesteps) {
            json items = json::array();
            for (const RankedExample& ex : top_examples(sweep, f, t, cfg.analyze.examples)) {
                const Sample smp = data->get(index_of.at(ex.sample_id));
                items.push_back({{"sample_id", ex.sample_id},
                                 {"activation", ex.activation},
                                 {"prompt", smp.prompt},
                                 {"class_label", smp.class_label},
                                 {"image", "examples/sample_" + std::to_string(ex.sample_id) + ".png"}});
                example_ids.insert(ex.sample_id);
            }
            examples.push_back({{"t", t}, {"items", items}});
        }
        if (peaks.timesteps.empty()) rep.notes.push_back("feature " + std::to_string(f) + " is never active");
        features.push_back({{"feature", f},
                            {"peaks", peaks.timesteps},
                            {"active_timesteps", active_timesteps(profiles[f].frequency).size()},
                            {"examples", examples}});
    }
    for (int id : example_ids) {
        const fs::path p = dir / "examples" / ("sample_" + std::to_string(id) + ".png");
        write_png(p, data->get(index_of.at(id)).image, 4);
        outputs.push_back(p);
    }
    write_json(outputs[2], {{"k", cfg.analyze.k},
                            {"p", cfg.analyze.p},
                            {"min_separation", min_sep},
                            {"num_steps", T},
                            {"num_features", F},
                            {"num_samples", sweep.num_samples()},
                            {"features", features}});

    json manifest = stage_header(cfg, "analyze");
    manifest["inputs"] = b.inputs;
    manifest["outputs"] = hash_outputs(cfg.output_dir(), outputs);
    rep.manifest = dir / "manifest.json";
    write_json(rep.manifest, manifest);
    return rep;
}

StageReport stage_prior(const StageConfig& cfg) {
    StageReport rep{"prior", {}, {}, {}};
    const fs::path pdir = profiles_dir(cfg);
    for (const char* f : {"manifest.json", "activity.csv", "max_activation.csv", "peaks.json"})
        require_file(pdir / f, "analyze");
    const bool use_sae = cfg.target_kind == FeatureTarget::Kind::SaeFeature;
    const Backend b = load_backend(cfg, use_sae);
    const std::vector<ActivityProfile> profiles = read_profiles_csv(pdir / "activity.csv");
    const std::vector<std::vector<double>> max_table = read_max_activation_csv(pdir / "max_activation.csv");
    const int F = b.feature_count(cfg);
    if (static_cast<int>(profiles.size()) != F || static_cast<int>(max_table.size()) != F)
        throw std::runtime_error("analyze artifacts cover " + std::to_string(profiles.size()) + " features, expected " +
                                 std::to_string(F) + " (stale profiles?)");

    const std::vector<int> features = cfg.features.resolve(F);
    const double gamma = cfg.steering_gamma();
    const TimestepMode mode = cfg.steering_timesteps();
    const fs::path dir = priors_dir(cfg);
    fs::create_directories(dir);

    struct Job {
        int feature;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (int f : features)
        for (std::uint64_t s : cfg.seeds) jobs.push_back({f, s});
    spdlog::info("prior: {} features x {} seeds, gamma {}, {}", features.size(), cfg.seeds.size(), gamma,
                 to_string(mode));

    std::vector<json> entries(jobs.size());
    parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
        const Job& job = jobs[i];
        SteeringSpec spec;
        spec.target = {cfg.target_kind, job.feature, cfg.layer};
        spec.gamma = gamma;
        spec.mode = mode;
        spec.activity = profiles[job.feature].frequency;
        spec.max_activation = max_table[job.feature];
        const Prior prior = generate_prior(b.model.denoiser, b.model.vae, b.model.scheduler, spec,
                                           Conditioning::unconditional(), job.seed, b.sae_ptr());
        const std::string stem = prior_stem(job.feature, job.seed, mode, gamma);
        write_png(dir / (stem + ".png"), prior.image, 4);
        save_npy(dir / (stem + ".npy"), prior.latent.tensor());
        entries[i] = {{"feature", job.feature},
                      {"seed", job.seed},
                      {"timestep_mode", to_string(mode)},
                      {"gamma", gamma},
                      {"target", spec.target.label()},
                      {"steered_timesteps", active_timesteps(spec.activity).size()},
                      {"image", stem + ".png"},
                      {"latent", stem + ".npy"}};
    });

    std::vector<fs::path> outputs;
    for (const json& e : entries) {
        outputs.push_back(dir / e["image"].get<std::string>());
        outputs.push_back(dir / e["latent"].get<std::string>());
    }
    json manifest = stage_header(cfg, "prior");
    manifest["inputs"] = hash_inputs(cfg.output_dir(), {pdir / "manifest.json", pdir / "activity.csv",
                                                        pdir / "max_activation.csv", pdir / "peaks.json"});
    manifest["inputs"].update(b.inputs);
    manifest["priors"] = entries;
    manifest["outputs"] = hash_outputs(cfg.output_dir(), outputs);
    rep.manifest = dir / "manifest.json";
    write_json(rep.manifest, manifest);
    return rep;
}

StageReport stage_visualize(const StageConfig& cfg) {
    StageReport rep{"visualize", {}, {}, {}};
    const fs::path pdir = profiles_dir(cfg);
    const fs::path prdir = priors_dir(cfg);
    require_file(pdir / "peaks.json", "analyze");
    require_file(prdir / "manifest.json", "prior");
    const bool use_sae = cfg.target_kind == FeatureTarget::Kind::SaeFeature;
    const Backend b = load_backend(cfg, use_sae);
    const json peaks = read_json(pdir / "peaks.json");
    const json prior_manifest = read_json(prdir / "manifest.json");

    std::map<int, std::vector<int>> peaks_of;
    for (const json& f : peaks["features"]) peaks_of[f["feature"].get<int>()] = f["peaks"].get<std::vector<int>>();

    std::map<std::pair<int, std::uint64_t>, SeededPrior> priors;
    for (const json& e : prior_manifest["priors"]) {
        const fs::path latent = prdir / e["latent"].get<std::string>();
        require_file(latent, "prior");
        priors[{e["feature"].get<int>(), e["seed"].get<std::uint64_t>()}] =
            SeededPrior{e["seed"].get<std::uint64_t>(), LatentGrid(load_npy(latent)),
                        "priors/" + e["latent"].get<std::string>()};
    }

    const LvoConfig tmpl = cfg.lvo_template();
    const std::vector<bool> noise = noise_conditions(cfg.schedule_noise());
    const int F = b.feature_count(cfg);

    struct Job {
        int feature;
        bool noise;
        int peak;
        const SeededPrior* prior;
    };
    std::vector<Job> jobs;
    json never_active = json::array();
    for (int f : cfg.features.resolve(F)) {
        auto pk = peaks_of.find(f);
        if (pk == peaks_of.end()) throw std::runtime_error("peaks.json has no entry for feature " + std::to_string(f));
        if (pk->second.empty()) {
            rep.notes.push_back("feature " + std::to_string(f) + " is never active; no visualizations");
            never_active.push_back(f);
            continue;
        }
        for (bool n : noise)
            for (int t : pk->second)
                for (std::uint64_t s : cfg.seeds) {
                    auto pr = priors.find({f, s});
                    if (pr == priors.end())
                        throw std::runtime_error("missing prior for feature " + std::to_string(f) + " seed " +
                                                 std::to_string(s));
                    jobs.push_back({f, n, t, &pr->second});
                }
    }
    spdlog::info("visualize: {} runs ({} steps each)", jobs.size(), tmpl.steps);

    const fs::path dir = visualizations_dir(cfg);
    fs::create_directories(dir);
    std::vector<json> entries(jobs.size());
    parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
        const Job& job = jobs[i];
        LvoConfig c = tmpl;
        c.schedule_noise = job.noise;
        const auto results = run_per_peak(b.model.denoiser, b.model.vae, b.model.scheduler, b.sae_ptr(),
                                          {cfg.target_kind, job.feature, cfg.layer}, {job.peak}, {*job.prior}, c, 1);
        const VisualizationResult& r = results.front();
        const std::string stem = feature_dir(job.feature) + "/t" + std::to_string(job.peak) + "_s" +
                                 std::to_string(job.prior->seed) + "_" + noise_tag(job.noise);
        write_png(dir / (stem + ".png"), r.image, 4);
        save_npy(dir / (stem + ".npy"), r.latent.tensor());
        const json meta = {{"feature", job.feature},
                           {"peak", job.peak},
                           {"seed", job.prior->seed},
                           {"schedule_noise", job.noise},
                           {"prior", r.prior_ref},
                           {"config",
                            {{"learning_rate", r.config.learning_rate},
                             {"steps", r.config.steps},
                             {"timestep", r.config.timestep},
                             {"seed", r.config.seed},
                             {"target", r.config.target.label()},
                             {"aggregation", to_string(r.config.aggregation)},
                             {"weights", to_json(r.config.weights)}}},
                           {"activation_trace", r.activation_trace},
                           {"penalty_trace", r.penalty_trace}};
        write_json(dir / (stem + ".json"), meta);
        const double first = r.activation_trace.empty() ? 0.0 : r.activation_trace.front();
        const double last = r.activation_trace.empty() ? 0.0 : r.activation_trace.back();
        entries[i] = {{"feature", job.feature},
                      {"peak", job.peak},
                      {"seed", job.prior->seed},
                      {"schedule_noise", job.noise},
                      {"image", stem + ".png"},
                      {"latent", stem + ".npy"},
                      {"metadata", stem + ".json"},
                      {"initial_activation", first},
                      {"final_activation", last}};
    });

    std::vector<fs::path> outputs;
    for (const json& e : entries)
        for (const char* k : {"image", "latent", "metadata"}) outputs.push_back(dir / e[k].get<std::string>());
    json manifest = stage_header(cfg, "visualize");
    manifest["inputs"] = hash_inputs(cfg.output_dir(), {pdir / "peaks.json", prdir / "manifest.json"});
    manifest["inputs"].update(b.inputs);
    manifest["noise_conditions"] = noise;
    manifest["results"] = entries;
    manifest["never_active"] = never_active;
    manifest["outputs"] = hash_outputs(cfg.output_dir(), outputs);
    rep.manifest = dir / "manifest.json";
    write_json(rep.manifest, manifest);
    return rep;
}

StageReport stage_evaluate(const StageConfig& cfg) {
    StageReport rep{"evaluate", {}, {}, {}};
    const ReportBuild built = build_report(cfg);
    rep.warnings = built.warnings;
    rep.notes.push_back("report rows: " + std::to_string(built.rows));
    rep.manifest = built.manifest;
    return rep;
}

StageReport run_stage(const StageConfig& cfg) {
    if (cfg.stage == "analyze") return stage_analyze(cfg);
    if (cfg.stage == "prior") return stage_prior(cfg);
    if (cfg.stage == "visualize") return stage_visualize(cfg);
    if (cfg.stage == "evaluate") return stage_evaluate(cfg);
    throw std::invalid_argument("unknown stage '" + cfg.stage + "'");
}

} // namespace lvo
