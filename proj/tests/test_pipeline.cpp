#include "lvo/artifacts.hpp"
#include "lvo/config.hpp"
#include "lvo/hash.hpp"
#include "lvo/pipeline.hpp"
#include "lvo/report.hpp"
#include "lvo/sweep.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>

using namespace lvo;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string small_config(const std::string& stage, const fs::path& out) {
    return "stage: " + stage + "\n" +
           "model: " + lvo::testing::toy_model_dir().string() + "\n" +
           "sae: " + lvo::testing::toy_sae_dir().string() + "\n" +
           "defaults: " + (lvo::testing::source_dir() / "configs/defaults.yaml").string() + "\n" +
           "output: " + out.string() + "\n" +
           "target: sae\n"
           "layer: up.attn\n"
           "features: \"0,1\"\n"
           "seeds: [0]\n"
           "workers: 1\n"
           "prior:\n  gamma: 2\n"
           "analyze:\n  dataset: {kind: shapes, count: 12, seed: 3}\n  k: 8\n  p: 2\n"
           "visualize:\n  steps: 3\n  schedule_noise: off\n";
}

StageConfig small(const std::string& stage, const fs::path& out) {
    return stage_config_from_yaml(small_config(stage, out));
}

// Runs the four stages once into a shared scratch directory.
const fs::path& small_run() {
    static const fs::path out = [] {
        const fs::path dir = lvo::testing::scratch_dir("pipeline_small");
        for (const char* st : {"analyze", "prior", "visualize", "evaluate"}) {
            const StageReport r = run_stage(small(st, dir));
            REQUIRE(r.warnings.empty());
        }
        return dir;
    }();
    return out;
}

int run_cli(const std::string& args) {
    const fs::path exe = fs::path(LVO_BINARY_DIR) / "lvo";
    const int status = std::system((exe.string() + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("feature selections parse in every accepted form") {
    CHECK(FeatureSelection::parse("first 6").resolve(100) == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK(FeatureSelection::parse("first:3").resolve(100) == std::vector<int>{0, 1, 2});
    CHECK(FeatureSelection::parse("4").resolve(2) == std::vector<int>{0, 1});
    CHECK(FeatureSelection::parse("0,3,5").resolve(6) == std::vector<int>{0, 3, 5});
    CHECK_THROWS_AS(FeatureSelection::parse("0,3,5").resolve(5), std::out_of_range);
    CHECK_THROWS_AS(FeatureSelection::parse("a,b"), std::invalid_argument);
}

TEST_CASE("stage configs reject unknown keys and bad values") {
    CHECK_NOTHROW(stage_config_from_yaml("stage: analyze\n"));
    CHECK_THROWS_AS(stage_config_from_yaml("stage: analyze\ncolour: red\n"), std::invalid_argument);
    CHECK_THROWS_AS(stage_config_from_yaml("analyze:\n  kk: 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(stage_config_from_yaml("visualize:\n  weights: {tv: 1}\n"), std::invalid_argument);
    CHECK_THROWS_AS(stage_config_from_yaml("target: pixels\n"), std::invalid_argument);
    CHECK_THROWS_AS(stage_config_from_yaml("seeds: []\n"), std::invalid_argument);
    CHECK_THROWS_AS(stage_config_from_yaml("visualize:\n  schedule_noise: maybe\n"), std::invalid_argument);
    CHECK_THROWS_AS(stage_config_from_yaml("[1, 2]"), std::invalid_argument);
    CHECK_THROWS(load_stage_config("/nonexistent/config.yaml"));
}

TEST_CASE("relative paths resolve against the config file") {
    const StageConfig c = stage_config_from_yaml("model: ../m\noutput: out\n", "/a/b/cfg.yaml");
    CHECK(c.model_dir() == fs::path("/a/m"));
    CHECK(c.output_dir() == fs::path("/a/b/out"));
    const StageConfig abs = stage_config_from_yaml("model: /x/m\n", "/a/b/cfg.yaml");
    CHECK(abs.model_dir() == fs::path("/x/m"));
}

TEST_CASE("the shipped defaults file equals the compiled-in table") {
    const DefaultProfiles file = load_defaults(lvo::testing::source_dir() / "configs/defaults.yaml");
    const DefaultProfiles built = builtin_defaults();
    CHECK(file.raw_layer == built.raw_layer);
    CHECK(file.sae == built.sae);
    CHECK(to_json(file) == to_json(built));
}

TEST_CASE("overrides change only what they name") {
    const StageConfig base = stage_config_from_yaml("target: raw\n");
    const StageConfig tweaked = stage_config_from_yaml("target: raw\nvisualize:\n  weights: {tv_weight: 2}\n  steps: 7\n");
    const LvoConfig a = base.lvo_template(), b = tweaked.lvo_template();
    CHECK(b.weights.tv_weight == 2.0);
    CHECK(b.steps == 7);
    CHECK(b.weights.range_weight == a.weights.range_weight);
    CHECK(b.learning_rate == a.learning_rate);
    CHECK(base.hash() != tweaked.hash());
    CHECK(base.hash() == stage_config_from_yaml("target: raw\n").hash());

    RegularizerWeights w;
    CHECK_THROWS_AS(apply_weight_override(w, "jitter_px", 1.5), std::invalid_argument);
    CHECK_THROWS_AS(apply_weight_override(w, "spectral_filter", 1), std::invalid_argument);
    CHECK_THROWS_AS(apply_weight_override(w, "bogus", 1), std::invalid_argument);
}

TEST_CASE("format_double gives the shortest round-trip text") {
    CHECK(format_double(50.0) == "50");
    CHECK(format_double(0.05) == "0.05");
    CHECK(format_double(1.1) == "1.1");
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform_int(-8, 8));
        CHECK(std::stod(format_double(v)) == v);
    }
}

TEST_CASE("profile CSVs and PNGs round-trip") {
    const fs::path dir = lvo::testing::scratch_dir("artifact_roundtrip");
    Rng rng(2);
    std::vector<ActivityProfile> profiles(3);
    for (int f = 0; f < 3; ++f) {
        profiles[f].feature = f;
        for (int t = 0; t < 10; ++t) {
            profiles[f].frequency.push_back(rng.uniform(0.0, 1.0));
            profiles[f].samples.push_back(rng.uniform_int(1, 50));
        }
    }
    write_profiles_csv(dir / "activity.csv", profiles);
    const auto back = read_profiles_csv(dir / "activity.csv");
    REQUIRE(back.size() == 3);
    for (int f = 0; f < 3; ++f) {
        CHECK(back[f].frequency == profiles[f].frequency);
        CHECK(back[f].samples == profiles[f].samples);
    }

    const std::vector<std::vector<double>> table = {{1.5, -2.25}, {0.1, 3.0}};
    write_max_activation_csv(dir / "max.csv", table);
    CHECK(read_max_activation_csv(dir / "max.csv") == table);

    Image img({3, 4, 5});
    for (int i = 0; i < static_cast<int>(img.size()); ++i) img[i] = (i % 256) / 255.0;
    write_png(dir / "img.png", img);
    CHECK(max_abs_diff(read_png(dir / "img.png"), img) < 1e-12);
    write_png(dir / "big.png", img, 3);
    CHECK(read_png(dir / "big.png").dim(1) == 12);
}

TEST_CASE("sha256 matches published digests") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const fs::path dir = lvo::testing::scratch_dir("sha");
    write_text(dir / "abc.txt", "abc");
    CHECK(sha256_file(dir / "abc.txt") == sha256_hex("abc"));
}

TEST_CASE("robustness preset has the four joint levels") {
    const auto levels = preset_levels("robustness");
    REQUIRE(levels.size() == 4);
    const int jitter[] = {0, 1, 8, 16};
    const double rot[] = {0, 5, 15, 45}, scale[] = {1.0, 1.1, 1.2, 1.8};
    for (int i = 0; i < 4; ++i) {
        CHECK(levels[i].values["jitter_px"].get<int>() == jitter[i]);
        CHECK(levels[i].values["rotation_deg"].get<double>() == rot[i]);
        CHECK(levels[i].values["scale_factor"].get<double>() == scale[i]);
    }
    CHECK(preset_levels("tv_weight").size() == 4);
    CHECK(preset_levels("spectral_filter").size() == 2);
    CHECK_THROWS_AS(preset_levels("learning_rate"), std::invalid_argument);
    CHECK_THROWS_AS(preset_levels("nonsense"), std::invalid_argument);
}

TEST_CASE("sweep plans validate and count cells") {
    StageConfig cfg = stage_config_from_yaml("features: \"0,2,4\"\nsweep:\n  parameter: tv_weight\n  noise: feature_dependent\n");
    const SweepPlan plan = make_sweep_plan(cfg, 10);
    CHECK(plan.cell_count() == 4 * 3 * 2);

    cfg.sweep.levels = json::array({0.1, 0.2, 0.1});
    CHECK_THROWS_AS(make_sweep_plan(cfg, 10), std::invalid_argument);
    cfg.sweep.levels = json::array({json{{"range_weight", 1}}});
    CHECK_THROWS_AS(make_sweep_plan(cfg, 10), std::invalid_argument);
    cfg.sweep.levels = json::array({0.1, 0.3});
    CHECK(make_sweep_plan(cfg, 10).levels.size() == 2);
}

TEST_CASE("applying a level changes only its keys") {
    const StageConfig cfg = stage_config_from_yaml("target: raw\n");
    const json base = cell_settings(cfg, false);
    for (const auto& lv : preset_levels("robustness")) {
        const json cell = apply_level(base, lv);
        for (const std::string& k : config_diff(base, cell)) {
            const auto keys = sweep_keys("robustness");
            CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
        }
    }
    CHECK(config_diff(base, base).empty());
    CHECK(config_diff(base, cell_settings(cfg, true)) == std::vector<std::string>{"schedule_noise"});
    CHECK_THROWS_AS(apply_level(base, {"x", {{"not_a_key", 1}}}), std::invalid_argument);
}

TEST_CASE("a small pipeline run yields a clean report") {
    const fs::path out = small_run();
    const StageConfig cfg = small("evaluate", out);
    const ReportBuild r = build_report(cfg);
    CHECK(r.warnings.empty());
    CHECK(r.rows >= 2);
    CHECK(fs::exists(out / "reports/index.html"));
    const json m = read_json(out / "reports/manifest.json");
    CHECK(m["config_hash"] == cfg.hash());
    CHECK(m["config"]["calibrated_defaults"] == to_json(builtin_defaults()));
}

TEST_CASE("report flags missing and stale artifacts without failing") {
    const fs::path src = small_run();
    const fs::path dir = lvo::testing::scratch_dir("pipeline_damaged");
    fs::remove_all(dir);
    fs::copy(src, dir, fs::copy_options::recursive);

    const json vm = read_json(dir / "visualizations/manifest.json");
    std::string victim, stale;
    for (const auto& [file, hash] : vm["outputs"].items()) {
        if (victim.empty() && file.ends_with(".png")) victim = file;
        else if (stale.empty() && file.ends_with(".npy")) stale = file;
    }
    REQUIRE(!victim.empty());
    REQUIRE(!stale.empty());
    fs::remove(dir / victim);
    {
        std::ofstream f(dir / stale, std::ios::app | std::ios::binary);
        f << "x";
    }
    const ReportBuild r = build_report(small("evaluate", dir));
    bool saw_missing = false, saw_stale = false;
    for (const auto& w : r.warnings) {
        saw_missing |= w.find("missing artifact") != std::string::npos && w.find(victim) != std::string::npos;
        saw_stale |= w.find("stale artifact") != std::string::npos && w.find(stale) != std::string::npos;
    }
    CHECK(saw_missing);
    CHECK(saw_stale);
    CHECK(fs::exists(r.html));

    fs::remove(dir / "profiles/peaks.json");
    const ReportBuild gone = build_report(small("evaluate", dir));
    CHECK(!gone.warnings.empty());
}

TEST_CASE("later stages refuse to run without earlier artifacts") {
    const fs::path dir = lvo::testing::scratch_dir("pipeline_empty");
    fs::remove_all(dir);
    CHECK_THROWS_AS(run_stage(small("prior", dir)), std::runtime_error);
    CHECK_THROWS_AS(run_stage(small("visualize", dir)), std::runtime_error);
}

TEST_CASE("pipeline reruns are byte-identical") {
    const fs::path first = small_run();
    const fs::path dir = lvo::testing::scratch_dir("pipeline_rerun");
    fs::remove_all(dir);
    for (const char* st : {"analyze", "prior", "visualize"}) run_stage(small(st, dir));
    for (const char* sub : {"profiles", "priors", "visualizations"}) {
        const json a = read_json(first / sub / "manifest.json")["outputs"];
        const json b = read_json(dir / sub / "manifest.json")["outputs"];
        CHECK(a == b);
        CHECK(!a.empty());
    }
}

TEST_CASE("CLI exit codes") {
    const fs::path out = small_run();
    const fs::path cfg = lvo::testing::scratch_dir("cli") / "evaluate.yaml";
    write_text(cfg, small_config("evaluate", out));
    CHECK(run_cli("evaluate --config " + cfg.string()) == 0);
    CHECK(run_cli("prior --config " + cfg.string()) == 1);  // stage mismatch
    CHECK(run_cli("evaluate --config /nonexistent.yaml") != 0);
    CHECK(run_cli("no-such-command") != 0);
    CHECK(run_cli("evaluate --config " + cfg.string() + " --seed ,") == 1);

    const fs::path broken = lvo::testing::scratch_dir("cli_broken");
    fs::remove_all(broken);
    fs::copy(out, broken, fs::copy_options::recursive);
    fs::remove_all(broken / "priors");
    const fs::path cfg2 = broken.parent_path() / "broken.yaml";
    write_text(cfg2, small_config("evaluate", broken));
    CHECK(run_cli("evaluate --config " + cfg2.string()) == 2);
}

TEST_CASE("LVO_DEVICE accepts cpu only") {
    const char* old = std::getenv("LVO_DEVICE");
    const std::string saved = old ? old : "";
    ::unsetenv("LVO_DEVICE");
    CHECK_NOTHROW(check_device());
    ::setenv("LVO_DEVICE", "cpu", 1);
    CHECK_NOTHROW(check_device());
    ::setenv("LVO_DEVICE", "cuda", 1);
    CHECK_THROWS_AS(check_device(), std::runtime_error);
    if (old) ::setenv("LVO_DEVICE", saved.c_str(), 1);
    else ::unsetenv("LVO_DEVICE");
}
