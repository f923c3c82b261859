#include "lvo/config.hpp"

#include "lvo/hash.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lvo {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(NoiseMode m) {
    switch (m) {
    case NoiseMode::Off: return "off";
    case NoiseMode::On: return "on";
    case NoiseMode::FeatureDependent: return "feature_dependent";
    }
    return "off";
}

NoiseMode noise_mode_from_string(const std::string& s) {
    if (s == "off" || s == "false") return NoiseMode::Off;
    if (s == "on" || s == "true") return NoiseMode::On;
    if (s == "feature_dependent" || s == "both") return NoiseMode::FeatureDependent;
    throw std::invalid_argument("unknown schedule_noise '" + s + "' (expected on, off, or feature_dependent)");
}

std::vector<bool> noise_conditions(NoiseMode m) {
    switch (m) {
    case NoiseMode::Off: return {false};
    case NoiseMode::On: return {true};
    case NoiseMode::FeatureDependent: return {true, false};
    }
    return {false};
}

DefaultProfiles builtin_defaults() {
    DefaultProfiles d;
    d.raw_layer.weights = RegularizerWeights::raw_layer_defaults();
    d.raw_layer.steering_gamma = 50.0;
    d.sae.weights = RegularizerWeights::sae_defaults();
    d.sae.steering_gamma = 500.0;
    return d;
}

namespace {

template <class T>
T scalar(const YAML::Node& n, const std::string& key) {
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw std::invalid_argument("config key '" + key + "' has an invalid value");
    }
}

json yaml_to_json(const YAML::Node& n) {
    switch (n.Type()) {
    case YAML::NodeType::Sequence: {
        json arr = json::array();
        for (const auto& item : n) arr.push_back(yaml_to_json(item));
        return arr;
    }
    case YAML::NodeType::Map: {
        json obj = json::object();
        for (const auto& kv : n) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
        return obj;
    }
    case YAML::NodeType::Scalar: {
        const std::string s = n.Scalar();
        if (s == "true" || s == "on") return true;
        if (s == "false" || s == "off") return false;
        try {
            std::size_t used = 0;
            const long long i = std::stoll(s, &used);
            if (used == s.size()) return i;
        } catch (...) {
        }
        try {
            std::size_t used = 0;
            const double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (...) {
        }
        return s;
    }
    default:
        return nullptr;
    }
}

TargetProfile profile_from_yaml(const YAML::Node& n, const std::string& name, TargetProfile base) {
    if (!n || !n.IsMap()) throw std::invalid_argument("defaults file lacks a '" + name + "' profile");
    for (const auto& kv : n) {
        const std::string key = kv.first.as<std::string>();
        const std::string where = name + "." + key;
        if (key == "steering_gamma") base.steering_gamma = scalar<double>(kv.second, where);
        else if (key == "learning_rate") base.learning_rate = scalar<double>(kv.second, where);
        else if (key == "steps") base.steps = scalar<int>(kv.second, where);
        else if (key == "schedule_noise") base.schedule_noise = noise_mode_from_string(scalar<std::string>(kv.second, where));
        else if (key == "steering_timesteps")
            base.steering_timesteps = timestep_mode_from_string(scalar<std::string>(kv.second, where));
        else apply_weight_override(base.weights, key, yaml_to_json(kv.second));
    }
    base.weights.validate();
    return base;
}

std::vector<std::uint64_t> parse_seeds(const YAML::Node& n) {
    std::vector<std::uint64_t> out;
    if (n.IsSequence()) {
        for (const auto& s : n) out.push_back(scalar<std::uint64_t>(s, "seeds"));
    } else {
        out.push_back(scalar<std::uint64_t>(n, "seeds"));
    }
    return out;
}

} // namespace

void apply_weight_override(RegularizerWeights& w, const std::string& key, const json& v) {
    auto num = [&]() -> double {
        if (!v.is_number()) throw std::invalid_argument("weight '" + key + "' must be a number");
        return v.get<double>();
    };
    if (key == "tv_weight") w.tv_weight = num();
    else if (key == "range_weight") w.range_weight = num();
    else if (key == "moment_weight") w.moment_weight = num();
    else if (key == "smoothing_sigma0") w.smoothing_sigma0 = num();
    else if (key == "rotation_deg") w.rotation_deg = num();
    else if (key == "scale_factor") w.scale_factor = num();
    else if (key == "jitter_px") {
        const double j = num();
        if (j != static_cast<int>(j)) throw std::invalid_argument("jitter_px must be an integer");
        w.jitter_px = static_cast<int>(j);
    } else if (key == "spectral_filter") {
        if (!v.is_boolean()) throw std::invalid_argument("spectral_filter must be true or false");
        w.spectral_filter = v.get<bool>();
    } else {
        throw std::invalid_argument("unknown regularizer key '" + key + "'");
    }
}

DefaultProfiles load_defaults(const fs::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw std::runtime_error("cannot read defaults " + path.string() + ": " + e.what());
    }
    // every key must be spelled out; start from an all-zero bundle
    TargetProfile blank;
    blank.weights = RegularizerWeights{};
    DefaultProfiles d;
    d.raw_layer = profile_from_yaml(root["raw_layer"], "raw_layer", blank);
    d.sae = profile_from_yaml(root["sae"], "sae", blank);
    return d;
}

namespace {

// Whole numbers are written without a trailing ".0", so manifests show the
// table exactly as it reads in the defaults file.
json number(double v) {
    if (std::isfinite(v) && v == std::trunc(v) && std::abs(v) < 1e15) return static_cast<std::int64_t>(v);
    return v;
}

} // namespace

json to_json(const RegularizerWeights& w) {
    return {{"tv_weight", number(w.tv_weight)},
            {"range_weight", number(w.range_weight)},
            {"moment_weight", number(w.moment_weight)},
            {"spectral_filter", w.spectral_filter},
            {"smoothing_sigma0", number(w.smoothing_sigma0)},
            {"jitter_px", w.jitter_px},
            {"rotation_deg", number(w.rotation_deg)},
            {"scale_factor", number(w.scale_factor)}};
}

json to_json(const TargetProfile& p) {
    json j = to_json(p.weights);
    j["steering_gamma"] = number(p.steering_gamma);
    j["learning_rate"] = number(p.learning_rate);
    j["steps"] = p.steps;
    j["schedule_noise"] = to_string(p.schedule_noise);
    j["steering_timesteps"] = to_string(p.steering_timesteps);
    return j;
}

json to_json(const DefaultProfiles& d) { return {{"raw_layer", to_json(d.raw_layer)}, {"sae", to_json(d.sae)}}; }

std::vector<int> FeatureSelection::resolve(int available) const {
    if (!ids.empty()) {
        for (int id : ids)
            if (id < 0 || id >= available)
                throw std::out_of_range("feature " + std::to_string(id) + " outside [0, " + std::to_string(available) +
                                        ")");
        return ids;
    }
    std::vector<int> out;
    for (int i = 0; i < std::min(first_n, available); ++i) out.push_back(i);
    return out;
}

FeatureSelection FeatureSelection::parse(const std::string& text) {
    FeatureSelection sel;
    std::string s = text;
    s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }), s.end());
    auto to_int = [&](const std::string& part) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(part, &used);
        } catch (...) {
            used = 0;
        }
        if (used != part.size() || part.empty()) throw std::invalid_argument("bad feature selection '" + text + "'");
        return v;
    };
    if (s.rfind("first", 0) == 0) {
        std::string n = s.substr(5);
        if (!n.empty() && n[0] == ':') n = n.substr(1);
        sel.first_n = to_int(n);
        if (sel.first_n < 0) throw std::invalid_argument("feature count must be >= 0");
        return sel;
    }
    if (s.find(',') == std::string::npos) {
        sel.first_n = to_int(s);
        return sel;
    }
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) sel.ids.push_back(to_int(part));
    return sel;
}

fs::path StageConfig::resolve(const std::string& p) const {
    const fs::path path(p);
    if (path.is_absolute() || source.empty()) return path;
    return (source.parent_path() / path).lexically_normal();
}

TargetProfile StageConfig::profile() const {
    const DefaultProfiles d = defaults.empty() ? builtin_defaults() : load_defaults(resolve(defaults));
    return d.for_kind(target_kind);
}

double StageConfig::steering_gamma() const { return prior.gamma.value_or(profile().steering_gamma); }

TimestepMode StageConfig::steering_timesteps() const {
    return prior.timestep_mode.value_or(profile().steering_timesteps);
}

NoiseMode StageConfig::schedule_noise() const { return visualize.schedule_noise.value_or(profile().schedule_noise); }

LvoConfig StageConfig::lvo_template() const {
    const TargetProfile p = profile();
    LvoConfig c;
    c.learning_rate = visualize.learning_rate.value_or(p.learning_rate);
    c.steps = visualize.steps.value_or(p.steps);
    c.weights = p.weights;
    for (const auto& [k, v] : visualize.weight_overrides.items()) apply_weight_override(c.weights, k, v);
    c.aggregation = visualize.aggregation;
    c.target.kind = target_kind;
    c.target.layer = layer;
    c.validate();
    return c;
}

json StageConfig::to_json() const {
    const TargetProfile prof = profile();
    const LvoConfig tmpl = lvo_template();
    json features_json = features.ids.empty() ? json{{"first", features.first_n}} : json{{"ids", features.ids}};
    json j = {
        {"stage", stage},
        {"model", model},
        {"sae", sae},
        {"output", output},
        {"defaults", defaults},
        {"target", target_kind == FeatureTarget::Kind::SaeFeature ? "sae" : "raw"},
        {"layer", layer},
        {"features", features_json},
        {"seeds", seeds},
        {"analyze",
         {{"dataset", {{"kind", analyze.dataset.kind}, {"count", analyze.dataset.count}, {"seed", analyze.dataset.seed}}},
          {"k", analyze.k},
          {"p", analyze.p},
          {"min_separation", analyze.min_separation},
          {"examples", analyze.examples}}},
        {"prior", {{"gamma", steering_gamma()}, {"timestep_mode", to_string(steering_timesteps())}}},
        {"visualize",
         {{"profile", lvo::to_json(prof)},
          {"learning_rate", tmpl.learning_rate},
          {"steps", tmpl.steps},
          {"weights", lvo::to_json(tmpl.weights)},
          {"schedule_noise", to_string(schedule_noise())},
          {"aggregation", to_string(visualize.aggregation)}}},
        {"calibrated_defaults", lvo::to_json(defaults.empty() ? builtin_defaults() : load_defaults(resolve(defaults)))},
        {"evaluate", {{"title", evaluate.title}}},
        {"sweep",
         {{"parameter", sweep.parameter},
          {"levels", sweep.levels},
          {"noise", sweep.noise ? to_string(*sweep.noise) : std::string()},
          {"seed_index", sweep.seed_index}}},
    };
    return j;
}

std::string StageConfig::hash() const { return sha256_hex(to_json().dump()); }

StageConfig stage_config_from_yaml(const std::string& text, const fs::path& source) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw std::invalid_argument(std::string("config is not valid YAML: ") + e.what());
    }
    if (!root.IsMap()) throw std::invalid_argument("config must be a YAML mapping");

    StageConfig c;
    c.source = source;
    for (const auto& kv : root) {
        const std::string key = kv.first.as<std::string>();
        const YAML::Node& v = kv.second;
        if (key == "stage") c.stage = scalar<std::string>(v, key);
        else if (key == "model") c.model = scalar<std::string>(v, key);
        else if (key == "sae") c.sae = scalar<std::string>(v, key);
        else if (key == "output") c.output = scalar<std::string>(v, key);
        else if (key == "defaults") c.defaults = scalar<std::string>(v, key);
        else if (key == "layer") c.layer = scalar<std::string>(v, key);
        else if (key == "workers") c.workers = scalar<int>(v, key);
        else if (key == "seeds") c.seeds = parse_seeds(v);
        else if (key == "target") {
            const std::string t = scalar<std::string>(v, key);
            if (t == "sae") c.target_kind = FeatureTarget::Kind::SaeFeature;
            else if (t == "raw" || t == "raw_layer") c.target_kind = FeatureTarget::Kind::RawChannel;
            else throw std::invalid_argument("target must be 'sae' or 'raw'");
        } else if (key == "features") {
            if (v.IsSequence()) {
                for (const auto& id : v) c.features.ids.push_back(scalar<int>(id, key));
            } else {
                c.features = FeatureSelection::parse(scalar<std::string>(v, key));
            }
        } else if (key == "analyze") {
            for (const auto& a : v) {
                const std::string k = a.first.as<std::string>();
                if (k == "k") c.analyze.k = scalar<int>(a.second, k);
                else if (k == "p") c.analyze.p = scalar<int>(a.second, k);
                else if (k == "examples") c.analyze.examples = scalar<int>(a.second, k);
                else if (k == "min_separation") {
                    const std::string s = scalar<std::string>(a.second, k);
                    c.analyze.min_separation = s == "auto" ? 0 : scalar<int>(a.second, k);
                } else if (k == "dataset") {
                    for (const auto& d : a.second) {
                        const std::string dk = d.first.as<std::string>();
                        if (dk == "kind") c.analyze.dataset.kind = scalar<std::string>(d.second, dk);
                        else if (dk == "count") c.analyze.dataset.count = scalar<std::size_t>(d.second, dk);
                        else if (dk == "seed") c.analyze.dataset.seed = scalar<std::uint64_t>(d.second, dk);
                        else throw std::invalid_argument("unknown key analyze.dataset." + dk);
                    }
                } else throw std::invalid_argument("unknown key analyze." + k);
            }
        } else if (key == "prior") {
            for (const auto& a : v) {
                const std::string k = a.first.as<std::string>();
                if (k == "gamma") c.prior.gamma = scalar<double>(a.second, k);
                else if (k == "timestep_mode") c.prior.timestep_mode = timestep_mode_from_string(scalar<std::string>(a.second, k));
                else throw std::invalid_argument("unknown key prior." + k);
            }
        } else if (key == "visualize") {
            for (const auto& a : v) {
                const std::string k = a.first.as<std::string>();
                if (k == "learning_rate") c.visualize.learning_rate = scalar<double>(a.second, k);
                else if (k == "steps") c.visualize.steps = scalar<int>(a.second, k);
                else if (k == "schedule_noise") c.visualize.schedule_noise = noise_mode_from_string(scalar<std::string>(a.second, k));
                else if (k == "aggregation") c.visualize.aggregation = aggregation_from_string(scalar<std::string>(a.second, k));
                else if (k == "weights") {
                    RegularizerWeights probe;
                    for (const auto& w : a.second) {
                        const std::string wk = w.first.as<std::string>();
                        const json wv = yaml_to_json(w.second);
                        apply_weight_override(probe, wk, wv);  // rejects unknown keys now, not at run time
                        c.visualize.weight_overrides[wk] = wv;
                    }
                } else throw std::invalid_argument("unknown key visualize." + k);
            }
        } else if (key == "evaluate") {
            for (const auto& a : v) {
                const std::string k = a.first.as<std::string>();
                if (k == "title") c.evaluate.title = scalar<std::string>(a.second, k);
                else throw std::invalid_argument("unknown key evaluate." + k);
            }
        } else if (key == "sweep") {
            for (const auto& a : v) {
                const std::string k = a.first.as<std::string>();
                if (k == "parameter") c.sweep.parameter = scalar<std::string>(a.second, k);
                else if (k == "levels") c.sweep.levels = yaml_to_json(a.second);
                else if (k == "noise") c.sweep.noise = noise_mode_from_string(scalar<std::string>(a.second, k));
                else if (k == "seed_index") c.sweep.seed_index = scalar<int>(a.second, k);
                else throw std::invalid_argument("unknown key sweep." + k);
            }
        } else {
            throw std::invalid_argument("unknown config key '" + key + "'");
        }
    }
    if (c.seeds.empty()) throw std::invalid_argument("seed list is empty");
    if (c.analyze.k < 1 || c.analyze.p < 0 || c.analyze.min_separation < 0 || c.analyze.examples < 0)
        throw std::invalid_argument("analyze parameters out of range");
    return c;
}

StageConfig load_stage_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config not found: " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return stage_config_from_yaml(ss.str(), path);
}

} // namespace lvo
