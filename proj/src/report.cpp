#include "lvo/report.hpp"

#include "lvo/artifacts.hpp"
#include "lvo/hash.hpp"
#include "lvo/pipeline.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace lvo {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string svg_plot(const std::vector<std::vector<double>>& series, const std::vector<std::string>& colors,
                     const std::vector<int>& marks, int width, int height) {
    std::size_t n = 0;
    for (const auto& s : series) n = std::max(n, s.size());
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\">";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"#fafafa\" stroke=\"#ccc\"/>";
    const double pad = 4.0;
    auto x_of = [&](std::size_t t) { return pad + (width - 2 * pad) * (n > 1 ? double(t) / double(n - 1) : 0.5); };
    for (int m : marks)
        os << "<line x1=\"" << x_of(m) << "\" x2=\"" << x_of(m) << "\" y1=\"0\" y2=\"" << height
           << "\" stroke=\"#d33\" stroke-dasharray=\"3,2\"/>";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        if (s.empty()) continue;
        const double hi = *std::max_element(s.begin(), s.end());
        const double lo = std::min(0.0, *std::min_element(s.begin(), s.end()));
        const double span = hi > lo ? hi - lo : 1.0;
        os << "<polyline fill=\"none\" stroke=\"" << (k < colors.size() ? colors[k] : "#333") << "\" points=\"";
        for (std::size_t t = 0; t < s.size(); ++t)
            os << x_of(t) << ',' << (height - pad - (height - 2 * pad) * (s[t] - lo) / span) << ' ';
        os << "\"/>";
    }
    os << "</svg>";
    return os.str();
}

namespace {

struct Checked {
    json manifest;
    bool present = false;
};

// Loads a stage manifest and checks its recorded outputs and inputs.
Checked check_manifest(const fs::path& path, const StageConfig& cfg, std::vector<std::string>& warnings) {
    Checked c;
    const fs::path root = cfg.output_dir();
    if (!fs::exists(path)) {
        warnings.push_back("missing artifact: " + path.lexically_relative(root).generic_string());
        return c;
    }
    c.manifest = read_json(path);
    c.present = true;
    const json outputs = c.manifest.value("outputs", json::object());
    const json inputs = c.manifest.value("inputs", json::object());
    for (const auto& [file, hash] : outputs.items()) {
        const fs::path p = root / file;
        if (!fs::exists(p)) warnings.push_back("missing artifact: " + file);
        else if (sha256_file(p) != hash.get<std::string>()) warnings.push_back("stale artifact (hash mismatch): " + file);
    }
    for (const auto& [file, hash] : inputs.items()) {
        fs::path p;
        if (file.rfind("model/", 0) == 0) p = cfg.model_dir() / file.substr(6);
        else if (file.rfind("sae/", 0) == 0) p = cfg.sae_dir() / file.substr(4);
        else p = root / file;
        if (!fs::exists(p)) warnings.push_back("missing input: " + file);
        else if (sha256_file(p) != hash.get<std::string>())
            warnings.push_back("stale input (changed since " + c.manifest.value("stage", std::string("?")) +
                               " ran): " + file);
    }
    return c;
}

std::string img(const std::string& src, const std::string& title) {
    return "<img src=\"" + html_escape(src) + "\" title=\"" + html_escape(title) + "\">";
}

} // namespace

ReportBuild build_report(const StageConfig& cfg) {
    ReportBuild out;
    const fs::path root = cfg.output_dir();
    const fs::path dir = reports_dir(cfg);
    fs::create_directories(dir);

    const Checked analyze = check_manifest(profiles_dir(cfg) / "manifest.json", cfg, out.warnings);
    const Checked prior = check_manifest(priors_dir(cfg) / "manifest.json", cfg, out.warnings);
    const Checked viz = check_manifest(visualizations_dir(cfg) / "manifest.json", cfg, out.warnings);

    json peaks;
    if (fs::exists(profiles_dir(cfg) / "peaks.json")) peaks = read_json(profiles_dir(cfg) / "peaks.json");
    else out.warnings.push_back("missing artifact: profiles/peaks.json");

    std::map<int, ActivityProfile> activity;
    std::vector<std::vector<double>> max_table;
    if (fs::exists(profiles_dir(cfg) / "activity.csv"))
        for (auto& p : read_profiles_csv(profiles_dir(cfg) / "activity.csv")) activity[p.feature] = std::move(p);
    if (fs::exists(profiles_dir(cfg) / "max_activation.csv"))
        max_table = read_max_activation_csv(profiles_dir(cfg) / "max_activation.csv");

    std::map<int, std::vector<json>> priors_of, viz_of;
    if (prior.present)
        for (const json& e : prior.manifest["priors"]) priors_of[e["feature"].get<int>()].push_back(e);
    if (viz.present)
        for (const json& e : viz.manifest["results"]) viz_of[e["feature"].get<int>()].push_back(e);

    const std::string h_analyze = analyze.present ? analyze.manifest.value("config_hash", "") : "";
    const std::string h_prior = prior.present ? prior.manifest.value("config_hash", "") : "";
    const std::string h_viz = viz.present ? viz.manifest.value("config_hash", "") : "";

    std::ostringstream body;
    std::ostringstream feature_plots;
    const json features = peaks.is_object() ? peaks.value("features", json::array()) : json::array();
    for (const json& fe : features) {
        const int f = fe["feature"].get<int>();
        const std::vector<int> pk = fe["peaks"].get<std::vector<int>>();
        std::vector<std::vector<double>> series;
        if (activity.count(f)) series.push_back(activity[f].frequency);
        if (f < static_cast<int>(max_table.size())) series.push_back(max_table[f]);
        feature_plots << "<div class=\"plot\"><b>feature " << f << "</b> <span class=\"legend\">"
                      << "<i style=\"color:#1f77b4\">activity</i> <i style=\"color:#ff7f0e\">max activation</i>"
                      << "</span><br>" << svg_plot(series, {"#1f77b4", "#ff7f0e"}, pk) << "</div>\n";

        if (pk.empty()) {
            body << "<tr class=\"inactive\"><td>" << f << "</td><td>-</td><td colspan=\"3\">never active</td></tr>\n";
            continue;
        }
        std::map<int, json> examples_at;
        for (const json& ex : fe.value("examples", json::array())) examples_at[ex["t"].get<int>()] = ex["items"];
        for (int t : pk) {
            ++out.rows;
            body << "<tr><td>" << f << "</td><td>" << t << "</td>";

            body << "<td class=\"cells\">";
            int shown = 0;
            for (const json& r : viz_of[f]) {
                if (r["peak"].get<int>() != t) continue;
                const std::string src = "../visualizations/" + r["image"].get<std::string>();
                const std::string caption = "seed " + std::to_string(r["seed"].get<std::uint64_t>()) + ", noise " +
                                            (r["schedule_noise"].get<bool>() ? "on" : "off");
                body << "<figure data-config-hash=\"" << h_viz << "\">" << img(src, caption)
                     << "<figcaption>" << html_escape(caption) << "</figcaption></figure>";
                ++shown;
            }
            if (shown == 0) {
                body << "<span class=\"gap\">missing visualizations</span>";
                out.warnings.push_back("missing artifact: visualizations for feature " + std::to_string(f) +
                                       " peak " + std::to_string(t));
            }
            body << "</td>";

            body << "<td class=\"cells\">";
            const json items = examples_at.count(t) ? examples_at[t] : json::array();
            if (items.empty()) body << "<span class=\"gap\">no examples</span>";
            for (const json& it : items) {
                const std::string caption = it["prompt"].get<std::string>() + " (" +
                                            format_double(it["activation"].get<double>()) + ")";
                body << "<figure data-config-hash=\"" << h_analyze << "\">"
                     << img("../profiles/" + it["image"].get<std::string>(), caption) << "<figcaption>"
                     << html_escape(caption) << "</figcaption></figure>";
            }
            body << "</td>";

            body << "<td class=\"cells\">";
            if (priors_of[f].empty()) {
                body << "<span class=\"gap\">missing steered samples</span>";
                out.warnings.push_back("missing artifact: priors for feature " + std::to_string(f));
            }
            for (const json& p : priors_of[f]) {
                const std::string caption = "seed " + std::to_string(p["seed"].get<std::uint64_t>()) + ", gamma " +
                                            format_double(p["gamma"].get<double>());
                body << "<figure data-config-hash=\"" << h_prior << "\">"
                     << img("../priors/" + p["image"].get<std::string>(), caption) << "<figcaption>"
                     << html_escape(caption) << "</figcaption></figure>";
            }
            body << "</td></tr>\n";
        }
    }

    std::ostringstream html;
    html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << html_escape(cfg.evaluate.title)
         << "</title>\n<style>\n"
         << "body{font-family:sans-serif;margin:1.5em}table{border-collapse:collapse}"
         << "td,th{border:1px solid #ddd;padding:4px;vertical-align:top}"
         << "img{width:64px;height:64px;image-rendering:pixelated}"
         << "figure{display:inline-block;margin:2px;text-align:center}figcaption{font-size:9px;max-width:72px}"
         << ".gap{color:#b00;font-style:italic}.inactive{color:#888}.plot{display:inline-block;margin:4px}"
         << ".legend i{font-size:11px}code{font-size:11px}\n"
         << "</style></head><body>\n<h1>" << html_escape(cfg.evaluate.title) << "</h1>\n";
    html << "<h2>Provenance</h2>\n<table><tr><th>stage</th><th>config hash</th></tr>\n";
    for (auto [name, h] : {std::pair<std::string, std::string>{"analyze", h_analyze}, {"prior", h_prior},
                           {"visualize", h_viz}, {"evaluate", cfg.hash()}})
        html << "<tr><td>" << name << "</td><td><code>" << (h.empty() ? "(missing)" : h) << "</code></td></tr>\n";
    html << "</table>\n";
    html << "<p>" << out.warnings.size() << " warning(s)</p>\n";
    if (!out.warnings.empty()) {
        html << "<ul>";
        for (const auto& w : out.warnings) html << "<li class=\"gap\">" << html_escape(w) << "</li>";
        html << "</ul>\n";
    }
    html << "<h2>Features</h2>\n<table>\n<tr><th>feature</th><th>peak t</th><th>optimized</th>"
         << "<th>dataset examples</th><th>steered samples</th></tr>\n"
         << body.str() << "</table>\n<h2>Activity and maximum activation</h2>\n"
         << feature_plots.str() << "</body></html>\n";

    out.html = dir / "index.html";
    write_text(out.html, html.str());

    json manifest = {{"stage", "evaluate"},
                     {"config_hash", cfg.hash()},
                     {"config", cfg.to_json()},
                     {"rows", out.rows},
                     {"warnings", out.warnings},
                     {"upstream_config_hashes", {{"analyze", h_analyze}, {"prior", h_prior}, {"visualize", h_viz}}}};
    std::vector<fs::path> inputs;
    for (const fs::path& p : {profiles_dir(cfg) / "manifest.json", priors_dir(cfg) / "manifest.json",
                              visualizations_dir(cfg) / "manifest.json"})
        if (fs::exists(p)) inputs.push_back(p);
    manifest["inputs"] = hash_outputs(root, inputs);
    manifest["outputs"] = hash_outputs(root, {out.html});
    out.manifest = dir / "manifest.json";
    write_json(out.manifest, manifest);
    return out;
}

} // namespace lvo
