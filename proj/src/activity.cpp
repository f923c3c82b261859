#include "lvo/activity.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lvo {

std::vector<int> record_topk(std::span<const double> activations, int k) {
    if (k < 1) throw std::invalid_argument("record_topk: k must be >= 1");
    std::vector<int> ids(activations.size());
    std::iota(ids.begin(), ids.end(), 0);
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(), [&](int a, int b) {
        if (activations[a] != activations[b]) return activations[a] > activations[b];
        return a < b;
    });
    ids.resize(keep);
    return ids;
}

std::vector<ActivityProfile> build_profiles(const std::vector<TopKRecord>& records, int num_features,
                                            int num_steps) {
    if (num_features < 0 || num_steps < 1) throw std::invalid_argument("build_profiles: bad dimensions");
    std::vector<int> per_t(num_steps, 0);
    std::vector<std::vector<int>> hits(num_features, std::vector<int>(num_steps, 0));
    for (const TopKRecord& r : records) {
        if (r.t < 0 || r.t >= num_steps) throw std::out_of_range("build_profiles: record time-step out of range");
        ++per_t[r.t];
        for (int f : r.features) {
            if (f < 0 || f >= num_features) throw std::out_of_range("build_profiles: feature id out of range");
            ++hits[f][r.t];
        }
    }
    std::vector<ActivityProfile> out(num_features);
    for (int f = 0; f < num_features; ++f) {
        out[f].feature = f;
        out[f].samples = per_t;
        out[f].frequency.assign(num_steps, 0.0);
        for (int t = 0; t < num_steps; ++t)
            if (per_t[t] > 0) out[f].frequency[t] = static_cast<double>(hits[f][t]) / per_t[t];
    }
    return out;
}

std::vector<int> peak_candidates(std::span<const double> profile) {
    std::vector<int> out;
    const int n = static_cast<int>(profile.size());
    int i = 1;
    while (i < n - 1) {
        if (profile[i] > profile[i - 1]) {
            int j = i;
            while (j + 1 < n && profile[j + 1] == profile[i]) ++j;
            if (j + 1 < n && profile[j + 1] < profile[i]) out.push_back(i);
            i = j + 1;
        } else {
            ++i;
        }
    }
    return out;
}

std::vector<int> select_peaks(std::span<const double> profile, int p, int min_separation) {
    if (min_separation < 1) throw std::invalid_argument("select_peaks: min_separation must be >= 1");
    std::vector<int> cand = peak_candidates(profile);
    std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return profile[a] > profile[b]; });
    std::vector<int> chosen;
    for (int c : cand) {
        if (static_cast<int>(chosen.size()) >= p) break;
        const bool clear = std::all_of(chosen.begin(), chosen.end(),
                                       [&](int q) { return std::abs(q - c) >= min_separation; });
        if (clear) chosen.push_back(c);
    }
    return chosen;
}

PeakSet select_peaks(const ActivityProfile& profile, int p, int min_separation) {
    return {profile.feature, select_peaks(profile.frequency, p, min_separation)};
}

std::vector<int> active_timesteps(std::span<const double> profile) {
    std::vector<int> out;
    for (std::size_t t = 0; t < profile.size(); ++t)
        if (profile[t] > 0.0) out.push_back(static_cast<int>(t));
    return out;
}

ActivationSweep::ActivationSweep(int num_samples, int num_steps, int num_features)
    : samples_(num_samples), steps_(num_steps), features_(num_features),
      values_(static_cast<std::size_t>(num_samples) * num_steps * num_features, 0.0), ids_(num_samples) {
    if (num_samples < 0 || num_steps < 0 || num_features < 0)
        throw std::invalid_argument("ActivationSweep: negative dimension");
    std::iota(ids_.begin(), ids_.end(), 0);
}

std::span<double> ActivationSweep::row(int sample, int t) {
    return {values_.data() + (static_cast<std::size_t>(sample) * steps_ + t) * features_,
            static_cast<std::size_t>(features_)};
}

std::span<const double> ActivationSweep::row(int sample, int t) const {
    return {values_.data() + (static_cast<std::size_t>(sample) * steps_ + t) * features_,
            static_cast<std::size_t>(features_)};
}

std::vector<TopKRecord> ActivationSweep::records(int k) const {
    std::vector<TopKRecord> out;
    out.reserve(static_cast<std::size_t>(samples_) * steps_);
    for (int s = 0; s < samples_; ++s)
        for (int t = 0; t < steps_; ++t) out.push_back({t, ids_[s], record_topk(row(s, t), k)});
    return out;
}

std::vector<double> max_activation_profile(int feature, const ActivationSweep& sweep) {
    if (feature < 0 || feature >= sweep.num_features())
        throw std::out_of_range("max_activation_profile: feature " + std::to_string(feature) + " out of range");
    std::vector<double> out(sweep.num_steps(), 0.0);
    for (int t = 0; t < sweep.num_steps(); ++t) {
        for (int s = 0; s < sweep.num_samples(); ++s) {
            const double v = sweep.at(s, t, feature);
            out[t] = s == 0 ? v : std::max(out[t], v);
        }
    }
    return out;
}

std::vector<RankedExample> top_examples(const ActivationSweep& sweep, int feature, int t, int n) {
    std::vector<RankedExample> all;
    all.reserve(sweep.num_samples());
    for (int s = 0; s < sweep.num_samples(); ++s) all.push_back({sweep.sample_ids()[s], sweep.at(s, t, feature)});
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)), all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const RankedExample& a, const RankedExample& b) {
                          if (a.activation != b.activation) return a.activation > b.activation;
                          return a.sample_id < b.sample_id;
                      });
    all.resize(keep);
    return all;
}

} // namespace lvo
