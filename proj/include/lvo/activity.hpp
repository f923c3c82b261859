#pragma once

#include "lvo/tensor.hpp"

#include <span>
#include <vector>

namespace lvo {

struct TopKRecord {
    int t = 0;
    int sample_id = 0;
    std::vector<int> features;  // descending activation
};

struct ActivityProfile {
    int feature = 0;
    std::vector<double> frequency;  // per time-step, in [0, 1]
    std::vector<int> samples;       // records observed per time-step
};

struct PeakSet {
    int feature = 0;
    std::vector<int> timesteps;  // descending activity
};

/// Ids of the k largest activations, largest first; ties go to the lower id.
std::vector<int> record_topk(std::span<const double> activations, int k);

/// One profile per feature in [0, num_features). Time-steps without records keep frequency 0.
std::vector<ActivityProfile> build_profiles(const std::vector<TopKRecord>& records, int num_features,
                                            int num_steps);

/// Strict interior local maxima; a plateau is reported once at its leftmost index.
std::vector<int> peak_candidates(std::span<const double> profile);

/// Greedy pick by (activity desc, t asc) subject to pairwise separation >= min_separation, at most p peaks.
std::vector<int> select_peaks(std::span<const double> profile, int p, int min_separation);
PeakSet select_peaks(const ActivityProfile& profile, int p, int min_separation);

/// { t : profile[t] > 0 }
std::vector<int> active_timesteps(std::span<const double> profile);

/// Aggregated activation of every feature for every (sample, time-step) of a dataset sweep.
class ActivationSweep {
public:
    ActivationSweep() = default;
    ActivationSweep(int num_samples, int num_steps, int num_features);

    int num_samples() const { return samples_; }
    int num_steps() const { return steps_; }
    int num_features() const { return features_; }

    std::span<double> row(int sample, int t);
    std::span<const double> row(int sample, int t) const;
    double at(int sample, int t, int feature) const { return row(sample, t)[feature]; }

    std::vector<int>& sample_ids() { return ids_; }
    const std::vector<int>& sample_ids() const { return ids_; }

    /// One record per (sample, t), ordered by sample then t.
    std::vector<TopKRecord> records(int k) const;

private:
    int samples_ = 0;
    int steps_ = 0;
    int features_ = 0;
    std::vector<double> values_;
    std::vector<int> ids_;
};

/// Per time-step maximum over samples of one feature's activation.
std::vector<double> max_activation_profile(int feature, const ActivationSweep& sweep);

struct RankedExample {
    int sample_id = 0;
    double activation = 0.0;
};

/// The n samples with the largest activation of `feature` at time-step t (ties to the lower sample id).
std::vector<RankedExample> top_examples(const ActivationSweep& sweep, int feature, int t, int n);

} // namespace lvo
