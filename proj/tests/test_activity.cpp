#include "lvo/activity.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace lvo;

namespace {

// Leftmost index of every plateau that rises from its left neighbour and
// falls to its right neighbour, endpoints excluded.
std::vector<int> candidates_reference(const std::vector<double>& v) {
    std::vector<int> out;
    const int n = static_cast<int>(v.size());
    for (int t = 1; t + 1 < n; ++t) {
        if (!(v[t - 1] < v[t])) continue;
        int j = t;
        while (j + 1 < n && v[j + 1] == v[t]) ++j;
        if (j + 1 < n && v[j + 1] < v[t]) out.push_back(t);
    }
    return out;
}

// Exhaustive search over separation-feasible subsets of size <= p. Subsets are
// compared as sequences ordered by (activity desc, t asc); the larger sequence
// in that lexicographic order wins, and a strict extension beats its prefix.
std::vector<int> peaks_reference(const std::vector<double>& v, int p, int sep) {
    const std::vector<int> cand = candidates_reference(v);
    auto before = [&](int a, int b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
    auto better = [&](std::vector<int> a, std::vector<int> b) {
        std::sort(a.begin(), a.end(), before);
        std::sort(b.begin(), b.end(), before);
        for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
            if (a[i] == b[i]) continue;
            return before(a[i], b[i]);
        }
        return a.size() > b.size();
    };
    auto feasible = [&](const std::vector<int>& s) {
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = i + 1; j < s.size(); ++j)
                if (std::abs(s[i] - s[j]) < sep) return false;
        return true;
    };
    std::vector<int> best;
    const int n = static_cast<int>(cand.size());
    std::vector<int> cur;
    // all subsets of size 1..p by nested enumeration
    for (int a = 0; a < n; ++a) {
        cur = {cand[a]};
        if (better(cur, best)) best = cur;
        if (p < 2) continue;
        for (int b = a + 1; b < n; ++b) {
            cur = {cand[a], cand[b]};
            if (!feasible(cur)) continue;
            if (better(cur, best)) best = cur;
            if (p < 3) continue;
            for (int c = b + 1; c < n; ++c) {
                cur = {cand[a], cand[b], cand[c]};
                if (feasible(cur) && better(cur, best)) best = cur;
            }
        }
    }
    std::sort(best.begin(), best.end(), before);
    return best;
}

TopKRecord rec(int t, int id, std::vector<int> f) { return {t, id, std::move(f)}; }

} // namespace

TEST_CASE("record_topk worked examples") {
    const std::vector<double> a = {5, 3, 9, 1};
    CHECK(record_topk(a, 2) == std::vector<int>{2, 0});
    CHECK(record_topk(a, 4) == std::vector<int>{2, 0, 1, 3});
    CHECK(record_topk(a, 10) == std::vector<int>{2, 0, 1, 3});
    const std::vector<double> tie = {1, 1, 0};
    CHECK(record_topk(tie, 1) == std::vector<int>{0});
    CHECK(record_topk(tie, 2) == std::vector<int>{0, 1});
}

TEST_CASE("build_profiles counts per time-step records") {
    const auto single = build_profiles({rec(3, 0, {2})}, 4, 6);
    REQUIRE(single.size() == 4);
    for (int f = 0; f < 4; ++f)
        for (int t = 0; t < 6; ++t) CHECK(single[f].frequency[t] == (f == 2 && t == 3 ? 1.0 : 0.0));
    CHECK(single[2].samples[3] == 1);
    CHECK(single[2].samples[0] == 0);

    std::vector<TopKRecord> records;
    for (int s = 0; s < 10; ++s) records.push_back(rec(5, s, {s < 3 ? 1 : 0}));
    const auto ten = build_profiles(records, 2, 8);
    CHECK(ten[1].frequency[5] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(ten[0].frequency[5] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(ten[1].samples[5] == 10);
}

TEST_CASE("build_profiles is order independent and sums to k") {
    Rng rng(1);
    const int F = 12, T = 9, k = 4;
    std::vector<TopKRecord> records;
    for (int s = 0; s < 30; ++s)
        for (int t = 0; t < T; ++t) {
            std::vector<double> acts(F);
            for (double& a : acts) a = rng.normal();
            records.push_back(rec(t, s, record_topk(acts, k)));
        }
    const auto base = build_profiles(records, F, T);
    std::shuffle(records.begin(), records.end(), rng.engine());
    const auto shuffled = build_profiles(records, F, T);
    for (int f = 0; f < F; ++f) {
        CHECK(base[f].frequency == shuffled[f].frequency);
        CHECK(base[f].samples == shuffled[f].samples);
    }
    for (int t = 0; t < T; ++t) {
        double total = 0.0;
        for (int f = 0; f < F; ++f) {
            CHECK(base[f].frequency[t] >= 0.0);
            CHECK(base[f].frequency[t] <= 1.0);
            total += base[f].frequency[t] * base[f].samples[t];
        }
        CHECK(total == doctest::Approx(double(k) * base[0].samples[t]).epsilon(1e-12));
    }
}

TEST_CASE("select_peaks worked examples") {
    std::vector<double> zero(400, 0.0);
    CHECK(select_peaks(zero, 3, 100).empty());

    std::vector<double> spike(400, 0.0);
    spike[300] = 0.7;
    CHECK(select_peaks(spike, 3, 100) == std::vector<int>{300});

    std::vector<double> two(400, 0.0);
    two[100] = 0.5;
    two[150] = 0.4;
    CHECK(select_peaks(two, 3, 100) == std::vector<int>{100});
    CHECK(select_peaks(two, 3, 50) == std::vector<int>{100, 150});
    CHECK(select_peaks(two, 1, 10) == std::vector<int>{100});
    CHECK_THROWS_AS(select_peaks(two, 3, 0), std::invalid_argument);

    // endpoints never count; a plateau reports its leftmost index
    const std::vector<double> edges = {0.9, 0.1, 0.4, 0.4, 0.4, 0.2, 0.3, 0.3, 0.8};
    CHECK(peak_candidates(edges) == std::vector<int>{2});
    const std::vector<double> shelf = {0.1, 0.5, 0.5, 0.6, 0.2};
    CHECK(peak_candidates(shelf) == std::vector<int>{3});
}

TEST_CASE("select_peaks equals the exhaustive reference on random profiles") {
    std::mt19937_64 gen(2024);
    std::uniform_int_distribution<int> level(0, 12);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> v(200);
        for (double& x : v) x = level(gen) / 12.0;
        const std::vector<int> got = select_peaks(v, 3, 20);
        const std::vector<int> ref = peaks_reference(v, 3, 20);
        mismatches += got != ref;

        CHECK(got.size() <= 3);
        const auto cand = candidates_reference(v);
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::find(cand.begin(), cand.end(), got[i]) != cand.end());
            if (i > 0) CHECK(v[got[i - 1]] >= v[got[i]]);
            for (std::size_t j = i + 1; j < got.size(); ++j) CHECK(std::abs(got[i] - got[j]) >= 20);
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("active_timesteps lists the nonzero entries") {
    CHECK(active_timesteps(std::vector<double>(10, 0.0)).empty());
    const auto all = active_timesteps(std::vector<double>(10, 0.2));
    CHECK(all.size() == 10);
    CHECK(all.front() == 0);
    CHECK(all.back() == 9);
    std::vector<double> one(10, 0.0);
    one[4] = 0.01;
    CHECK(active_timesteps(one) == std::vector<int>{4});
}

TEST_CASE("max_activation_profile dominates every sample") {
    ActivationSweep single(1, 5, 3);
    for (int t = 0; t < 5; ++t) single.row(0, t)[1] = t * 0.5 - 1.0;
    CHECK(max_activation_profile(1, single) == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});

    Rng rng(3);
    ActivationSweep sweep(8, 6, 4);
    for (int s = 0; s < 8; ++s)
        for (int t = 0; t < 6; ++t)
            for (double& x : sweep.row(s, t)) x = rng.normal();
    const auto mx = max_activation_profile(2, sweep);
    for (int s = 0; s < 8; ++s)
        for (int t = 0; t < 6; ++t) CHECK(mx[t] >= sweep.at(s, t, 2));
}

TEST_CASE("activity and max activation can peak at different time-steps") {
    // feature 0 is top-1 in most samples at t = 1, but one sample fires hugely at t = 3
    ActivationSweep sweep(10, 5, 2);
    for (int s = 0; s < 10; ++s)
        for (int t = 0; t < 5; ++t) {
            sweep.row(s, t)[0] = t == 1 ? 1.0 : 0.1;
            sweep.row(s, t)[1] = 0.5;
        }
    sweep.row(7, 3)[0] = 50.0;
    const auto profiles = build_profiles(sweep.records(1), 2, 5);
    const auto& act = profiles[0].frequency;
    const auto mx = max_activation_profile(0, sweep);
    const auto arg = [](const std::vector<double>& v) { return int(std::max_element(v.begin(), v.end()) - v.begin()); };
    CHECK(arg(act) == 1);
    CHECK(arg(mx) == 3);
    CHECK(act[3] == doctest::Approx(0.1));
}

TEST_CASE("sweep records and ranked examples") {
    ActivationSweep sweep(3, 2, 3);
    sweep.sample_ids() = {10, 11, 12};
    const double vals[3][2][3] = {{{1, 2, 3}, {0, 0, 1}}, {{3, 2, 1}, {5, 0, 0}}, {{2, 2, 2}, {5, 1, 0}}};
    for (int s = 0; s < 3; ++s)
        for (int t = 0; t < 2; ++t)
            for (int f = 0; f < 3; ++f) sweep.row(s, t)[f] = vals[s][t][f];
    const auto records = sweep.records(2);
    REQUIRE(records.size() == 6);
    CHECK(records[0].sample_id == 10);
    CHECK(records[0].t == 0);
    CHECK(records[0].features == std::vector<int>{2, 1});
    CHECK(records[1].t == 1);
    CHECK(records[5].sample_id == 12);

    const auto ex = top_examples(sweep, 0, 1, 5);
    REQUIRE(ex.size() == 3);
    CHECK(ex[0].sample_id == 11);
    CHECK(ex[1].sample_id == 12);
    CHECK(ex[0].activation == 5.0);
    CHECK(ex[2].sample_id == 10);
    CHECK(top_examples(sweep, 0, 1, 1).size() == 1);
}
