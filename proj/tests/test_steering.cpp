#include "lvo/steering.hpp"
#include "lvo/toy_model.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace lvo;

namespace {

const ToyLdm& toy() {
    static const ToyLdm m = load_toy(lvo::testing::toy_model_dir());
    return m;
}

const SparseAutoencoder& toy_sae() {
    static const SparseAutoencoder s = SparseAutoencoder::load(lvo::testing::toy_sae_dir());
    return s;
}

SteeringSpec spec_with(FeatureTarget target, double gamma, std::vector<double> activity, std::vector<double> mx,
                       TimestepMode mode = TimestepMode::ActiveTimesteps) {
    SteeringSpec s;
    s.target = std::move(target);
    s.gamma = gamma;
    s.mode = mode;
    s.activity = std::move(activity);
    s.max_activation = std::move(mx);
    return s;
}

// Per-t dataset maximum of the target over a few schedule-noised encodings.
std::vector<double> dataset_max(const FeatureTarget& target, const SparseAutoencoder* sae) {
    const ToyLdm& m = toy();
    const ShapesDataset data(8, 77);
    std::vector<double> mx(m.scheduler.num_steps, 0.0);
    Rng rng(5);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Sample s = data.get(i);
        const LatentGrid z = m.vae.encode(s.image);
        for (int t = 0; t < m.scheduler.num_steps; ++t) {
            const LatentGrid zt = inject_schedule_noise(z, t, m.scheduler, rng);
            const auto h = forward_with_hook(m.denoiser, zt, t, Conditioning::label(s.class_label), target.layer);
            mx[t] = std::max(mx[t], target_activation(h.activations.value(), target, sae));
        }
    }
    return mx;
}

} // namespace

TEST_CASE("steering_coefficient follows gamma times the table") {
    const auto target = FeatureTarget::raw("up.attn", 3);
    const SteeringSpec s = spec_with(target, 50.0, {0.0, 0.2, 1.0}, {4.0, 4.0, 0.5});
    CHECK(steering_coefficient(s, 0) == 0.0);
    CHECK(steering_coefficient(s, 1) == 200.0);
    CHECK(steering_coefficient(s, 2) == 25.0);

    SteeringSpec all = s;
    all.mode = TimestepMode::AllTimesteps;
    CHECK(steering_coefficient(all, 0) == 200.0);

    SteeringSpec off = s;
    off.gamma = 0.0;
    for (int t = 0; t < 3; ++t) CHECK(steering_coefficient(off, t) == 0.0);

    SteeringSpec twice = all;
    twice.gamma = 100.0;
    for (int t = 0; t < 3; ++t) CHECK(steering_coefficient(twice, t) == 2.0 * steering_coefficient(all, t));

    CHECK_THROWS_AS(steering_coefficient(s, 3), std::out_of_range);
    CHECK_THROWS_AS(steering_coefficient(s, -1), std::out_of_range);
}

TEST_CASE("default steering strengths") {
    CHECK(SteeringSpec::default_gamma(FeatureTarget::raw("up.attn", 0)) == 50.0);
    CHECK(SteeringSpec::default_gamma(FeatureTarget::sae("up.attn", 0)) == 500.0);
}

TEST_CASE("apply_steering on a raw channel") {
    Rng rng(1);
    const Tensor f = lvo::testing::random_tensor({64, 32}, rng);
    const auto target = FeatureTarget::raw("up.attn", 5);
    CHECK(apply_steering(f, target, 0.0, nullptr) == f);
    const Tensor g = apply_steering(f, target, 2.0, nullptr);
    for (int i = 0; i < 64; ++i)
        for (int c = 0; c < 32; ++c) CHECK(g.at(i, c) - f.at(i, c) == doctest::Approx(c == 5 ? 2.0 : 0.0).epsilon(1e-12));
    CHECK(max_abs_diff(apply_steering(g, target, -2.0, nullptr), f) < 1e-6);
    CHECK_THROWS_AS(apply_steering(f, FeatureTarget::raw("up.attn", 32), 1.0, nullptr), std::out_of_range);
    CHECK_THROWS_AS(apply_steering(Tensor({64}), target, 1.0, nullptr), std::invalid_argument);
}

TEST_CASE("apply_steering on an SAE feature adds the scaled direction") {
    const SparseAutoencoder sae(32, 40, 4, 3);
    Rng rng(2);
    const Tensor f = lvo::testing::random_tensor({64, 32}, rng);
    const auto target = FeatureTarget::sae("up.attn", 11);
    CHECK(apply_steering(f, target, 0.0, &sae) == f);
    const double lambda = 3.5;
    const Tensor g = apply_steering(f, target, lambda, &sae);
    const Tensor& dec = sae.decoder_weight().value();
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 32; ++j) CHECK(g.at(i, j) == doctest::Approx(f.at(i, j) + lambda * dec.at(11, j)).epsilon(1e-12));
    CHECK(max_abs_diff(apply_steering(g, target, -lambda, &sae), f) < 1e-6);
    CHECK_THROWS_AS(apply_steering(f, target, 1.0, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(apply_steering(Tensor({64, 31}), target, 1.0, &sae), std::invalid_argument);
}

TEST_CASE("feature targets validate against the model and SAE") {
    CHECK(FeatureTarget::raw("up.attn", 7).label() == "raw:up.attn:7");
    CHECK(FeatureTarget::sae("up.attn", 9).label() == "sae:up.attn:9");
    CHECK_NOTHROW(FeatureTarget::raw("up.attn", 31).validate(toy().denoiser, nullptr));
    CHECK_THROWS_AS(FeatureTarget::raw("up.attn", 32).validate(toy().denoiser, nullptr), std::out_of_range);
    CHECK_THROWS_AS(FeatureTarget::raw("nope", 0).validate(toy().denoiser, nullptr), std::invalid_argument);
    CHECK_NOTHROW(FeatureTarget::sae("up.attn", 0).validate(toy().denoiser, &toy_sae()));
    CHECK_THROWS_AS(FeatureTarget::sae("up.attn", toy_sae().dict_size()).validate(toy().denoiser, &toy_sae()),
                    std::out_of_range);
    CHECK_THROWS_AS(FeatureTarget::sae("up.attn", 0).validate(toy().denoiser, nullptr), std::invalid_argument);
}

TEST_CASE("target_activation aggregates over tokens") {
    Rng rng(3);
    const Tensor f = lvo::testing::random_tensor({10, 6}, rng);
    double mx = -1e300, mean = 0.0;
    for (int i = 0; i < 10; ++i) {
        mx = std::max(mx, f.at(i, 2));
        mean += f.at(i, 2) / 10;
    }
    CHECK(target_activation(f, FeatureTarget::raw("x", 2), nullptr) == mx);
    CHECK(target_activation(f, FeatureTarget::raw("x", 2), nullptr, Aggregation::Mean) == doctest::Approx(mean));
    const SparseAutoencoder sae(6, 12, 3, 4);
    CHECK(target_activation(f, FeatureTarget::sae("x", 5), &sae) == sae.feature_activation(f, 5));
    CHECK(aggregation_from_string(to_string(Aggregation::Mean)) == Aggregation::Mean);
    CHECK(timestep_mode_from_string("all_timesteps") == TimestepMode::AllTimesteps);
    CHECK_THROWS_AS(timestep_mode_from_string("some"), std::invalid_argument);
}

TEST_CASE("zero steering reproduces the unsteered sample") {
    const ToyLdm& m = toy();
    const int T = m.scheduler.num_steps;
    const auto target = FeatureTarget::sae("up.attn", 4);
    for (std::uint64_t seed : {3u, 4u}) {
        const SampleResult plain = sample(m.denoiser, m.vae, m.scheduler, {}, seed);
        const Prior zero_gamma = generate_prior(m.denoiser, m.vae, m.scheduler,
                                                spec_with(target, 0.0, std::vector<double>(T, 1.0),
                                                          std::vector<double>(T, 2.0)),
                                                {}, seed, &toy_sae());
        CHECK(zero_gamma.image == plain.image);
        CHECK(zero_gamma.latent == m.vae.encode(plain.image));

        // active mode with no activity anywhere: every step passes through untouched
        const Prior inactive = generate_prior(m.denoiser, m.vae, m.scheduler,
                                              spec_with(target, 500.0, std::vector<double>(T, 0.0),
                                                        std::vector<double>(T, 2.0)),
                                              {}, seed, &toy_sae());
        CHECK(inactive.image == plain.image);
    }
}

TEST_CASE("zero-activity time-steps are bit-unchanged inside the loop") {
    const ToyLdm& m = toy();
    const int T = m.scheduler.num_steps;
    std::vector<double> activity(T, 0.0);
    for (int t = 20; t < 40; ++t) activity[t] = 0.3;
    const SteeringSpec spec = spec_with(FeatureTarget::raw("up.attn", 6), 50.0, activity, std::vector<double>(T, 1.5));
    const SteeringHook inner = make_steering_hook(spec, nullptr);
    int unchanged = 0, changed = 0, wrong = 0;
    const SteeringHook spy = [&](const Tensor& a, int t) {
        Tensor out = inner(a, t);
        const bool same = out == a;
        if (activity[t] == 0.0) same ? ++unchanged : ++wrong;
        else same ? ++wrong : ++changed;
        return out;
    };
    sample(m.denoiser, m.vae, m.scheduler, {}, 9, "up.attn", &spy);
    CHECK(unchanged == T - 20);
    CHECK(changed == 20);
    CHECK(wrong == 0);
}

TEST_CASE("steering raises the target during sampling") {
    const ToyLdm& m = toy();
    const int T = m.scheduler.num_steps;
    for (const FeatureTarget& target : {FeatureTarget::raw("up.attn", 2), FeatureTarget::sae("up.attn", 1)}) {
        const SparseAutoencoder* sae = target.is_sae() ? &toy_sae() : nullptr;
        const SteeringSpec spec =
            spec_with(target, SteeringSpec::default_gamma(target), std::vector<double>(T, 1.0), dataset_max(target, sae));
        const SteeringHook steer = make_steering_hook(spec, sae);
        double steered = 0.0, plain = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const SteeringHook record_steered = [&](const Tensor& a, int t) {
                Tensor out = steer(a, t);
                steered += target_activation(out, target, sae);
                return out;
            };
            const SteeringHook record_plain = [&](const Tensor& a, int) {
                plain += target_activation(a, target, sae);
                return a;
            };
            sample(m.denoiser, m.vae, m.scheduler, {}, seed, target.layer, &record_steered);
            sample(m.denoiser, m.vae, m.scheduler, {}, seed, target.layer, &record_plain);
        }
        CHECK(steered >= plain);
    }
}

TEST_CASE("different seeds give distinct priors") {
    const ToyLdm& m = toy();
    const int T = m.scheduler.num_steps;
    std::vector<double> activity(T, 0.0);
    for (int t = 30; t < 60; ++t) activity[t] = 0.1;
    const SteeringSpec spec = spec_with(FeatureTarget::sae("up.attn", 2), 500.0, activity, std::vector<double>(T, 0.5));
    std::vector<Prior> priors;
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        priors.push_back(generate_prior(m.denoiser, m.vae, m.scheduler, spec, {}, seed, &toy_sae()));
    for (std::size_t i = 0; i < priors.size(); ++i) {
        CHECK(priors[i].latent.tensor().all_finite());
        for (std::size_t j = i + 1; j < priors.size(); ++j) CHECK(l2_distance(priors[i].image, priors[j].image) > 0.0);
    }
    const Prior again = generate_prior(m.denoiser, m.vae, m.scheduler, spec, {}, 3, &toy_sae());
    CHECK(again.latent == priors[3].latent);

    SteeringSpec negative = spec;
    negative.gamma = -1.0;
    CHECK_THROWS_AS(generate_prior(m.denoiser, m.vae, m.scheduler, negative, {}, 0, &toy_sae()), std::invalid_argument);
}
