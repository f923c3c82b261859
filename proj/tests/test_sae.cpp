#include "lvo/sae.hpp"

#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace lvo;

namespace {

// Writes fixed weights into a fresh SAE (the handles share storage with the object).
void set_weights(const SparseAutoencoder& sae, const Tensor& w_enc, const Tensor& b_enc, const Tensor& b_dec) {
    ag::Var we = sae.encoder_weight(), be = sae.encoder_bias(), bd = sae.decoder_bias();
    we.mutable_value() = w_enc;
    be.mutable_value() = b_enc;
    bd.mutable_value() = b_dec;
}

Tensor identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
}

// Independent top-k encode: dense pre-activations, stable sort, mask, clamp.
Tensor encode_reference(const SparseAutoencoder& sae, const Tensor& f) {
    const Tensor& we = sae.encoder_weight().value();
    const Tensor& be = sae.encoder_bias().value();
    const Tensor& bd = sae.decoder_bias().value();
    const int n = f.dim(0), m = sae.dict_size(), d = sae.input_dim();
    Tensor out({n, m});
    for (int t = 0; t < n; ++t) {
        std::vector<double> pre(m);
        for (int i = 0; i < m; ++i) {
            double acc = be[i];
            for (int j = 0; j < d; ++j) acc += we.at(i, j) * (f.at(t, j) - bd[j]);
            pre[i] = acc;
        }
        std::vector<int> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return pre[a] > pre[b]; });
        for (int r = 0; r < sae.k(); ++r) out.at(t, order[r]) = std::max(0.0, pre[order[r]]);
    }
    return out;
}

double row_norm(const Tensor& w, int r) {
    double s = 0.0;
    for (int j = 0; j < w.dim(1); ++j) s += w.at(r, j) * w.at(r, j);
    return std::sqrt(s);
}

} // namespace

TEST_CASE("encode keeps the k largest pre-activations") {
    SparseAutoencoder sae(4, 4, 2, 1);
    set_weights(sae, identity(4), Tensor({4}), Tensor({4}));
    CHECK(sae.encode(row({3, -1, 2, 5})) == row({3, 0, 0, 5}));
    CHECK(sae.encode(row({2, 2, 2, 1})) == row({2, 2, 0, 0}));
    CHECK(sae.encode(row({-1, -2, -3, -4})) == row({0, 0, 0, 0}));
    CHECK(sae.encode(Tensor({3, 4})) == Tensor({3, 4}));
    CHECK_THROWS_AS(sae.encode(Tensor({2, 5})), std::invalid_argument);
}

TEST_CASE("encode subtracts the decoder bias before the encoder") {
    SparseAutoencoder sae(2, 2, 1, 1);
    set_weights(sae, identity(2), Tensor({2}, {0.5, 0.0}), Tensor({2}, {1.0, -1.0}));
    // pre = (3 - 1 + 0.5, 1 + 1) = (2.5, 2)
    CHECK(sae.encode(row({3, 1})) == row({2.5, 0}));
}

TEST_CASE("decode is affine in the codes") {
    SparseAutoencoder sae(6, 10, 3, 2);
    Rng rng(3);
    set_weights(sae, sae.encoder_weight().value(), Tensor({10}), lvo::testing::random_tensor({6}, rng));
    const Tensor bias = sae.decoder_bias().value();

    const Tensor zero_out = sae.decode(Tensor({4, 10}));
    for (int t = 0; t < 4; ++t)
        for (int j = 0; j < 6; ++j) CHECK(zero_out.at(t, j) == bias[j]);

    Tensor onehot({1, 10});
    onehot.at(0, 7) = 2.5;
    const Tensor one = sae.decode(onehot);
    const auto d7 = sae.direction(7);
    for (int j = 0; j < 6; ++j) CHECK(one.at(0, j) == doctest::Approx(bias[j] + 2.5 * d7[j]).epsilon(1e-14));

    const Tensor a = lvo::testing::random_tensor({5, 10}, rng), b = lvo::testing::random_tensor({5, 10}, rng);
    Tensor rhs = sae.decode(a) + sae.decode(b);
    for (int t = 0; t < 5; ++t)
        for (int j = 0; j < 6; ++j) rhs.at(t, j) -= bias[j];
    CHECK(max_abs_diff(sae.decode(a + b), rhs) < 1e-6);
}

TEST_CASE("encode invariants hold on random inputs") {
    SparseAutoencoder sae(8, 24, 5, 4);
    Rng rng(5);
    set_weights(sae, lvo::testing::random_tensor({24, 8}, rng), lvo::testing::random_tensor({24}, rng, 0.3),
                lvo::testing::random_tensor({8}, rng, 0.3));
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor f = lvo::testing::random_tensor({7, 8}, rng, 2.0);
        const Tensor codes = sae.encode(f);
        CHECK(max_abs_diff(codes, encode_reference(sae, f)) < 1e-12);
        for (int t = 0; t < 7; ++t) {
            int nnz = 0;
            for (int i = 0; i < 24; ++i) {
                CHECK(codes.at(t, i) >= 0.0);
                nnz += codes.at(t, i) != 0.0;
            }
            CHECK(nnz <= 5);
        }
    }
}

TEST_CASE("feature_activation is the per-feature max over tokens") {
    SparseAutoencoder sae(8, 24, 5, 6);
    Rng rng(7);
    set_weights(sae, lvo::testing::random_tensor({24, 8}, rng), lvo::testing::random_tensor({24}, rng, 0.3),
                lvo::testing::random_tensor({8}, rng, 0.3));
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor f = lvo::testing::random_tensor({9, 8}, rng);
        const Tensor ref = encode_reference(sae, f);
        const std::vector<double> all = sae.feature_activations(f);
        for (int i = 0; i < 24; ++i) {
            double best = 0.0;
            for (int t = 0; t < 9; ++t) best = std::max(best, ref.at(t, i));
            CHECK(sae.feature_activation(f, i) == doctest::Approx(best).epsilon(1e-12));
            CHECK(all[i] == sae.feature_activation(f, i));
        }
    }
    const Tensor single = lvo::testing::random_tensor({1, 8}, rng);
    const Tensor codes = sae.encode(single);
    for (int i = 0; i < 24; ++i) CHECK(sae.feature_activation(single, i) == codes.at(0, i));
    CHECK_THROWS_AS(sae.feature_activation(single, 24), std::out_of_range);
    CHECK_THROWS_AS(sae.feature_activation(single, -1), std::out_of_range);
}

TEST_CASE("an absent feature reads as zero") {
    SparseAutoencoder sae(4, 4, 1, 1);
    set_weights(sae, identity(4), Tensor({4}), Tensor({4}));
    CHECK(sae.feature_activation(row({1, 9, 2, 3}), 0) == 0.0);
    CHECK(sae.feature_activation(row({1, 9, 2, 3}), 1) == 9.0);
}

TEST_CASE("autograd encode agrees with the tensor path") {
    SparseAutoencoder sae(8, 16, 4, 8);
    Rng rng(9);
    const Tensor f = lvo::testing::random_tensor({6, 8}, rng);
    CHECK(sae.encode(ag::constant(f)).value() == sae.encode(f));
}

TEST_CASE("construction validates sizes and normalizes the decoder") {
    CHECK_THROWS_AS(SparseAutoencoder(4, 8, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(SparseAutoencoder(4, 8, 9, 1), std::invalid_argument);
    CHECK_THROWS_AS(SparseAutoencoder(0, 8, 1, 1), std::invalid_argument);
    const SparseAutoencoder sae(12, 40, 6, 10);
    for (int r = 0; r < 40; ++r) CHECK(std::abs(row_norm(sae.decoder_weight().value(), r) - 1.0) < 1e-6);
}

TEST_CASE("toy training lowers reconstruction error and keeps unit directions") {
    Rng rng(12);
    // tokens near a few fixed directions plus noise
    const Tensor basis = lvo::testing::random_tensor({6, 10}, rng);
    std::vector<Tensor> corpus;
    for (int s = 0; s < 40; ++s) {
        Tensor f({16, 10});
        for (int t = 0; t < 16; ++t) {
            const int a = rng.uniform_int(0, 5), b = rng.uniform_int(0, 5);
            const double ca = rng.uniform(0.5, 2.0), cb = rng.uniform(0.0, 1.0);
            for (int j = 0; j < 10; ++j) f.at(t, j) = 0.5 + ca * basis.at(a, j) + cb * basis.at(b, j) + 0.05 * rng.normal();
        }
        corpus.push_back(f);
    }
    SaeTrainingOptions opts;
    opts.epochs = 15;
    opts.batch_tokens = 64;
    SaeTrainingLog log;
    const SparseAutoencoder sae = train_toy_sae(corpus, 24, 3, opts, &log);
    CHECK(log.epoch_loss.size() == 15);
    CHECK(log.final_loss < log.initial_loss);
    CHECK(log.epoch_loss.back() < log.epoch_loss.front());
    CHECK(reconstruction_loss(sae, corpus) == doctest::Approx(log.final_loss).epsilon(1e-12));
    for (int r = 0; r < 24; ++r) CHECK(std::abs(row_norm(sae.decoder_weight().value(), r) - 1.0) < 1e-6);
    for (const Tensor& f : corpus) {
        const Tensor codes = sae.encode(f);
        for (int t = 0; t < codes.dim(0); ++t) {
            int nnz = 0;
            for (int i = 0; i < 24; ++i) nnz += codes.at(t, i) != 0.0;
            CHECK(nnz <= 3);
        }
    }
    CHECK_THROWS_AS(train_toy_sae({}, 24, 3, opts), std::invalid_argument);
}

TEST_CASE("SAE checkpoints round-trip") {
    SparseAutoencoder sae(8, 16, 4, 13);
    sae.set_layer("mid.conv");
    const auto dir = lvo::testing::scratch_dir("sae_roundtrip");
    sae.save(dir);
    const SparseAutoencoder back = SparseAutoencoder::load(dir);
    CHECK(back.layer() == "mid.conv");
    CHECK(back.dict_size() == 16);
    CHECK(back.k() == 4);
    Rng rng(14);
    const Tensor f = lvo::testing::random_tensor({5, 8}, rng);
    CHECK(back.encode(f) == sae.encode(f));
    CHECK_THROWS(SparseAutoencoder::load(dir / "missing"));
}

TEST_CASE("shipped SAE matches the hooked layer") {
    const SparseAutoencoder sae = SparseAutoencoder::load(lvo::testing::toy_sae_dir());
    CHECK(sae.layer() == "up.attn");
    CHECK(sae.input_dim() == 32);
    CHECK(sae.k() <= sae.dict_size());
    for (int r = 0; r < sae.dict_size(); ++r) CHECK(std::abs(row_norm(sae.decoder_weight().value(), r) - 1.0) < 1e-6);
}
