#include "lvo/sae.hpp"

#include "lvo/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace lvo {

using json = nlohmann::json;

SparseAutoencoder::SparseAutoencoder(int input_dim, int dict_size, int k_sae, std::uint64_t seed)
    : input_dim_(input_dim), dict_size_(dict_size), k_(k_sae) {
    if (input_dim < 1 || dict_size < 1) throw std::invalid_argument("SAE dimensions must be positive");
    if (k_sae < 1 || k_sae > dict_size) throw std::invalid_argument("SAE k must satisfy 0 < k <= dict_size");
    Rng rng(seed);
    Tensor dec({dict_size, input_dim});
    for (double& v : dec.storage()) v = rng.normal();
    w_dec_ = ag::Var(std::move(dec));
    renormalize_decoder();
    // tied initialization: encoder rows start as the decoder directions
    w_enc_ = ag::Var(w_dec_.value());
    b_enc_ = ag::Var(Tensor({dict_size}));
    b_dec_ = ag::Var(Tensor({input_dim}));
}

void SparseAutoencoder::check_width(const std::vector<int>& shape) const {
    if (shape.size() != 2 || shape[1] != input_dim_)
        throw std::invalid_argument("SAE expects tokens x " + std::to_string(input_dim_) + " activations, got " +
                                    shape_string(shape));
}

ag::Var SparseAutoencoder::encode(const ag::Var& activations) const {
    check_width(activations.shape());
    const ag::Var centered = ag::add_row_bias(activations, ag::scale(b_dec_, -1.0));
    return ag::topk_relu_rows(ag::linear(centered, w_enc_, b_enc_), k_);
}

Tensor SparseAutoencoder::encode(const Tensor& activations) const { return encode(ag::constant(activations)).value(); }

Tensor SparseAutoencoder::decode(const Tensor& codes) const {
    if (codes.rank() != 2 || codes.dim(1) != dict_size_)
        throw std::invalid_argument("SAE decode expects tokens x " + std::to_string(dict_size_) + " codes");
    const int n = codes.dim(0);
    Tensor out({n, input_dim_});
    const Tensor& d = w_dec_.value();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < input_dim_; ++j) out.at(i, j) = b_dec_.value()[j];
        for (int f = 0; f < dict_size_; ++f) {
            const double a = codes.at(i, f);
            if (a == 0.0) continue;
            for (int j = 0; j < input_dim_; ++j) out.at(i, j) += a * d.at(f, j);
        }
    }
    return out;
}

double SparseAutoencoder::feature_activation(const Tensor& activations, int feature) const {
    if (feature < 0 || feature >= dict_size_)
        throw std::out_of_range("SAE feature " + std::to_string(feature) + " outside [0, " + std::to_string(dict_size_) +
                                ")");
    const Tensor codes = encode(activations);
    double best = 0.0;
    for (int i = 0; i < codes.dim(0); ++i) best = std::max(best, codes.at(i, feature));
    return best;
}

std::vector<double> SparseAutoencoder::feature_activations(const Tensor& activations) const {
    const Tensor codes = encode(activations);
    std::vector<double> out(dict_size_, 0.0);
    for (int i = 0; i < codes.dim(0); ++i)
        for (int f = 0; f < dict_size_; ++f) out[f] = std::max(out[f], codes.at(i, f));
    return out;
}

std::vector<double> SparseAutoencoder::direction(int feature) const {
    if (feature < 0 || feature >= dict_size_) throw std::out_of_range("SAE feature index out of range");
    const Tensor& d = w_dec_.value();
    return {d.data() + static_cast<std::size_t>(feature) * input_dim_,
            d.data() + static_cast<std::size_t>(feature + 1) * input_dim_};
}

void SparseAutoencoder::renormalize_decoder() {
    Tensor& d = w_dec_.mutable_value();
    for (int f = 0; f < dict_size_; ++f) {
        double n = 0.0;
        for (int j = 0; j < input_dim_; ++j) n += d.at(f, j) * d.at(f, j);
        n = std::sqrt(n);
        if (n == 0.0) {
            d.at(f, 0) = 1.0;
            continue;
        }
        for (int j = 0; j < input_dim_; ++j) d.at(f, j) /= n;
    }
}

void SparseAutoencoder::set_trainable(bool on) {
    for (ag::Var v : {w_enc_, b_enc_, w_dec_, b_dec_}) {
        v.set_requires_grad(on);
        v.zero_grad();
    }
}

void SparseAutoencoder::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_tensors(dir / "weights.bin", {{"encoder.weight", w_enc_.value()},
                                        {"encoder.bias", b_enc_.value()},
                                        {"decoder.weight", w_dec_.value()},
                                        {"decoder.bias", b_dec_.value()}});
    const json manifest = {{"format", "lvo-sae-manifest/1"},
                           {"layer", layer_},
                           {"input_dim", input_dim_},
                           {"dict_size", dict_size_},
                           {"k_sae", k_},
                           {"activation_rule", "topk_relu"},
                           {"weights", "weights.bin"}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write SAE manifest in " + dir.string());
    os << manifest.dump(2) << '\n';
}

SparseAutoencoder SparseAutoencoder::load(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("SAE checkpoint not found: " + (dir / "manifest.json").string());
    const json m = json::parse(is);
    if (m.value("activation_rule", "topk_relu") != "topk_relu")
        throw std::runtime_error("unsupported SAE activation rule " + m.value("activation_rule", std::string()));
    SparseAutoencoder sae(m.at("input_dim"), m.at("dict_size"), m.at("k_sae"), 0);
    sae.layer_ = m.value("layer", "");
    for (auto& [name, t] : load_tensors(dir / m.value("weights", "weights.bin"))) {
        ag::Var* slot = name == "encoder.weight" ? &sae.w_enc_
                      : name == "encoder.bias"   ? &sae.b_enc_
                      : name == "decoder.weight" ? &sae.w_dec_
                      : name == "decoder.bias"   ? &sae.b_dec_
                                                 : nullptr;
        if (!slot) continue;
        if (t.shape() != slot->shape()) throw std::runtime_error("SAE tensor " + name + " has the wrong shape");
        slot->mutable_value() = std::move(t);
    }
    return sae;
}

double reconstruction_loss(const SparseAutoencoder& sae, const std::vector<Tensor>& corpus) {
    double total = 0.0;
    std::size_t count = 0;
    for (const Tensor& f : corpus) {
        const Tensor r = sae.decode(sae.encode(f));
        for (std::size_t i = 0; i < f.size(); ++i) total += (r[i] - f[i]) * (r[i] - f[i]);
        count += f.size();
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

SparseAutoencoder train_toy_sae(const std::vector<Tensor>& corpus, int dict_size, int k_sae,
                                const SaeTrainingOptions& opts, SaeTrainingLog* log) {
    std::size_t rows = 0;
    for (const Tensor& t : corpus) rows += t.rank() == 2 ? static_cast<std::size_t>(t.dim(0)) : 0;
    if (corpus.empty() || rows == 0) throw std::invalid_argument("cannot train an SAE on an empty activation dataset");
    const int d = corpus.front().dim(1);

    // flatten to one row table
    std::vector<double> table;
    table.reserve(rows * d);
    for (const Tensor& t : corpus) {
        if (t.rank() != 2 || t.dim(1) != d) throw std::invalid_argument("SAE corpus tensors must share a width");
        table.insert(table.end(), t.storage().begin(), t.storage().end());
    }

    SparseAutoencoder sae(d, dict_size, k_sae, opts.seed);
    // start the decoder bias at the data mean
    {
        ag::Var bias = sae.decoder_bias();
        Tensor& bd = bias.mutable_value();
        for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) bd[j] += table[r * d + j] / static_cast<double>(rows);
    }
    if (log) log->initial_loss = reconstruction_loss(sae, corpus);

    sae.set_trainable(true);
    Adam opt(sae.parameters(), {opts.learning_rate});
    Rng rng(opts.seed);
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = static_cast<std::size_t>(std::max(1, opts.batch_tokens));
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < rows; b0 += batch) {
            const std::size_t b1 = std::min(rows, b0 + batch);
            Tensor x({static_cast<int>(b1 - b0), d});
            for (std::size_t r = b0; r < b1; ++r)
                std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(order[r] * d), d,
                            x.data() + (r - b0) * d);
            const ag::Var xv = ag::constant(x);
            const ag::Var codes = sae.encode(xv);
            const ag::Var recon = ag::add_row_bias(ag::matmul(codes, sae.decoder_weight()), sae.decoder_bias());
            const ag::Var loss = ag::mean(ag::square(ag::sub(recon, xv)));
            epoch_loss += loss.value()[0] * static_cast<double>(b1 - b0);
            ag::backward(loss);
            opt.step();
            sae.renormalize_decoder();
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(rows));
    }
    sae.set_trainable(false);
    if (log) log->final_loss = reconstruction_loss(sae, corpus);
    return sae;
}

} // namespace lvo
