#include "lvo/toy_model.hpp"

#include "lvo/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace lvo {

using json = nlohmann::json;

namespace {

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.storage()) v = rng.uniform(-bound, bound);
    return t;
}

void add_conv(ParameterSet& p, const std::string& name, int in, int out, int k, Rng& rng) {
    p.add(name + ".w", uniform_init({out, in, k, k}, in * k * k, rng));
    p.add(name + ".b", uniform_init({out}, in * k * k, rng));
}

void add_linear(ParameterSet& p, const std::string& name, int in, int out, Rng& rng) {
    p.add(name + ".w", uniform_init({out, in}, in, rng));
    p.add(name + ".b", uniform_init({out}, in, rng));
}

ag::Var conv(const ParameterSet& p, const std::string& name, const ag::Var& x, int stride = 1) {
    const ag::Var& w = p.get(name + ".w");
    return ag::conv2d(x, w, p.get(name + ".b"), stride, w.value().dim(2) / 2);
}

ag::Var dense(const ParameterSet& p, const std::string& name, const ag::Var& x) {
    return ag::linear(x, p.get(name + ".w"), p.get(name + ".b"));
}

} // namespace

// ---------------------------------------------------------------------------

ag::Var ParameterSet::add(const std::string& name, Tensor init) {
    params_.emplace_back(name, ag::Var(std::move(init), false));
    return params_.back().second;
}

const ag::Var& ParameterSet::get(const std::string& name) const {
    for (const auto& [n, v] : params_)
        if (n == name) return v;
    throw std::out_of_range("no parameter named " + name);
}

std::vector<ag::Var> ParameterSet::all() const {
    std::vector<ag::Var> out;
    for (const auto& [n, v] : params_) out.push_back(v);
    return out;
}

NamedTensors ParameterSet::snapshot() const {
    NamedTensors out;
    for (const auto& [n, v] : params_) out.emplace_back(n, v.value());
    return out;
}

void ParameterSet::load(const NamedTensors& tensors, const std::string& prefix) {
    for (auto& [n, v] : params_) {
        const std::string key = prefix + n;
        auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == key; });
        if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + key);
        if (it->second.shape() != v.shape())
            throw std::runtime_error("checkpoint tensor " + key + " has shape " + shape_string(it->second.shape()) +
                                     ", expected " + shape_string(v.shape()));
        v.mutable_value() = it->second;
    }
}

void ParameterSet::set_trainable(bool on) {
    for (auto& [n, v] : params_) {
        v.set_requires_grad(on);
        v.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// VAE

ToyVae::ToyVae(const ToyArchitecture& arch, Rng& init) : arch_(arch) {
    if (arch.image_size != 2 * arch.latent_size) throw std::invalid_argument("toy VAE downsamples by exactly 2");
    const int w = arch.vae_width, lc = arch.latent_channels;
    add_conv(params_, "enc.conv1", 3, w, 3, init);
    add_conv(params_, "enc.down", w, w, 3, init);
    add_conv(params_, "enc.head", w, 2 * lc, 1, init);
    add_conv(params_, "dec.conv1", lc, w, 3, init);
    add_conv(params_, "dec.conv2", w, w, 3, init);
    add_conv(params_, "dec.head", w, 3, 3, init);
}

std::vector<int> ToyVae::image_shape() const { return {3, arch_.image_size, arch_.image_size}; }

ToyVae::Posterior ToyVae::encode_raw(const ag::Var& image) const {
    ag::Var h = ag::silu(conv(params_, "enc.conv1", image));
    h = ag::silu(conv(params_, "enc.down", h, 2));
    h = conv(params_, "enc.head", h);
    const int lc = arch_.latent_channels;
    return {ag::slice_channels(h, 0, lc), ag::slice_channels(h, lc, 2 * lc)};
}

ag::Var ToyVae::decode_raw(const ag::Var& raw) const {
    ag::Var h = ag::silu(conv(params_, "dec.conv1", raw));
    h = ag::upsample_nearest2(h);
    h = ag::silu(conv(params_, "dec.conv2", h));
    return ag::sigmoid(conv(params_, "dec.head", h));
}

LatentGrid ToyVae::encode(const Image& image) const {
    if (image.shape() != image_shape())
        throw std::invalid_argument("toy VAE expects images of shape " + shape_string(image_shape()));
    Tensor mean = encode_raw(ag::constant(image)).mean.value();
    for (double& v : mean.storage()) v = (v - shift_) * scale_;
    return LatentGrid(std::move(mean));
}

Image ToyVae::decode(const LatentGrid& z) const {
    const std::vector<int> expect{arch_.latent_channels, arch_.latent_size, arch_.latent_size};
    if (z.tensor().shape() != expect) throw std::invalid_argument("toy VAE expects latents of shape " + shape_string(expect));
    Tensor raw = z.tensor();
    for (double& v : raw.storage()) v = v / scale_ + shift_;
    return decode_raw(ag::constant(std::move(raw))).value();
}

void ToyVae::set_standardization(double shift, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("latent scale must be positive");
    shift_ = shift;
    scale_ = scale;
}

// ---------------------------------------------------------------------------
// denoiser

ToyDenoiser::ToyDenoiser(const ToyArchitecture& arch, Rng& init) : arch_(arch) {
    const int w = arch.width, lc = arch.latent_channels;
    add_linear(params_, "temb.fc1", w, w, init);
    add_linear(params_, "temb.fc2", w, w, init);
    params_.add("cemb.table", uniform_init({arch.num_classes + 1, w}, w, init));
    add_conv(params_, "in.conv", lc, w, 3, init);
    add_conv(params_, "down.conv", w, w, 3, init);
    add_conv(params_, "mid.conv", w, w, 3, init);
    add_linear(params_, "up.attn.q", w, w, init);
    add_linear(params_, "up.attn.k", w, w, init);
    add_linear(params_, "up.attn.v", w, w, init);
    add_linear(params_, "up.attn.o", w, w, init);
    add_conv(params_, "up.conv", w, w, 3, init);
    add_conv(params_, "out.conv", w, lc, 3, init);
}

std::vector<LayerInfo> ToyDenoiser::layers() const {
    const int full = arch_.latent_size * arch_.latent_size;
    const int half = (arch_.latent_size / 2) * (arch_.latent_size / 2);
    return {
        {"in.conv", full, arch_.width, true},
        {"down.conv", half, arch_.width, true},
        {"mid.conv", half, arch_.width, true},
        {kAttentionLayer, full, arch_.width, true},
        {"up.conv", full, arch_.width, true},
        {kOutputLayer, full, arch_.latent_channels, false},
    };
}

std::vector<int> ToyDenoiser::latent_shape() const {
    return {arch_.latent_channels, arch_.latent_size, arch_.latent_size};
}

ag::Var ToyDenoiser::time_embedding(int t) const {
    const int d = arch_.width, half = d / 2;
    Tensor e({d});
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e[i] = std::sin(t * freq);
        e[i + half] = std::cos(t * freq);
    }
    ag::Var h = ag::reshape(ag::constant(std::move(e)), {1, d});
    h = ag::silu(dense(params_, "temb.fc1", h));
    h = dense(params_, "temb.fc2", h);
    return ag::reshape(h, {d});
}

HookedForward ToyDenoiser::forward(const ag::Var& z, int t, const Conditioning& cond, const LayerHook* hook) const {
    if (z.shape() != latent_shape())
        throw std::invalid_argument("toy denoiser expects latent " + shape_string(latent_shape()) + ", got " +
                                    shape_string(z.shape()));
    if (t < 0 || t >= arch_.num_steps) throw std::out_of_range("time-step out of range for toy denoiser");
    const int label = cond.class_label.value_or(arch_.num_classes);
    if (label < 0 || label > arch_.num_classes) throw std::out_of_range("class label out of range");
    if (hook) layer(hook->layer);

    HookedForward result;
    // Token view of a spatial activation; applies the edit when this is the hooked layer.
    auto tap = [&](const char* name, ag::Var spatial) -> ag::Var {
        if (!hook || hook->layer != name) return spatial;
        const int h = spatial.value().dim(1), w = spatial.value().dim(2);
        ag::Var tokens = ag::to_tokens(spatial);
        if (hook->edit) {
            tokens = ag::substitute(tokens, hook->edit(tokens.value()));
            spatial = ag::from_tokens(tokens, h, w);
        }
        result.activations = tokens;
        return spatial;
    };

    const ag::Var emb = ag::add(time_embedding(t), ag::embedding(params_.get("cemb.table"), label));
    ag::Var h0 = ag::add_channel_bias(ag::silu(conv(params_, "in.conv", z)), emb);
    h0 = tap("in.conv", h0);
    ag::Var h1 = tap("down.conv", ag::silu(conv(params_, "down.conv", h0, 2)));
    ag::Var h2 = tap("mid.conv", ag::silu(conv(params_, "mid.conv", h1)));
    ag::Var u = ag::add(ag::upsample_nearest2(h2), h0);

    const int size = arch_.latent_size;
    ag::Var tokens = ag::to_tokens(u);
    const ag::Var q = dense(params_, "up.attn.q", tokens);
    const ag::Var k = dense(params_, "up.attn.k", tokens);
    const ag::Var v = dense(params_, "up.attn.v", tokens);
    const ag::Var att = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), 1.0 / std::sqrt(arch_.width)));
    ag::Var a = ag::add(tokens, dense(params_, "up.attn.o", ag::matmul(att, v)));
    if (hook && hook->layer == kAttentionLayer) {
        if (hook->edit) a = ag::substitute(a, hook->edit(a.value()));
        result.activations = a;
    }

    ag::Var h3 = tap("up.conv", ag::silu(conv(params_, "up.conv", ag::from_tokens(a, size, size))));
    ag::Var out = conv(params_, "out.conv", h3);
    if (hook && hook->layer == kOutputLayer) {
        if (hook->edit) throw std::invalid_argument("the output head cannot be edited");
        result.activations = ag::to_tokens(out);
    }
    result.prediction = out;
    return result;
}

// ---------------------------------------------------------------------------
// construction / training

ToyLdm make_toy(const ToyArchitecture& arch, std::uint64_t seed) {
    Rng init(seed);
    ToyVae vae(arch, init);
    ToyDenoiser den(arch, init);
    // betas rescaled by 1000 / T so the last step is still close to pure noise
    const double stretch = 1000.0 / arch.num_steps;
    return ToyLdm{arch, std::move(vae), std::move(den),
                  build_scheduler(arch.num_steps, ScheduleKind::Linear, 1e-4 * stretch, 0.02 * stretch)};
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    return idx;
}

} // namespace

double reconstruction_mae(const ToyVae& vae, const Dataset& data, std::size_t samples) {
    samples = std::min(samples, data.size());
    if (samples == 0) throw std::invalid_argument("reconstruction_mae needs samples");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        const Image x = data.get(i).image;
        const Image r = vae.decode(vae.encode(x));
        for (std::size_t j = 0; j < x.size(); ++j) total += std::abs(x[j] - r[j]);
        count += x.size();
    }
    return total / static_cast<double>(count);
}

double denoising_loss(const ToyLdm& model, const Dataset& data, std::size_t samples, std::uint64_t seed) {
    samples = std::min(samples, data.size());
    if (samples == 0) throw std::invalid_argument("denoising_loss needs samples");
    Rng rng(seed);
    double total = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const Sample s = data.get(i);
        const LatentGrid z0 = model.vae.encode(s.image);
        const int t = rng.uniform_int(0, model.scheduler.num_steps - 1);
        std::vector<double> eps(z0.size());
        for (double& e : eps) e = rng.normal();
        const LatentGrid xt = inject_schedule_noise(z0, t, model.scheduler, eps);
        const Tensor pred =
            model.denoiser.forward(ag::constant(xt.tensor()), t, Conditioning::label(s.class_label), nullptr)
                .prediction.value();
        double se = 0.0;
        for (std::size_t j = 0; j < pred.size(); ++j) se += (pred[j] - eps[j]) * (pred[j] - eps[j]);
        total += se / static_cast<double>(pred.size());
    }
    return total / static_cast<double>(samples);
}

ToyLdm train_toy(const Dataset& data, const ToyRecipe& recipe, ToyTrainingLog* log, const ToyArchitecture& arch_in) {
    if (data.size() == 0) throw std::invalid_argument("cannot train the toy model on an empty dataset");
    ToyArchitecture arch = arch_in;
    arch.num_classes = data.num_classes();
    ToyLdm model = make_toy(arch, recipe.seed);
    Rng rng = Rng::derive(recipe.seed, 0x7a1);
    const std::size_t n = recipe.max_samples ? std::min(recipe.max_samples, data.size()) : data.size();
    const int batch = std::max(1, recipe.batch_size);

    std::vector<Sample> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) samples.push_back(data.get(i));

    // VAE: reconstruction MSE + small KL
    model.vae.params().set_trainable(true);
    {
        Adam opt(model.vae.params().all(), {recipe.vae_lr});
        for (int epoch = 0; epoch < recipe.vae_epochs; ++epoch) {
            double epoch_loss = 0.0;
            const auto order = shuffled(n, rng);
            for (std::size_t b0 = 0; b0 < n; b0 += batch) {
                const std::size_t b1 = std::min(n, b0 + batch);
                ag::Var total;
                for (std::size_t bi = b0; bi < b1; ++bi) {
                    const ag::Var x = ag::constant(samples[order[bi]].image);
                    const auto post = model.vae.encode_raw(x);
                    Tensor eps(post.mean.shape());
                    for (double& e : eps.storage()) e = rng.normal();
                    const ag::Var std_dev = ag::exp(ag::scale(post.logvar, 0.5));
                    const ag::Var zs = ag::add(post.mean, ag::mul(std_dev, ag::constant(eps)));
                    const ag::Var recon = ag::mean(ag::square(ag::sub(model.vae.decode_raw(zs), x)));
                    // KL(N(mu, sigma) || N(0, 1)) per element
                    const ag::Var kl = ag::scale(
                        ag::mean(ag::sub(ag::add(ag::square(post.mean), ag::exp(post.logvar)),
                                         ag::add_constant(post.logvar, Tensor(post.logvar.shape(), 1.0)))),
                        0.5);
                    const ag::Var loss = ag::add(recon, ag::scale(kl, recipe.kl_weight));
                    epoch_loss += recon.value()[0];
                    total = total.valid() ? ag::add(total, loss) : loss;
                }
                ag::backward(ag::scale(total, 1.0 / static_cast<double>(b1 - b0)));
                opt.step();
            }
            if (log) log->vae_loss.push_back(epoch_loss / static_cast<double>(n));
        }
    }
    model.vae.params().set_trainable(false);

    // standardize latents to unit scale
    std::vector<Tensor> raw_latents;
    raw_latents.reserve(n);
    double s1 = 0.0, s2 = 0.0, cnt = 0.0;
    for (const auto& s : samples) {
        raw_latents.push_back(model.vae.encode_raw(ag::constant(s.image)).mean.value());
        for (double v : raw_latents.back().storage()) {
            s1 += v;
            s2 += v * v;
            cnt += 1.0;
        }
    }
    const double mu = s1 / cnt;
    const double sd = std::sqrt(std::max(s2 / cnt - mu * mu, 1e-12));
    model.vae.set_standardization(mu, 1.0 / sd);
    const double mae = reconstruction_mae(model.vae, data, std::min<std::size_t>(n, 256));
    model.vae.set_reconstruction_bound(1.5 * mae + 0.01);
    if (log) log->reconstruction_mae = mae;

    std::vector<Tensor> latents;
    latents.reserve(n);
    for (const auto& r : raw_latents) {
        Tensor z = r;
        for (double& v : z.storage()) v = (v - mu) / sd;
        latents.push_back(std::move(z));
    }

    if (log) log->initial_denoising_loss = denoising_loss(model, data, std::min<std::size_t>(n, 128), recipe.seed + 1);

    // denoiser: epsilon prediction MSE with class dropout
    model.denoiser.params().set_trainable(true);
    {
        Adam opt(model.denoiser.params().all(), {recipe.denoiser_lr});
        const SchedulerTable& sch = model.scheduler;
        for (int epoch = 0; epoch < recipe.denoiser_epochs; ++epoch) {
            double epoch_loss = 0.0;
            const auto order = shuffled(n, rng);
            for (std::size_t b0 = 0; b0 < n; b0 += batch) {
                const std::size_t b1 = std::min(n, b0 + batch);
                ag::Var total;
                for (std::size_t bi = b0; bi < b1; ++bi) {
                    const std::size_t i = order[bi];
                    const int t = rng.uniform_int(0, sch.num_steps - 1);
                    Tensor eps(latents[i].shape());
                    for (double& e : eps.storage()) e = rng.normal();
                    const LatentGrid xt = inject_schedule_noise(LatentGrid(latents[i]), t, sch, eps.values());
                    Conditioning cond = Conditioning::label(samples[i].class_label);
                    if (rng.uniform(0.0, 1.0) < recipe.class_dropout) cond = Conditioning::unconditional();
                    const ag::Var pred = model.denoiser.forward(ag::constant(xt.tensor()), t, cond, nullptr).prediction;
                    const ag::Var loss = ag::mean(ag::square(ag::add_constant(pred, eps * -1.0)));
                    epoch_loss += loss.value()[0];
                    total = total.valid() ? ag::add(total, loss) : loss;
                }
                ag::backward(ag::scale(total, 1.0 / static_cast<double>(b1 - b0)));
                opt.step();
            }
            if (log) log->denoiser_loss.push_back(epoch_loss / static_cast<double>(n));
        }
    }
    model.denoiser.params().set_trainable(false);
    if (log) log->final_denoising_loss = denoising_loss(model, data, std::min<std::size_t>(n, 128), recipe.seed + 1);
    return model;
}

// ---------------------------------------------------------------------------
// checkpoint

void save_toy(const ToyLdm& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    NamedTensors all;
    for (auto& [n, t] : model.vae.params().snapshot()) all.emplace_back("vae." + n, t);
    for (auto& [n, t] : model.denoiser.params().snapshot()) all.emplace_back("denoiser." + n, t);
    save_tensors(dir / "weights.bin", all);

    json layers = json::array();
    for (const auto& l : model.denoiser.layers())
        layers.push_back({{"name", l.name}, {"tokens", l.tokens}, {"channels", l.channels}, {"editable", l.editable}});
    const auto& a = model.arch;
    json manifest = {
        {"format", "lvo-ldm-manifest/1"},
        {"backend", "toy"},
        {"layers", layers},
        {"latent_shape", model.denoiser.latent_shape()},
        {"image_shape", model.vae.image_shape()},
        {"scheduler",
         {{"num_steps", model.scheduler.num_steps},
          {"kind", to_string(model.scheduler.kind)},
          {"beta_start", model.scheduler.beta_start},
          {"beta_end", model.scheduler.beta_end}}},
        {"conditioning", {{"type", "class_label"}, {"num_classes", a.num_classes}}},
        {"architecture",
         {{"image_size", a.image_size},
          {"latent_channels", a.latent_channels},
          {"latent_size", a.latent_size},
          {"vae_width", a.vae_width},
          {"width", a.width},
          {"num_classes", a.num_classes},
          {"num_steps", a.num_steps}}},
        {"vae",
         {{"latent_shift", model.vae.latent_shift()},
          {"latent_scale", model.vae.latent_scale()},
          {"reconstruction_bound", model.vae.reconstruction_bound()}}},
        {"weights", "weights.bin"},
    };
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

ToyLdm load_toy(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("model checkpoint not found: " + manifest_path.string());
    const json m = json::parse(is);
    if (m.value("backend", "") != "toy")
        throw std::runtime_error(manifest_path.string() + ": backend '" + m.value("backend", "") + "' is not the toy backend");
    const json& a = m.at("architecture");
    ToyArchitecture arch;
    arch.image_size = a.at("image_size");
    arch.latent_channels = a.at("latent_channels");
    arch.latent_size = a.at("latent_size");
    arch.vae_width = a.at("vae_width");
    arch.width = a.at("width");
    arch.num_classes = a.at("num_classes");
    arch.num_steps = a.at("num_steps");
    ToyLdm model = make_toy(arch, 0);
    const json& s = m.at("scheduler");
    model.scheduler = build_scheduler(s.at("num_steps"), schedule_kind_from_string(s.at("kind")), s.at("beta_start"),
                                      s.at("beta_end"));
    const NamedTensors weights = load_tensors(dir / m.value("weights", "weights.bin"));
    model.vae.params().load(weights, "vae.");
    model.denoiser.params().load(weights, "denoiser.");
    const json& v = m.at("vae");
    model.vae.set_standardization(v.at("latent_shift"), v.at("latent_scale"));
    model.vae.set_reconstruction_bound(v.at("reconstruction_bound"));
    return model;
}

} // namespace lvo
