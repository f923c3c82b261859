#include "lvo/regularization.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lvo {

namespace {

constexpr double kLatentRange = 3.0;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_finite(const LatentGrid& z, const char* what) {
    if (!z.tensor().all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite latent value");
}

} // namespace

void RegularizerWeights::validate() const {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0)) throw std::invalid_argument(std::string(name) + " must be >= 0");
    };
    nonneg(tv_weight, "tv_weight");
    nonneg(range_weight, "range_weight");
    nonneg(moment_weight, "moment_weight");
    nonneg(smoothing_sigma0, "smoothing_sigma0");
    nonneg(rotation_deg, "rotation_deg");
    if (jitter_px < 0) throw std::invalid_argument("jitter_px must be >= 0");
    if (!(scale_factor >= 1.0)) throw std::invalid_argument("scale_factor must be >= 1");
}

RegularizerWeights RegularizerWeights::raw_layer_defaults() {
    RegularizerWeights w;
    w.tv_weight = 0.5;
    w.range_weight = 0.5;
    w.moment_weight = 0.0;
    w.smoothing_sigma0 = 0.5;
    w.spectral_filter = true;
    w.jitter_px = 1;
    w.rotation_deg = 5.0;
    w.scale_factor = 1.1;
    return w;
}

RegularizerWeights RegularizerWeights::sae_defaults() {
    RegularizerWeights w;
    w.tv_weight = 0.0;
    w.range_weight = 0.5;
    w.moment_weight = 0.5;
    w.smoothing_sigma0 = 0.0;
    w.spectral_filter = true;
    w.jitter_px = 1;
    w.rotation_deg = 5.0;
    w.scale_factor = 1.1;
    return w;
}

PenaltyValue tv_penalty_grad(const LatentGrid& z) {
    require_finite(z, "tv_penalty");
    const int c = z.channels(), h = z.height(), w = z.width();
    const double norm = 1.0 / (static_cast<double>(h) * w * c);
    PenaltyValue out{0.0, Tensor(z.tensor().shape())};
    Tensor& g = out.grad;
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = z.at(ch, y, x);
                if (y + 1 < h) {
                    const double d = z.at(ch, y + 1, x) - v;
                    total += std::abs(d);
                    g.at(ch, y + 1, x) += sign(d) * norm;
                    g.at(ch, y, x) -= sign(d) * norm;
                }
                if (x + 1 < w) {
                    const double d = z.at(ch, y, x + 1) - v;
                    total += std::abs(d);
                    g.at(ch, y, x + 1) += sign(d) * norm;
                    g.at(ch, y, x) -= sign(d) * norm;
                }
            }
    out.value = total * norm;
    return out;
}

double tv_penalty(const LatentGrid& z) { return tv_penalty_grad(z).value; }

PenaltyValue range_penalty_grad(const LatentGrid& z) {
    const Tensor& v = z.tensor();
    const double n = static_cast<double>(v.size());
    PenaltyValue out{0.0, Tensor(v.shape())};
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double excess = std::max(std::abs(v[i]) - kLatentRange, 0.0);
        total += excess * excess;
        out.grad[i] = 2.0 * excess * sign(v[i]) / n;
    }
    out.value = total / n;
    return out;
}

double range_penalty(const LatentGrid& z) { return range_penalty_grad(z).value; }

PenaltyValue moment_penalty_grad(const LatentGrid& z) {
    const Tensor& v = z.tensor();
    if (v.size() < 2) throw std::invalid_argument("moment_penalty needs at least 2 elements");
    const double n = static_cast<double>(v.size());
    const double mu = lvo::mean(v);
    double var = 0.0;
    for (double x : v.storage()) var += (x - mu) * (x - mu);
    var /= n;
    const double sd = std::sqrt(var);
    PenaltyValue out{std::abs(mu) + std::abs(sd - 1.0), Tensor(v.shape())};
    const double dmean = sign(mu) / n;
    const double dsd = sd > 0.0 ? sign(sd - 1.0) / (n * sd) : 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) out.grad[i] = dmean + dsd * (v[i] - mu);
    return out;
}

double moment_penalty(const LatentGrid& z) { return moment_penalty_grad(z).value; }

PenaltyValue total_penalty_grad(const LatentGrid& z, const RegularizerWeights& w) {
    PenaltyValue out{0.0, Tensor(z.tensor().shape())};
    auto accumulate = [&](double weight, PenaltyValue (*fn)(const LatentGrid&)) {
        if (weight == 0.0) return;
        PenaltyValue p = fn(z);
        out.value += weight * p.value;
        out.grad += p.grad * weight;
    };
    accumulate(w.tv_weight, tv_penalty_grad);
    accumulate(w.range_weight, range_penalty_grad);
    accumulate(w.moment_weight, moment_penalty_grad);
    return out;
}

double total_penalty(const LatentGrid& z, const RegularizerWeights& w) { return total_penalty_grad(z, w).value; }

// ---------------------------------------------------------------------------
// spectral filter

namespace {

// FFTW planning is not thread-safe; plans are made once per size and then
// executed on fresh buffers, which is.
struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

FftPlans plans_for(int h, int w) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, FftPlans> cache;
    std::lock_guard lock(mu);
    auto it = cache.find({h, w});
    if (it != cache.end()) return it->second;
    fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(h) * w);
    FftPlans p;
    p.forward = fftw_plan_dft_2d(h, w, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    p.inverse = fftw_plan_dft_2d(h, w, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    fftw_free(buf);
    if (!p.forward || !p.inverse) throw std::runtime_error("fftw: could not plan transform");
    cache.emplace(std::make_pair(h, w), p);
    return p;
}

double signed_frequency(int k, int n) {
    const int s = (k <= n / 2) ? k : k - n;
    return static_cast<double>(s) / n;
}

} // namespace

Tensor spectral_weights(int height, int width) {
    Tensor wts({height, width});
    double fmin = 0.0;
    if (height > 1) fmin = 1.0 / height;
    if (width > 1) fmin = fmin > 0.0 ? std::min(fmin, 1.0 / width) : 1.0 / width;
    for (int ky = 0; ky < height; ++ky)
        for (int kx = 0; kx < width; ++kx) {
            const double fy = signed_frequency(ky, height), fx = signed_frequency(kx, width);
            const double f = std::hypot(fy, fx);
            wts.at(ky, kx) = fmin > 0.0 ? fmin / std::max(f, fmin) : 1.0;
        }
    return wts;
}

GradientField spectral_filter(const GradientField& g) {
    const int c = g.channels(), h = g.height(), w = g.width();
    const Tensor wts = spectral_weights(h, w);
    const FftPlans plans = plans_for(h, w);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> buf(fftw_alloc_complex(n), &fftw_free);
    fftw_complex* p = buf.get();
    const double norm = 1.0 / static_cast<double>(n);
    GradientField out(c, h, w);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                p[y * w + x][0] = g.at(ch, y, x);
                p[y * w + x][1] = 0.0;
            }
        fftw_execute_dft(plans.forward, p, p);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                p[y * w + x][0] *= wts.at(y, x);
                p[y * w + x][1] *= wts.at(y, x);
            }
        fftw_execute_dft(plans.inverse, p, p);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = p[y * w + x][0] * norm;
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient smoothing

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

double smoothing_sigma(int step, int total_steps, double sigma0) {
    if (total_steps <= 0 || step < 0 || step >= total_steps)
        throw std::invalid_argument("smoothing step must satisfy 0 <= step < total_steps");
    return sigma0 * (1.0 - static_cast<double>(step) / total_steps);
}

GradientField gaussian_blur(const GradientField& g, double sigma) {
    if (!(sigma > 0.0)) return g;
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) ksum += (kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma)));
    for (double& v : kernel) v /= ksum;

    const int c = g.channels(), h = g.height(), w = g.width();
    GradientField tmp(c, h, w), out(c, h, w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * g.at(ch, y, reflect_index(x + k, w));
                tmp.at(ch, y, x) = acc;
            }
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * tmp.at(ch, reflect_index(y + k, h), x);
                out.at(ch, y, x) = acc;
            }
    return out;
}

GradientField smooth_gradient(const GradientField& g, int step, int total_steps, double sigma0) {
    return gaussian_blur(g, smoothing_sigma(step, total_steps, sigma0));
}

// ---------------------------------------------------------------------------
// transformation robustness

TransformRecord draw_transform(const RegularizerWeights& w, Rng& rng) {
    TransformRecord rec;
    if (w.jitter_px > 0) {
        rec.shift_x = rng.uniform_int(-w.jitter_px, w.jitter_px);
        rec.shift_y = rng.uniform_int(-w.jitter_px, w.jitter_px);
    }
    if (w.rotation_deg > 0.0) rec.rotation_deg = rng.uniform(-w.rotation_deg, w.rotation_deg);
    if (w.scale_factor > 1.0) rec.scale = rng.uniform(1.0 / w.scale_factor, w.scale_factor);
    return rec;
}

ag::SparseLinearMap transform_map(int channels, int height, int width, const TransformRecord& rec) {
    ag::SparseLinearMap map;
    map.in_shape = {channels, height, width};
    map.out_shape = map.in_shape;
    map.offsets.reserve(static_cast<std::size_t>(channels) * height * width + 1);
    map.offsets.push_back(0);

    const double theta = rec.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;

    // source coordinate per output pixel, shared by all channels
    struct Tap {
        int offset;
        double weight;
    };
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double px = (x - cx) / rec.scale, py = (y - cy) / rec.scale;
            // inverse rotation, then undo the shift
            const double sx = cx + cs * px + sn * py - rec.shift_x;
            const double sy = cy - sn * px + cs * py - rec.shift_y;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double ax = sx - fx0, ay = sy - fy0;
            const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
            auto& t = taps[static_cast<std::size_t>(y) * width + x];
            const double wy[2] = {1.0 - ay, ay};
            const double wx[2] = {1.0 - ax, ax};
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const double wt = wy[dy] * wx[dx];
                    if (wt == 0.0) continue;
                    t.push_back({reflect_index(y0 + dy, height) * width + reflect_index(x0 + dx, width), wt});
                }
        }

    const int plane = height * width;
    for (int ch = 0; ch < channels; ++ch)
        for (int p = 0; p < plane; ++p) {
            for (const Tap& tap : taps[p]) {
                map.index.push_back(ch * plane + tap.offset);
                map.weight.push_back(tap.weight);
            }
            map.offsets.push_back(static_cast<int>(map.index.size()));
        }
    return map;
}

TransformedLatent apply_random_transform(const LatentGrid& z, const RegularizerWeights& w, Rng& rng) {
    const TransformRecord rec = draw_transform(w, rng);
    const auto map = transform_map(z.channels(), z.height(), z.width(), rec);
    return {LatentGrid(map.apply(z.tensor())), rec};
}

} // namespace lvo
