#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vista/rng.hpp"
#include "vista/tape.hpp"
#include "vista/unet.hpp"

namespace vista {

// Linear beta schedule with precomputed cumulative products.
struct NoiseSchedule {
    int steps = 1000;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    static NoiseSchedule linear(int T = 1000, double beta0 = 1e-4, double beta1 = 0.02) {
        NoiseSchedule s;
        s.steps = T;
        s.beta.resize((size_t)T);
        s.alpha.resize((size_t)T);
        s.alpha_bar.resize((size_t)T);
        double prod = 1.0;
        for (int t = 0; t < T; ++t) {
            s.beta[(size_t)t] = beta0 + (beta1 - beta0) * (T == 1 ? 0.0 : (double)t / (T - 1));
            s.alpha[(size_t)t] = 1.0 - s.beta[(size_t)t];
            prod *= s.alpha[(size_t)t];
            s.alpha_bar[(size_t)t] = prod;
        }
        return s;
    }

    void check_t(int t) const {
        if (t < 0 || t >= steps) throw DimensionError("schedule: t out of range");
    }
    double sqrt_ab(int t) const {
        check_t(t);
        return std::sqrt(alpha_bar[(size_t)t]);
    }
    double sqrt_1mab(int t) const {
        check_t(t);
        return std::sqrt(1.0 - alpha_bar[(size_t)t]);
    }
};

struct SamplerConfig {
    int steps = 50;
    double guidance = 5.0;
    double eta = 0.0;
    uint64_t seed = 0;
};

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                          const NoiseSchedule& s) {
    if (!x0.same_shape(eps)) throw DimensionError("forward_diffuse: eps shape mismatch");
    const T a = (T)s.sqrt_ab(t);
    const T b = (T)s.sqrt_1mab(t);
    Tensor<T> out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// eps~ = eps_uncond + w * (eps_cond - eps_uncond)
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double w) {
    if (!eps_uncond.same_shape(eps_cond)) throw DimensionError("cfg_combine: shape mismatch");
    Tensor<T> out = eps_uncond;
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = (T)((double)eps_uncond[i] + w * ((double)eps_cond[i] - (double)eps_uncond[i]));
    return out;
}

// Deterministic (eta = 0) DDIM update. The x0 estimate is clipped to
// [-1, 1] each step; t_prev < 0 returns the clipped x0 estimate itself.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, int t_prev,
                    const NoiseSchedule& s, double eta = 0.0, RngStream* rng = nullptr) {
    if (!x_t.same_shape(eps_hat)) throw DimensionError("ddim_step: shape mismatch");
    if (t_prev > t) throw DimensionError("ddim_step: t_prev must not exceed t");
    s.check_t(t);
    const double sa = s.sqrt_ab(t);
    const double sb = s.sqrt_1mab(t);
    Tensor<T> x0 = x_t;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        double v = ((double)x_t[i] - sb * (double)eps_hat[i]) / sa;
        x0[i] = (T)std::min(1.0, std::max(-1.0, v));
    }
    if (t_prev < 0) return x0;
    s.check_t(t_prev);
    const double ab_t = s.alpha_bar[(size_t)t];
    const double ab_p = s.alpha_bar[(size_t)t_prev];
    double sigma = 0.0;
    if (eta > 0.0) {
        sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
        if (!rng) throw NumericError("ddim_step: eta > 0 needs an rng stream");
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    Tensor<T> out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = std::sqrt(ab_p) * (double)x0[i] + dir * (double)eps_hat[i];
        if (sigma > 0.0) v += sigma * rng->next_normal();
        out[i] = (T)v;
    }
    return out;
}

// steps timesteps evenly spaced over [0, T-1], both endpoints included,
// ascending.
inline std::vector<int> sampler_timesteps(int T, int steps) {
    if (steps < 2 || steps > T) throw DimensionError("sampler: bad step count");
    std::vector<int> ts;
    int prev = -1;
    for (int i = 0; i < steps; ++i) {
        int t = (int)std::llround((double)i * (T - 1) / (steps - 1));
        if (t <= prev) t = prev + 1;
        ts.push_back(t);
        prev = t;
    }
    return ts;
}

// Denoiser evaluated on (x, t) for the conditional or unconditional branch.
template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>& x_chw, int t, bool conditional)>;

// DDIM + classifier-free guidance over a seeded noise draw. Pure function
// of (seed, denoiser, config, schedule).
template <typename T>
Tensor<T> sample(const DenoiseFn<T>& denoise, const SamplerConfig& cfg, const NoiseSchedule& s,
                 std::vector<int> shape = {3, kImageSize, kImageSize}) {
    RngStream rng(cfg.seed, streams::kSample);
    Tensor<T> x = Tensor<T>::zeros(std::move(shape));
    for (auto& v : x.data) v = (T)rng.next_normal();

    const auto ts = sampler_timesteps(s.steps, cfg.steps);
    RngStream eta_rng = rng.fork(1);
    for (int i = (int)ts.size() - 1; i >= 0; --i) {
        const int t = ts[(size_t)i];
        const int t_prev = i > 0 ? ts[(size_t)i - 1] : -1;
        Tensor<T> eps;
        if (cfg.guidance == 1.0) {
            eps = denoise(x, t, true);
        } else {
            const Tensor<T> eps_c = denoise(x, t, true);
            const Tensor<T> eps_u = denoise(x, t, false);
            eps = cfg_combine(eps_u, eps_c, cfg.guidance);
        }
        if (!eps.all_finite())
            throw NumericError("sample: non-finite noise prediction at step t=" +
                               std::to_string(t));
        x = ddim_step(x, eps, t, t_prev, s, cfg.eta, &eta_rng);
    }
    for (auto& v : x.data) v = std::min(T(1), std::max(T(-1), v));
    return x; // [3,H,W] in [-1,1]
}

// Reconstruction loss on the tape: predict the injected noise from x_t and
// the condition embeddings, mean squared error against it. The traced
// overload takes the fusion feature as a live tape value so gradients reach
// the fusion weights through the adapter.
template <typename T>
Val<T> denoising_loss_traced(Tape<T>& tp, const UNet<T>& unet, const HistoryAdapter<T>* adapter,
                             const Tensor<T>& x0_chw, int t, const Tensor<T>& eps,
                             const TextEmbedding<T>& prompt, Val<T> fusion_val,
                             const std::vector<uint8_t>* fusion_mask, T lambda,
                             const NoiseSchedule& s) {
    const Tensor<T> x_t = forward_diffuse(x0_chw, t, eps, s);
    DenoiserInput<T> in;
    in.x_t = &x_t;
    in.t = t;
    in.prompt = &prompt;
    in.lambda = lambda;
    auto eps_hat = unet.forward_traced(tp, in, fusion_val, fusion_mask, adapter);
    auto loss = mse(eps_hat, constant(tp, eps));
    if (!loss.v().all_finite()) throw NumericError("training_loss: non-finite loss");
    return loss;
}

template <typename T>
Val<T> denoising_loss(Tape<T>& tp, const UNet<T>& unet, const HistoryAdapter<T>* adapter,
                      const Tensor<T>& x0_chw, int t, const Tensor<T>& eps,
                      const TextEmbedding<T>& prompt, const FusionFeature<T>* fusion, T lambda,
                      const NoiseSchedule& s) {
    Val<T> fusion_val;
    const std::vector<uint8_t>* mask = nullptr;
    if (fusion != nullptr && lambda != T(0)) {
        fusion_val = constant(tp, fusion->feature);
        mask = &fusion->mask;
    }
    return denoising_loss_traced(tp, unet, adapter, x0_chw, t, eps, prompt, fusion_val, mask,
                                 lambda, s);
}

// Image layout helpers: dataset images are [H,W,3] in [0,1]; the diffusion
// side works on [3,H,W] in [-1,1].
template <typename T>
Tensor<T> chw_from_hwc01(const Tensor<T>& hwc) {
    if (hwc.ndim() != 3 || hwc.shape[2] != 3) throw DimensionError("chw_from_hwc01: [H,W,3] expected");
    const int H = hwc.shape[0], W = hwc.shape[1];
    Tensor<T> out = Tensor<T>::zeros({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) out.at3(c, y, x) = hwc.at3(y, x, c) * T(2) - T(1);
    return out;
}

template <typename T>
Tensor<T> hwc01_from_chw(const Tensor<T>& chw) {
    if (chw.ndim() != 3 || chw.shape[0] != 3) throw DimensionError("hwc01_from_chw: [3,H,W] expected");
    const int H = chw.shape[1], W = chw.shape[2];
    Tensor<T> out = Tensor<T>::zeros({H, W, 3});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                T v = (chw.at3(c, y, x) + T(1)) / T(2);
                out.at3(y, x, c) = std::min(T(1), std::max(T(0), v));
            }
    return out;
}

} // namespace vista
