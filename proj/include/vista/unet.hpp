#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vista/encoder.hpp"
#include "vista/fusion.hpp"
#include "vista/tape.hpp"

namespace vista {

// One text cross-attention site per U-Net resolution; every site gets an
// adapter twin (K/V projections reading the fusion feature, sharing the
// site's query).
struct SiteSpec {
    std::string name;
    int channels;
};

inline const std::vector<SiteSpec>& unet_sites() {
    static const std::vector<SiteSpec> sites = {
        {"down1", 32}, {"down2", 64}, {"mid", 128}, {"up1", 64}, {"up2", 32}};
    return sites;
}

template <typename T>
struct DenoiserInput {
    const Tensor<T>* x_t = nullptr; // [3,H,W], roughly [-1,1]
    int t = 0;
    const TextEmbedding<T>* prompt = nullptr;    // current prompt (PAD-masked)
    const FusionFeature<T>* fusion = nullptr;    // nullptr = ABSENT
    T lambda = T(0);
};

// Trainable K/V projections beside each frozen cross-attention site.
template <typename T>
class HistoryAdapter {
  public:
    int text_dim;
    ParamStore<T> params;

    HistoryAdapter(int text_dim_, RngStream rng) : text_dim(text_dim_) {
        for (const auto& site : unet_sites()) {
            auto& wk = params.add(site.name + ".wk", {text_dim, site.channels},
                                  Role::TrainableAdapter);
            init_normal(wk, rng, 0.3 / std::sqrt((double)text_dim));
            // zero-init V so the adapter starts silent and the mixed model
            // reproduces the frozen base exactly at step 0
            params.add(site.name + ".wv", {text_dim, site.channels}, Role::TrainableAdapter);
        }
    }

    Parameter<T>& p(const std::string& name) const {
        auto* prm = const_cast<ParamStore<T>&>(params).find(name);
        if (!prm) throw ConfigError("adapter parameter missing: " + name);
        return *prm;
    }
};

// Pixel-space U-Net noise predictor: conv stem, two down blocks (32, 64),
// a 128-channel bottleneck, two up blocks with additive skips, group-norm +
// SiLU residual blocks, sinusoidal timestep embedding, and per-resolution
// text cross-attention with a learned null-context token.
template <typename T>
class UNet {
  public:
    int text_dim = 64;
    int time_dim = 128;
    ParamStore<T> params;

    explicit UNet(int text_dim_, RngStream rng) : text_dim(text_dim_) {
        auto conv = [&](const std::string& name, int cout, int cin, int k, double gain) {
            auto& w = params.add(name + ".w", {cout, cin * k * k}, Role::BasePretrain);
            init_normal(w, rng, gain * std::sqrt(2.0 / (cin * k * k)));
            params.add(name + ".b", {cout}, Role::BasePretrain);
        };
        auto lin = [&](const std::string& name, int in, int out, double gain) {
            auto& w = params.add(name + ".w", {in, out}, Role::BasePretrain);
            init_normal(w, rng, gain * std::sqrt(1.0 / in));
            params.add(name + ".b", {out}, Role::BasePretrain);
        };
        auto gn = [&](const std::string& name, int ch) {
            init_constant(params.add(name + ".g", {ch}, Role::BasePretrain), T(1));
            params.add(name + ".b", {ch}, Role::BasePretrain);
        };
        auto res = [&](const std::string& name, int ch) {
            gn(name + ".gn1", ch);
            conv(name + ".conv1", ch, ch, 3, 1.0);
            lin(name + ".temb", time_dim, ch, 0.2);
            gn(name + ".gn2", ch);
            conv(name + ".conv2", ch, ch, 3, 0.1);
        };
        auto attn = [&](const std::string& name, int ch) {
            gn(name + ".gn", ch);
            auto& wq = params.add(name + ".wq", {ch, ch}, Role::BasePretrain);
            init_normal(wq, rng, 0.5 / std::sqrt((double)ch));
            auto& wk = params.add(name + ".wk", {text_dim, ch}, Role::BasePretrain);
            init_normal(wk, rng, 0.5 / std::sqrt((double)text_dim));
            auto& wv = params.add(name + ".wv", {text_dim, ch}, Role::BasePretrain);
            init_normal(wv, rng, 0.5 / std::sqrt((double)text_dim));
            auto& wo = params.add(name + ".wo", {ch, ch}, Role::BasePretrain);
            init_normal(wo, rng, 0.2 / std::sqrt((double)ch));
        };

        lin("time.l1", 64, time_dim, 1.0);
        lin("time.l2", time_dim, time_dim, 1.0);
        conv("stem", 32, 3, 3, 1.0);
        res("down1.res", 32);
        attn("down1.attn", 32);
        conv("down1.down", 64, 32, 3, 1.0);
        res("down2.res", 64);
        attn("down2.attn", 64);
        conv("down2.down", 128, 64, 3, 1.0);
        res("mid.res1", 128);
        attn("mid.attn", 128);
        res("mid.res2", 128);
        conv("up1.up", 64, 128, 3, 1.0);
        res("up1.res", 64);
        attn("up1.attn", 64);
        conv("up2.up", 32, 64, 3, 1.0);
        res("up2.res", 32);
        attn("up2.attn", 32);
        gn("head.gn", 32);
        conv("head", 3, 32, 3, 0.05);
        auto& null_ctx = params.add("null_ctx", {1, text_dim}, Role::BasePretrain);
        init_normal(null_ctx, rng, 0.05);
    }

    // Freezes the base: roles flip to frozen-base and any optimizer touch
    // afterwards aborts.
    void freeze_base() {
        for (auto& prm : params.items) {
            prm->role = Role::FrozenBase;
            prm->frozen = true;
        }
    }

    bool is_frozen() const {
        for (const auto& prm : params.items)
            if (!prm->frozen) return false;
        return !params.items.empty();
    }

    // Traced forward. The fusion feature arrives as a live tape value so
    // stage-2 gradients reach the fusion weights through the adapter; an
    // invalid Val means ABSENT.
    Val<T> forward(Tape<T>& tp, const DenoiserInput<T>& in,
                   const HistoryAdapter<T>* adapter) const {
        Val<T> fusion_val; // invalid = absent
        const std::vector<uint8_t>* fusion_mask = nullptr;
        if (in.fusion != nullptr && in.lambda != T(0)) {
            fusion_val = constant(tp, in.fusion->feature);
            fusion_mask = &in.fusion->mask;
        }
        return forward_traced(tp, in, fusion_val, fusion_mask, adapter);
    }

    Val<T> forward_traced(Tape<T>& tp, const DenoiserInput<T>& in, Val<T> fusion_val,
                          const std::vector<uint8_t>* fusion_mask,
                          const HistoryAdapter<T>* adapter) const {
        if (!in.x_t || !in.prompt) throw DimensionError("denoise_forward: missing inputs");
        if (in.x_t->ndim() != 3 || in.x_t->shape[0] != 3)
            throw DimensionError("denoise_forward: x_t must be [3,H,W]");
        if (!std::isfinite((double)in.lambda))
            throw NumericError("denoise_forward: non-finite lambda");

        auto site = [&](const char* name, Val<T> x) {
            return attn_site(tp, name, x, in, fusion_val, fusion_mask, adapter);
        };
        auto temb = time_embedding(tp, in.t);
        auto x = constant(tp, *in.x_t);
        auto h0 = conv2d(x, leaf(tp, p("stem.w")), leaf(tp, p("stem.b")), 3, 1, 1);
        auto e1 = site("down1", res_block(tp, "down1.res", h0, temb));
        auto d1 = conv2d(e1, leaf(tp, p("down1.down.w")), leaf(tp, p("down1.down.b")), 3, 2, 1);
        auto e2 = site("down2", res_block(tp, "down2.res", d1, temb));
        auto d2 = conv2d(e2, leaf(tp, p("down2.down.w")), leaf(tp, p("down2.down.b")), 3, 2, 1);
        auto m = res_block(tp, "mid.res1", d2, temb);
        m = site("mid", m);
        m = res_block(tp, "mid.res2", m, temb);
        auto u1 = conv2d(upsample_nearest2(m), leaf(tp, p("up1.up.w")), leaf(tp, p("up1.up.b")), 3,
                         1, 1);
        u1 = add(u1, e2); // skip
        u1 = site("up1", res_block(tp, "up1.res", u1, temb));
        auto u2 = conv2d(upsample_nearest2(u1), leaf(tp, p("up2.up.w")), leaf(tp, p("up2.up.b")),
                         3, 1, 1);
        u2 = add(u2, e1); // skip
        u2 = site("up2", res_block(tp, "up2.res", u2, temb));
        auto hn = silu(group_norm(u2, groups_of(32), leaf(tp, p("head.gn.g")),
                                  leaf(tp, p("head.gn.b"))));
        auto out = conv2d(hn, leaf(tp, p("head.w")), leaf(tp, p("head.b")), 3, 1, 1);
        if (!out.v().all_finite()) throw NumericError("denoise_forward: non-finite output at head");
        return out;
    }

    // Convenience inference call returning a plain tensor.
    Tensor<T> predict(const DenoiserInput<T>& in, const HistoryAdapter<T>* adapter) const {
        Tape<T> tp;
        tp.grad_enabled = false;
        return forward(tp, in, adapter).v();
    }

    Parameter<T>& p(const std::string& name) const {
        auto* prm = const_cast<ParamStore<T>&>(params).find(name);
        if (!prm) throw ConfigError("unet parameter missing: " + name);
        return *prm;
    }

    static int groups_of(int ch) { return ch / 8; }

    Val<T> time_embedding(Tape<T>& tp, int t) const {
        // sinusoidal [1 x 64] then a two-layer MLP
        Tensor<T> emb = Tensor<T>::zeros({1, 64});
        const int half = 32;
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / (half - 1));
            emb[i] = (T)std::sin(t * freq);
            emb[half + i] = (T)std::cos(t * freq);
        }
        auto h = silu(linear(constant(tp, std::move(emb)), leaf(tp, p("time.l1.w")),
                             leaf(tp, p("time.l1.b"))));
        return linear(h, leaf(tp, p("time.l2.w")), leaf(tp, p("time.l2.b")));
    }

  private:
    Val<T> res_block(Tape<T>& tp, const std::string& pre, Val<T> x, Val<T> temb) const {
        const int ch = x.v().shape[0];
        auto h = silu(group_norm(x, groups_of(ch), leaf(tp, p(pre + ".gn1.g")),
                                 leaf(tp, p(pre + ".gn1.b"))));
        h = conv2d(h, leaf(tp, p(pre + ".conv1.w")), leaf(tp, p(pre + ".conv1.b")), 3, 1, 1);
        auto tb = linear(silu(temb), leaf(tp, p(pre + ".temb.w")), leaf(tp, p(pre + ".temb.b")));
        h = bias_per_channel(h, tb);
        h = silu(group_norm(h, groups_of(ch), leaf(tp, p(pre + ".gn2.g")),
                            leaf(tp, p(pre + ".gn2.b"))));
        h = conv2d(h, leaf(tp, p(pre + ".conv2.w")), leaf(tp, p(pre + ".conv2.b")), 3, 1, 1);
        return add(x, h);
    }

    // Base text cross-attention plus the decoupled history branch:
    // Z' = Z + lambda * Zc, then the shared output projection and residual.
    Val<T> attn_site(Tape<T>& tp, const std::string& site, Val<T> x, const DenoiserInput<T>& in,
                     Val<T> fusion_val, const std::vector<uint8_t>* fusion_mask,
                     const HistoryAdapter<T>* adapter) const {
        const int H = x.v().shape[1], W = x.v().shape[2];
        const std::string pre = site + ".attn";
        auto tokens = tokens_from_chw(group_norm(x, groups_of(x.v().shape[0]),
                                                 leaf(tp, p(pre + ".gn.g")),
                                                 leaf(tp, p(pre + ".gn.b"))));
        auto q = matmul(tokens, leaf(tp, p(pre + ".wq")));

        Val<T> z;
        if (in.prompt->non_pad() > 0) {
            auto ctx = constant(tp, in.prompt->tokens);
            auto k = matmul(ctx, leaf(tp, p(pre + ".wk")));
            auto v = matmul(ctx, leaf(tp, p(pre + ".wv")));
            z = scaled_dot_attention(q, k, v, in.prompt->mask).out;
        } else {
            // all-PAD prompt falls back to the learned null-context token
            auto nul = leaf(tp, p("null_ctx"));
            auto k = matmul(nul, leaf(tp, p(pre + ".wk")));
            auto v = matmul(nul, leaf(tp, p(pre + ".wv")));
            z = scaled_dot_attention(q, k, v).out;
        }

        // the mix short-circuits at lambda == 0 / absent fusion so the base
        // path is reproduced bit-for-bit
        if (fusion_val.valid() && in.lambda != T(0)) {
            if (!adapter) throw ConfigError("denoise_forward: fusion given but no adapter");
            auto kc = matmul(fusion_val, adapter_leaf(tp, *adapter, site + ".wk"));
            auto vc = matmul(fusion_val, adapter_leaf(tp, *adapter, site + ".wv"));
            auto zc = scaled_dot_attention(q, kc, vc,
                                           fusion_mask ? *fusion_mask : std::vector<uint8_t>{})
                          .out;
            z = add_scaled(z, zc, in.lambda);
        }
        if (!z.v().all_finite())
            throw NumericError("denoise_forward: non-finite activations at site " + site);
        auto out = matmul(z, leaf(tp, p(pre + ".wo")));
        return add(x, chw_from_tokens(out, H, W));
    }

    static Val<T> adapter_leaf(Tape<T>& tp, const HistoryAdapter<T>& a, const std::string& name) {
        return leaf(tp, a.p(name));
    }
};

// Z' = Z + lambda * Zc. Exact at lambda == 0 by skipping the addition.
template <typename T>
Tensor<T> mix(const Tensor<T>& z, const Tensor<T>& zc, T lambda) {
    if (!z.same_shape(zc)) throw DimensionError("mix: shape mismatch");
    if (lambda == T(0)) return z;
    Tensor<T> out = z;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += lambda * zc[i];
    return out;
}

template <typename T>
TextEmbedding<T> null_prompt(int dim) {
    TextEmbedding<T> e;
    e.tokens = Tensor<T>::zeros({kMaxTokens, dim});
    e.mask.assign(kMaxTokens, 0);
    return e;
}

} // namespace vista
