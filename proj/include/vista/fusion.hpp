#pragma once

#include <string>
#include <vector>

#include "vista/encoder.hpp"
#include "vista/tape.hpp"

namespace vista {

// Concatenated key/value sequence built from one history pair: the history
// prompt's non-PAD token embeddings followed by the history image's patch
// embeddings. Text comes first; the image part may be empty (text-only
// ablation) and vice versa.
template <typename T>
struct HistoryContext {
    Tensor<T> rows; // [(Lp + Li) x D]
    int pair_index = 0;
    int text_len = 0;
    int image_len = 0;
};

template <typename T>
HistoryContext<T> concat_history(const TextEmbedding<T>& cp, const Tensor<T>& ci, int pair_index) {
    const bool has_image = ci.numel() > 0;
    if (has_image && (ci.ndim() != 2 || ci.cols() != cp.tokens.cols()))
        throw DimensionError("concat_history: text/image dims differ");
    HistoryContext<T> ctx;
    ctx.pair_index = pair_index;
    ctx.text_len = cp.non_pad();
    ctx.image_len = has_image ? ci.rows() : 0;
    const int d = cp.tokens.cols();
    ctx.rows = Tensor<T>::zeros({ctx.text_len + ctx.image_len, d});
    int r = 0;
    for (int i = 0; i < cp.tokens.rows(); ++i) {
        if (!cp.mask[(size_t)i]) continue;
        for (int j = 0; j < d; ++j) ctx.rows.at(r, j) = cp.tokens.at(i, j);
        ++r;
    }
    for (int i = 0; i < ctx.image_len; ++i, ++r)
        for (int j = 0; j < d; ++j) ctx.rows.at(r, j) = ci.at(i, j);
    return ctx;
}

// Per-current-token fusion feature plus its query validity mask.
template <typename T>
struct FusionFeature {
    Tensor<T> feature; // [Lq x D], PAD query rows exactly zero
    std::vector<uint8_t> mask;
    int source_history_index = -1;
};

// Multi-modal history fusion: d pre-norm blocks of cross-attention from the
// current prompt onto one history context, followed by a feed-forward. The
// current prompt enters block 1 as the query; deeper blocks refine the
// previous block's output. Block logits are retained for salient history
// selection.
template <typename T>
class FusionModel {
  public:
    int dim = 64;
    int blocks = 4;
    ParamStore<T> params;

    FusionModel(int dim_, int blocks_, RngStream rng) : dim(dim_), blocks(blocks_) {
        auto add = [&](const std::string& name, std::vector<int> shape, double scale) {
            auto& prm = params.add(name, std::move(shape), Role::TrainableFusion);
            if (scale > 0) init_normal(prm, rng, scale);
            return &prm;
        };
        for (int b = 0; b < blocks; ++b) {
            const std::string pre = "blk" + std::to_string(b);
            init_constant(params.add(pre + ".ln1.g", {dim}, Role::TrainableFusion), T(1));
            params.add(pre + ".ln1.b", {dim}, Role::TrainableFusion);
            // near-identity q/k start so raw attention logits begin as
            // content similarity between current tokens and history rows
            init_identity_noise(params.add(pre + ".wq", {dim, dim}, Role::TrainableFusion), rng,
                                0.02);
            init_identity_noise(params.add(pre + ".wk", {dim, dim}, Role::TrainableFusion), rng,
                                0.02);
            add(pre + ".wv", {dim, dim}, 0.05);
            add(pre + ".wo", {dim, dim}, 0.05);
            init_constant(params.add(pre + ".ln2.g", {dim}, Role::TrainableFusion), T(1));
            params.add(pre + ".ln2.b", {dim}, Role::TrainableFusion);
            add(pre + ".ffn.w1", {dim, 4 * dim}, 0.05);
            params.add(pre + ".ffn.b1", {4 * dim}, Role::TrainableFusion);
            add(pre + ".ffn.w2", {4 * dim, dim}, 0.05);
            params.add(pre + ".ffn.b2", {dim}, Role::TrainableFusion);
        }
    }

    struct FuseOut {
        Val<T> feature;                 // [Lq x D], PAD rows zeroed
        std::vector<Val<T>> block_logits; // each [Lq x Lk], pre-softmax
    };

    FuseOut fuse(Tape<T>& tp, const TextEmbedding<T>& current,
                 const HistoryContext<T>& history) const {
        if (current.non_pad() < 1) throw DimensionError("fuse: current prompt has no tokens");
        if (history.rows.rows() < 1) throw DimensionError("fuse: empty history context");
        FuseOut out;
        auto x = constant(tp, current.tokens);
        auto ctx = constant(tp, history.rows);
        for (int b = 0; b < blocks; ++b) {
            const std::string pre = "blk" + std::to_string(b);
            auto qn = layer_norm(x, leaf(tp, p(pre + ".ln1.g")), leaf(tp, p(pre + ".ln1.b")));
            auto q = matmul(qn, leaf(tp, p(pre + ".wq")));
            auto k = matmul(ctx, leaf(tp, p(pre + ".wk")));
            auto v = matmul(ctx, leaf(tp, p(pre + ".wv")));
            auto att = scaled_dot_attention(q, k, v);
            out.block_logits.push_back(att.logits);
            x = add(x, matmul(att.out, leaf(tp, p(pre + ".wo"))));
            auto f = layer_norm(x, leaf(tp, p(pre + ".ln2.g")), leaf(tp, p(pre + ".ln2.b")));
            auto h = gelu(linear(f, leaf(tp, p(pre + ".ffn.w1")), leaf(tp, p(pre + ".ffn.b1"))));
            x = add(x, linear(h, leaf(tp, p(pre + ".ffn.w2")), leaf(tp, p(pre + ".ffn.b2"))));
        }
        out.feature = zero_rows(x, current.mask);
        return out;
    }

    // Runs fuse once per history pair; raw block-1 logits feed salience.
    std::vector<FuseOut> fuse_all(Tape<T>& tp, const TextEmbedding<T>& current,
                                  const std::vector<HistoryContext<T>>& histories) const {
        if (histories.empty()) throw DimensionError("fuse_all: no history pairs");
        std::vector<FuseOut> out;
        out.reserve(histories.size());
        for (const auto& h : histories) out.push_back(fuse(tp, current, h));
        return out;
    }

    FusionFeature<T> fuse_plain(const TextEmbedding<T>& current,
                                const HistoryContext<T>& history) const {
        Tape<T> tp;
        tp.grad_enabled = false;
        auto r = fuse(tp, current, history);
        FusionFeature<T> f;
        f.feature = r.feature.v();
        f.mask = current.mask;
        f.source_history_index = history.pair_index;
        return f;
    }

  private:
    Parameter<T>& p(const std::string& name) const {
        auto* prm = const_cast<ParamStore<T>&>(params).find(name);
        if (!prm) throw ConfigError("fusion parameter missing: " + name);
        return *prm;
    }
};

} // namespace vista
