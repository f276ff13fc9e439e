#pragma once

#include <string>
#include <vector>

#include "vista/config.hpp"
#include "vista/scene.hpp"
#include "vista/tape.hpp"
#include "vista/vocab.hpp"

namespace vista {

// Token-level text embedding. PAD rows are zeroed; mask marks real tokens.
template <typename T>
struct TextEmbedding {
    Tensor<T> tokens; // [L x D]
    std::vector<uint8_t> mask;

    int non_pad() const {
        int n = 0;
        for (uint8_t m : mask) n += m ? 1 : 0;
        return n;
    }
};

// Small dual-tower encoder: token/positional tables plus two pre-norm
// self-attention blocks per modality, modality projection heads aligning
// both sides to the same dimension, and a learned contrastive temperature.
// Pretrained with symmetric InfoNCE, then frozen for conditioning and for
// the similarity metrics.
template <typename T>
class DualEncoder {
  public:
    int dim = 64;
    int blocks = 2;
    int patch = 4;
    int patch_rows = 0; // tokens per image
    int vocab_size = 0;
    ParamStore<T> params;

    DualEncoder(int dim_, int vocab_size_, RngStream rng);

    // Traced forwards (shared by training and inference).
    //
    // Conditioning tokens come from the embedding + positional layer: the
    // same word at the same position embeds identically in every caption,
    // which content-based history matching relies on. The self-attention
    // towers feed the pooled contrastive space only; trained with a
    // mean-pool InfoNCE they collapse their per-token states toward one
    // caption-level vector, so they cannot serve as token-level output.
    Val<T> text_tokens(Tape<T>& tp, const TokenSequence& seq) const;    // [L x D]
    Val<T> image_tokens(Tape<T>& tp, const Tensor<T>& image_hwc) const; // [P x D]
    Val<T> metric_text_tokens(Tape<T>& tp, const TokenSequence& seq) const;
    Val<T> metric_image_tokens(Tape<T>& tp, const Tensor<T>& image_hwc) const;
    Val<T> pooled_text(Tape<T>& tp, const TokenSequence& seq) const;    // [1 x D] unit
    Val<T> pooled_image(Tape<T>& tp, const Tensor<T>& image_hwc) const; // [1 x D] unit

    // Convenience inference wrappers.
    TextEmbedding<T> embed_text(const TokenSequence& seq) const;
    Tensor<T> embed_image(const Tensor<T>& image_hwc) const; // [P x D]
    Tensor<T> pooled_of_text(const TokenSequence& seq) const;
    Tensor<T> pooled_of_image(const Tensor<T>& image_hwc) const;

    Parameter<T>& logit_scale() { return *params.find("logit_scale"); }

    void freeze() { params.freeze_all(); }

  private:
    Val<T> tower(Tape<T>& tp, Val<T> x, const std::vector<uint8_t>& mask,
                 const std::string& prefix) const;
    Val<T> block(Tape<T>& tp, Val<T> x, const std::vector<uint8_t>& mask,
                 const std::string& prefix) const;
    Parameter<T>& p(const std::string& name) const;
};

// Patch grid as plain rows: [P x patch*patch*3] from an [H,W,3] image.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image_hwc, int patch);

template <typename T>
DualEncoder<T>::DualEncoder(int dim_, int vocab_size_, RngStream rng) {
    dim = dim_;
    vocab_size = vocab_size_;
    patch_rows = (kImageSize / patch) * (kImageSize / patch);
    const int pf = patch * patch * 3;

    auto add = [&](const std::string& name, std::vector<int> shape, double scale) {
        auto& prm = params.add(name, std::move(shape), Role::Encoder);
        if (scale > 0) init_normal(prm, rng, scale);
        return &prm;
    };
    auto add_ln = [&](const std::string& prefix) {
        init_constant(params.add(prefix + ".g", {dim}, Role::Encoder), T(1));
        params.add(prefix + ".b", {dim}, Role::Encoder);
    };

    add("text.tok", {vocab_size, dim}, 0.02);
    add("text.pos", {kMaxTokens, dim}, 0.01);
    add_ln("text.ln0");
    add("image.patch.w", {pf, dim}, 0.08);
    add("image.patch.b", {dim}, 0.0);
    add("image.pos", {patch_rows, dim}, 0.01);
    add_ln("image.ln0");

    for (const std::string side : {"text", "image"}) {
        for (int b = 0; b < blocks; ++b) {
            const std::string pre = side + ".blk" + std::to_string(b);
            add_ln(pre + ".ln1");
            add(pre + ".wq", {dim, dim}, 0.05);
            add(pre + ".wk", {dim, dim}, 0.05);
            add(pre + ".wv", {dim, dim}, 0.05);
            add(pre + ".wo", {dim, dim}, 0.05);
            add_ln(pre + ".ln2");
            add(pre + ".ffn.w1", {dim, 4 * dim}, 0.05);
            add(pre + ".ffn.b1", {4 * dim}, 0.0);
            add(pre + ".ffn.w2", {4 * dim, dim}, 0.05);
            add(pre + ".ffn.b2", {dim}, 0.0);
        }
        add_ln(side + ".lnf");
        add(side + ".proj", {dim, dim}, 0.05);
    }
    // CLIP-style learnable temperature, init ln(1/0.07)
    init_constant(params.add("logit_scale", {1}, Role::Encoder), (T)2.6592600369);
}

template <typename T>
Parameter<T>& DualEncoder<T>::p(const std::string& name) const {
    auto* prm = const_cast<ParamStore<T>&>(params).find(name);
    if (!prm) throw ConfigError("encoder parameter missing: " + name);
    return *prm;
}

template <typename T>
Val<T> DualEncoder<T>::block(Tape<T>& tp, Val<T> x, const std::vector<uint8_t>& mask,
                             const std::string& prefix) const {
    auto ln1 = layer_norm(x, leaf(tp, p(prefix + ".ln1.g")), leaf(tp, p(prefix + ".ln1.b")));
    auto q = matmul(ln1, leaf(tp, p(prefix + ".wq")));
    auto k = matmul(ln1, leaf(tp, p(prefix + ".wk")));
    auto v = matmul(ln1, leaf(tp, p(prefix + ".wv")));
    auto att = scaled_dot_attention(q, k, v, mask);
    x = add(x, matmul(att.out, leaf(tp, p(prefix + ".wo"))));
    auto ln2 = layer_norm(x, leaf(tp, p(prefix + ".ln2.g")), leaf(tp, p(prefix + ".ln2.b")));
    auto h = gelu(linear(ln2, leaf(tp, p(prefix + ".ffn.w1")), leaf(tp, p(prefix + ".ffn.b1"))));
    return add(x, linear(h, leaf(tp, p(prefix + ".ffn.w2")), leaf(tp, p(prefix + ".ffn.b2"))));
}

template <typename T>
Val<T> DualEncoder<T>::tower(Tape<T>& tp, Val<T> x, const std::vector<uint8_t>& mask,
                             const std::string& prefix) const {
    for (int b = 0; b < blocks; ++b) x = block(tp, x, mask, prefix + ".blk" + std::to_string(b));
    x = layer_norm(x, leaf(tp, p(prefix + ".lnf.g")), leaf(tp, p(prefix + ".lnf.b")));
    return matmul(x, leaf(tp, p(prefix + ".proj")));
}

template <typename T>
Val<T> DualEncoder<T>::text_tokens(Tape<T>& tp, const TokenSequence& seq) const {
    auto emb = gather_rows(leaf(tp, p("text.tok")), seq.ids);
    std::vector<int> pos_ids(kMaxTokens);
    for (int i = 0; i < kMaxTokens; ++i) pos_ids[(size_t)i] = i;
    auto pos = gather_rows(leaf(tp, p("text.pos")), pos_ids);
    // scale alignment across modalities: every context row a downstream
    // attention sees is row-normalized
    auto tok0 = layer_norm(add(emb, pos), leaf(tp, p("text.ln0.g")), leaf(tp, p("text.ln0.b")));
    return zero_rows(tok0, seq.mask);
}

template <typename T>
Val<T> DualEncoder<T>::metric_text_tokens(Tape<T>& tp, const TokenSequence& seq) const {
    auto tok0 = text_tokens(tp, seq);
    auto x = tower(tp, tok0, seq.mask, "text");
    return zero_rows(x, seq.mask);
}

namespace detail {
template <typename T>
void check_image_shape(const Tensor<T>& image_hwc) {
    if (image_hwc.ndim() != 3 || image_hwc.shape[0] != kImageSize ||
        image_hwc.shape[1] != kImageSize || image_hwc.shape[2] != 3)
        throw DimensionError("encode_image: expected " + std::to_string(kImageSize) + "x" +
                             std::to_string(kImageSize) + "x3 image");
}
} // namespace detail

template <typename T>
Val<T> DualEncoder<T>::image_tokens(Tape<T>& tp, const Tensor<T>& image_hwc) const {
    detail::check_image_shape(image_hwc);
    auto patches = constant(tp, patchify(image_hwc, patch));
    auto x = linear(patches, leaf(tp, p("image.patch.w")), leaf(tp, p("image.patch.b")));
    std::vector<int> pos_ids(patch_rows);
    for (int i = 0; i < patch_rows; ++i) pos_ids[(size_t)i] = i;
    x = add(x, gather_rows(leaf(tp, p("image.pos")), pos_ids));
    return layer_norm(x, leaf(tp, p("image.ln0.g")), leaf(tp, p("image.ln0.b")));
}

template <typename T>
Val<T> DualEncoder<T>::metric_image_tokens(Tape<T>& tp, const Tensor<T>& image_hwc) const {
    auto x = image_tokens(tp, image_hwc);
    return tower(tp, x, {}, "image");
}

template <typename T>
Val<T> DualEncoder<T>::pooled_text(Tape<T>& tp, const TokenSequence& seq) const {
    auto toks = metric_text_tokens(tp, seq);
    return l2_normalize_row(masked_mean_rows(toks, seq.mask));
}

template <typename T>
Val<T> DualEncoder<T>::pooled_image(Tape<T>& tp, const Tensor<T>& image_hwc) const {
    auto toks = metric_image_tokens(tp, image_hwc);
    std::vector<uint8_t> all(toks.v().rows(), 1);
    return l2_normalize_row(masked_mean_rows(toks, all));
}

template <typename T>
TextEmbedding<T> DualEncoder<T>::embed_text(const TokenSequence& seq) const {
    Tape<T> tp;
    tp.grad_enabled = false;
    TextEmbedding<T> out;
    out.tokens = text_tokens(tp, seq).v();
    out.mask = seq.mask;
    return out;
}

template <typename T>
Tensor<T> DualEncoder<T>::embed_image(const Tensor<T>& image_hwc) const {
    Tape<T> tp;
    tp.grad_enabled = false;
    return image_tokens(tp, image_hwc).v();
}

template <typename T>
Tensor<T> DualEncoder<T>::pooled_of_text(const TokenSequence& seq) const {
    Tape<T> tp;
    tp.grad_enabled = false;
    return pooled_text(tp, seq).v();
}

template <typename T>
Tensor<T> DualEncoder<T>::pooled_of_image(const Tensor<T>& image_hwc) const {
    Tape<T> tp;
    tp.grad_enabled = false;
    return pooled_image(tp, image_hwc).v();
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image_hwc, int patch) {
    const int grid = kImageSize / patch;
    const int pf = patch * patch * 3;
    Tensor<T> out = Tensor<T>::zeros({grid * grid, pf});
    for (int py = 0; py < grid; ++py)
        for (int px = 0; px < grid; ++px) {
            const int row = py * grid + px;
            int f = 0;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int c = 0; c < 3; ++c)
                        out.at(row, f++) =
                            image_hwc.at3(py * patch + dy, px * patch + dx, c);
        }
    return out;
}

} // namespace vista
