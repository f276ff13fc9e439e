#include "doctest.h"

#include <cmath>

#include "vista/fusion.hpp"
#include "vista/gradcheck.hpp"

using namespace vista;

namespace {

template <typename T>
TextEmbedding<T> make_text(int valid, int dim, uint64_t seed) {
    TextEmbedding<T> e;
    e.tokens = Tensor<T>::zeros({kMaxTokens, dim});
    e.mask.assign(kMaxTokens, 0);
    RngStream rng(seed, streams::kDataGen);
    for (int i = 0; i < valid; ++i) {
        e.mask[(size_t)i] = 1;
        for (int j = 0; j < dim; ++j) e.tokens.at(i, j) = (T)rng.next_normal();
    }
    return e;
}

template <typename T>
Tensor<T> make_image_emb(int rows, int dim, uint64_t seed) {
    RngStream rng(seed, streams::kDataGen);
    Tensor<T> m = Tensor<T>::zeros({rows, dim});
    for (auto& v : m.data) v = (T)rng.next_normal();
    return m;
}

} // namespace

TEST_CASE("concat_history shapes and copy semantics") {
    const auto text = make_text<float>(8, 64, 1);
    const auto img = make_image_emb<float>(64, 64, 2);
    const auto ctx = concat_history(text, img, 0);
    CHECK(ctx.rows.rows() == 72);
    CHECK(ctx.text_len == 8);
    CHECK(ctx.image_len == 64);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 64; ++j) CHECK(ctx.rows.at(i, j) == text.tokens.at(i, j));
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) CHECK(ctx.rows.at(8 + i, j) == img.at(i, j));

    // text-only variant
    const auto text_only = concat_history(text, Tensor<float>{}, 0);
    CHECK(text_only.rows.rows() == 8);

    const auto bad = make_image_emb<float>(4, 32, 3);
    CHECK_THROWS_AS((void)concat_history(text, bad, 0), DimensionError);
}

TEST_CASE("fuse with all-zero weights is the identity on the current prompt") {
    FusionModel<float> fusion(64, 4, RngStream(5, streams::kInit));
    for (auto& p : fusion.params.items) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
    const auto current = make_text<float>(6, 64, 7);
    const auto ctx = concat_history(make_text<float>(5, 64, 8), make_image_emb<float>(64, 64, 9), 0);
    const auto out = fusion.fuse_plain(current, ctx);
    for (int64_t i = 0; i < out.feature.numel(); ++i)
        CHECK(out.feature[i] == current.tokens[i]);
}

TEST_CASE("fuse hand-computed single-block 2-dim case") {
    // d=1 block, Lq=1, history length 1, dim 2; weights set by hand
    FusionModel<double> fusion(2, 1, RngStream(6, streams::kInit));
    auto set = [&](const std::string& name, std::vector<double> vals) {
        auto* p = fusion.params.find(name);
        REQUIRE(p != nullptr);
        REQUIRE((size_t)p->value.numel() == vals.size());
        for (size_t i = 0; i < vals.size(); ++i) p->value[(int64_t)i] = vals[i];
    };
    set("blk0.ln1.g", {1, 1});
    set("blk0.ln1.b", {0, 0});
    set("blk0.wq", {1, 0, 0, 1});
    set("blk0.wk", {1, 0, 0, 1});
    set("blk0.wv", {0.5, 0, 0, 0.5});
    set("blk0.wo", {1, 0, 0, 1});
    set("blk0.ln2.g", {1, 1});
    set("blk0.ln2.b", {0, 0});
    set("blk0.ffn.w1", std::vector<double>(2 * 8, 0.0));
    set("blk0.ffn.b1", std::vector<double>(8, 0.0));
    set("blk0.ffn.w2", std::vector<double>(8 * 2, 0.0));
    set("blk0.ffn.b2", {0, 0});

    TextEmbedding<double> cur;
    cur.tokens = Tensor<double>::zeros({kMaxTokens, 2});
    cur.mask.assign(kMaxTokens, 0);
    cur.mask[0] = 1;
    cur.tokens.at(0, 0) = 3.0;
    cur.tokens.at(0, 1) = 1.0;

    HistoryContext<double> ctx;
    ctx.rows = Tensor<double>::from({1, 2}, {2.0, -1.0});
    ctx.text_len = 1;

    // hand computation: LN([3,1]) = [1,-1] (eps shifts by ~2.5e-6);
    // q = [1,-1], k = [2,-1], v = [1,-0.5]; single key -> attention = v;
    // wo = I -> x = [3,1] + [1,-0.5] = [4, 0.5]; ffn = 0
    const auto out = fusion.fuse_plain(cur, ctx);
    CHECK(out.feature.at(0, 0) == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(out.feature.at(0, 1) == doctest::Approx(0.5).epsilon(1e-4));
    // PAD rows zero
    for (int i = 1; i < kMaxTokens; ++i) {
        CHECK(out.feature.at(i, 0) == 0.0);
        CHECK(out.feature.at(i, 1) == 0.0);
    }
}

TEST_CASE("fuse determinism and fuse_all independence") {
    FusionModel<float> fusion(64, 4, RngStream(7, streams::kInit));
    const auto current = make_text<float>(6, 64, 10);
    std::vector<HistoryContext<float>> hist;
    for (int i = 0; i < 3; ++i)
        hist.push_back(concat_history(make_text<float>(5, 64, 20 + (uint64_t)i),
                                      make_image_emb<float>(16, 64, 30 + (uint64_t)i), i));

    Tape<float> tp;
    tp.grad_enabled = false;
    const auto all = fusion.fuse_all(tp, current, hist);
    REQUIRE(all.size() == 3);
    for (int i = 0; i < 3; ++i) {
        const auto single = fusion.fuse_plain(current, hist[(size_t)i]);
        CHECK(single.feature.data == all[(size_t)i].feature.v().data);
    }

    // identical histories give identical features
    std::vector<HistoryContext<float>> same(3, hist[0]);
    Tape<float> tp2;
    tp2.grad_enabled = false;
    const auto rep = fusion.fuse_all(tp2, current, same);
    CHECK(rep[0].feature.v().data == rep[1].feature.v().data);
    CHECK(rep[1].feature.v().data == rep[2].feature.v().data);

    CHECK_THROWS_AS((void)fusion.fuse_all(tp2, current, {}), DimensionError);
}

TEST_CASE("fusion feature is sensitive to prompt and history image") {
    FusionModel<float> fusion(64, 4, RngStream(8, streams::kInit));
    const auto current = make_text<float>(6, 64, 11);
    const auto text_h = make_text<float>(5, 64, 12);
    const auto ctx_a = concat_history(text_h, make_image_emb<float>(16, 64, 13), 0);
    const auto ctx_b = concat_history(text_h, make_image_emb<float>(16, 64, 14), 0);

    const auto fa = fusion.fuse_plain(current, ctx_a);
    const auto fb = fusion.fuse_plain(current, ctx_b);
    double diff = 0.0;
    for (int64_t i = 0; i < fa.feature.numel(); ++i)
        diff = std::max(diff, std::abs((double)fa.feature[i] - fb.feature[i]));
    CHECK(diff > 1e-6); // swapping the history image changes c^F

    auto perturbed = current;
    perturbed.tokens.at(2, 5) += 0.25f;
    const auto fc = fusion.fuse_plain(perturbed, ctx_a);
    diff = 0.0;
    for (int64_t i = 0; i < fa.feature.numel(); ++i)
        diff = std::max(diff, std::abs((double)fa.feature[i] - fc.feature[i]));
    CHECK(diff > 1e-6); // changing a non-PAD current token changes c^F
}

TEST_CASE("block attention stays in the convex hull of projected values") {
    FusionModel<double> fusion(16, 2, RngStream(9, streams::kInit));
    const auto current = make_text<double>(4, 16, 15);
    const auto ctx = concat_history(make_text<double>(3, 16, 16), make_image_emb<double>(8, 16, 17), 0);

    Tape<double> tp;
    tp.grad_enabled = false;
    const auto out = fusion.fuse(tp, current, ctx);

    // recompute V projection and check block-0 attention rows
    auto* wv = fusion.params.find("blk0.wv");
    REQUIRE(wv != nullptr);
    const int lk = ctx.rows.rows();
    Tensor<double> v = Tensor<double>::zeros({lk, 16});
    for (int i = 0; i < lk; ++i)
        for (int j = 0; j < 16; ++j)
            for (int t = 0; t < 16; ++t) v.at(i, j) += ctx.rows.at(i, t) * wv->value.at(t, j);

    const Tensor<double>& logits = out.block_logits[0].v();
    for (int r = 0; r < kMaxTokens; ++r) {
        double mx = -1e300;
        for (int c = 0; c < lk; ++c) mx = std::max(mx, logits.at(r, c));
        double denom = 0.0;
        std::vector<double> w((size_t)lk);
        for (int c = 0; c < lk; ++c) denom += (w[(size_t)c] = std::exp(logits.at(r, c) - mx));
        for (int j = 0; j < 16; ++j) {
            double acc = 0.0, lo = 1e300, hi = -1e300;
            for (int c = 0; c < lk; ++c) {
                acc += w[(size_t)c] / denom * v.at(c, j);
                lo = std::min(lo, v.at(c, j));
                hi = std::max(hi, v.at(c, j));
            }
            CHECK(acc >= lo - 1e-9);
            CHECK(acc <= hi + 1e-9);
        }
    }
}

TEST_CASE("gradient of ||c^F||^2 w.r.t. W_q passes the fd check") {
    FusionModel<double> fusion(16, 2, RngStream(10, streams::kInit));
    const auto current = make_text<double>(4, 16, 18);
    const auto ctx = concat_history(make_text<double>(3, 16, 19), make_image_emb<double>(8, 16, 20), 0);

    auto build = [&](bool record) {
        Tape<double> tp;
        tp.grad_enabled = record;
        auto out = fusion.fuse(tp, current, ctx);
        auto loss = sum_sq(out.feature);
        if (record) tp.backward(loss.id);
        return (double)loss.v()[0];
    };
    fusion.params.zero_grads();
    build(true);
    std::vector<Parameter<double>*> probe = {fusion.params.find("blk0.wq"),
                                             fusion.params.find("blk1.wq"),
                                             fusion.params.find("blk0.wv")};
    auto rep = grad_check([&] { return build(false); }, probe, 1e-4, 8,
                          RngStream(2, streams::kGradCheck));
    CHECK(rep.max_rel_err < 1e-4);
}
