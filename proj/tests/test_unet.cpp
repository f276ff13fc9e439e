#include "doctest.h"

#include <cmath>
#include <cstring>

#include "vista/diffusion.hpp"
#include "vista/gradcheck.hpp"
#include "vista/unet.hpp"

using namespace vista;

namespace {

template <typename T>
TextEmbedding<T> make_prompt(int valid, int dim, uint64_t seed) {
    TextEmbedding<T> e;
    e.tokens = Tensor<T>::zeros({kMaxTokens, dim});
    e.mask.assign(kMaxTokens, 0);
    RngStream rng(seed, streams::kDataGen);
    for (int i = 0; i < valid; ++i) {
        e.mask[(size_t)i] = 1;
        for (int j = 0; j < dim; ++j) e.tokens.at(i, j) = (T)(rng.next_normal() * 0.5);
    }
    return e;
}

template <typename T>
Tensor<T> random_chw(std::vector<int> shape, uint64_t seed) {
    RngStream rng(seed, streams::kNoise);
    Tensor<T> x = Tensor<T>::zeros(std::move(shape));
    for (auto& v : x.data) v = (T)rng.next_normal();
    return x;
}

template <typename T>
FusionFeature<T> make_fusion(int dim, uint64_t seed) {
    FusionFeature<T> f;
    f.feature = Tensor<T>::zeros({kMaxTokens, dim});
    f.mask.assign(kMaxTokens, 0);
    RngStream rng(seed, streams::kDataGen);
    for (int i = 0; i < 7; ++i) {
        f.mask[(size_t)i] = 1;
        for (int j = 0; j < dim; ++j) f.feature.at(i, j) = (T)rng.next_normal();
    }
    return f;
}

} // namespace

TEST_CASE("denoiser output shape matches input") {
    UNet<float> unet(64, RngStream(1, streams::kInit));
    const auto prompt = make_prompt<float>(9, 64, 2);
    const Tensor<float> x = random_chw<float>({3, 32, 32}, 3);
    DenoiserInput<float> in;
    in.x_t = &x;
    in.t = 500;
    in.prompt = &prompt;
    const Tensor<float> out = unet.predict(in, nullptr);
    CHECK(out.shape == std::vector<int>{3, 32, 32});
}

TEST_CASE("lambda = 0 is bit-identical to the base-only model") {
    UNet<float> unet(64, RngStream(4, streams::kInit));
    HistoryAdapter<float> adapter(64, RngStream(5, streams::kInit));
    // make the adapter non-trivial
    for (auto& p : adapter.params.items)
        for (auto& v : p->value.data) v += 0.05f;

    for (uint64_t rep = 0; rep < 10; ++rep) {
        const auto prompt = make_prompt<float>(6, 64, 10 + rep);
        const auto fusion = make_fusion<float>(64, 100 + rep);
        const Tensor<float> x = random_chw<float>({3, 32, 32}, 200 + rep);
        DenoiserInput<float> base_in;
        base_in.x_t = &x;
        base_in.t = (int)(37 * rep % 1000);
        base_in.prompt = &prompt;
        const Tensor<float> base = unet.predict(base_in, nullptr);

        DenoiserInput<float> mixed_in = base_in;
        mixed_in.fusion = &fusion;
        mixed_in.lambda = 0.0f;
        const Tensor<float> mixed = unet.predict(mixed_in, &adapter);
        CHECK(std::memcmp(base.data.data(), mixed.data.data(),
                          base.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("fusion feature perturbation changes the prediction at lambda 0.5") {
    UNet<float> unet(64, RngStream(6, streams::kInit));
    HistoryAdapter<float> adapter(64, RngStream(7, streams::kInit));
    // non-zero V so the adapter branch is live
    for (const auto& site : unet_sites()) {
        auto& wv = adapter.p(site.name + ".wv");
        RngStream r(11, streams::kInit);
        for (auto& v : wv.value.data) v = (float)(r.next_normal() * 0.05);
    }
    const auto prompt = make_prompt<float>(6, 64, 12);
    auto fusion = make_fusion<float>(64, 13);
    const Tensor<float> x = random_chw<float>({3, 32, 32}, 14);

    DenoiserInput<float> in;
    in.x_t = &x;
    in.t = 250;
    in.prompt = &prompt;
    in.fusion = &fusion;
    in.lambda = 0.5f;
    const Tensor<float> a = unet.predict(in, &adapter);

    fusion.feature.at(0, 0) += 0.5f;
    const Tensor<float> b = unet.predict(in, &adapter);
    double diff = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        diff = std::max(diff, std::abs((double)a[i] - b[i]));
    CHECK(diff > 1e-7);

    // zero adapter V-projection silences the branch entirely
    for (const auto& site : unet_sites()) {
        auto& wv = adapter.p(site.name + ".wv");
        std::fill(wv.value.data.begin(), wv.value.data.end(), 0.0f);
    }
    const Tensor<float> silent = unet.predict(in, &adapter);
    DenoiserInput<float> base_in = in;
    base_in.fusion = nullptr;
    base_in.lambda = 0.0f;
    const Tensor<float> base = unet.predict(base_in, nullptr);
    for (int64_t i = 0; i < base.numel(); ++i) CHECK(silent[i] == base[i]);
}

TEST_CASE("PAD masking equals physically removing PAD tokens") {
    UNet<float> unet(64, RngStream(8, streams::kInit));
    auto prompt = make_prompt<float>(5, 64, 15);

    // same content, no PAD rows at all
    TextEmbedding<float> packed;
    packed.tokens = Tensor<float>::zeros({5, 64});
    packed.mask.assign(5, 1);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 64; ++j) packed.tokens.at(i, j) = prompt.tokens.at(i, j);

    const Tensor<float> x = random_chw<float>({3, 32, 32}, 16);
    DenoiserInput<float> in;
    in.x_t = &x;
    in.t = 700;
    in.prompt = &prompt;
    const Tensor<float> a = unet.predict(in, nullptr);
    in.prompt = &packed;
    const Tensor<float> b = unet.predict(in, nullptr);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK((double)a[i] == doctest::Approx((double)b[i]).epsilon(1e-6));
}

TEST_CASE("all-PAD prompt falls back to the null context token") {
    UNet<float> unet(64, RngStream(9, streams::kInit));
    const auto null_p = null_prompt<float>(64);
    const Tensor<float> x = random_chw<float>({3, 32, 32}, 17);
    DenoiserInput<float> in;
    in.x_t = &x;
    in.t = 10;
    in.prompt = &null_p;
    const Tensor<float> a = unet.predict(in, nullptr);
    const Tensor<float> b = unet.predict(in, nullptr);
    CHECK(a.data == b.data);
    CHECK(a.all_finite());

    // and differs from a real prompt
    const auto prompt = make_prompt<float>(6, 64, 18);
    in.prompt = &prompt;
    const Tensor<float> c = unet.predict(in, nullptr);
    double diff = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        diff = std::max(diff, std::abs((double)a[i] - c[i]));
    CHECK(diff > 1e-7);
}

TEST_CASE("timestep embedding is injected: predictions differ across t") {
    UNet<float> unet(64, RngStream(19, streams::kInit));
    const auto prompt = make_prompt<float>(6, 64, 20);
    const Tensor<float> x = random_chw<float>({3, 32, 32}, 21);
    DenoiserInput<float> in;
    in.x_t = &x;
    in.prompt = &prompt;
    in.t = 1;
    const Tensor<float> a = unet.predict(in, nullptr);
    in.t = 900;
    const Tensor<float> b = unet.predict(in, nullptr);
    double diff = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        diff = std::max(diff, std::abs((double)a[i] - b[i]));
    CHECK(diff > 1e-7);
}

TEST_CASE("freeze_base flips roles and blocks updates; trainable share is small") {
    UNet<float> unet(64, RngStream(22, streams::kInit));
    HistoryAdapter<float> adapter(64, RngStream(23, streams::kInit));
    FusionModel<float> fusion(64, 4, RngStream(24, streams::kInit));

    CHECK_FALSE(unet.is_frozen());
    unet.freeze_base();
    CHECK(unet.is_frozen());
    for (const auto& p : unet.params.items) CHECK(p->role == Role::FrozenBase);

    AdamW<float> opt;
    CHECK_THROWS_AS(opt.step({unet.params.find("stem.w")}), FrozenViolation);

    const int64_t base_count = unet.params.param_count();
    const int64_t trainable = adapter.params.param_count() + fusion.params.param_count();
    CHECK(trainable * 3 < base_count); // adapter + fusion are much smaller
}

TEST_CASE("frozen base accumulates no gradient during adapter training") {
    UNet<double> unet(64, RngStream(25, streams::kInit));
    unet.freeze_base();
    HistoryAdapter<double> adapter(64, RngStream(26, streams::kInit));
    for (auto& p : adapter.params.items)
        for (auto& v : p->value.data) v += 0.02;

    const auto prompt = make_prompt<double>(5, 64, 27);
    const auto fusion = make_fusion<double>(64, 28);
    const Tensor<double> x0 = random_chw<double>({3, 16, 16}, 29);
    Tensor<double> eps = random_chw<double>({3, 16, 16}, 30);

    const NoiseSchedule sched = NoiseSchedule::linear(1000);
    Tape<double> tp;
    auto loss = denoising_loss(tp, unet, &adapter, x0, 123, eps, prompt, &fusion, 0.5, sched);
    tp.backward(loss.id);

    double base_grad = 0.0, adapter_grad = 0.0;
    for (const auto& p : unet.params.items)
        for (auto g : p->grad.data) base_grad += std::abs(g);
    for (const auto& p : adapter.params.items)
        for (auto g : p->grad.data) adapter_grad += std::abs(g);
    CHECK(base_grad == 0.0);
    CHECK(adapter_grad > 0.0);
}

TEST_CASE("full-stack gradient check: loss through adapter and denoiser to fusion") {
    UNet<double> unet(16, RngStream(31, streams::kInit));
    unet.freeze_base();
    HistoryAdapter<double> adapter(16, RngStream(32, streams::kInit));
    for (auto& p : adapter.params.items)
        for (auto& v : p->value.data) v += 0.03;
    FusionModel<double> fusion(16, 2, RngStream(33, streams::kInit));

    TextEmbedding<double> current = make_prompt<double>(4, 16, 34);
    TextEmbedding<double> hist_text = make_prompt<double>(3, 16, 35);
    RngStream ir(36, streams::kDataGen);
    Tensor<double> hist_img = Tensor<double>::zeros({6, 16});
    for (auto& v : hist_img.data) v = ir.next_normal();
    const HistoryContext<double> ctx = concat_history(hist_text, hist_img, 0);

    const Tensor<double> x0 = random_chw<double>({3, 16, 16}, 37);
    Tensor<double> eps = random_chw<double>({3, 16, 16}, 38);
    const NoiseSchedule sched = NoiseSchedule::linear(1000);

    auto build = [&](bool record) {
        Tape<double> tp;
        tp.grad_enabled = record;
        auto fused = fusion.fuse(tp, current, ctx);
        auto loss = denoising_loss_traced(tp, unet, &adapter, x0, 321, eps, current, fused.feature,
                                          &current.mask, 0.5, sched);
        if (record) tp.backward(loss.id);
        return (double)loss.v()[0];
    };
    fusion.params.zero_grads();
    adapter.params.zero_grads();
    build(true);

    std::vector<Parameter<double>*> probe = {
        fusion.params.find("blk0.wq"), fusion.params.find("blk1.wv"),
        adapter.params.find("mid.wk"), adapter.params.find("down1.wv"),
        adapter.params.find("up2.wv")};
    auto rep = grad_check([&] { return build(false); }, probe, 1e-3, 4,
                          RngStream(5, streams::kGradCheck));
    CHECK(rep.max_rel_err < 1e-4);
}
