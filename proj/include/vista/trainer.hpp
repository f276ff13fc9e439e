#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <vector>

#include "vista/config.hpp"
#include "vista/dataset.hpp"
#include "vista/diffusion.hpp"
#include "vista/encoder.hpp"
#include "vista/fusion.hpp"
#include "vista/unet.hpp"
#include "vista/vocab.hpp"

namespace vista {

struct TrainResult {
    std::vector<double> loss_curve;
    int skipped_batches = 0;
};

using StepCallback = std::function<void(int step, double loss)>;

namespace detail {

template <typename T>
std::vector<Parameter<T>*> trainables(ParamStore<T>& store) {
    std::vector<Parameter<T>*> out;
    for (auto& p : store.items)
        if (!p->frozen && p->role != Role::FrozenBase) out.push_back(p.get());
    return out;
}

template <typename T>
void scale_grads(const std::vector<Parameter<T>*>& params, T s) {
    for (auto* p : params)
        for (auto& g : p->grad.data) g *= s;
}

// one frame index -> (story, frame) over the whole corpus
struct FrameIndex {
    std::vector<std::pair<int, int>> frames;
    explicit FrameIndex(const Corpus& c) {
        for (size_t s = 0; s < c.stories.size(); ++s)
            for (size_t f = 0; f < c.stories[s].frames.size(); ++f)
                frames.push_back({(int)s, (int)f});
    }
};

} // namespace detail

// Stage 0: symmetric InfoNCE over pooled text/image embeddings with a
// learned temperature. Batches with fewer than two distinct captions are
// degenerate and get skipped with a warning.
template <typename T>
TrainResult pretrain_encoder(DualEncoder<T>& enc, const Corpus& corpus, const Vocabulary& vocab,
                             const Config& cfg, const StepCallback& on_step = {}) {
    detail::FrameIndex index(corpus);
    const int batch = std::max(4, cfg.batch);
    AdamW<T> opt;
    opt.lr = (T)1e-3;
    opt.weight_decay = (T)cfg.weight_decay;
    auto params = detail::trainables(enc.params);
    RngStream batch_rng(cfg.seed, streams::kBatch);

    TrainResult res;
    for (int step = 0; step < cfg.stage0_steps; ++step) {
        std::vector<std::pair<int, int>> picks;
        std::set<std::string> captions;
        for (int b = 0; b < batch; ++b) {
            const auto& pick = index.frames[(size_t)batch_rng.next_below(index.frames.size())];
            picks.push_back(pick);
            captions.insert(corpus.stories[(size_t)pick.first].frames[(size_t)pick.second].caption);
        }
        if (captions.size() < 2) {
            std::fprintf(stderr, "pretrain_encoder: degenerate batch at step %d, skipped\n", step);
            ++res.skipped_batches;
            continue;
        }

        Tape<T> tp;
        Val<T> text_rows, image_rows;
        for (int b = 0; b < batch; ++b) {
            const auto& frame =
                corpus.stories[(size_t)picks[(size_t)b].first].frames[(size_t)picks[(size_t)b].second];
            auto pt = enc.pooled_text(tp, vocab.tokenize(frame.caption));
            auto pi = enc.pooled_image(tp, frame.image.template cast<T>());
            text_rows = b == 0 ? pt : concat_rows(text_rows, pt);
            image_rows = b == 0 ? pi : concat_rows(image_rows, pi);
        }
        auto logits = scale_by(matmul(text_rows, transpose(image_rows)),
                               exp_scalar(leaf(tp, enc.logit_scale())));
        auto loss_t = cross_entropy_diag(logits);
        auto loss_i = cross_entropy_diag(transpose(logits));
        auto loss = scale(add(loss_t, loss_i), T(0.5));

        enc.params.zero_grads();
        tp.backward(loss.id);
        opt.step(params);
        // CLIP-style temperature clamp
        auto& ls = enc.logit_scale();
        ls.value[0] = std::min(ls.value[0], (T)std::log(100.0));

        res.loss_curve.push_back((double)loss.v()[0]);
        if (on_step) on_step(step, res.loss_curve.back());
    }
    enc.freeze();
    return res;
}

// Stage 1: text-conditioned denoiser pretraining on single frames. The
// prompt drops to the null context with probability cond_dropout so the
// unconditional branch exists for classifier-free guidance.
template <typename T>
TrainResult pretrain_denoiser(UNet<T>& unet, const DualEncoder<T>& enc, const Corpus& corpus,
                              const Vocabulary& vocab, const Config& cfg,
                              const StepCallback& on_step = {}) {
    detail::FrameIndex index(corpus);
    const NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps);
    AdamW<T> opt;
    opt.lr = (T)cfg.lr_stage1;
    opt.weight_decay = (T)cfg.weight_decay;
    auto params = detail::trainables(unet.params);
    RngStream batch_rng(cfg.seed, streams::kBatch);
    RngStream noise_rng(cfg.seed, streams::kNoise);
    RngStream drop_rng(cfg.seed, streams::kDropout);
    const TextEmbedding<T> null_p = null_prompt<T>(enc.dim);

    TrainResult res;
    for (int step = 0; step < cfg.stage1_steps; ++step) {
        unet.params.zero_grads();
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& pick = index.frames[(size_t)batch_rng.next_below(index.frames.size())];
            const auto& frame = corpus.stories[(size_t)pick.first].frames[(size_t)pick.second];
            const Tensor<T> x0 = chw_from_hwc01(frame.image.template cast<T>());
            const int t = (int)noise_rng.next_below((uint64_t)cfg.timesteps);
            Tensor<T> eps = Tensor<T>::zeros(x0.shape);
            for (auto& v : eps.data) v = (T)noise_rng.next_normal();
            const bool drop = drop_rng.next_unit() < cfg.cond_dropout;
            const TextEmbedding<T> prompt =
                drop ? null_p : enc.embed_text(vocab.tokenize(frame.caption));

            Tape<T> tp;
            auto loss = denoising_loss<T>(tp, unet, nullptr, x0, t, eps, prompt, nullptr, T(0),
                                          sched);
            tp.backward(loss.id);
            batch_loss += (double)loss.v()[0];
        }
        detail::scale_grads(params, (T)(1.0 / cfg.batch));
        opt.step(params);
        res.loss_curve.push_back(batch_loss / cfg.batch);
        if (on_step) on_step(step, res.loss_curve.back());
    }
    return res;
}

// Stage 2: four-tuple training of the fusion model and history adapter with
// the base denoiser frozen. Gradients flow through the frozen base into the
// adapter and fusion weights but never accumulate on base parameters. With
// probability cond_dropout the prompt and history drop jointly.
template <typename T>
TrainResult train_adapter(FusionModel<T>& fusion, HistoryAdapter<T>& adapter, const UNet<T>& unet,
                          const DualEncoder<T>& enc, const Corpus& corpus, const Vocabulary& vocab,
                          const Config& cfg, const StepCallback& on_step = {}) {
    if (!unet.is_frozen()) throw FrozenViolation("train_adapter: base denoiser is not frozen");
    const auto tuples = extract_four_tuples(corpus);
    const NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps);
    AdamW<T> opt;
    opt.lr = (T)cfg.lr;
    opt.weight_decay = (T)cfg.weight_decay;
    std::vector<Parameter<T>*> params = detail::trainables(fusion.params);
    for (auto* p : detail::trainables(adapter.params)) params.push_back(p);
    RngStream batch_rng(cfg.seed + 1, streams::kBatch);
    RngStream noise_rng(cfg.seed + 1, streams::kNoise);
    RngStream drop_rng(cfg.seed + 1, streams::kDropout);
    const TextEmbedding<T> null_p = null_prompt<T>(enc.dim);

    TrainResult res;
    for (int step = 0; step < cfg.stage2_steps; ++step) {
        fusion.params.zero_grads();
        adapter.params.zero_grads();
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& tup = tuples[(size_t)batch_rng.next_below(tuples.size())];
            const auto& story = corpus.stories[(size_t)tup.story_index];
            const Frame& hist = story.frames[(size_t)tup.k];
            const Frame& target = story.frames[(size_t)tup.k + 1];

            const Tensor<T> x0 = chw_from_hwc01(target.image.template cast<T>());
            const int t = (int)noise_rng.next_below((uint64_t)cfg.timesteps);
            Tensor<T> eps = Tensor<T>::zeros(x0.shape);
            for (auto& v : eps.data) v = (T)noise_rng.next_normal();
            const bool drop = drop_rng.next_unit() < cfg.cond_dropout;

            Tape<T> tp;
            Val<T> loss;
            if (drop) {
                loss = denoising_loss_traced(tp, unet, &adapter, x0, t, eps, null_p, Val<T>{},
                                             nullptr, T(0), sched);
            } else {
                const TextEmbedding<T> current = enc.embed_text(vocab.tokenize(target.caption));
                const TextEmbedding<T> hist_text = enc.embed_text(vocab.tokenize(hist.caption));
                const Tensor<T> hist_img = enc.embed_image(hist.image.template cast<T>());
                const HistoryContext<T> ctx = concat_history(hist_text, hist_img, tup.k);
                auto fused = fusion.fuse(tp, current, ctx);
                loss = denoising_loss_traced(tp, unet, &adapter, x0, t, eps, current,
                                             fused.feature, &current.mask, (T)cfg.lambda, sched);
            }
            tp.backward(loss.id);
            batch_loss += (double)loss.v()[0];
        }
        detail::scale_grads(params, (T)(1.0 / cfg.batch));
        opt.step(params);
        res.loss_curve.push_back(batch_loss / cfg.batch);
        if (on_step) on_step(step, res.loss_curve.back());
    }
    return res;
}

// Smoothed curve summary used by training-viability checks.
inline double curve_window_mean(const std::vector<double>& curve, size_t begin, size_t count) {
    if (curve.empty()) return 0.0;
    begin = std::min(begin, curve.size() - 1);
    const size_t end = std::min(curve.size(), begin + count);
    double acc = 0.0;
    for (size_t i = begin; i < end; ++i) acc += curve[i];
    return acc / (double)(end - begin);
}

} // namespace vista
