#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vista/diffusion.hpp"
#include "vista/encoder.hpp"
#include "vista/fusion.hpp"
#include "vista/unet.hpp"
#include "vista/vocab.hpp"

namespace vista {

// Auto-regressive story state: prompts for every frame, images materialized
// so far (index 0 is the real reference frame in continuation mode).
template <typename T>
struct Story {
    std::vector<std::string> prompts;
    std::vector<Tensor<T>> images; // [H,W,3] in [0,1]
    std::vector<SceneGraph> graphs; // optional ground truth for evaluation
};

struct SalienceReport {
    std::vector<double> scores; // probability vector over history pairs
    int chosen_index = 0;
    std::vector<double> logit_mean; // per-pair raw logit summaries
    std::vector<double> logit_max;
};

// Attention-mass reduction of the per-pair fusion logits: one joint softmax
// across the concatenation of every pair's key positions (per query row),
// then per-pair mass summed and averaged over non-PAD queries. Comparable
// across pairs by construction; a per-pair softmax would normalize each
// pair to mass one.
inline SalienceReport salience_from_logits(const std::vector<Tensor<double>>& logits,
                                           const std::vector<uint8_t>& query_mask) {
    if (logits.empty()) throw DimensionError("salience: no history pairs");
    const int lq = logits[0].rows();
    SalienceReport rep;
    rep.scores.assign(logits.size(), 0.0);
    rep.logit_mean.assign(logits.size(), 0.0);
    rep.logit_max.assign(logits.size(), -1e300);
    for (size_t p = 0; p < logits.size(); ++p) {
        if (logits[p].rows() != lq) throw DimensionError("salience: query lengths differ");
        for (int64_t i = 0; i < logits[p].numel(); ++i) {
            rep.logit_mean[p] += logits[p][i];
            rep.logit_max[p] = std::max(rep.logit_max[p], logits[p][i]);
        }
        rep.logit_mean[p] /= (double)logits[p].numel();
    }

    int n_queries = 0;
    for (int r = 0; r < lq; ++r) {
        if (r < (int)query_mask.size() && !query_mask[(size_t)r]) continue;
        ++n_queries;
        double mx = -1e300;
        for (const auto& l : logits)
            for (int c = 0; c < l.cols(); ++c) mx = std::max(mx, l.at(r, c));
        double denom = 0.0;
        std::vector<double> mass(logits.size(), 0.0);
        for (size_t p = 0; p < logits.size(); ++p)
            for (int c = 0; c < logits[p].cols(); ++c) {
                const double e = std::exp(logits[p].at(r, c) - mx);
                mass[p] += e;
                denom += e;
            }
        for (size_t p = 0; p < logits.size(); ++p) rep.scores[p] += mass[p] / denom;
    }
    if (n_queries == 0) throw DimensionError("salience: no non-PAD queries");
    double norm = 0.0;
    for (auto& s : rep.scores) {
        s /= n_queries;
        norm += s;
    }
    (void)norm;
    rep.chosen_index = 0;
    for (size_t p = 1; p < rep.scores.size(); ++p)
        if (rep.scores[p] > rep.scores[(size_t)rep.chosen_index]) rep.chosen_index = (int)p;
    return rep;
}

template <typename T>
struct SalientSelection {
    FusionFeature<T> feature;
    SalienceReport report;
};

// Runs fuse over every (current, history_i) pair, reduces the block-1 raw
// logits to scalar scores, and returns the argmax pair's fusion feature
// (ties break to the lowest index).
template <typename T>
SalientSelection<T> select_salient_history(const TextEmbedding<T>& current,
                                           const std::vector<HistoryContext<T>>& histories,
                                           const FusionModel<T>& fusion) {
    if (histories.empty()) throw DimensionError("select_salient_history: empty history list");
    Tape<T> tp;
    tp.grad_enabled = false;
    const auto outs = fusion.fuse_all(tp, current, histories);
    std::vector<Tensor<double>> logits;
    logits.reserve(outs.size());
    for (const auto& o : outs) logits.push_back(o.block_logits[0].v().template cast<double>());
    SalientSelection<T> sel;
    sel.report = salience_from_logits(logits, current.mask);
    sel.feature.feature = outs[(size_t)sel.report.chosen_index].feature.v();
    sel.feature.mask = current.mask;
    sel.feature.source_history_index = histories[(size_t)sel.report.chosen_index].pair_index;
    return sel;
}

// Mean-of-all-features variant, kept for the ablation harness only.
template <typename T>
FusionFeature<T> fuse_all_mean(const TextEmbedding<T>& current,
                               const std::vector<HistoryContext<T>>& histories,
                               const FusionModel<T>& fusion) {
    if (histories.empty()) throw DimensionError("fuse_all_mean: empty history list");
    Tape<T> tp;
    tp.grad_enabled = false;
    const auto outs = fusion.fuse_all(tp, current, histories);
    FusionFeature<T> f;
    f.feature = outs[0].feature.v();
    for (size_t p = 1; p < outs.size(); ++p)
        for (int64_t i = 0; i < f.feature.numel(); ++i) f.feature[i] += outs[p].feature.v()[i];
    for (auto& v : f.feature.data) v /= (T)outs.size();
    f.mask = current.mask;
    f.source_history_index = -1;
    return f;
}

enum class ConditioningMode {
    Full,              // current prompt + salient history
    PromptOnly,        // lambda forced to 0
    ImageHistoryOnly,  // history image patches only, current prompt masked
    AllHistoryMean,    // ablation: mean fusion feature over all pairs
};

template <typename T>
struct StoryModels {
    const Vocabulary* vocab = nullptr;
    const DualEncoder<T>* encoder = nullptr;
    const FusionModel<T>* fusion = nullptr;
    const UNet<T>* unet = nullptr;
    const HistoryAdapter<T>* adapter = nullptr;
    const NoiseSchedule* schedule = nullptr;
};

struct FrameLog {
    int frame_index = 0;
    uint64_t seed = 0;
    double lambda = 0.0;
    SalienceReport salience;
};

// Generates frame k+1 of a story with k frames materialized. Embeds all
// history pairs, picks the salient one, and samples conditioned on
// (P_{k+1}, c^F). Returns the image in [0,1] HWC plus the salience record.
template <typename T>
std::pair<Tensor<T>, FrameLog> generate_next_frame(const Story<T>& story, int k, T lambda,
                                                   const SamplerConfig& cfg,
                                                   const StoryModels<T>& m,
                                                   ConditioningMode mode = ConditioningMode::Full) {
    if (k < 1 || k > (int)story.images.size())
        throw DataError("generate_next_frame: frame " + std::to_string(k) +
                        " requested but only " + std::to_string(story.images.size()) +
                        " frames are materialized");
    if (k >= (int)story.prompts.size())
        throw DataError("generate_next_frame: no prompt for frame " + std::to_string(k));

    const TextEmbedding<T> current = m.encoder->embed_text(m.vocab->tokenize(story.prompts[(size_t)k]));

    std::vector<HistoryContext<T>> histories;
    for (int j = 0; j < k; ++j) {
        const TextEmbedding<T> hp = m.encoder->embed_text(m.vocab->tokenize(story.prompts[(size_t)j]));
        const Tensor<T> hi = m.encoder->embed_image(story.images[(size_t)j]);
        if (mode == ConditioningMode::ImageHistoryOnly) {
            TextEmbedding<T> masked = hp;
            std::fill(masked.mask.begin(), masked.mask.end(), (uint8_t)0);
            for (auto& v : masked.tokens.data) v = T(0);
            histories.push_back(concat_history(masked, hi, j));
        } else {
            histories.push_back(concat_history(hp, hi, j));
        }
    }

    FusionFeature<T> feature;
    FrameLog log;
    log.frame_index = k;
    log.seed = cfg.seed;
    log.lambda = (double)lambda;
    if (mode == ConditioningMode::AllHistoryMean) {
        feature = fuse_all_mean(current, histories, *m.fusion);
        log.salience.scores.assign(histories.size(), 1.0 / histories.size());
        log.salience.chosen_index = -1;
    } else {
        auto sel = select_salient_history(current, histories, *m.fusion);
        feature = std::move(sel.feature);
        log.salience = std::move(sel.report);
    }

    const TextEmbedding<T> null_p = null_prompt<T>(m.encoder->dim);
    const TextEmbedding<T>& cond_prompt =
        (mode == ConditioningMode::ImageHistoryOnly) ? null_p : current;
    const T eff_lambda = (mode == ConditioningMode::PromptOnly) ? T(0) : lambda;

    DenoiseFn<T> fn = [&](const Tensor<T>& x, int t, bool conditional) {
        DenoiserInput<T> in;
        in.x_t = &x;
        in.t = t;
        if (conditional) {
            in.prompt = &cond_prompt;
            in.fusion = eff_lambda != T(0) ? &feature : nullptr;
            in.lambda = eff_lambda;
        } else {
            in.prompt = &null_p;
            in.fusion = nullptr;
            in.lambda = T(0);
        }
        return m.unet->predict(in, m.adapter);
    };
    Tensor<T> chw = sample(fn, cfg, *m.schedule);
    return {hwc01_from_chw(chw), std::move(log)};
}

// Materializes frames 1..K-1; generated frames join the history pool.
// Pure function of (seed, prompts, first image, weights, config).
template <typename T>
std::vector<FrameLog> continue_story(Story<T>& story, T lambda, const SamplerConfig& cfg,
                                     const StoryModels<T>& m,
                                     ConditioningMode mode = ConditioningMode::Full) {
    if (story.prompts.size() < 2) throw DataError("continue_story: need at least 2 prompts");
    if (story.images.empty()) throw DataError("continue_story: reference frame missing");
    std::vector<FrameLog> logs;
    for (int k = (int)story.images.size(); k < (int)story.prompts.size(); ++k) {
        SamplerConfig frame_cfg = cfg;
        frame_cfg.seed = RngStream(cfg.seed, streams::kSample).fork((uint64_t)k).key;
        auto [img, log] = generate_next_frame(story, k, lambda, frame_cfg, m, mode);
        story.images.push_back(std::move(img));
        logs.push_back(std::move(log));
    }
    return logs;
}

} // namespace vista
