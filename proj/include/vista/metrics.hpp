#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "vista/dataset.hpp"
#include "vista/encoder.hpp"
#include "vista/fid.hpp"
#include "vista/qa.hpp"
#include "vista/story.hpp"
#include "vista/vocab.hpp"

namespace vista {

template <typename T>
double cosine(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel()) throw DimensionError("cosine: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        dot += (double)a[i] * (double)b[i];
        na += (double)a[i] * (double)a[i];
        nb += (double)b[i] * (double)b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

// Cosine between pooled embeddings in the frozen contrastive space.
template <typename T>
double clip_t_analog(const Tensor<T>& image_hwc01, const std::string& caption,
                     const DualEncoder<T>& enc, const Vocabulary& vocab) {
    return cosine(enc.pooled_of_image(image_hwc01), enc.pooled_of_text(vocab.tokenize(caption)));
}

template <typename T>
double clip_i_analog(const Tensor<T>& image_hwc01, const Tensor<T>& ref_hwc01,
                     const DualEncoder<T>& enc) {
    return cosine(enc.pooled_of_image(image_hwc01), enc.pooled_of_image(ref_hwc01));
}

struct StoryMetrics {
    uint32_t story_id = 0;
    double tifa = 0.0;
    double clip_t = 0.0;
    double clip_i = 0.0;
};

struct MetricReport {
    double tifa_analog = 0.0;
    double clip_t_analog = 0.0;
    double clip_i_analog = 0.0;
    double fid = 0.0;
    bool fid_regularized = false;
    std::vector<StoryMetrics> per_story;
    std::string config_echo;
    std::string corpus_hash;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["tifa_analog"] = tifa_analog;
        j["clip_t_analog"] = clip_t_analog;
        j["clip_i_analog"] = clip_i_analog;
        j["fid"] = fid;
        j["fid_regularized"] = fid_regularized;
        j["config"] = config_echo;
        j["corpus_hash"] = corpus_hash;
        auto& per = j["per_story"];
        for (const auto& s : per_story) {
            nlohmann::json r;
            r["story_id"] = s.story_id;
            r["tifa"] = s.tifa;
            r["clip_t"] = s.clip_t;
            r["clip_i"] = s.clip_i;
            per.push_back(r);
        }
        return j;
    }
};

// Scores generated stories against their ground-truth records. Generated
// stories carry the real frame 0 plus generated frames 1..K-1; references
// provide the graphs, captions and real frames.
template <typename T>
MetricReport evaluate_stories(const std::vector<Story<T>>& generated,
                              const std::vector<const StoryRecord*>& refs,
                              const DualEncoder<T>& enc, const Vocabulary& vocab) {
    if (generated.empty() || generated.size() != refs.size())
        throw DataError("evaluate: story count mismatch or empty");
    MetricReport rep;
    Tensor<double> gen_feats, ref_feats;
    std::vector<std::vector<double>> gf, rf;

    for (size_t s = 0; s < generated.size(); ++s) {
        const Story<T>& story = generated[s];
        const StoryRecord& ref = *refs[s];
        if (story.images.size() != ref.frames.size())
            throw DataError("evaluate: story " + std::to_string(ref.story_id) +
                            " frame count mismatch");
        StoryMetrics sm;
        sm.story_id = ref.story_id;
        std::vector<Tensor<float>> frames;
        std::vector<SceneGraph> graphs;
        const Tensor<T>& reference = story.images[0];
        int n = 0;
        for (size_t k = 1; k < story.images.size(); ++k) {
            const Tensor<T>& img = story.images[k];
            frames.push_back(img.template cast<float>());
            graphs.push_back(ref.frames[k].graph);
            sm.clip_t += clip_t_analog(img, ref.frames[k].caption, enc, vocab);
            sm.clip_i += clip_i_analog(img, reference, enc);
            const Tensor<T> pooled_gen = enc.pooled_of_image(img);
            const Tensor<T> pooled_ref = enc.pooled_of_image(ref.frames[k].image.template cast<T>());
            gf.push_back({});
            rf.push_back({});
            for (int64_t i = 0; i < pooled_gen.numel(); ++i) {
                gf.back().push_back((double)pooled_gen[i]);
                rf.back().push_back((double)pooled_ref[i]);
            }
            ++n;
        }
        sm.tifa = tifa_analog_score(frames, graphs);
        sm.clip_t /= n;
        sm.clip_i /= n;
        rep.per_story.push_back(sm);
        rep.tifa_analog += sm.tifa;
        rep.clip_t_analog += sm.clip_t;
        rep.clip_i_analog += sm.clip_i;
    }
    rep.tifa_analog /= (double)rep.per_story.size();
    rep.clip_t_analog /= (double)rep.per_story.size();
    rep.clip_i_analog /= (double)rep.per_story.size();

    const int d = (int)gf[0].size();
    gen_feats = Tensor<double>::zeros({(int)gf.size(), d});
    ref_feats = Tensor<double>::zeros({(int)rf.size(), d});
    for (size_t i = 0; i < gf.size(); ++i)
        for (int j = 0; j < d; ++j) {
            gen_feats.at((int)i, j) = gf[i][(size_t)j];
            ref_feats.at((int)i, j) = rf[i][(size_t)j];
        }
    const FidResult f = fid(gen_feats, ref_feats);
    rep.fid = f.value;
    rep.fid_regularized = f.regularized;
    return rep;
}

} // namespace vista
