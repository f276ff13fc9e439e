#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "vista/checkpoint.hpp"
#include "vista/config.hpp"
#include "vista/metrics.hpp"
#include "vista/story.hpp"
#include "vista/threadpool.hpp"
#include "vista/trainer.hpp"

namespace vista {

// Everything a generation or evaluation run needs, loaded from one
// checkpoint directory (encoder.ckpt + base.ckpt + adapter.ckpt).
struct ModelBundle {
    Config cfg;
    Vocabulary vocab;
    std::unique_ptr<DualEncoder<float>> encoder;
    std::unique_ptr<UNet<float>> unet;
    std::unique_ptr<FusionModel<float>> fusion;
    std::unique_ptr<HistoryAdapter<float>> adapter;
    NoiseSchedule schedule;
    uint64_t base_hash = 0;
    uint64_t adapter_hash = 0;

    StoryModels<float> models() const {
        return {&vocab, encoder.get(), fusion.get(), unet.get(), adapter.get(), &schedule};
    }
};

inline void write_loss_curve(const std::string& path, const std::vector<double>& curve) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write loss curve: " + path);
    for (size_t i = 0; i < curve.size(); ++i) f << i << "\t" << curve[i] << "\n";
}

inline nlohmann::json bundle_meta(const Config& cfg, const std::string& corpus_dir) {
    nlohmann::json meta;
    meta["config"] = cfg.to_text();
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)corpus_hash(corpus_dir));
    meta["corpus_hash"] = hex;
    return meta;
}

// Stage 0 + stage 1: contrastive encoder pretraining, then the frozen
// text-conditioned base denoiser. Writes encoder.ckpt, base.ckpt, config
// echo, vocabulary and loss curves into out_dir.
inline void run_pretrain(const std::string& corpus_dir, const std::string& out_dir,
                         const Config& cfg, bool verbose = true) {
    const Corpus corpus = load_corpus(corpus_dir);
    Vocabulary vocab;
    std::filesystem::create_directories(out_dir);
    cfg.save(out_dir + "/config.txt");
    vocab.save(out_dir + "/vocab.txt");

    StepCallback log_cb;
    if (verbose)
        log_cb = [](int s, double l) {
            if (s % 100 == 0) std::printf("  step %5d loss %.4f\n", s, l);
        };

    RngStream init(cfg.seed, streams::kInit);
    DualEncoder<float> enc(cfg.common_dim, vocab.size(), init.fork(0));
    if (verbose) std::printf("stage 0: contrastive encoder pretraining\n");
    auto log0 = pretrain_encoder<float>(enc, corpus, vocab, cfg, log_cb);
    write_loss_curve(out_dir + "/stage0_loss.txt", log0.loss_curve);
    save_checkpoint<float>(out_dir + "/encoder.ckpt", {{"encoder", &enc.params}},
                           bundle_meta(cfg, corpus_dir));

    UNet<float> unet(cfg.common_dim, init.fork(1));
    if (verbose) std::printf("stage 1: base denoiser pretraining\n");
    StepCallback stage1_cb = [&](int s, double l) {
        if (log_cb) log_cb(s, l);
        if (s > 0 && s % 800 == 0) // periodic checkpoint
            save_checkpoint<float>(out_dir + "/base.step" + std::to_string(s) + ".ckpt",
                                   {{"unet", &unet.params}}, bundle_meta(cfg, corpus_dir));
    };
    auto log1 = pretrain_denoiser<float>(unet, enc, corpus, vocab, cfg, stage1_cb);
    write_loss_curve(out_dir + "/stage1_loss.txt", log1.loss_curve);
    unet.freeze_base();
    save_checkpoint<float>(out_dir + "/base.ckpt", {{"unet", &unet.params}},
                           bundle_meta(cfg, corpus_dir));
    if (verbose)
        std::printf("pretrain done: base parameters %lld\n",
                    (long long)unet.params.param_count());
}

// Stage 2: fusion + adapter training against the frozen base.
inline void run_train_adapter(const std::string& corpus_dir, const std::string& base_dir,
                              const std::string& out_dir, const Config& cfg,
                              bool verbose = true) {
    const Corpus corpus = load_corpus(corpus_dir);
    Vocabulary vocab;
    std::filesystem::create_directories(out_dir);

    DualEncoder<float> enc(cfg.common_dim, vocab.size(), RngStream(0, streams::kInit));
    load_checkpoint<float>(base_dir + "/encoder.ckpt", {{"encoder", &enc.params}});
    enc.freeze();
    UNet<float> unet(cfg.common_dim, RngStream(0, streams::kInit));
    load_checkpoint<float>(base_dir + "/base.ckpt", {{"unet", &unet.params}});
    const uint64_t base_hash_before = checkpoint_file_hash(base_dir + "/base.ckpt");

    RngStream init(cfg.seed, streams::kInit);
    FusionModel<float> fusion(cfg.common_dim, cfg.fusion_blocks, init.fork(2));
    HistoryAdapter<float> adapter(cfg.common_dim, init.fork(3));

    const int64_t trainable = fusion.params.param_count() + adapter.params.param_count();
    if (verbose)
        std::printf("trainable parameters: %lld (fusion %lld + adapter %lld), base %lld\n",
                    (long long)trainable, (long long)fusion.params.param_count(),
                    (long long)adapter.params.param_count(),
                    (long long)unet.params.param_count());

    StepCallback log_cb = [&](int s, double l) {
        if (verbose && s % 100 == 0) std::printf("  step %5d loss %.4f\n", s, l);
        if (s > 0 && s % 800 == 0) // periodic checkpoint
            save_checkpoint<float>(out_dir + "/adapter.step" + std::to_string(s) + ".ckpt",
                                   {{"fusion", &fusion.params}, {"adapter", &adapter.params}},
                                   bundle_meta(cfg, corpus_dir));
    };
    auto log2 = train_adapter<float>(fusion, adapter, unet, enc, corpus, vocab, cfg, log_cb);
    write_loss_curve(out_dir + "/stage2_loss.txt", log2.loss_curve);

    auto meta = bundle_meta(cfg, corpus_dir);
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)base_hash_before);
    meta["base_hash"] = hex;
    save_checkpoint<float>(out_dir + "/adapter.ckpt",
                           {{"fusion", &fusion.params}, {"adapter", &adapter.params}}, meta);
    cfg.save(out_dir + "/config.txt");

    const uint64_t base_hash_after = checkpoint_file_hash(base_dir + "/base.ckpt");
    if (base_hash_before != base_hash_after)
        throw FrozenViolation("base checkpoint changed during adapter training");
    if (verbose) std::printf("base checkpoint hash unchanged: %016llx\n",
                             (unsigned long long)base_hash_after);
}

inline ModelBundle load_bundle(const std::string& ckpt_dir) {
    ModelBundle b;
    b.cfg = Config::from_file(ckpt_dir + "/config.txt");
    b.vocab = Vocabulary::load(ckpt_dir + "/vocab.txt");
    b.encoder = std::make_unique<DualEncoder<float>>(b.cfg.common_dim, b.vocab.size(),
                                                     RngStream(0, streams::kInit));
    load_checkpoint<float>(ckpt_dir + "/encoder.ckpt", {{"encoder", &b.encoder->params}});
    b.encoder->freeze();
    b.unet = std::make_unique<UNet<float>>(b.cfg.common_dim, RngStream(0, streams::kInit));
    load_checkpoint<float>(ckpt_dir + "/base.ckpt", {{"unet", &b.unet->params}});
    b.fusion = std::make_unique<FusionModel<float>>(b.cfg.common_dim, b.cfg.fusion_blocks,
                                                    RngStream(0, streams::kInit));
    b.adapter = std::make_unique<HistoryAdapter<float>>(b.cfg.common_dim,
                                                        RngStream(0, streams::kInit));
    load_checkpoint<float>(ckpt_dir + "/adapter.ckpt",
                           {{"fusion", &b.fusion->params}, {"adapter", &b.adapter->params}});
    b.schedule = NoiseSchedule::linear(b.cfg.timesteps);
    b.base_hash = checkpoint_file_hash(ckpt_dir + "/base.ckpt");
    b.adapter_hash = checkpoint_file_hash(ckpt_dir + "/adapter.ckpt");
    return b;
}

struct GeneratedStory {
    uint32_t story_id = 0;
    Story<float> story;
    std::vector<FrameLog> logs;
};

// Continues each requested corpus story from its real first frame,
// fan-out across worker threads; deterministic per story.
inline std::vector<GeneratedStory> generate_stories(const ModelBundle& bundle,
                                                    const Corpus& corpus,
                                                    const std::vector<int>& indices,
                                                    uint64_t seed, double lambda,
                                                    ConditioningMode mode,
                                                    const SamplerConfig& scfg_in) {
    std::vector<GeneratedStory> out(indices.size());
    const auto models = bundle.models();
    parallel_for((int)indices.size(), [&](int i) {
        const int idx = indices[(size_t)i];
        if (idx < 0 || idx >= (int)corpus.stories.size())
            throw DataError("story index out of range: " + std::to_string(idx));
        const StoryRecord& rec = corpus.stories[(size_t)idx];
        GeneratedStory g;
        g.story_id = rec.story_id;
        for (const auto& fr : rec.frames) {
            g.story.prompts.push_back(fr.caption);
            g.story.graphs.push_back(fr.graph);
        }
        g.story.images.push_back(rec.frames[0].image);
        SamplerConfig scfg = scfg_in;
        scfg.seed = RngStream(seed, streams::kSample).fork(rec.story_id).key;
        g.logs = continue_story<float>(g.story, (float)lambda, scfg, models, mode);
        out[(size_t)i] = std::move(g);
    });
    return out;
}

// PPM preview grid: one row per story, frames left to right, 4x nearest
// upscale.
inline void write_preview_ppm(const std::string& path,
                              const std::vector<GeneratedStory>& stories) {
    if (stories.empty()) return;
    const int scale = 4;
    const int fw = kImageSize * scale;
    size_t max_frames = 0;
    for (const auto& s : stories) max_frames = std::max(max_frames, s.story.images.size());
    const int W = (int)max_frames * fw;
    const int H = (int)stories.size() * fw;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write preview: " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row((size_t)W * 3);
    for (const auto& s : stories) {
        for (int y = 0; y < fw; ++y) {
            std::fill(row.begin(), row.end(), (unsigned char)30);
            for (size_t k = 0; k < s.story.images.size(); ++k) {
                const auto& img = s.story.images[k];
                for (int x = 0; x < fw; ++x) {
                    const float* px = &img.data[(((size_t)(y / scale)) * kImageSize +
                                                 (size_t)(x / scale)) * 3];
                    for (int c = 0; c < 3; ++c) {
                        float v = std::min(1.0f, std::max(0.0f, px[c]));
                        row[((size_t)k * fw + (size_t)x) * 3 + (size_t)c] =
                            (unsigned char)(v * 255.0f + 0.5f);
                    }
                }
            }
            f.write((const char*)row.data(), (std::streamsize)row.size());
        }
    }
}

// Raw frame files plus run log and metadata for a generation run.
inline void write_generation_run(const std::string& out_dir, const ModelBundle& bundle,
                                 const std::vector<GeneratedStory>& stories,
                                 const std::string& corpus_dir, uint64_t seed, double lambda,
                                 const std::string& mode_name) {
    std::filesystem::create_directories(out_dir);
    std::ofstream runlog(out_dir + "/run.jsonl", std::ios::trunc);
    if (!runlog) throw DataError("cannot write run log in " + out_dir);
    for (const auto& g : stories) {
        for (size_t k = 1; k < g.story.images.size(); ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "story%04u_frame%02zu.f32", g.story_id, k);
            std::ofstream f(out_dir + "/" + name, std::ios::binary | std::ios::trunc);
            f.write((const char*)g.story.images[k].data.data(),
                    (std::streamsize)(g.story.images[k].data.size() * sizeof(float)));
        }
        for (const auto& log : g.logs) {
            nlohmann::json j;
            j["story_id"] = g.story_id;
            j["frame"] = log.frame_index;
            j["seed"] = log.seed;
            j["lambda"] = log.lambda;
            j["sampler_steps"] = bundle.cfg.sampler_steps;
            j["guidance"] = bundle.cfg.guidance;
            j["chosen_index"] = log.salience.chosen_index;
            j["scores"] = log.salience.scores;
            j["logit_mean"] = log.salience.logit_mean;
            j["logit_max"] = log.salience.logit_max;
            runlog << j.dump() << "\n";
        }
    }
    write_preview_ppm(out_dir + "/preview.ppm", stories);

    nlohmann::json meta;
    meta["config"] = bundle.cfg.to_text();
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)corpus_hash(corpus_dir));
    meta["corpus_hash"] = hex;
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)bundle.base_hash);
    meta["base_hash"] = hex;
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)bundle.adapter_hash);
    meta["adapter_hash"] = hex;
    meta["seed"] = seed;
    meta["lambda"] = lambda;
    meta["mode"] = mode_name;
    meta["corpus_dir"] = corpus_dir;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& g : stories) ids.push_back(g.story_id);
    meta["story_ids"] = ids;
    std::ofstream mf(out_dir + "/meta.json", std::ios::trunc);
    mf << meta.dump(2) << "\n";
}

// Evaluation over a generated run directory against its source corpus.
inline MetricReport evaluate_run(const std::string& gen_dir, const std::string& corpus_dir,
                                 const ModelBundle& bundle) {
    std::ifstream mf(gen_dir + "/meta.json");
    if (!mf) throw DataError("missing meta.json in " + gen_dir);
    nlohmann::json meta;
    mf >> meta;
    const Corpus corpus = load_corpus(corpus_dir);

    std::vector<Story<float>> generated;
    std::vector<const StoryRecord*> refs;
    for (const auto& idj : meta["story_ids"]) {
        const uint32_t sid = idj.get<uint32_t>();
        const StoryRecord* rec = nullptr;
        for (const auto& s : corpus.stories)
            if (s.story_id == sid) rec = &s;
        if (!rec) throw DataError("story id " + std::to_string(sid) + " not in corpus");
        Story<float> st;
        for (const auto& fr : rec->frames) {
            st.prompts.push_back(fr.caption);
            st.graphs.push_back(fr.graph);
        }
        st.images.push_back(rec->frames[0].image);
        for (size_t k = 1; k < rec->frames.size(); ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "story%04u_frame%02zu.f32", sid, k);
            std::ifstream f(gen_dir + "/" + name, std::ios::binary);
            if (!f) throw DataError(std::string("missing generated frame ") + name);
            Tensor<float> img = Tensor<float>::zeros({kImageSize, kImageSize, 3});
            f.read((char*)img.data.data(), (std::streamsize)(img.data.size() * sizeof(float)));
            if (!f) throw DataError(std::string("short generated frame ") + name);
            st.images.push_back(std::move(img));
        }
        generated.push_back(std::move(st));
        refs.push_back(rec);
    }
    MetricReport rep = evaluate_stories<float>(generated, refs, *bundle.encoder, bundle.vocab);
    rep.config_echo = bundle.cfg.to_text();
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)corpus_hash(corpus_dir));
    rep.corpus_hash = hex;
    return rep;
}

inline ConditioningMode mode_from_name(const std::string& name) {
    if (name == "full") return ConditioningMode::Full;
    if (name == "prompt-only") return ConditioningMode::PromptOnly;
    if (name == "image-only") return ConditioningMode::ImageHistoryOnly;
    if (name == "all-mean") return ConditioningMode::AllHistoryMean;
    throw ConfigError("unknown conditioning mode: " + name);
}

} // namespace vista
