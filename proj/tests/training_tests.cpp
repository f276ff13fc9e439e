// Integration tests that involve short real training runs or the CLI
// binary. Slower than the unit suite, still minutes not hours.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "vista/metrics.hpp"
#include "vista/pipeline.hpp"

using namespace vista;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* tag) {
    static int counter = 0;
    auto p = fs::temp_directory_path() /
             (std::string("vista_train_") + tag + "_" + std::to_string(counter++));
    fs::remove_all(p);
    return p.string();
}

} // namespace

TEST_CASE("contrastive loss at step 0 is about ln(batch)") {
    const Corpus corpus = generate_corpus(11, 40, 4);
    Vocabulary vocab;
    Config cfg;
    cfg.stage0_steps = 1;
    cfg.batch = 16;
    DualEncoder<float> enc(64, vocab.size(), RngStream(5, streams::kInit));
    const auto res = pretrain_encoder<float>(enc, corpus, vocab, cfg);
    REQUIRE(res.loss_curve.size() == 1);
    // random-init logits are nearly uniform: expect ln(16) within ~15%
    CHECK(res.loss_curve[0] == doctest::Approx(std::log(16.0)).epsilon(0.15));
}

TEST_CASE("encoder pretraining reaches retrieval quality on held-out pairs") {
    const Corpus train = generate_corpus(21, 300, 4);
    const Corpus held = generate_corpus(9021, 64, 2);
    Vocabulary vocab;
    Config cfg;
    cfg.stage0_steps = 1400;
    cfg.batch = 32;
    cfg.seed = 21;
    DualEncoder<float> enc(64, vocab.size(), RngStream(21, streams::kInit));
    const auto res = pretrain_encoder<float>(enc, train, vocab, cfg);
    CHECK(res.loss_curve.back() < 0.5 * res.loss_curve.front());

    // 64-way caption -> image retrieval on a held-out split
    std::vector<Tensor<float>> text_emb, img_emb;
    for (const auto& s : held.stories) {
        text_emb.push_back(enc.pooled_of_text(vocab.tokenize(s.frames[0].caption)));
        img_emb.push_back(enc.pooled_of_image(s.frames[0].image));
    }
    int top1 = 0;
    for (size_t i = 0; i < text_emb.size(); ++i) {
        int best = -1;
        double best_v = -2.0;
        for (size_t j = 0; j < img_emb.size(); ++j) {
            const double v = cosine(text_emb[i], img_emb[j]);
            if (v > best_v) {
                best_v = v;
                best = (int)j;
            }
        }
        if (best == (int)i) ++top1;
    }
    CHECK((double)top1 / text_emb.size() > 0.9);

    // matched pair similarity beats a mismatched one on >= 95% of pairs
    int wins = 0, total = 0;
    for (size_t i = 0; i < text_emb.size(); ++i) {
        const size_t j = (i + 7) % img_emb.size();
        if (held.stories[i].frames[0].caption == held.stories[j].frames[0].caption) continue;
        ++total;
        if (cosine(text_emb[i], img_emb[i]) > cosine(text_emb[i], img_emb[j])) ++wins;
    }
    CHECK((double)wins / total >= 0.95);
}

TEST_CASE("denoiser training loss halves on a toy four-tuple set") {
    const Corpus corpus = generate_corpus(31, 4, 3); // tiny toy set
    Vocabulary vocab;
    Config cfg;
    cfg.stage0_steps = 60;
    cfg.stage1_steps = 200;
    cfg.batch = 2;
    cfg.seed = 31;
    DualEncoder<float> enc(64, vocab.size(), RngStream(31, streams::kInit));
    pretrain_encoder<float>(enc, corpus, vocab, cfg);
    UNet<float> unet(64, RngStream(32, streams::kInit));
    const auto res = pretrain_denoiser<float>(unet, enc, corpus, vocab, cfg);
    const double initial = curve_window_mean(res.loss_curve, 0, 10);
    const double final = curve_window_mean(res.loss_curve, res.loss_curve.size() - 20, 20);
    CHECK(final < 0.5 * initial);
}

TEST_CASE("story continuation: frame counts, logging, ablation mode, K=14") {
    const Corpus corpus = generate_corpus(41, 6, 3);
    Vocabulary vocab;
    Config cfg;
    cfg.stage0_steps = 30;
    cfg.stage1_steps = 10;
    cfg.stage2_steps = 8;
    cfg.batch = 2;
    DualEncoder<float> enc(64, vocab.size(), RngStream(41, streams::kInit));
    pretrain_encoder<float>(enc, corpus, vocab, cfg);
    UNet<float> unet(64, RngStream(42, streams::kInit));
    pretrain_denoiser<float>(unet, enc, corpus, vocab, cfg);
    unet.freeze_base();
    FusionModel<float> fusion(64, 4, RngStream(43, streams::kInit));
    HistoryAdapter<float> adapter(64, RngStream(44, streams::kInit));
    train_adapter<float>(fusion, adapter, unet, enc, corpus, vocab, cfg);
    const NoiseSchedule sched = NoiseSchedule::linear(1000);
    StoryModels<float> m{&vocab, &enc, &fusion, &unet, &adapter, &sched};

    SamplerConfig scfg;
    scfg.steps = 4; // fast sampler for plumbing checks
    scfg.guidance = 5.0;
    scfg.seed = 7;

    // K prompts in, K-1 generated frames out; the first candidate is the
    // real first pair at k=1
    Story<float> story;
    RngStream rng(45, streams::kDataGen);
    StoryRecord rec = generate_story(rng, 14, 0); // paper-length story
    for (const auto& fr : rec.frames) story.prompts.push_back(fr.caption);
    story.images.push_back(rec.frames[0].image);
    const auto logs = continue_story<float>(story, 0.5f, scfg, m);
    CHECK(story.images.size() == 14);
    CHECK(logs.size() == 13);
    CHECK(logs[0].salience.scores.size() == 1);
    CHECK(logs[0].salience.chosen_index == 0);
    CHECK(logs[5].salience.scores.size() == 6);

    // determinism: same seed and prefix give identical frames
    Story<float> again;
    again.prompts = story.prompts;
    again.images.push_back(rec.frames[0].image);
    continue_story<float>(again, 0.5f, scfg, m);
    for (size_t k = 1; k < story.images.size(); ++k)
        CHECK(story.images[k].data == again.images[k].data);

    // history sensitivity: a different reference image changes the frames
    Story<float> swapped;
    swapped.prompts = story.prompts;
    RngStream rng2(46, streams::kDataGen);
    swapped.images.push_back(generate_story(rng2, 2, 1).frames[0].image);
    continue_story<float>(swapped, 0.5f, scfg, m);
    double diff = 0.0;
    for (int64_t i = 0; i < story.images[1].numel(); ++i)
        diff = std::max(diff, std::abs((double)story.images[1][i] - swapped.images[1][i]));
    CHECK(diff > 1e-7);

    // ablation mode runs and logs the mean-feature variant
    Story<float> abl;
    abl.prompts = {story.prompts[0], story.prompts[1], story.prompts[2]};
    abl.images.push_back(rec.frames[0].image);
    const auto abl_logs = continue_story<float>(abl, 0.5f, scfg, m, ConditioningMode::AllHistoryMean);
    CHECK(abl.images.size() == 3);
    CHECK(abl_logs[1].salience.chosen_index == -1);

    // sequencing errors
    Story<float> broken;
    broken.prompts = story.prompts;
    CHECK_THROWS_AS((void)continue_story<float>(broken, 0.5f, scfg, m), DataError);
    CHECK_THROWS_AS((void)generate_next_frame<float>(story, 99, 0.5f, scfg, m), DataError);
}

TEST_CASE("evaluate on ground-truth renders: perfect closure") {
    const Corpus corpus = generate_corpus(51, 8, 4);
    Vocabulary vocab;
    DualEncoder<float> enc(64, vocab.size(), RngStream(51, streams::kInit));

    std::vector<Story<float>> generated;
    std::vector<const StoryRecord*> refs;
    for (const auto& rec : corpus.stories) {
        Story<float> st;
        for (const auto& fr : rec.frames) {
            st.prompts.push_back(fr.caption);
            st.graphs.push_back(fr.graph);
            st.images.push_back(fr.image); // ground truth as "generated"
        }
        generated.push_back(std::move(st));
        refs.push_back(&rec);
    }
    const MetricReport rep = evaluate_stories<float>(generated, refs, enc, vocab);
    CHECK(rep.tifa_analog == doctest::Approx(1.0));
    CHECK(std::abs(rep.fid) <= 1e-6);
    CHECK(rep.clip_i_analog <= 1.0 + 1e-9);
    for (const auto& s : rep.per_story) CHECK(s.tifa == doctest::Approx(1.0));
}

#ifdef VISTA_CLI_PATH
TEST_CASE("cli surface: gen-data determinism and exit codes") {
    const std::string d1 = temp_dir("cli1");
    const std::string d2 = temp_dir("cli2");
    const std::string cli = VISTA_CLI_PATH;

    auto run = [&](const std::string& args) {
        const int rc = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    CHECK(run("gen-data --seed 3 --stories 5 --frames 3 --out " + d1) == 0);
    CHECK(run("gen-data --seed 3 --stories 5 --frames 3 --out " + d2) == 0);
    CHECK(corpus_hash(d1) == corpus_hash(d2));

    // refuses to clobber without --force: data error (3)
    CHECK(run("gen-data --seed 3 --stories 5 --frames 3 --out " + d1) == 3);
    CHECK(run("gen-data --seed 3 --stories 5 --frames 3 --force --out " + d1) == 0);

    // config error (2)
    CHECK(run("pretrain --corpus " + d1 + " --out " + d2 + "/run --set bogus_key=1") == 2);

    fs::remove_all(d1);
    fs::remove_all(d2);
}
#endif
