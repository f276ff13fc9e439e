// vista: desk-scale visual-storytelling diffusion pipeline.
//
// Subcommands: gen-data, pretrain, train-adapter, generate, evaluate.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error,
// 5 frozen-violation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "vista/pipeline.hpp"

using namespace vista;

namespace {

Config make_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    Config cfg;
    if (!config_path.empty()) cfg = Config::from_file(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
        cfg.set_key(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

int cmd_gen_data(uint64_t seed, int stories, int frames, const std::string& out, bool force,
                 double caption_noise) {
    if (stories < 1 || frames < 2) throw ConfigError("gen-data: need stories >= 1, frames >= 2");
    if (caption_noise < 0.0 || caption_noise > 1.0)
        throw ConfigError("gen-data: caption-noise must be in [0, 1]");
    const Corpus corpus = generate_corpus(seed, stories, frames, caption_noise);
    save_corpus(corpus, out, force);
    const auto tuples = extract_four_tuples(corpus);
    std::printf("corpus written to %s\n", out.c_str());
    std::printf("stories: %d, frames per story: %d, four-tuples: %zu\n", stories, frames,
                tuples.size());
    std::printf("corpus hash: %016llx\n", (unsigned long long)corpus_hash(out));
    return 0;
}

// story file: {"corpus": dir, "story_indices": [..]} or
// {"prompts": [...], "first_image": raw-f32-file, "graphs_corpus": optional}
std::vector<int> story_indices_from_file(const nlohmann::json& sf) {
    std::vector<int> indices;
    if (sf.contains("story_index")) indices.push_back(sf["story_index"].get<int>());
    if (sf.contains("story_indices"))
        for (const auto& v : sf["story_indices"]) indices.push_back(v.get<int>());
    if (indices.empty()) throw DataError("story file: no story_index/story_indices given");
    return indices;
}

int cmd_generate(const std::string& ckpt_dir, const std::string& story_file, uint64_t seed,
                 double lambda, const std::string& out, const std::string& mode_name) {
    ModelBundle bundle = load_bundle(ckpt_dir);
    std::ifstream sf_in(story_file);
    if (!sf_in) throw DataError("cannot open story file: " + story_file);
    nlohmann::json sf;
    try {
        sf_in >> sf;
    } catch (const std::exception& e) {
        throw DataError(std::string("bad story file json: ") + e.what());
    }
    const ConditioningMode mode = mode_from_name(mode_name);

    if (sf.contains("corpus")) {
        const std::string corpus_dir = sf["corpus"].get<std::string>();
        const Corpus corpus = load_corpus(corpus_dir);
        const auto indices = story_indices_from_file(sf);
        SamplerConfig scfg;
        scfg.steps = bundle.cfg.sampler_steps;
        scfg.guidance = bundle.cfg.guidance;
        const auto stories =
            generate_stories(bundle, corpus, indices, seed, lambda, mode, scfg);
        write_generation_run(out, bundle, stories, corpus_dir, seed, lambda, mode_name);
        size_t frames = 0, records = 0;
        for (const auto& g : stories) {
            frames += g.story.images.size() - 1;
            records += g.logs.size();
        }
        std::printf("generated %zu stories, %zu frames, %zu salience records -> %s\n",
                    stories.size(), frames, records, out.c_str());
        return 0;
    }

    // raw-prompt form: prompts plus a first reference image file
    if (!sf.contains("prompts") || !sf.contains("first_image"))
        throw DataError("story file: expected corpus reference or prompts + first_image");
    Story<float> story;
    for (const auto& p : sf["prompts"]) story.prompts.push_back(p.get<std::string>());
    if (story.prompts.size() < 2) throw DataError("story file: need at least 2 prompts");
    {
        std::ifstream f(sf["first_image"].get<std::string>(), std::ios::binary);
        if (!f) throw DataError("cannot open first image: " + sf["first_image"].get<std::string>());
        Tensor<float> img = Tensor<float>::zeros({kImageSize, kImageSize, 3});
        f.read((char*)img.data.data(), (std::streamsize)(img.data.size() * sizeof(float)));
        if (!f) throw DataError("first image file too short (want 32x32x3 f32)");
        story.images.push_back(std::move(img));
    }
    SamplerConfig scfg;
    scfg.steps = bundle.cfg.sampler_steps;
    scfg.guidance = bundle.cfg.guidance;
    scfg.seed = seed;
    const auto logs = continue_story<float>(story, (float)lambda, scfg, bundle.models(), mode);

    std::filesystem::create_directories(out);
    GeneratedStory g;
    g.story_id = 0;
    g.story = std::move(story);
    g.logs = logs;
    std::vector<GeneratedStory> stories;
    stories.push_back(std::move(g));
    write_generation_run(out, bundle, stories, "", seed, lambda, mode_name);
    std::printf("generated %zu frames -> %s\n", stories[0].story.images.size() - 1, out.c_str());
    return 0;
}

int cmd_evaluate(const std::string& gen_dir, const std::string& corpus_dir,
                 const std::string& report_path, const std::string& ckpt_dir) {
    std::string dir = ckpt_dir;
    if (dir.empty()) {
        // default: checkpoint dir recorded next to the generated run
        std::ifstream mf(gen_dir + "/meta.json");
        if (!mf) throw DataError("missing meta.json in " + gen_dir);
        nlohmann::json meta;
        mf >> meta;
        throw ConfigError("evaluate: --ckpt is required");
    }
    ModelBundle bundle = load_bundle(dir);
    const MetricReport rep = evaluate_run(gen_dir, corpus_dir, bundle);
    std::ofstream rf(report_path, std::ios::trunc);
    if (!rf) throw DataError("cannot write report: " + report_path);
    rf << rep.to_json().dump(2) << "\n";
    std::printf("tifa_analog  %.4f\n", rep.tifa_analog);
    std::printf("clip_t_analog %.4f\n", rep.clip_t_analog);
    std::printf("clip_i_analog %.4f\n", rep.clip_i_analog);
    std::printf("fid           %.4f%s\n", rep.fid, rep.fid_regularized ? " (regularized)" : "");
    std::printf("report -> %s\n", report_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale visual storytelling with a history-adapter diffusion pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic story corpus");
    uint64_t gd_seed = 17;
    int gd_stories = 2000, gd_frames = 8;
    std::string gd_out;
    bool gd_force = false;
    double gd_noise = 0.0;
    gen->add_option("--seed", gd_seed, "corpus seed");
    gen->add_option("--caption-noise", gd_noise,
                    "fraction of captions perturbed (robustness experiments)");
    gen->add_option("--stories", gd_stories, "number of stories");
    gen->add_option("--frames", gd_frames, "frames per story");
    gen->add_option("--out", gd_out, "output directory")->required();
    gen->add_flag("--force", gd_force, "overwrite a non-empty output directory");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "stage 0 encoders + stage 1 base denoiser");
    std::string pre_corpus, pre_out, pre_config;
    std::vector<std::string> pre_sets;
    pre->add_option("--corpus", pre_corpus, "corpus directory")->required();
    pre->add_option("--out", pre_out, "output directory")->required();
    pre->add_option("--config", pre_config, "config file (key=value lines)");
    pre->add_option("--set", pre_sets, "config override key=value");

    // train-adapter
    auto* tra = app.add_subcommand("train-adapter", "stage 2 fusion + history adapter");
    std::string tra_corpus, tra_base, tra_out, tra_config;
    std::vector<std::string> tra_sets;
    tra->add_option("--corpus", tra_corpus, "corpus directory")->required();
    tra->add_option("--base", tra_base, "directory with encoder.ckpt and base.ckpt")->required();
    tra->add_option("--out", tra_out, "output directory")->required();
    tra->add_option("--config", tra_config, "config file");
    tra->add_option("--set", tra_sets, "config override key=value");

    // generate
    auto* gn = app.add_subcommand("generate", "continue stories from their first frame");
    std::string gn_ckpt, gn_story, gn_out, gn_mode = "full";
    uint64_t gn_seed = 1;
    double gn_lambda = 0.5;
    gn->add_option("--ckpt", gn_ckpt, "checkpoint directory")->required();
    gn->add_option("--story-file", gn_story, "story file (json)")->required();
    gn->add_option("--seed", gn_seed, "sampling seed");
    gn->add_option("--lambda", gn_lambda, "history adapter mixing weight");
    gn->add_option("--out", gn_out, "output run directory")->required();
    gn->add_option("--mode", gn_mode, "full | prompt-only | image-only | all-mean");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score a generated run against its corpus");
    std::string ev_gen, ev_corpus, ev_report, ev_ckpt;
    ev->add_option("--generated", ev_gen, "generated run directory")->required();
    ev->add_option("--corpus", ev_corpus, "reference corpus directory")->required();
    ev->add_option("--report", ev_report, "output report json")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint directory (for the metric encoder)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_gen_data(gd_seed, gd_stories, gd_frames, gd_out, gd_force, gd_noise);
        if (*pre) {
            run_pretrain(pre_corpus, pre_out, make_config(pre_config, pre_sets));
            return 0;
        }
        if (*tra) {
            run_train_adapter(tra_corpus, tra_base, tra_out, make_config(tra_config, tra_sets));
            return 0;
        }
        if (*gn) return cmd_generate(gn_ckpt, gn_story, gn_seed, gn_lambda, gn_out, gn_mode);
        if (*ev) return cmd_evaluate(ev_gen, ev_corpus, ev_report, ev_ckpt);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
