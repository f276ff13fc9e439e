#include "vista/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "vista/errors.hpp"
#include "vista/vocab.hpp"

namespace fs = std::filesystem;

namespace vista {

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
    const uint8_t* p = (const uint8_t*)data;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

StoryRecord generate_story(RngStream rng, int frames, uint32_t story_id, double caption_noise) {
    if (frames < 2) throw DataError("generate_story: need at least 2 frames");
    StoryRecord story;
    story.story_id = story_id;
    // separate stream so enabling noise never perturbs the scene sampling
    RngStream noise_rng = rng.fork(0xCAF);

    ObjectSpec proto;
    proto.shape = (Shape)(int)rng.next_below(kNumShapes);
    proto.color = (int)rng.next_below(kNumObjectColors);
    proto.size = (int)rng.next_below(2);

    // Companion identity is sampled once per story and kept distinct from
    // the protagonist in both shape and color so questions like "what color
    // is the circle" stay unambiguous.
    ObjectSpec comp;
    comp.shape = (Shape)(((int)proto.shape + 1 + (int)rng.next_below(kNumShapes - 1)) % kNumShapes);
    comp.color = (proto.color + 1 + (int)rng.next_below(kNumObjectColors - 1)) % kNumObjectColors;
    comp.size = (int)rng.next_below(2);

    GridPos pos{(int)rng.next_below(kGridCells), (int)rng.next_below(kGridCells)};
    for (int k = 0; k < frames; ++k) {
        SceneGraph g;
        g.protagonist = proto;
        g.background = (int)rng.next_below(kNumBackgroundColors);
        if (k == 0) {
            g.verb = Verb::Sits;
        } else {
            std::vector<Verb> feasible;
            for (int v = 0; v < kNumVerbs; ++v)
                if (verb_feasible(pos, (Verb)v)) feasible.push_back((Verb)v);
            g.verb = feasible[(size_t)rng.next_below(feasible.size())];
            pos = apply_verb(pos, g.verb);
        }
        g.pos = pos;
        g.has_companion = rng.next_below(2) == 1;
        if (g.has_companion) g.companion = comp;

        Frame f;
        f.graph = g;
        f.caption = caption_from_graph(g);
        if (caption_noise > 0.0 && noise_rng.next_unit() < caption_noise) {
            // leading article swap; stays inside the vocabulary
            f.caption = "a" + f.caption.substr(3);
        }
        f.image = render_scene(g);
        story.frames.push_back(std::move(f));
    }
    return story;
}

Corpus generate_corpus(uint64_t seed, int stories, int frames, double caption_noise) {
    Corpus c;
    c.seed = seed;
    c.frames_per_story = frames;
    RngStream root(seed, streams::kDataGen);
    c.stories.reserve((size_t)stories);
    for (int i = 0; i < stories; ++i)
        c.stories.push_back(
            generate_story(root.fork((uint64_t)i), frames, (uint32_t)i, caption_noise));
    return c;
}

std::vector<FourTuple> extract_four_tuples(const Corpus& c) {
    std::vector<FourTuple> out;
    for (size_t si = 0; si < c.stories.size(); ++si) {
        const auto& s = c.stories[si];
        if (s.frames.size() < 2) throw DataError("extract_four_tuples: story shorter than 2 frames");
        for (int k = 0; k + 1 < (int)s.frames.size(); ++k)
            out.push_back({s.story_id, (int)si, k});
    }
    return out;
}

namespace {

void write_u32(std::ofstream& f, uint32_t v) { f.write((const char*)&v, 4); }

void write_blob(std::ofstream& f, const void* p, size_t n) { f.write((const char*)p, (std::streamsize)n); }

uint32_t read_u32(std::ifstream& f, size_t& off, const std::string& what) {
    uint32_t v = 0;
    f.read((char*)&v, 4);
    if (!f) throw DataError("corpus format error reading " + what + " at offset " +
                            std::to_string(off));
    off += 4;
    return v;
}

std::string read_str(std::ifstream& f, size_t& off, uint32_t len, const std::string& what) {
    std::string s(len, '\0');
    f.read(s.data(), (std::streamsize)len);
    if (!f) throw DataError("corpus format error reading " + what + " at offset " +
                            std::to_string(off));
    off += len;
    return s;
}

} // namespace

void save_corpus(const Corpus& c, const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw DataError("output directory exists and is not empty (use --force): " + dir);
    fs::create_directories(dir);

    const std::string bin_path = dir + "/stories.bin";
    {
        std::ofstream f(bin_path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + bin_path);
        for (const auto& s : c.stories) {
            write_u32(f, s.story_id);
            write_u32(f, (uint32_t)s.frames.size());
            for (const auto& fr : s.frames) {
                const std::string g = graph_to_text(fr.graph);
                write_u32(f, (uint32_t)g.size());
                write_blob(f, g.data(), g.size());
                write_u32(f, (uint32_t)fr.caption.size());
                write_blob(f, fr.caption.data(), fr.caption.size());
                write_blob(f, fr.image.data.data(), fr.image.data.size() * sizeof(float));
            }
        }
    }

    Vocabulary vocab;
    vocab.save(dir + "/vocab.txt");

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["stories"] = c.stories.size();
    manifest["frames_per_story"] = c.frames_per_story;
    manifest["image_size"] = kImageSize;
    manifest["dtype"] = "f32le";
    manifest["seed"] = c.seed;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)vocab.grammar_hash());
    manifest["grammar_hash"] = hex;
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)corpus_hash(dir));
    manifest["corpus_hash"] = hex;
    std::ofstream mf(dir + "/manifest.json", std::ios::trunc);
    if (!mf) throw DataError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("missing manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const std::exception& e) {
        throw DataError("bad manifest.json in " + dir + ": " + e.what());
    }
    if (manifest.value("version", 0) != 1)
        throw DataError("unsupported corpus version in " + dir);
    const size_t n_stories = manifest.value("stories", (size_t)0);
    if (manifest.value("image_size", 0) != kImageSize)
        throw DataError("corpus image size mismatch in " + dir);

    Corpus c;
    c.seed = manifest.value("seed", (uint64_t)0);
    c.frames_per_story = manifest.value("frames_per_story", 0);

    std::ifstream f(dir + "/stories.bin", std::ios::binary);
    if (!f) throw DataError("missing stories.bin in " + dir);
    size_t off = 0;
    const size_t img_floats = (size_t)kImageSize * kImageSize * 3;
    for (size_t si = 0; si < n_stories; ++si) {
        StoryRecord s;
        s.story_id = read_u32(f, off, "story id");
        const uint32_t nf = read_u32(f, off, "frame count");
        if (nf < 1 || nf > 1024)
            throw DataError("corpus format error: implausible frame count at offset " +
                            std::to_string(off));
        for (uint32_t k = 0; k < nf; ++k) {
            Frame fr;
            const uint32_t glen = read_u32(f, off, "graph length");
            fr.graph = parse_graph_text(read_str(f, off, glen, "graph text"));
            const uint32_t clen = read_u32(f, off, "caption length");
            fr.caption = read_str(f, off, clen, "caption");
            fr.image = Tensor<float>::zeros({kImageSize, kImageSize, 3});
            f.read((char*)fr.image.data.data(), (std::streamsize)(img_floats * sizeof(float)));
            if (!f)
                throw DataError("corpus format error reading image at offset " +
                                std::to_string(off));
            off += img_floats * sizeof(float);
            s.frames.push_back(std::move(fr));
        }
        c.stories.push_back(std::move(s));
    }
    return c;
}

uint64_t corpus_hash(const std::string& dir) {
    std::ifstream f(dir + "/stories.bin", std::ios::binary);
    if (!f) throw DataError("missing stories.bin in " + dir);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof buf);
        h = fnv1a(buf, (size_t)f.gcount(), h);
    }
    return h;
}

} // namespace vista
