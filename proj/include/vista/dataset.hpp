#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vista/rng.hpp"
#include "vista/scene.hpp"
#include "vista/tensor.hpp"

namespace vista {

struct Frame {
    SceneGraph graph;
    std::string caption;
    Tensor<float> image; // [H,W,3] in [0,1]
};

struct StoryRecord {
    uint32_t story_id = 0;
    std::vector<Frame> frames;
};

struct Corpus {
    std::vector<StoryRecord> stories;
    uint64_t seed = 0;
    int frames_per_story = 0;
};

// (P_k, I_k, P_{k+1}, I_{k+1}) as indices into a corpus.
struct FourTuple {
    uint32_t story_id = 0;
    int story_index = 0;
    int k = 0; // history frame index; target is k+1
};

// One protagonist per story; positions follow verb dynamics so that the
// previous frame plus the current verb pins down where the protagonist is.
//
// caption_noise > 0 perturbs that fraction of captions (leading article
// swap). Default corpora keep captions exactly grammar-generated so the
// inverse parser and QA oracle stay exact; the flag is for robustness
// experiments only.
StoryRecord generate_story(RngStream rng, int frames, uint32_t story_id,
                           double caption_noise = 0.0);

Corpus generate_corpus(uint64_t seed, int stories, int frames, double caption_noise = 0.0);

std::vector<FourTuple> extract_four_tuples(const Corpus& c);

// Corpus directory: manifest.json + stories.bin (length-prefixed records;
// graph canonical text, caption UTF-8, image raw little-endian f32).
void save_corpus(const Corpus& c, const std::string& dir, bool force = false);
Corpus load_corpus(const std::string& dir);

// FNV-1a over stories.bin; identical corpora hash identically.
uint64_t corpus_hash(const std::string& dir);

uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL);

} // namespace vista
