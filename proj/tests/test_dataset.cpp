#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <set>

#include "vista/dataset.hpp"
#include "vista/scene.hpp"
#include "vista/vocab.hpp"

using namespace vista;

namespace {

std::string temp_dir(const char* tag) {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             (std::string("vista_test_") + tag + "_" + std::to_string(counter++));
    std::filesystem::remove_all(p);
    return p.string();
}

SceneGraph minimal_graph() {
    SceneGraph g;
    g.protagonist = {Shape::Circle, 0 /* red */, 0 /* small */};
    g.background = 0; // white
    g.pos = {1, 1};
    g.verb = Verb::Sits;
    g.has_companion = false;
    return g;
}

} // namespace

TEST_CASE("caption template instantiation") {
    CHECK(caption_from_graph(minimal_graph()) == "the small red circle sits on the white background");

    SceneGraph g = minimal_graph();
    g.protagonist = {Shape::Star, 3 /* yellow */, 1 /* large */};
    g.background = 5; // navy
    g.verb = Verb::MovesLeft;
    g.has_companion = true;
    g.companion = {Shape::Square, 2 /* blue */, 1};
    CHECK(caption_from_graph(g) ==
          "the large yellow star moves-left on the navy background, with a blue square");
}

TEST_CASE("caption parse-back recovers expressed fields and round-trips") {
    RngStream rng(77, streams::kDataGen);
    for (int i = 0; i < 1000; ++i) {
        StoryRecord s = generate_story(rng.fork((uint64_t)i), 3, (uint32_t)i);
        for (const auto& f : s.frames) {
            const SceneGraph parsed = parse_caption(f.caption);
            CHECK(expressed_equal(parsed, f.graph));
            CHECK(caption_from_graph(parsed) == f.caption);
        }
    }
    CHECK_THROWS_AS((void)parse_caption("the quick brown fox"), DataError);
}

TEST_CASE("tokenize round-trips sampled grammar captions") {
    Vocabulary vocab;
    RngStream rng(78, streams::kDataGen);
    for (int i = 0; i < 1000; ++i) {
        StoryRecord s = generate_story(rng.fork((uint64_t)i), 2, (uint32_t)i);
        for (const auto& f : s.frames) {
            const TokenSequence seq = vocab.tokenize(f.caption);
            CHECK_FALSE(seq.truncated);
            CHECK(vocab.detokenize(seq) == f.caption);
        }
    }
}

TEST_CASE("tokenize framing and padding") {
    Vocabulary vocab;
    const TokenSequence empty = vocab.tokenize("");
    CHECK(empty.ids[0] == Vocabulary::kBos);
    CHECK(empty.ids[1] == Vocabulary::kEos);
    CHECK(empty.mask[0] == 1);
    CHECK(empty.mask[1] == 1);
    for (int i = 2; i < kMaxTokens; ++i) {
        CHECK(empty.ids[(size_t)i] == Vocabulary::kPad);
        CHECK(empty.mask[(size_t)i] == 0);
    }

    const TokenSequence seq = vocab.tokenize("the red circle moves-left jumps");
    int words = 0;
    for (int i = 0; i < kMaxTokens; ++i)
        if (seq.mask[(size_t)i]) ++words;
    CHECK(words == 7); // BOS + 5 words + EOS
    CHECK(vocab.id_of("nonsense") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary persists and hashes stably") {
    Vocabulary a;
    const std::string dir = temp_dir("vocab");
    std::filesystem::create_directories(dir);
    a.save(dir + "/vocab.txt");
    Vocabulary b = Vocabulary::load(dir + "/vocab.txt");
    CHECK(a.size() == b.size());
    CHECK(a.grammar_hash() == b.grammar_hash());
    for (int i = 0; i < a.size(); ++i) CHECK(a.token(i) == b.token(i));
    std::filesystem::remove_all(dir);
}

TEST_CASE("render: background-only and pixel-count vs analytic area") {
    SceneGraph g = minimal_graph();
    // background-only probe: park the protagonist off-frame is not possible,
    // so check the constant fill through a frame where we blank the object
    // by rendering and counting background pixels instead
    const auto& bg = background_palette()[(size_t)g.background];

    for (int shape = 0; shape < kNumShapes; ++shape)
        for (int size = 0; size < 2; ++size) {
            SceneGraph s = minimal_graph();
            s.protagonist.shape = (Shape)shape;
            s.protagonist.size = size;
            s.background = 1; // black, max contrast to red
            const Tensor<float> img = render_scene(s);
            int count = 0;
            for (int i = 0; i < kImageSize * kImageSize; ++i) {
                const float r = img.data[(size_t)i * 3 + 0];
                const float gg = img.data[(size_t)i * 3 + 1];
                const float b = img.data[(size_t)i * 3 + 2];
                if (r > 0.5f && gg < 0.5f && b < 0.5f) ++count;
            }
            const double analytic = shape_area((Shape)shape, shape_radius(size));
            CHECK(std::abs(count - analytic) <= 0.10 * analytic);
        }
    (void)bg;
}

TEST_CASE("render determinism") {
    SceneGraph g = minimal_graph();
    g.has_companion = true;
    g.companion = {Shape::Triangle, 4, 1};
    const Tensor<float> a = render_scene(g);
    const Tensor<float> b = render_scene(g);
    CHECK(a.data == b.data);
}

TEST_CASE("story generation invariants") {
    RngStream rng(79, streams::kDataGen);
    std::set<std::tuple<int, int, int>> protagonists;
    for (int i = 0; i < 64; ++i) {
        StoryRecord s = generate_story(rng.fork((uint64_t)i), 8, (uint32_t)i);
        CHECK(s.frames.size() == 8);
        const ObjectSpec p0 = s.frames[0].graph.protagonist;
        for (const auto& f : s.frames) {
            CHECK(f.graph.protagonist == p0);
            CHECK(f.caption == caption_from_graph(f.graph));
            // position dynamics: frame k's position comes from frame k-1
        }
        for (size_t k = 1; k < s.frames.size(); ++k) {
            const GridPos prev = s.frames[k - 1].graph.pos;
            const GridPos want = apply_verb(prev, s.frames[k].graph.verb);
            CHECK(want == s.frames[k].graph.pos);
        }
        for (const auto& f : s.frames)
            if (f.graph.has_companion) {
                CHECK(f.graph.companion.shape != p0.shape);
                CHECK(f.graph.companion.color != p0.color);
            }
        protagonists.insert({(int)p0.shape, p0.color, p0.size});
    }
    // 64 samples over 64 identity combos: expect substantial diversity
    CHECK(protagonists.size() > 30);
}

TEST_CASE("graph text round-trip") {
    RngStream rng(80, streams::kDataGen);
    for (int i = 0; i < 200; ++i) {
        StoryRecord s = generate_story(rng.fork((uint64_t)i), 2, (uint32_t)i);
        for (const auto& f : s.frames) {
            const SceneGraph g = parse_graph_text(graph_to_text(f.graph));
            CHECK(g == f.graph);
        }
    }
    CHECK_THROWS_AS((void)parse_graph_text("proto=bogus"), DataError);
}

TEST_CASE("four-tuple extraction counts") {
    Corpus c = generate_corpus(5, 20, 8);
    const auto tuples = extract_four_tuples(c);
    CHECK(tuples.size() == 20 * 7);
    for (const auto& t : tuples) {
        CHECK(t.k + 1 < (int)c.stories[(size_t)t.story_index].frames.size());
        CHECK(c.stories[(size_t)t.story_index].story_id == t.story_id);
    }
}

TEST_CASE("corpus serialization round-trips bit-exactly") {
    Corpus c = generate_corpus(33, 12, 5);
    const std::string dir = temp_dir("corpus");
    save_corpus(c, dir);
    const uint64_t h1 = corpus_hash(dir);

    Corpus loaded = load_corpus(dir);
    REQUIRE(loaded.stories.size() == c.stories.size());
    for (size_t i = 0; i < c.stories.size(); ++i) {
        const auto& a = c.stories[i];
        const auto& b = loaded.stories[i];
        REQUIRE(a.frames.size() == b.frames.size());
        CHECK(a.story_id == b.story_id);
        for (size_t k = 0; k < a.frames.size(); ++k) {
            CHECK(a.frames[k].graph == b.frames[k].graph);
            CHECK(a.frames[k].caption == b.frames[k].caption);
            CHECK(a.frames[k].image.data == b.frames[k].image.data);
        }
    }

    // re-save the loaded corpus: identical bytes
    const std::string dir2 = temp_dir("corpus2");
    save_corpus(loaded, dir2);
    CHECK(corpus_hash(dir2) == h1);

    // same seed regenerates the same corpus
    Corpus c2 = generate_corpus(33, 12, 5);
    const std::string dir3 = temp_dir("corpus3");
    save_corpus(c2, dir3);
    CHECK(corpus_hash(dir3) == h1);

    // refuses to clobber without force
    CHECK_THROWS_AS(save_corpus(c, dir), DataError);

    // truncated file fails loudly with an offset
    {
        auto path = dir + "/stories.bin";
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        CHECK_THROWS_AS((void)load_corpus(dir), DataError);
    }

    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
    std::filesystem::remove_all(dir3);
}

TEST_CASE("caption noise flag perturbs captions without leaving the vocabulary") {
    Vocabulary vocab;
    const Corpus clean = generate_corpus(61, 50, 4, 0.0);
    const Corpus noisy = generate_corpus(61, 50, 4, 0.5);
    int changed = 0, total = 0;
    for (size_t s = 0; s < clean.stories.size(); ++s)
        for (size_t k = 0; k < clean.stories[s].frames.size(); ++k) {
            ++total;
            const auto& cc = clean.stories[s].frames[k].caption;
            const auto& nc = noisy.stories[s].frames[k].caption;
            if (cc != nc) {
                ++changed;
                const TokenSequence seq = vocab.tokenize(nc);
                for (int i = 0; i < kMaxTokens; ++i)
                    if (seq.mask[(size_t)i]) CHECK(seq.ids[(size_t)i] != Vocabulary::kUnk);
            }
        }
    CHECK(changed > total / 4);
    CHECK(changed < total * 3 / 4);
}

TEST_CASE("cross-story protagonist distribution is roughly uniform") {
    Corpus c = generate_corpus(101, 1000, 2);
    // chi-square over the 64 identity combos
    int counts[64] = {0};
    for (const auto& s : c.stories) {
        const auto& p = s.frames[0].graph.protagonist;
        counts[((int)p.shape * kNumObjectColors + p.color) * 2 + p.size]++;
    }
    const double expected = 1000.0 / 64.0;
    double chi2 = 0.0;
    for (int i = 0; i < 64; ++i) {
        const double d = counts[i] - expected;
        chi2 += d * d / expected;
    }
    // 63 dof: mean 63, sd ~11.2; 120 is beyond any plausible healthy draw
    CHECK(chi2 < 120.0);
}
