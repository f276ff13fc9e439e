#include "doctest.h"

#include <cmath>

#include "vista/story.hpp"

using namespace vista;

namespace {

Tensor<double> random_logits(int lq, int lk, uint64_t seed, double scale = 2.0) {
    RngStream rng(seed, streams::kDataGen);
    Tensor<double> t = Tensor<double>::zeros({lq, lk});
    for (auto& v : t.data) v = rng.next_normal() * scale;
    return t;
}

std::vector<uint8_t> full_mask(int lq) { return std::vector<uint8_t>((size_t)lq, 1); }

template <typename T>
TextEmbedding<T> make_text(int valid, int dim, uint64_t seed) {
    TextEmbedding<T> e;
    e.tokens = Tensor<T>::zeros({kMaxTokens, dim});
    e.mask.assign(kMaxTokens, 0);
    RngStream rng(seed, streams::kDataGen);
    for (int i = 0; i < valid; ++i) {
        e.mask[(size_t)i] = 1;
        for (int j = 0; j < dim; ++j) e.tokens.at(i, j) = (T)rng.next_normal();
    }
    return e;
}

} // namespace

TEST_CASE("salience: single history gets score one") {
    const auto rep = salience_from_logits({random_logits(4, 9, 1)}, full_mask(4));
    REQUIRE(rep.scores.size() == 1);
    CHECK(rep.scores[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.chosen_index == 0);
}

TEST_CASE("salience: identical pairs tie and break to index 0") {
    const auto l = random_logits(5, 7, 2);
    const auto rep = salience_from_logits({l, l}, full_mask(5));
    CHECK(rep.scores[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(rep.scores[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(rep.chosen_index == 0);
}

TEST_CASE("salience scores form a probability vector") {
    std::vector<Tensor<double>> logits = {random_logits(6, 4, 3), random_logits(6, 9, 4),
                                          random_logits(6, 2, 5)};
    const auto rep = salience_from_logits(logits, full_mask(6));
    double sum = 0.0;
    for (double s : rep.scores) {
        CHECK(s >= 0.0);
        sum += s;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("salience argmax is invariant to constant logit offsets") {
    std::vector<Tensor<double>> logits = {random_logits(6, 4, 6), random_logits(6, 9, 7),
                                          random_logits(6, 5, 8)};
    const auto base = salience_from_logits(logits, full_mask(6));
    for (double c : {-7.5, 3.25, 40.0}) {
        auto shifted = logits;
        for (auto& l : shifted)
            for (auto& v : l.data) v += c;
        const auto rep = salience_from_logits(shifted, full_mask(6));
        CHECK(rep.chosen_index == base.chosen_index);
        for (size_t p = 0; p < rep.scores.size(); ++p)
            CHECK(rep.scores[p] == doctest::Approx(base.scores[p]).epsilon(1e-9));
    }
}

TEST_CASE("salience: appending a pair never increases existing scores") {
    std::vector<Tensor<double>> logits = {random_logits(4, 6, 9), random_logits(4, 3, 10)};
    const auto before = salience_from_logits(logits, full_mask(4));
    logits.push_back(random_logits(4, 8, 11));
    const auto after = salience_from_logits(logits, full_mask(4));
    for (size_t p = 0; p < before.scores.size(); ++p)
        CHECK(after.scores[p] <= before.scores[p] + 1e-12);
}

TEST_CASE("salience respects the query mask") {
    auto a = random_logits(3, 4, 12);
    auto b = random_logits(3, 4, 13);
    // make row 2 wildly favor pair b, then mask it out
    for (int c = 0; c < 4; ++c) b.at(2, c) = 50.0;
    std::vector<uint8_t> mask = {1, 1, 0};
    const auto rep = salience_from_logits({a, b}, mask);
    const auto rep_full = salience_from_logits({a, b}, full_mask(3));
    CHECK(rep.scores[1] < rep_full.scores[1]);
}

TEST_CASE("select_salient_history wires fusion logits to the report") {
    FusionModel<float> fusion(32, 2, RngStream(20, streams::kInit));
    const auto current = make_text<float>(5, 32, 21);

    std::vector<HistoryContext<float>> hist;
    // pair 0 shares rows with the current prompt; pair 1 is random
    TextEmbedding<float> like = current;
    Tensor<float> img0 = Tensor<float>::zeros({4, 32});
    hist.push_back(concat_history(like, img0, 0));
    hist.push_back(concat_history(make_text<float>(5, 32, 22), img0, 1));

    const auto sel = select_salient_history(current, hist, fusion);
    CHECK(sel.report.scores.size() == 2);
    double sum = 0.0;
    for (double s : sel.report.scores) sum += s;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(sel.feature.source_history_index == sel.report.chosen_index);
    // identity-initialized q/k: matching rows should win already at init
    CHECK(sel.report.chosen_index == 0);

    CHECK_THROWS_AS((void)select_salient_history(current, {}, fusion), DimensionError);
}

TEST_CASE("fuse_all_mean averages features") {
    FusionModel<float> fusion(32, 2, RngStream(23, streams::kInit));
    const auto current = make_text<float>(4, 32, 24);
    std::vector<HistoryContext<float>> hist;
    Tensor<float> img = Tensor<float>::zeros({4, 32});
    hist.push_back(concat_history(make_text<float>(3, 32, 25), img, 0));
    hist.push_back(concat_history(make_text<float>(3, 32, 26), img, 1));

    const auto mean = fuse_all_mean(current, hist, fusion);
    const auto a = fusion.fuse_plain(current, hist[0]);
    const auto b = fusion.fuse_plain(current, hist[1]);
    for (int64_t i = 0; i < mean.feature.numel(); ++i)
        CHECK(mean.feature[i] ==
              doctest::Approx(0.5 * ((double)a.feature[i] + b.feature[i])).epsilon(1e-5));
}
