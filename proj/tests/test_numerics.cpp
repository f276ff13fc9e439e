#include "doctest.h"

#include <cmath>

#include "vista/gradcheck.hpp"
#include "vista/param.hpp"
#include "vista/rng.hpp"
#include "vista/tape.hpp"
#include "vista/tensor.hpp"

using namespace vista;

namespace {

TensorD random_tensor(std::vector<int> shape, RngStream& rng, double scale = 1.0) {
    TensorD t = TensorD::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.next_normal() * scale;
    return t;
}

} // namespace

TEST_CASE("rng streams are deterministic and independent") {
    RngStream a(42, streams::kNoise);
    RngStream b(42, streams::kNoise);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(42, streams::kInit);
    RngStream d(43, streams::kNoise);
    CHECK(RngStream(42, streams::kNoise).next_u64() != c.next_u64());
    CHECK(RngStream(42, streams::kNoise).next_u64() != d.next_u64());

    // forked child streams don't disturb the parent
    RngStream p(7, streams::kDataGen);
    const uint64_t before = RngStream(7, streams::kDataGen).next_u64();
    (void)p.fork(3).next_u64();
    CHECK(RngStream(7, streams::kDataGen).next_u64() == before);
}

TEST_CASE("rng normal moments") {
    RngStream rng(5, streams::kNoise);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.next_normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("matmul identity and selector") {
    Tape<double> tp;
    auto i2 = constant(tp, TensorD::from({2, 2}, {1, 0, 0, 1}));
    auto m = constant(tp, TensorD::from({2, 2}, {1, 2, 3, 4}));
    auto r = matmul(i2, m);
    for (int i = 0; i < 4; ++i) CHECK(r.v()[i] == doctest::Approx(m.v()[i]));

    auto sel = constant(tp, TensorD::from({1, 2}, {1, 0}));
    auto col = constant(tp, TensorD::from({2, 1}, {3.5, -1.25}));
    auto picked = matmul(sel, col);
    CHECK(picked.v()[0] == doctest::Approx(3.5));
}

TEST_CASE("matmul against triple-loop oracle") {
    RngStream rng(1, streams::kGradCheck);
    TensorD a = random_tensor({3, 4}, rng);
    TensorD b = random_tensor({4, 2}, rng);
    Tape<double> tp;
    auto r = matmul(constant(tp, a), constant(tp, b));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int t = 0; t < 4; ++t) acc += a.at(i, t) * b.at(t, j);
            CHECK(r.v().at(i, j) == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("matmul shape mismatch errors") {
    Tape<double> tp;
    auto a = constant(tp, TensorD::zeros({2, 3}));
    auto b = constant(tp, TensorD::zeros({2, 3}));
    CHECK_THROWS_AS((void)matmul(a, b), DimensionError);
}

TEST_CASE("softmax basics") {
    Tape<double> tp;
    auto u = softmax_lastdim(constant(tp, TensorD::from({1, 3}, {1, 1, 1})));
    for (int j = 0; j < 3; ++j) CHECK(u.v()[j] == doctest::Approx(1.0 / 3));

    auto f = softmax_lastdim(constant(tp, TensorD::from({1, 2}, {0.0, std::log(2.0)})));
    CHECK(f.v()[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(f.v()[1] == doctest::Approx(2.0 / 3).epsilon(1e-9));
}

TEST_CASE("softmax shift invariance and row sums") {
    RngStream rng(2, streams::kGradCheck);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD x = random_tensor({4, 7}, rng, 15.0);
        for (auto& v : x.data) v = std::min(50.0, std::max(-50.0, v));
        TensorD shifted = x;
        const double c = rng.next_range(-30, 30);
        for (auto& v : shifted.data) v += c;
        Tape<double> tp;
        auto y0 = softmax_lastdim(constant(tp, x));
        auto y1 = softmax_lastdim(constant(tp, shifted));
        for (int64_t i = 0; i < y0.v().numel(); ++i)
            CHECK(std::abs(y0.v()[i] - y1.v()[i]) < 1e-7);
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 7; ++j) s += y0.v().at(i, j);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("softmax empty last dim errors") {
    Tape<double> tp;
    auto x = constant(tp, TensorD::zeros({2, 0}));
    CHECK_THROWS_AS((void)softmax_lastdim(x), DimensionError);
}

TEST_CASE("attention degenerate cases") {
    Tape<double> tp;
    RngStream rng(3, streams::kGradCheck);

    // single context row: output equals that V row for every query
    auto q = constant(tp, random_tensor({3, 4}, rng));
    auto k = constant(tp, random_tensor({1, 4}, rng));
    auto v = constant(tp, TensorD::from({1, 2}, {2.5, -1.5}));
    auto att = scaled_dot_attention(q, k, v);
    for (int i = 0; i < 3; ++i) {
        CHECK(att.out.v().at(i, 0) == doctest::Approx(2.5));
        CHECK(att.out.v().at(i, 1) == doctest::Approx(-1.5));
    }

    // zero logits: output is the column mean of V
    auto q0 = constant(tp, TensorD::zeros({2, 4}));
    auto k3 = constant(tp, random_tensor({3, 4}, rng));
    TensorD vv = random_tensor({3, 2}, rng);
    auto att0 = scaled_dot_attention(q0, k3, constant(tp, vv));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double mean = (vv.at(0, j) + vv.at(1, j) + vv.at(2, j)) / 3.0;
            CHECK(att0.out.v().at(i, j) == doctest::Approx(mean).epsilon(1e-9));
        }
}

TEST_CASE("attention against explicit-loop oracle") {
    RngStream rng(4, streams::kGradCheck);
    TensorD q = random_tensor({2, 4}, rng);
    TensorD k = random_tensor({3, 4}, rng);
    TensorD v = random_tensor({3, 5}, rng);
    Tape<double> tp;
    auto att = scaled_dot_attention(constant(tp, q), constant(tp, k), constant(tp, v));

    const double inv = 1.0 / std::sqrt(4.0);
    for (int i = 0; i < 2; ++i) {
        double logits[3];
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int t = 0; t < 4; ++t) acc += q.at(i, t) * k.at(j, t);
            logits[j] = acc * inv;
        }
        double mx = std::max({logits[0], logits[1], logits[2]});
        double w[3], denom = 0.0;
        for (int j = 0; j < 3; ++j) denom += (w[j] = std::exp(logits[j] - mx));
        for (int j = 0; j < 3; ++j) w[j] /= denom;
        for (int c = 0; c < 5; ++c) {
            double acc = 0.0;
            for (int j = 0; j < 3; ++j) acc += w[j] * v.at(j, c);
            CHECK(att.out.v().at(i, c) == doctest::Approx(acc).epsilon(1e-6));
        }
        for (int j = 0; j < 3; ++j)
            CHECK(att.logits.v().at(i, j) == doctest::Approx(logits[j]).epsilon(1e-9));
    }
}

TEST_CASE("attention output stays in the convex hull of V rows") {
    RngStream rng(5, streams::kGradCheck);
    for (int rep = 0; rep < 10; ++rep) {
        TensorD q = random_tensor({3, 4}, rng, 3.0);
        TensorD k = random_tensor({5, 4}, rng, 3.0);
        TensorD v = random_tensor({5, 3}, rng, 2.0);
        Tape<double> tp;
        auto att = scaled_dot_attention(constant(tp, q), constant(tp, k), constant(tp, v));
        for (int c = 0; c < 3; ++c) {
            double lo = 1e30, hi = -1e30;
            for (int j = 0; j < 5; ++j) {
                lo = std::min(lo, v.at(j, c));
                hi = std::max(hi, v.at(j, c));
            }
            for (int i = 0; i < 3; ++i) {
                CHECK(att.out.v().at(i, c) >= lo - 1e-9);
                CHECK(att.out.v().at(i, c) <= hi + 1e-9);
            }
        }
    }
}

TEST_CASE("attention rejects empty context") {
    Tape<double> tp;
    auto q = constant(tp, TensorD::zeros({2, 4}));
    auto k = constant(tp, TensorD::zeros({0, 4}));
    auto v = constant(tp, TensorD::zeros({0, 3}));
    CHECK_THROWS_AS((void)scaled_dot_attention(q, k, v), DimensionError);
}

TEST_CASE("layer_norm basics") {
    Tape<double> tp;
    auto gain = constant(tp, TensorD::from({4}, {1, 1, 1, 1}));
    auto bias = constant(tp, TensorD::zeros({4}));

    auto c = layer_norm(constant(tp, TensorD::from({1, 4}, {3, 3, 3, 3})), gain, bias);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(c.v()[j]) < 1e-6);

    auto gain2 = constant(tp, TensorD::from({2}, {1, 1}));
    auto bias2 = constant(tp, TensorD::zeros({2}));
    auto r = layer_norm(constant(tp, TensorD::from({1, 2}, {1, -1})), gain2, bias2);
    CHECK(r.v()[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.v()[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm against two-pass oracle") {
    RngStream rng(6, streams::kGradCheck);
    TensorD x = random_tensor({3, 8}, rng, 2.0);
    TensorD g = random_tensor({8}, rng);
    TensorD b = random_tensor({8}, rng);
    Tape<double> tp;
    auto r = layer_norm(constant(tp, x), constant(tp, g), constant(tp, b));
    for (int i = 0; i < 3; ++i) {
        double mu = 0.0;
        for (int j = 0; j < 8; ++j) mu += x.at(i, j);
        mu /= 8;
        double var = 0.0;
        for (int j = 0; j < 8; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
        var /= 8;
        for (int j = 0; j < 8; ++j) {
            const double want = (x.at(i, j) - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
            CHECK(r.v().at(i, j) == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("adamw first-step and zero-grad behavior") {
    ParamStore<double> store;
    auto& p = store.add("theta", {1}, Role::TrainableFusion);
    p.value[0] = 1.0;
    p.grad[0] = 0.5;
    AdamW<double> opt;
    opt.lr = 0.1;
    opt.eps = 1e-12;
    opt.weight_decay = 0.0;
    opt.step({&p});
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));

    auto& q = store.add("theta2", {3}, Role::TrainableAdapter);
    q.value = TensorD::from({3}, {1.0, -2.0, 0.25});
    AdamW<double> opt2;
    opt2.lr = 0.1;
    opt2.weight_decay = 0.0;
    opt2.step({&q});
    CHECK(q.value[0] == doctest::Approx(1.0));
    CHECK(q.value[1] == doctest::Approx(-2.0));
    CHECK(q.value[2] == doctest::Approx(0.25));
}

TEST_CASE("adamw trajectory matches a scalar reference") {
    // loss f(theta) = theta^2 / 2, grad = theta
    ParamStore<double> store;
    auto& p = store.add("theta", {1}, Role::TrainableFusion);
    p.value[0] = 1.0;
    AdamW<double> opt;
    opt.lr = 0.05;
    opt.weight_decay = 0.0;

    // independent scalar re-implementation
    double th = 1.0, m = 0.0, v = 0.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
    for (int t = 1; t <= 3; ++t) {
        p.zero_grad();
        p.grad[0] = p.value[0];
        opt.step({&p});

        const double g = th;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        th -= lr * mh / (std::sqrt(vh) + eps);
        CHECK(p.value[0] == doctest::Approx(th).epsilon(1e-7));
    }
}

TEST_CASE("adamw with lr=0 is the identity") {
    ParamStore<double> store;
    auto& p = store.add("w", {4}, Role::TrainableFusion);
    RngStream rng(9, streams::kInit);
    init_normal(p, rng, 1.0);
    const TensorD before = p.value;
    for (auto& g : p.grad.data) g = rng.next_normal();
    AdamW<double> opt;
    opt.lr = 0.0;
    opt.weight_decay = 0.3;
    opt.step({&p});
    for (int i = 0; i < 4; ++i) CHECK(p.value[i] == before[i]);
}

TEST_CASE("adamw refuses frozen parameters") {
    ParamStore<double> store;
    auto& p = store.add("base.w", {2}, Role::FrozenBase);
    AdamW<double> opt;
    CHECK_THROWS_AS(opt.step({&p}), FrozenViolation);

    auto& q = store.add("enc.w", {2}, Role::Encoder);
    q.frozen = true;
    CHECK_THROWS_AS(opt.step({&q}), FrozenViolation);
}

TEST_CASE("grad_check on f(x) = x^2 at x = 3") {
    ParamStore<double> store;
    auto& p = store.add("x", {1}, Role::TrainableFusion);
    p.value[0] = 3.0;
    p.grad[0] = 6.0; // analytic derivative
    auto loss = [&] { return p.value[0] * p.value[0]; };
    auto rep = grad_check(loss, {&p}, 1e-3, 8, RngStream(0, streams::kGradCheck));
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("backward through a small composite graph") {
    // loss = sum((A x W + b)^2), checked coordinate-wise by fd
    ParamStore<double> store;
    RngStream rng(11, streams::kInit);
    auto& w = store.add("w", {3, 2}, Role::TrainableFusion);
    auto& b = store.add("b", {2}, Role::TrainableFusion);
    init_normal(w, rng, 0.5);
    init_normal(b, rng, 0.5);
    TensorD a = random_tensor({4, 3}, rng);

    auto forward = [&](bool record) {
        Tape<double> tp;
        tp.grad_enabled = record;
        auto out = linear(constant(tp, a), leaf(tp, w), leaf(tp, b));
        auto loss = sum_sq(out);
        if (record) tp.backward(loss.id);
        return (double)loss.v()[0];
    };
    store.zero_grads();
    forward(true);
    auto rep = grad_check([&] { return forward(false); }, {&w, &b}, 1e-4, 16,
                          RngStream(1, streams::kGradCheck));
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("frozen-base leaves receive no gradient") {
    ParamStore<double> store;
    RngStream rng(12, streams::kInit);
    auto& wf = store.add("frozen.w", {3, 3}, Role::FrozenBase);
    auto& wt = store.add("train.w", {3, 3}, Role::TrainableAdapter);
    init_normal(wf, rng, 0.5);
    init_normal(wt, rng, 0.5);
    TensorD x = random_tensor({2, 3}, rng);

    Tape<double> tp;
    auto h = matmul(constant(tp, x), leaf(tp, wf)); // through frozen weights
    auto out = matmul(h, leaf(tp, wt));
    auto loss = sum_sq(out);
    tp.backward(loss.id);

    double frozen_grad = 0.0, train_grad = 0.0;
    for (auto v : wf.grad.data) frozen_grad += std::abs(v);
    for (auto v : wt.grad.data) train_grad += std::abs(v);
    CHECK(frozen_grad == 0.0);
    CHECK(train_grad > 0.0);
}
