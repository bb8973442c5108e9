// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spattn/gradcheck.hpp"
#include "spattn/rng.hpp"
#include "spattn/tape.hpp"

#include <cmath>
#include <random>

using namespace spattn;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& gen, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    fill_normal(std::span<double>(t.data), gen, 0.0, scale);
    return t;
}

} // namespace

TEST_CASE("deterministic rng primitives") {
    std::mt19937_64 a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = uniform01(a);
        CHECK(u == uniform01(b));
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
    std::mt19937_64 s1 = stream_for_step(7, 31), s2 = stream_for_step(7, 31);
    CHECK(s1() == s2());
    CHECK(stream_for_step(7, 31)() != stream_for_step(7, 32)());

    CHECK(fnv1a("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);

    std::mt19937_64 g(1);
    double sum = 0, sq = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = normal(g);
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("tensor shape checks") {
    CHECK_THROWS_AS(Tensor<double>({0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>({2, -1}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>({2}, {1.0}), ShapeError);
    Tensor<double> t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.shape_str() == "[2x3]");
}

TEST_CASE("matmul forward matches hand arithmetic") {
    Tape<double> tape;
    const auto a = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    const auto b = tape.leaf(Tensor<double>({2, 2}, {5, 6, 7, 8}));
    const auto c = tape.matmul(a, b);
    CHECK(tape.value(c).data == std::vector<double>{19, 22, 43, 50});
    CHECK_THROWS_AS(tape.matmul(a, tape.leaf(Tensor<double>({3, 2}))), ShapeError);
}

TEST_CASE("sum of squares gradient is tight") {
    std::mt19937_64 gen(11);
    const Tensor<double> x = random_tensor({6, 5}, gen);
    const double err = finite_difference_check(
        [](Tape<double>& t, int id) { return t.sum(t.mul(id, id)); }, x, 1e-5);
    CHECK(err < 1e-8);
}

TEST_CASE("gradients of core ops pass finite differences") {
    std::mt19937_64 gen(12);
    const Tensor<double> w = random_tensor({5, 4}, gen, 0.5);
    const Tensor<double> c = random_tensor({6, 4}, gen);
    const Tensor<double> x = random_tensor({6, 5}, gen);

    SUBCASE("matmul then gelu") {
        const double err = finite_difference_check(
            [&](Tape<double>& t, int id) {
                const auto wid = t.leaf(w);
                return t.sum(t.mul(t.gelu(t.matmul(id, wid)), t.leaf(c)));
            },
            x, 1e-5);
        CHECK(err < 1e-6);
    }
    SUBCASE("matmul right-hand side") {
        const double err = finite_difference_check(
            [&](Tape<double>& t, int id) {
                const auto xid = t.leaf(x);
                return t.sum(t.mul(t.matmul(xid, id), t.leaf(c)));
            },
            w, 1e-5);
        CHECK(err < 1e-7);
    }
    SUBCASE("bias, scale, transpose, add") {
        const Tensor<double> bias = random_tensor({1, 5}, gen);
        const double err = finite_difference_check(
            [&](Tape<double>& t, int id) {
                const auto b = t.leaf(Tensor<double>({5}, bias.data));
                const auto y = t.add_bias(id, b);
                const auto z = t.add(y, t.scale(id, 0.25));
                return t.sum(t.transpose(z));
            },
            x, 1e-5);
        CHECK(err < 1e-7);
    }
    SUBCASE("tiled row add") {
        const Tensor<double> table = random_tensor({3, 5}, gen);
        const Tensor<double> weights = random_tensor({6, 5}, gen);
        const double err = finite_difference_check(
            [&](Tape<double>& t, int id) {
                return t.sum(t.mul(t.add_rows_tiled(id, t.leaf(table)), t.leaf(weights)));
            },
            x, 1e-5);
        CHECK(err < 1e-7);
    }
}

TEST_CASE("layer_norm gradient and values") {
    std::mt19937_64 gen(13);
    const Tensor<double> x = random_tensor({4, 8}, gen, 2.0);
    const Tensor<double> g({8}, std::vector<double>(8, 1.0));
    const Tensor<double> b({8}, std::vector<double>(8, 0.0));

    Tape<double> tape;
    const auto xid = tape.leaf(x);
    const auto y = tape.layer_norm(xid, tape.leaf(g), tape.leaf(b));
    // each output row has (near) zero mean and unit variance
    for (int i = 0; i < 4; ++i) {
        double mu = 0, var = 0;
        for (int j = 0; j < 8; ++j) {
            mu += tape.value(y)(i, j);
        }
        mu /= 8;
        for (int j = 0; j < 8; ++j) {
            const double d = tape.value(y)(i, j) - mu;
            var += d * d;
        }
        CHECK(std::abs(mu) < 1e-12);
        CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-3));
    }

    const Tensor<double> w = random_tensor({4, 8}, gen);
    const double err = finite_difference_check(
        [&](Tape<double>& t, int id) {
            return t.sum(t.mul(t.layer_norm(id, t.leaf(g), t.leaf(b)), t.leaf(w)));
        },
        x, 1e-5);
    CHECK(err < 1e-6);

    // gradients flow into the affine parameters as well
    const double gerr = finite_difference_check(
        [&](Tape<double>& t, int id) {
            return t.sum(t.mul(t.layer_norm(t.leaf(x), id, t.leaf(b)), t.leaf(w)));
        },
        Tensor<double>({8}, std::vector<double>(8, 1.0)), 1e-5);
    CHECK(gerr < 1e-7);
}

TEST_CASE("masked softmax rows: values, empty rows, gradient") {
    Tape<double> tape;
    const auto s = tape.leaf(Tensor<double>({3, 4}, {0, 0, 0, 0, 1, 1, 9, 9, 5, 5, 5, 5}));
    const std::vector<KeyInterval> support{{0, 4}, {2, 4}, {1, 1}};
    const auto p = tape.masked_softmax_rows(s, support);
    const Tensor<double>& v = tape.value(p);
    for (int j = 0; j < 4; ++j) {
        CHECK(v(0, j) == doctest::Approx(0.25));
        CHECK(v(2, j) == 0.0); // empty support
    }
    CHECK(v(1, 0) == 0.0);
    CHECK(v(1, 2) == doctest::Approx(0.5));
    CHECK(v(1, 3) == doctest::Approx(0.5));

    std::mt19937_64 gen(14);
    const Tensor<double> x = random_tensor({3, 4}, gen);
    const Tensor<double> w = random_tensor({3, 4}, gen);
    const double err = finite_difference_check(
        [&](Tape<double>& t, int id) {
            return t.sum(t.mul(t.masked_softmax_rows(id, support), t.leaf(w)));
        },
        x, 1e-5);
    CHECK(err < 1e-7);

    Tape<double> bad;
    const auto inf = bad.leaf(Tensor<double>({1, 2}, {1.0, INFINITY}));
    CHECK_THROWS_AS(bad.masked_softmax_rows(inf, {{0, 2}}), NumericError);
}

TEST_CASE("cross entropy: value, gradient, error paths") {
    Tape<double> tape;
    const auto l = tape.leaf(Tensor<double>({1, 2}, {0.0, 0.0}));
    const auto loss = tape.cross_entropy_loss(l, {0});
    CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(2.0)));

    std::mt19937_64 gen(15);
    const Tensor<double> logits = random_tensor({6, 9}, gen, 2.0);
    std::vector<int> targets;
    for (int r = 0; r < 6; ++r) {
        targets.push_back(uniform_int(gen, 0, 8));
    }
    const double err = finite_difference_check(
        [&](Tape<double>& t, int id) { return t.cross_entropy_loss(id, targets); }, logits, 1e-5);
    CHECK(err < 1e-7);

    Tape<double> bad;
    const auto b = bad.leaf(Tensor<double>({1, 2}, {0.0, 0.0}));
    CHECK_THROWS_AS(bad.cross_entropy_loss(b, {2}), ShapeError);
    CHECK_THROWS_AS(bad.cross_entropy_loss(b, {0, 1}), ShapeError);
}

TEST_CASE("embedding lookup scatters gradients by index") {
    Tape<double> tape;
    const auto table = tape.leaf(Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6}));
    const auto rows = tape.embedding_lookup(table, {2, 0, 2});
    CHECK(tape.value(rows).data == std::vector<double>{5, 6, 1, 2, 5, 6});
    tape.backward(tape.sum(rows));
    CHECK(tape.grad(table) == std::vector<double>{1, 1, 0, 0, 2, 2});
    CHECK_THROWS_AS(tape.embedding_lookup(table, {3}), ShapeError);
}

TEST_CASE("tape state errors") {
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>({1}, {2.0}));
    CHECK_THROWS_AS(tape.grad(x), StateError);
    CHECK_THROWS_AS(tape.backward(tape.leaf(Tensor<double>({2}, {1.0, 2.0}))), ShapeError);
    const auto y = tape.mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == 4.0);
    CHECK_THROWS_AS(tape.backward(y), StateError);
}

TEST_CASE("two identical tapes produce identical gradient bits") {
    std::mt19937_64 gen(16);
    const Tensor<double> x = random_tensor({7, 7}, gen);
    const Tensor<double> w = random_tensor({7, 7}, gen);
    auto run = [&]() {
        Tape<double> t;
        const auto xid = t.leaf(x);
        const auto y = t.gelu(t.matmul(xid, t.leaf(w)));
        t.backward(t.sum(t.mul(y, y)));
        return t.grad(xid);
    };
    CHECK(run() == run());
}

TEST_CASE("one adam step matches hand arithmetic") {
    std::vector<double> p{1.0}, m{0.0}, v{0.0};
    const std::vector<double> g{1.0};
    adam_step<double>(p, m, v, g, 0.1, 1);
    CHECK(m[0] == doctest::Approx(0.1));
    CHECK(v[0] == doctest::Approx(0.001));
    // bias-corrected mhat = vhat = 1, so the update is lr/(1 + eps) below 1
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK_THROWS_AS(adam_step<double>(p, m, v, g, 0.1, 0), StateError);
    std::vector<double> short_m{};
    CHECK_THROWS_AS(
        adam_step<double>(p, short_m, v, g, 0.1, 1), ShapeError);
}
