#include "doctest.h"

#include <cmath>
#include <functional>
#include <string>

#include "ga/adam.hpp"
#include "ga/errors.hpp"
#include "ga/tape.hpp"
#include "helpers.hpp"

using ga::num::Tape;
using ga::num::Tensor2;
using ga::num::Var;

namespace {

Tensor2 triple_loop(const Tensor2& a, const Tensor2& b) {
    Tensor2 out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

// Reduces an op's output to a scalar through fixed random weights so every
// output entry contributes a distinct gradient.
Var weighted_sum(Tape& t, Var y, std::uint64_t seed) {
    ga::Rng rng(seed);
    const auto& v = t.value(y);
    return t.sum(t.mul(y, t.constant(testutil::random_tensor(rng, v.rows(), v.cols()))));
}

void check_op(const std::string& name, std::size_t rows, std::size_t cols,
              const std::function<Var(Tape&, Var, ga::Rng&)>& op) {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        ga::Rng rng(1000 + trial);
        const Tensor2 x = testutil::random_tensor(rng, rows, cols);
        const std::uint64_t op_seed = rng.next_u64();
        auto f = [&](Tape& t, Var xv) {
            ga::Rng local(op_seed);
            return weighted_sum(t, op(t, xv, local), op_seed + 1);
        };
        const double err = ga::num::grad_check(f, x, 1e-5);
        INFO(name << " trial " << trial << " err " << err);
        CHECK(err < 1e-6);
    }
}

} // namespace

TEST_CASE("matmul examples") {
    const Tensor2 id{{1, 0}, {0, 1}};
    const Tensor2 b{{5, 6}, {7, 8}};
    CHECK(ga::num::matmul(id, b) == b);
    CHECK(ga::num::matmul(Tensor2{{1, 2}}, Tensor2{{3}, {4}}) == Tensor2{{11}});

    ga::Rng rng(3);
    const auto x = testutil::random_tensor(rng, 3, 4), y = testutil::random_tensor(rng, 4, 2);
    CHECK(ga::num::max_abs_diff(ga::num::matmul(x, y), triple_loop(x, y)) < 1e-12);
    CHECK(ga::num::max_abs_diff(ga::num::matmul_nt(x, ga::num::transpose(y)), triple_loop(x, y)) < 1e-12);
    CHECK(ga::num::max_abs_diff(ga::num::matmul_tn(ga::num::transpose(x), y), triple_loop(x, y)) < 1e-12);
}

TEST_CASE("matmul shape error names both shapes") {
    try {
        ga::num::matmul(Tensor2(2, 3), Tensor2(2, 3));
        FAIL("expected ShapeError");
    } catch (const ga::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("by 2x3") != std::string::npos);
    }
}

TEST_CASE("matmul associativity") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        ga::Rng rng(s);
        const auto a = testutil::random_tensor(rng, 3, 5), b = testutil::random_tensor(rng, 5, 4),
                   c = testutil::random_tensor(rng, 4, 2);
        const auto l = ga::num::matmul(ga::num::matmul(a, b), c);
        const auto r = ga::num::matmul(a, ga::num::matmul(b, c));
        double scale = 0.0;
        for (double v : l.data()) scale = std::max(scale, std::abs(v));
        CHECK(ga::num::max_abs_diff(l, r) <= 1e-9 * std::max(scale, 1.0));
    }
}

TEST_CASE("softmax rows") {
    const auto s = ga::num::softmax_rows(Tensor2{{0, 0}, {0, -1}, {1000, 0}});
    CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s(1, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(s(1, 1) == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(s(2, 0) == 1.0);
    CHECK(s(2, 1) == doctest::Approx(0.0).epsilon(1e-300));
    CHECK(s.all_finite());

    ga::Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = testutil::random_tensor(rng, 4, 7, 3.0);
        const auto a = ga::num::softmax_rows(x);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double sum = 0.0;
            for (double v : a.row(i)) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
            for (double& v : x.row(i)) v += 17.5;
        }
        CHECK(ga::num::max_abs_diff(ga::num::softmax_rows(x), a) < 1e-12);
    }
}

TEST_CASE("backward basics") {
    Tape t;
    Tensor2 x{{3.0}};
    Var xv = t.input(x);
    t.backward(t.sum(t.mul(xv, xv)));
    CHECK(t.grad(xv)(0, 0) == 6.0);

    Tape c;
    Var a = c.input(Tensor2{{1, 2}, {3, 4}});
    Var k = c.constant(Tensor2{{5.0}});
    c.backward(c.sum(k));
    CHECK(c.grad(a) == Tensor2(2, 2));

    Tape bad;
    Var m = bad.input(Tensor2(2, 2, 1.0));
    CHECK_THROWS_AS(bad.backward(m), ga::ContractError);
}

TEST_CASE("backward twice starts from zeroed accumulators") {
    Tape t;
    Var x = t.input(Tensor2{{2.0}});
    Var y = t.sum(t.mul(x, x));
    t.backward(y);
    t.backward(y);
    CHECK(t.grad(x)(0, 0) == 4.0);
}

TEST_CASE("grad_check examples") {
    ga::Rng rng(5);
    const auto x = testutil::random_tensor(rng, 2, 3);
    CHECK(ga::num::grad_check([](Tape& t, Var v) { return t.sum(t.mul(v, v)); }, x, 1e-5) < 1e-7);
    CHECK(ga::num::grad_check([](Tape& t, Var) { return t.constant(Tensor2{{4.0}}); }, x, 1e-5) == 0.0);
    CHECK_THROWS_AS(ga::num::grad_check([](Tape& t, Var v) { return t.sum(v); }, x, 0.0), ga::ContractError);
}

TEST_CASE("composed matmul softmax dot matches finite differences") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        ga::Rng rng(40 + s);
        const auto w = testutil::random_tensor(rng, 4, 4), d = testutil::random_tensor(rng, 4, 4);
        const auto x = testutil::random_tensor(rng, 4, 4);
        auto f = [&](Tape& t, Var xv) {
            Var a = t.softmax_rows(t.matmul(xv, t.constant(w)));
            return t.sum(t.mul(a, t.constant(d)));
        };
        CHECK(ga::num::grad_check(f, x, 1e-5) < 1e-6);
    }
}

TEST_CASE("per-op gradients") {
    check_op("matmul left", 3, 4, [](Tape& t, Var x, ga::Rng& r) {
        return t.matmul(x, t.constant(testutil::random_tensor(r, 4, 2)));
    });
    check_op("matmul right", 4, 2, [](Tape& t, Var x, ga::Rng& r) {
        return t.matmul(t.constant(testutil::random_tensor(r, 3, 4)), x);
    });
    check_op("matmul_nt left", 3, 4, [](Tape& t, Var x, ga::Rng& r) {
        return t.matmul_nt(x, t.constant(testutil::random_tensor(r, 5, 4)));
    });
    check_op("matmul_nt right", 5, 4, [](Tape& t, Var x, ga::Rng& r) {
        return t.matmul_nt(t.constant(testutil::random_tensor(r, 3, 4)), x);
    });
    check_op("add", 3, 3, [](Tape& t, Var x, ga::Rng& r) { return t.add(x, t.constant(testutil::random_tensor(r, 3, 3))); });
    check_op("sub", 3, 3, [](Tape& t, Var x, ga::Rng& r) { return t.sub(t.constant(testutil::random_tensor(r, 3, 3)), x); });
    check_op("add_row matrix", 3, 4, [](Tape& t, Var x, ga::Rng& r) {
        return t.add_row(x, t.constant(testutil::random_tensor(r, 1, 4)));
    });
    check_op("add_row row", 1, 4, [](Tape& t, Var x, ga::Rng& r) {
        return t.add_row(t.constant(testutil::random_tensor(r, 3, 4)), x);
    });
    check_op("mul", 3, 2, [](Tape& t, Var x, ga::Rng&) { return t.mul(x, x); });
    check_op("scale", 2, 5, [](Tape& t, Var x, ga::Rng&) { return t.scale(x, -1.7); });
    check_op("relu", 4, 4, [](Tape& t, Var x, ga::Rng&) { return t.relu(x); });
    check_op("softplus", 4, 4, [](Tape& t, Var x, ga::Rng&) { return t.softplus(x); });
    check_op("softmax_rows", 3, 5, [](Tape& t, Var x, ga::Rng&) { return t.softmax_rows(x); });
    check_op("layer_norm x", 3, 6, [](Tape& t, Var x, ga::Rng& r) {
        return t.layer_norm_rows(x, t.constant(testutil::random_tensor(r, 1, 6)),
                                 t.constant(testutil::random_tensor(r, 1, 6)));
    });
    check_op("layer_norm gain", 1, 6, [](Tape& t, Var g, ga::Rng& r) {
        return t.layer_norm_rows(t.constant(testutil::random_tensor(r, 3, 6)), g,
                                 t.constant(testutil::random_tensor(r, 1, 6)));
    });
    check_op("layer_norm bias", 1, 6, [](Tape& t, Var b, ga::Rng& r) {
        return t.layer_norm_rows(t.constant(testutil::random_tensor(r, 3, 6)),
                                 t.constant(testutil::random_tensor(r, 1, 6)), b);
    });
    check_op("slice_cols", 3, 6, [](Tape& t, Var x, ga::Rng&) { return t.slice_cols(x, 2, 3); });
    check_op("slice_rows", 5, 3, [](Tape& t, Var x, ga::Rng&) { return t.slice_rows(x, 1, 3); });
    check_op("concat_cols", 3, 2, [](Tape& t, Var x, ga::Rng& r) {
        const Var parts[] = {t.constant(testutil::random_tensor(r, 3, 1)), x, t.scale(x, 2.0)};
        return t.concat_cols(parts);
    });
    check_op("concat_rows", 2, 3, [](Tape& t, Var x, ga::Rng& r) {
        const Var parts[] = {x, t.constant(testutil::random_tensor(r, 1, 3)), t.relu(x)};
        return t.concat_rows(parts);
    });
    check_op("sub_scaled logits", 2, 5, [](Tape& t, Var x, ga::Rng& r) {
        Tensor2 pen = testutil::random_tensor(r, 2, 5);
        for (double& v : pen.data()) v = std::abs(v);
        return t.sub_scaled(x, t.constant(Tensor2{{0.7}}), pen);
    });
    check_op("sub_scaled scale", 1, 1, [](Tape& t, Var s, ga::Rng& r) {
        Tensor2 pen = testutil::random_tensor(r, 2, 5);
        for (double& v : pen.data()) v = std::abs(v);
        return t.softmax_rows(t.sub_scaled(t.constant(testutil::random_tensor(r, 2, 5)), s, pen));
    });
    check_op("rotate_pairs", 3, 8, [](Tape& t, Var x, ga::Rng& r) {
        return t.rotate_pairs(x, testutil::random_tensor(r, 3, 4, 2.0));
    });
    check_op("pick", 3, 3, [](Tape& t, Var x, ga::Rng&) { return t.pick(t.mul(x, x), 1, 2); });
    check_op("sum", 3, 3, [](Tape& t, Var x, ga::Rng&) { return t.sum(t.mul(x, x)); });
    check_op("mse", 4, 1, [](Tape& t, Var x, ga::Rng& r) { return t.mse(x, testutil::random_tensor(r, 4, 1)); });
}

TEST_CASE("tape shape errors") {
    Tape t;
    Var a = t.input(Tensor2(2, 3));
    Var b = t.input(Tensor2(2, 2));
    CHECK_THROWS_AS(t.add(a, b), ga::ShapeError);
    CHECK_THROWS_AS(t.matmul(a, a), ga::ShapeError);
    CHECK_THROWS_AS(t.slice_cols(a, 2, 2), ga::ContractError);
}

TEST_CASE("adam") {
    using ga::num::AdamConfig;
    using ga::num::AdamState;
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<Tensor2> p{Tensor2{{1.5, -2.0}}};
        std::vector<Tensor2> g{Tensor2(1, 2)};
        AdamState s;
        for (int i = 0; i < 3; ++i) ga::num::adam_step(p, g, s, AdamConfig{});
        CHECK(p[0] == Tensor2{{1.5, -2.0}});
    }
    SUBCASE("first step moves by lr") {
        std::vector<Tensor2> p{Tensor2{{0.0}}};
        std::vector<Tensor2> g{Tensor2{{1.0}}};
        AdamState s;
        ga::num::adam_step(p, g, s, AdamConfig{0.1, 0.9, 0.999, 1e-8});
        CHECK(p[0](0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
        ga::num::adam_step(p, g, s, AdamConfig{0.1, 0.9, 0.999, 1e-8});
        CHECK(s.step == 2);
        CHECK(s.m[0](0, 0) == doctest::Approx(0.9 * 0.1 + 0.1).epsilon(1e-15));
        CHECK(s.v[0](0, 0) == doctest::Approx(0.999 * 0.001 + 0.001).epsilon(1e-15));
        const double mhat = 0.19 / (1 - 0.81), vhat = 0.001999 / (1 - 0.999 * 0.999);
        CHECK(p[0](0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));
    }
    SUBCASE("mismatch") {
        std::vector<Tensor2> p{Tensor2(1, 2)};
        std::vector<Tensor2> g{Tensor2(2, 1)};
        AdamState s;
        CHECK_THROWS_AS(ga::num::adam_step(p, g, s, AdamConfig{}), ga::ContractError);
        std::vector<Tensor2> g2;
        CHECK_THROWS_AS(ga::num::adam_step(p, g2, s, AdamConfig{}), ga::ContractError);
    }
}
