#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ecmc/autodiff.hpp"
#include "ecmc/rng.hpp"
#include "oracles.hpp"

using namespace ecmc;

namespace {

Var random_param(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Var::parameter(Tensor::uniform(r, c, rng, lo, hi));
}

} // namespace

TEST_CASE("matmul: identity, zero, and hand-multiplied cases") {
    Var i2 = Var::constant(Tensor::identity(2));
    Var m = Var::constant(Tensor::from_rows({{1, 2}, {3, 4}}));
    CHECK(bit_identical(matmul(i2, m).value(), m.value()));

    Var z = Var::constant(Tensor(2, 2));
    CHECK(bit_identical(matmul(z, m).value(), Tensor(2, 2)));

    Var b = Var::constant(Tensor::from_rows({{5, 6}, {7, 8}}));
    const Tensor prod = matmul(m, b).value();
    CHECK(bit_identical(prod, Tensor::from_rows({{19, 22}, {43, 50}})));
    CHECK(max_abs_diff(prod, oracle::naive_matmul(m.value(), b.value())) == 0.0);

    CHECK_THROWS_AS(matmul(m, Var::constant(Tensor(3, 2))), DimensionError);
}

TEST_CASE("matmul matches the naive triple loop on random shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t k = 1 + rng.uniform_index(6);
        const std::size_t m = 1 + rng.uniform_index(6);
        Tensor a = Tensor::uniform(n, k, rng, -2.0, 2.0);
        Tensor b = Tensor::uniform(k, m, rng, -2.0, 2.0);
        const Tensor got = matmul(Var::constant(a), Var::constant(b)).value();
        CHECK(max_abs_diff(got, oracle::naive_matmul(a, b)) < 1e-12);
    }
}

TEST_CASE("matmul associativity on random triples") {
    Rng rng(12);
    for (int trial = 0; trial < 25; ++trial) {
        Var a = Var::constant(Tensor::uniform(4, 5, rng, -1.0, 1.0));
        Var b = Var::constant(Tensor::uniform(5, 3, rng, -1.0, 1.0));
        Var c = Var::constant(Tensor::uniform(3, 6, rng, -1.0, 1.0));
        const Tensor left = matmul(matmul(a, b), c).value();
        const Tensor right = matmul(a, matmul(b, c)).value();
        double scale = 0.0;
        for (double v : left.data()) scale = std::max(scale, std::abs(v));
        CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(scale, 1.0));
    }
}

TEST_CASE("row_softmax: symmetry, degenerate column, oracle match") {
    Var flat = Var::constant(Tensor(1, 3));
    const Tensor s = row_softmax(flat, 1.0).value();
    for (std::size_t j = 0; j < 3; ++j) CHECK(s(0, j) == Catch::Approx(1.0 / 3.0).margin(1e-15));

    Var single = Var::constant(Tensor(1, 1, 42.0));
    CHECK(row_softmax(single, 1.0).value()(0, 0) == 1.0);

    Var v = Var::constant(Tensor::from_rows({{1, 2, 3}}));
    const Tensor got = row_softmax(v, 1.0).value();
    const auto want = oracle::naive_softmax_row({1, 2, 3}, 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(got(0, j) - want[j]) < 1e-12);
}

TEST_CASE("row_softmax rows sum to one and shift invariance holds") {
    Rng rng(21);
    Tensor raw = Tensor::uniform(5, 7, rng, -30.0, 30.0);
    const Tensor s = row_softmax(Var::constant(raw), 0.37).value();
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) sum += s(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    //

    Tensor shifted = raw;
    for (std::size_t j = 0; j < shifted.cols(); ++j) shifted(2, j) += 123.456;
    const Tensor s2 = row_softmax(Var::constant(shifted), 0.37).value();
    for (std::size_t j = 0; j < s.cols(); ++j)
        CHECK(std::abs(s(2, j) - s2(2, j)) < 1e-12);
}

TEST_CASE("l2_normalize_rows: 3-4-5 triangle, idempotence, degenerate row") {
    Var v = Var::constant(Tensor::from_rows({{3, 4}}));
    const Tensor n = l2_normalize_rows(v).value();
    CHECK(n(0, 0) == Catch::Approx(0.6).margin(1e-15));
    CHECK(n(0, 1) == Catch::Approx(0.8).margin(1e-15));

    Rng rng(31);
    Tensor raw = Tensor::uniform(4, 9, rng, -5.0, 5.0);
    const Tensor once = l2_normalize_rows(Var::constant(raw)).value();
    for (std::size_t i = 0; i < once.rows(); ++i)
        CHECK(std::abs(oracle::row_norm(once, i) - 1.0) < 1e-12);
    const Tensor twice = l2_normalize_rows(Var::constant(once)).value();
    CHECK(max_abs_diff(once, twice) < 1e-12);

    Tensor zero_row(2, 3);
    zero_row(0, 0) = 1.0;
    CHECK_THROWS_AS(l2_normalize_rows(Var::constant(zero_row)), DegenerateInputError);
}

TEST_CASE("mean_pool_rows: arithmetic mean, identity, summation oracle") {
    Var v = Var::constant(Tensor::from_rows({{1, 3}, {3, 5}}));
    CHECK(bit_identical(mean_pool_rows(v).value(), Tensor::from_rows({{2, 4}})));

    Var single = Var::constant(Tensor::from_rows({{7, -2, 0.5}}));
    CHECK(bit_identical(mean_pool_rows(single).value(), single.value()));

    Rng rng(41);
    Tensor raw = Tensor::uniform(5, 3, rng, -1.0, 1.0);
    const Tensor pooled = mean_pool_rows(Var::constant(raw)).value();
    for (std::size_t j = 0; j < 3; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 5; ++i) sum += raw(i, j);
        CHECK(std::abs(pooled(0, j) - sum / 5.0) < 1e-15);
    }

    CHECK_THROWS_AS(mean_pool_rows(Var::constant(Tensor(0, 3))), DimensionError);
}

TEST_CASE("backward: linear and quadratic leaves") {
    Rng rng(51);
    Var x = random_param(2, 3, rng);
    backward(sum_all(x));
    for (double g : x.grad().data()) CHECK(g == 1.0);

    Var y = random_param(2, 3, rng);
    backward(sum_all(elem_mul(y, y)));
    for (std::size_t i = 0; i < y.grad().size(); ++i)
        CHECK(y.grad().data()[i] == Catch::Approx(2.0 * y.value().data()[i]).margin(1e-15));
}

TEST_CASE("backward accumulates across calls until reset") {
    Rng rng(52);
    Var x = random_param(1, 4, rng);
    Var loss = sum_all(x);
    backward(loss);
    backward(loss);
    for (double g : x.grad().data()) CHECK(g == 2.0);
    x.zero_grad();
    backward(loss);
    for (double g : x.grad().data()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    Var x = Var::parameter(Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("shared subexpressions accumulate gradient once per path") {
    // loss = sum(x W) + sum((x W) .* (x W)) reuses the same product node.
    Rng rng(53);
    Var x = random_param(3, 3, rng);
    Var w = Var::constant(Tensor::uniform(3, 3, rng, -1.0, 1.0));
    const auto f = [&] {
        Var p = matmul(x, w);
        return add(sum_all(p), sum_all(elem_mul(p, p)));
    };
    const Var params[] = {x};
    CHECK(grad_check(f, params) < 1e-6);
}

TEST_CASE("grad_check: exact quadratic is tight") {
    Var x = Var::parameter(Tensor::from_rows({{1, 2}}));
    const auto f = [&] { return sum_all(elem_mul(x, x)); };
    const Var params[] = {x};
    CHECK(grad_check(f, params) < 1e-8);
}

TEST_CASE("grad_check: softmax composed with sum of squares") {
    Rng rng(61);
    Var x = random_param(4, 5, rng, -2.0, 2.0);
    const auto f = [&] {
        Var s = row_softmax(x, 1.7);
        return sum_all(elem_mul(s, s));
    };
    const Var params[] = {x};
    CHECK(grad_check(f, params) < 1e-4);
}

TEST_CASE("grad_check: attention-shaped composite graph") {
    Rng rng(62);
    Var x = random_param(4, 6, rng);
    Var wv = random_param(6, 3, rng);
    Tensor readout = Tensor::uniform(1, 3, rng, -1.0, 1.0);
    const auto f = [&] {
        Var scores = matmul(x, transpose(x));
        Var attn = row_softmax(scores, 1.0 / std::sqrt(6.0));
        Var out = matmul(attn, matmul(x, wv));
        Var pooled = mean_pool_rows(out);
        Var normed = l2_normalize_rows(pooled);
        return masked_sum(normed, readout);
    };
    const Var params[] = {x, wv};
    CHECK(grad_check(f, params) < 1e-4);
}

TEST_CASE("grad_check covers the remaining primitives") {
    Rng rng(63);
    Var a = random_param(3, 4, rng, 0.2, 2.0); // positive so log is safe
    Var b = random_param(3, 4, rng);
    Var bias = random_param(1, 4, rng);
    Var table = random_param(5, 4, rng);
    Tensor mask(3, 4);
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data()[i] = (i % 3 == 0) ? 1.0 : 0.0;

    const auto f = [&] {
        Var t1 = elem_log(a);
        Var t2 = elem_exp(scale(b, 0.5));
        Var t3 = add_bias(add(t1, t2), bias);
        Var t4 = relu(t3);
        Var gathered = gather_rows(table, {0, 2, 2});
        Var joined = concat_cols({t4, gathered});
        Var sliced = slice_rows(joined, 1, 2);
        Var stacked = concat_rows({sliced, sliced});
        return add(masked_sum(t3, mask), sum_all(stacked));
    };
    const Var params[] = {a, b, bias, table};
    CHECK(grad_check(f, params) < 1e-4);
}

TEST_CASE("grad_check flags an intentionally wrong backward rule") {
    // Fault injection: a custom node whose backward drops a factor of 2.
    Var x = Var::parameter(Tensor::from_rows({{0.7, -1.3, 2.1}}));
    const auto wrong_square = [](const Var& v) {
        Tensor out = v.value();
        for (double& t : out.data()) t = t * t;
        return detail::make_op(std::move(out), "wrong_square", {v}, [](detail::Node& self) {
            auto& p = *self.parents[0];
            Tensor& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g.data()[i] += self.grad.data()[i] * p.value.data()[i]; // missing the 2
        });
    };
    const auto f = [&] { return sum_all(wrong_square(x)); };
    const Var params[] = {x};
    CHECK(grad_check(f, params) > 1e-2);
}

TEST_CASE("operations reject non-finite results") {
    Tensor big(1, 2, 1e308);
    CHECK_THROWS_AS(add(Var::constant(big), Var::constant(big)), NumericError);
    Tensor zero(1, 2, 0.0);
    CHECK_THROWS_AS(elem_log(Var::constant(zero)), NumericError);
}

TEST_CASE("interior nodes are immutable") {
    Var x = Var::parameter(Tensor(2, 2, 1.0));
    Var y = add(x, x);
    CHECK_THROWS_AS(y.leaf_value(), ContractError);
}
