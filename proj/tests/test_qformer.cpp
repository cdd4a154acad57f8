#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "ecmc/qformer.hpp"
#include "oracles.hpp"

using namespace ecmc;

namespace {

QFormerConfig toy_config() {
    QFormerConfig cfg;
    cfg.num_queries = 4;
    cfg.query_dim = 5;
    cfg.key_dim = 5;
    cfg.value_dim = 6;
    cfg.embed_dim = 9;
    return cfg;
}

QFormerParams toy_params(std::size_t feature_dim, std::uint64_t seed) {
    Rng rng(seed);
    return QFormerParams::init(toy_config(), feature_dim, rng);
}

} // namespace

TEST_CASE("config validation") {
    QFormerConfig cfg = toy_config();
    cfg.embed_dim = 10;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.embed_dim = 9;
    cfg.num_queries = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("modality_project: identity, zero, oracle") {
    QFormerParams p = toy_params(5, 1);
    p.feat_proj.leaf_value() = Tensor::identity(5);
    Rng rng(2);
    Tensor h = Tensor::uniform(3, 5, rng, -1.0, 1.0);
    CHECK(bit_identical(modality_project(Var::constant(h), p).value(), h));

    Tensor zeros(3, 5);
    CHECK(bit_identical(modality_project(Var::constant(zeros), p).value(), Tensor(3, 5)));

    QFormerParams p2 = toy_params(4, 3);
    Tensor h2 = Tensor::uniform(3, 4, rng, -1.0, 1.0);
    const Tensor got = modality_project(Var::constant(h2), p2).value();
    CHECK(max_abs_diff(got, oracle::naive_matmul(h2, p2.feat_proj.value())) < 1e-14);

    CHECK_THROWS_AS(modality_project(Var::constant(Tensor(3, 7)), p2), DimensionError);
}

TEST_CASE("query_self_attention: single query degenerates to value projection") {
    QFormerConfig cfg = toy_config();
    cfg.num_queries = 1;
    Rng rng(4);
    QFormerParams p = QFormerParams::init(cfg, 5, rng);
    const Tensor got = query_self_attention(p).value();
    const Tensor want = oracle::naive_matmul(p.queries.value(), p.self_wv.value());
    CHECK(max_abs_diff(got, want) < 1e-14);
}

TEST_CASE("query_self_attention: zero W_q gives uniform attention") {
    QFormerParams p = toy_params(5, 5);
    p.self_wq.leaf_value().fill(0.0);
    const Tensor got = query_self_attention(p).value();
    const Tensor qv = oracle::naive_matmul(p.queries.value(), p.self_wv.value());
    Tensor mean(1, qv.cols());
    for (std::size_t j = 0; j < qv.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < qv.rows(); ++i) acc += qv(i, j);
        mean(0, j) = acc / static_cast<double>(qv.rows());
    }
    for (std::size_t i = 0; i < got.rows(); ++i)
        for (std::size_t j = 0; j < got.cols(); ++j)
            CHECK(got(i, j) == Catch::Approx(mean(0, j)).margin(1e-12));
}

TEST_CASE("query_self_attention matches the composition oracle") {
    QFormerParams p = toy_params(5, 6);
    const Tensor got = query_self_attention(p).value();
    const Tensor want = oracle::naive_attention(p.queries.value(), p.queries.value(),
                                                p.self_wq.value(), p.self_wk.value(),
                                                p.self_wv.value());
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("query_cross_attention: single time step pins every output row") {
    QFormerParams p = toy_params(5, 7);
    Rng rng(8);
    Tensor projected = Tensor::uniform(1, 5, rng, -1.0, 1.0);
    Var attended = query_self_attention(p);
    const Tensor got = query_cross_attention(attended, Var::constant(projected), p).value();
    const Tensor hv = oracle::naive_matmul(projected, p.cross_wv.value());
    for (std::size_t i = 0; i < got.rows(); ++i)
        for (std::size_t j = 0; j < got.cols(); ++j)
            CHECK(got(i, j) == Catch::Approx(hv(0, j)).margin(1e-12));
}

TEST_CASE("query_cross_attention: zero W'_q averages over time") {
    QFormerParams p = toy_params(5, 9);
    p.cross_wq.leaf_value().fill(0.0);
    Rng rng(10);
    Tensor projected = Tensor::uniform(7, 5, rng, -1.0, 1.0);
    Var attended = query_self_attention(p);
    const Tensor got = query_cross_attention(attended, Var::constant(projected), p).value();
    const Tensor hv = oracle::naive_matmul(projected, p.cross_wv.value());
    for (std::size_t j = 0; j < got.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t t = 0; t < hv.rows(); ++t) mean += hv(t, j);
        mean /= static_cast<double>(hv.rows());
        for (std::size_t i = 0; i < got.rows(); ++i)
            CHECK(got(i, j) == Catch::Approx(mean).margin(1e-12));
    }
}

TEST_CASE("query_cross_attention: oracle match and empty-sequence error") {
    QFormerParams p = toy_params(5, 11);
    Rng rng(12);
    Tensor projected = Tensor::uniform(6, 5, rng, -1.0, 1.0);
    Var attended = query_self_attention(p);
    const Tensor got = query_cross_attention(attended, Var::constant(projected), p).value();
    const Tensor want = oracle::naive_attention(attended.value(), projected, p.cross_wq.value(),
                                                p.cross_wk.value(), p.cross_wv.value());
    CHECK(max_abs_diff(got, want) < 1e-12);

    CHECK_THROWS_AS(query_cross_attention(attended, Var::constant(Tensor(0, 5)), p),
                    DimensionError);
}

TEST_CASE("query_ffn: ReLU kill cases leave only b_2") {
    QFormerParams p = toy_params(5, 13);
    // All-negative pre-activation: large negative bias swamps the first affine.
    p.ffn_b1.leaf_value().fill(-100.0);
    Rng rng(14);
    Tensor z = Tensor::uniform(4, 6, rng, -0.5, 0.5);
    const Tensor got = query_ffn(Var::constant(z), p).value();
    for (std::size_t i = 0; i < got.rows(); ++i)
        for (std::size_t j = 0; j < got.cols(); ++j)
            CHECK(got(i, j) == p.ffn_b2.value()(0, j));

    QFormerParams p2 = toy_params(5, 15);
    p2.ffn_w1.leaf_value().fill(0.0);
    p2.ffn_b1.leaf_value().fill(0.0);
    const Tensor got2 = query_ffn(Var::constant(z), p2).value();
    for (std::size_t i = 0; i < got2.rows(); ++i)
        for (std::size_t j = 0; j < got2.cols(); ++j)
            CHECK(got2(i, j) == p2.ffn_b2.value()(0, j));
}

TEST_CASE("query_ffn matches the affine+relu oracle") {
    QFormerParams p = toy_params(5, 16);
    Rng rng(17);
    Tensor z = Tensor::uniform(4, 6, rng, -1.0, 1.0);
    const Tensor got = query_ffn(Var::constant(z), p).value();
    const Tensor want = oracle::naive_ffn(z, p.ffn_w1.value(), p.ffn_b1.value(),
                                          p.ffn_w2.value(), p.ffn_b2.value());
    CHECK(max_abs_diff(got, want) < 1e-13);
}

TEST_CASE("qformer_forward: zero features and zero params yield broadcast b_2") {
    QFormerConfig cfg = toy_config();
    std::array<QFormerParams, 3> params;
    std::array<Var, 3> features;
    Rng rng(18);
    const std::array<std::size_t, 3> t_len = {3, 8, 2};
    for (std::size_t i = 0; i < 3; ++i) {
        params[i] = QFormerParams::init(cfg, 5, rng);
        for (auto& [name, var] : params[i].named("p"))
            if (name != "p.ffn_b2") var.leaf_value().fill(0.0);
        params[i].ffn_b2.leaf_value().fill(0.25 + static_cast<double>(i));
        features[i] = Var::constant(Tensor(t_len[i], 5));
    }
    const auto out = qformer_forward(features, params);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out[i].rows() == cfg.num_queries);
        CHECK(out[i].cols() == cfg.ffn_out_dim());
        for (double v : out[i].value().data())
            CHECK(v == 0.25 + static_cast<double>(i));
    }
}

TEST_CASE("qformer output shape is independent of sequence length") {
    QFormerConfig cfg = toy_config();
    Rng rng(19);
    QFormerParams p = QFormerParams::init(cfg, 7, rng);
    for (std::size_t t : {1, 2, 9, 40}) {
        Tensor h = Tensor::uniform(t, 7, rng, -1.0, 1.0);
        const Var out = qformer_modality_forward(Var::constant(h), p);
        CHECK(out.rows() == cfg.num_queries);
        CHECK(out.cols() == cfg.ffn_out_dim());
    }
}

TEST_CASE("qformer forward is deterministic across invocations") {
    QFormerParams p = toy_params(5, 20);
    Rng rng(21);
    Tensor h = Tensor::uniform(6, 5, rng, -1.0, 1.0);
    const Tensor a = qformer_modality_forward(Var::constant(h), p).value();
    const Tensor b = qformer_modality_forward(Var::constant(h), p).value();
    CHECK(bit_identical(a, b));
}

TEST_CASE("permuting time steps leaves the compressed output unchanged") {
    QFormerParams p = toy_params(5, 22);
    Rng rng(23);
    Tensor h = Tensor::uniform(9, 5, rng, -1.0, 1.0);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    Tensor shuffled(9, 5);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 5; ++j) shuffled(i, j) = h(perm[i], j);

    const Tensor a = qformer_modality_forward(Var::constant(h), p).value();
    const Tensor b = qformer_modality_forward(Var::constant(shuffled), p).value();
    CHECK(max_abs_diff(a, b) < 1e-9);
}

TEST_CASE("full qformer chain passes the finite-difference check") {
    QFormerConfig cfg;
    cfg.num_queries = 3;
    cfg.query_dim = 4;
    cfg.key_dim = 4;
    cfg.value_dim = 4;
    cfg.embed_dim = 6;
    Rng rng(24);
    QFormerParams p = QFormerParams::init(cfg, 4, rng);
    Tensor h = Tensor::uniform(5, 4, rng, -1.0, 1.0);
    Tensor readout = Tensor::uniform(cfg.num_queries, cfg.ffn_out_dim(), rng, -1.0, 1.0);

    const auto f = [&] {
        return masked_sum(qformer_modality_forward(Var::constant(h), p), readout);
    };
    std::vector<Var> params;
    for (auto& [name, var] : p.named("p")) params.push_back(var);
    CHECK(grad_check(f, params) < 1e-4);
}
