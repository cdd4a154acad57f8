#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ecmc/bridgenet.hpp"
#include "ecmc/decoder.hpp"
#include "ecmc/losses.hpp"

// The standard finite-difference sweep: one named check per differentiable
// operation, each returning its max relative error at toy dimensions. Used by
// the gradcheck command and the acceptance suite.

namespace ecmc {

struct GradCheckCase {
    std::string name;
    std::function<double()> run; // max relative error
};

inline std::vector<GradCheckCase> standard_grad_checks(std::uint64_t seed = 1234,
                                                       double step = 1e-5) {
    // toy dims: l_q = 4, widths 8 (embed 9 to stay divisible by 3), batch 6
    const std::size_t lq = 4, d = 8, n = 6;

    std::vector<GradCheckCase> cases;
    const auto add_case = [&](std::string name, std::function<double()> run) {
        cases.push_back({std::move(name), std::move(run)});
    };

    add_case("matmul", [seed, step] {
        Rng rng(seed);
        Var a = Var::parameter(Tensor::uniform(3, 5, rng, -1.0, 1.0));
        Var b = Var::parameter(Tensor::uniform(5, 4, rng, -1.0, 1.0));
        Tensor r = Tensor::uniform(3, 4, rng, -1.0, 1.0);
        const Var params[] = {a, b};
        return grad_check([&] { return masked_sum(matmul(a, b), r); }, params, step);
    });

    add_case("add_scale_transpose", [seed, step] {
        Rng rng(seed + 1);
        Var a = Var::parameter(Tensor::uniform(4, 3, rng, -1.0, 1.0));
        Var b = Var::parameter(Tensor::uniform(4, 3, rng, -1.0, 1.0));
        Tensor r = Tensor::uniform(3, 4, rng, -1.0, 1.0);
        const Var params[] = {a, b};
        return grad_check(
            [&] { return masked_sum(transpose(add(scale(a, 0.7), b)), r); }, params, step);
    });

    add_case("relu_bias", [seed, step] {
        Rng rng(seed + 2);
        Var a = Var::parameter(Tensor::uniform(4, 5, rng, -1.0, 1.0));
        Var bias = Var::parameter(Tensor::uniform(1, 5, rng, -1.0, 1.0));
        Tensor r = Tensor::uniform(4, 5, rng, -1.0, 1.0);
        const Var params[] = {a, bias};
        return grad_check([&] { return masked_sum(relu(add_bias(a, bias)), r); }, params, step);
    });

    add_case("row_softmax", [seed, step] {
        Rng rng(seed + 3);
        Var a = Var::parameter(Tensor::uniform(4, 6, rng, -2.0, 2.0));
        Tensor r = Tensor::uniform(4, 6, rng, -1.0, 1.0);
        const Var params[] = {a};
        return grad_check([&] { return masked_sum(row_softmax(a, 0.9), r); }, params, step);
    });

    add_case("l2_normalize_rows", [seed, step] {
        Rng rng(seed + 4);
        Var a = Var::parameter(Tensor::uniform(4, 6, rng, 0.5, 1.5));
        Tensor r = Tensor::uniform(4, 6, rng, -1.0, 1.0);
        const Var params[] = {a};
        return grad_check([&] { return masked_sum(l2_normalize_rows(a), r); }, params, step);
    });

    add_case("mean_pool_rows", [seed, step] {
        Rng rng(seed + 5);
        Var a = Var::parameter(Tensor::uniform(5, 4, rng, -1.0, 1.0));
        Tensor r = Tensor::uniform(1, 4, rng, -1.0, 1.0);
        const Var params[] = {a};
        return grad_check([&] { return masked_sum(mean_pool_rows(a), r); }, params, step);
    });

    add_case("elementwise_log_exp", [seed, step] {
        Rng rng(seed + 6);
        Var a = Var::parameter(Tensor::uniform(3, 4, rng, 0.3, 2.0));
        Var b = Var::parameter(Tensor::uniform(3, 4, rng, -1.0, 1.0));
        Tensor r = Tensor::uniform(3, 4, rng, -1.0, 1.0);
        const Var params[] = {a, b};
        return grad_check(
            [&] { return masked_sum(elem_mul(elem_log(a), elem_exp(scale(b, 0.5))), r); }, params,
            step);
    });

    add_case("concat_gather_slice", [seed, step] {
        Rng rng(seed + 7);
        Var a = Var::parameter(Tensor::uniform(3, 3, rng, -1.0, 1.0));
        Var b = Var::parameter(Tensor::uniform(3, 2, rng, -1.0, 1.0));
        Var table = Var::parameter(Tensor::uniform(4, 5, rng, -1.0, 1.0));
        Tensor r = Tensor::uniform(2, 5, rng, -1.0, 1.0);
        const Var params[] = {a, b, table};
        return grad_check(
            [&] {
                Var joined = concat_cols({a, b});
                Var stacked = concat_rows({joined, gather_rows(table, {0, 2, 2})});
                return masked_sum(slice_rows(stacked, 2, 2), r);
            },
            params, step);
    });

    add_case("qformer_chain", [lq, d, seed, step] {
        QFormerConfig cfg;
        cfg.num_queries = lq;
        cfg.query_dim = d;
        cfg.key_dim = d;
        cfg.value_dim = d;
        cfg.embed_dim = 9;
        Rng rng(seed + 8);
        QFormerParams p = QFormerParams::init(cfg, d, rng);
        Tensor h = Tensor::uniform(5, d, rng, -1.0, 1.0);
        Tensor r = Tensor::uniform(lq, cfg.ffn_out_dim(), rng, -1.0, 1.0);
        std::vector<Var> params;
        for (auto& [name, var] : p.named("q")) params.push_back(var);
        return grad_check(
            [&] { return masked_sum(qformer_modality_forward(Var::constant(h), p), r); }, params,
            step);
    });

    add_case("bridgenet_chain", [lq, d, seed, step] {
        BridgeNetConfig cfg;
        cfg.emotion.num_queries = lq;
        cfg.emotion.query_dim = d;
        cfg.emotion.key_dim = d;
        cfg.emotion.value_dim = d;
        cfg.emotion.embed_dim = 9;
        cfg.cognition = cfg.emotion;
        cfg.feature_dims = {d, d, d};
        Rng rng(seed + 9);
        BridgeNetParams p = BridgeNetParams::init(cfg, rng);
        std::array<Tensor, 3> features;
        for (std::size_t i = 0; i < 3; ++i)
            features[i] = Tensor::uniform(3 + i, d, rng, -1.0, 1.0);
        Tensor re = Tensor::uniform(1, 9, rng, -1.0, 1.0);
        Tensor rc = Tensor::uniform(1, 9, rng, -1.0, 1.0);
        std::vector<Var> params;
        for (auto& [name, var] : p.named()) params.push_back(var);
        return grad_check(
            [&] {
                BridgeEmbeddings emb = bridge_forward(features, p, cfg);
                return add(masked_sum(emb.emotion, re), masked_sum(emb.cognition, rc));
            },
            params, step);
    });

    add_case("emotion_contrastive_loss", [n, seed, step] {
        Rng rng(seed + 10);
        Tensor e = Tensor::gaussian(n, 8, rng);
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < 8; ++j) sq += e(i, j) * e(i, j);
            for (std::size_t j = 0; j < 8; ++j) e(i, j) /= std::sqrt(sq);
        }
        ContrastiveBatch batch;
        batch.embeddings = Var::parameter(e);
        batch.temperature = 0.1;
        for (std::size_t i = 0; i < n; ++i) {
            batch.emotion.push_back(emotion_label_from_int(static_cast<int>(rng.uniform_index(3)) - 1));
            batch.cognition.push_back(
                CognitionLabelSet::from_bits(static_cast<std::uint8_t>(rng.uniform_index(16))));
        }
        const Var params[] = {batch.embeddings};
        return grad_check([&] { return emotion_contrastive_loss(batch); }, params, step);
    });

    add_case("cognition_contrastive_loss", [n, seed, step] {
        Rng rng(seed + 11);
        Tensor e = Tensor::gaussian(n, 8, rng);
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < 8; ++j) sq += e(i, j) * e(i, j);
            for (std::size_t j = 0; j < 8; ++j) e(i, j) /= std::sqrt(sq);
        }
        ContrastiveBatch batch;
        batch.embeddings = Var::parameter(e);
        batch.temperature = 0.1;
        for (std::size_t i = 0; i < n; ++i) {
            batch.emotion.push_back(emotion_label_from_int(static_cast<int>(rng.uniform_index(3)) - 1));
            batch.cognition.push_back(
                CognitionLabelSet::from_bits(static_cast<std::uint8_t>(rng.uniform_index(16))));
        }
        const Var params[] = {batch.embeddings};
        return grad_check([&] { return cognition_contrastive_loss(batch); }, params, step);
    });

    add_case("decoder_with_ce", [seed, step] {
        DecoderConfig cfg;
        cfg.vocab_size = 9;
        cfg.model_dim = 8;
        cfg.ffn_dim = 10;
        cfg.max_len = 16;
        cfg.emotion_dim = 6;
        cfg.cognition_dim = 6;
        Rng rng(seed + 12);
        DecoderParams p = DecoderParams::init(cfg, rng);
        PrefixBridges b = PrefixBridges::init(cfg, rng);
        Var h_e = Var::parameter(Tensor::uniform(1, 6, rng, -0.5, 0.5));
        Var h_c = Var::parameter(Tensor::uniform(1, 6, rng, -0.5, 0.5));
        const std::vector<std::size_t> prompt = {3};
        const std::vector<std::size_t> targets = {4, 6, 5, 1};
        std::vector<Var> params = {h_e, h_c};
        for (auto& [name, var] : p.named("d")) params.push_back(var);
        for (auto& [name, var] : b.named("pb")) params.push_back(var);
        return grad_check(
            [&] {
                Var logits = decoder_forward(h_e, h_c, prompt, targets, p, b, cfg);
                return caption_ce_loss(logits, targets);
            },
            params, step);
    });

    add_case("full_stage1_loss", [lq, d, n, seed, step] {
        BridgeNetConfig cfg;
        cfg.emotion.num_queries = lq;
        cfg.emotion.query_dim = d;
        cfg.emotion.key_dim = d;
        cfg.emotion.value_dim = d;
        cfg.emotion.embed_dim = 9;
        cfg.cognition = cfg.emotion;
        cfg.feature_dims = {6, 6, 6};
        Rng rng(seed + 13);
        BridgeNetParams p = BridgeNetParams::init(cfg, rng);
        std::vector<std::array<Tensor, 3>> features(n);
        std::vector<EmotionLabel> emotions;
        std::vector<CognitionLabelSet> cognitions;
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t m = 0; m < 3; ++m)
                features[s][m] = Tensor::uniform(2 + m, 6, rng, -1.0, 1.0);
            emotions.push_back(emotion_label_from_int(static_cast<int>(rng.uniform_index(3)) - 1));
            cognitions.push_back(
                CognitionLabelSet::from_bits(static_cast<std::uint8_t>(rng.uniform_index(16))));
        }
        std::vector<Var> params;
        for (auto& [name, var] : p.named()) params.push_back(var);
        return grad_check(
            [&] {
                std::vector<Var> he, hc;
                for (std::size_t s = 0; s < n; ++s) {
                    BridgeEmbeddings emb = bridge_forward(features[s], p, cfg);
                    he.push_back(emb.emotion);
                    hc.push_back(emb.cognition);
                }
                ContrastiveBatch be, bc;
                be.embeddings = concat_rows(he);
                bc.embeddings = concat_rows(hc);
                be.emotion = emotions;
                be.cognition = cognitions;
                bc.emotion = emotions;
                bc.cognition = cognitions;
                be.temperature = 0.1;
                bc.temperature = 0.1;
                return stage1_loss(be, bc);
            },
            params, step);
    });

    return cases;
}

} // namespace ecmc
