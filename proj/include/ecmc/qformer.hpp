#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ecmc/autodiff.hpp"
#include "ecmc/rng.hpp"

// One Q-former stream per modality: a bank of learnable query tokens
// self-attends, cross-attends to the projected feature sequence, and passes
// through a feed-forward layer. Single head, single block, no residuals or
// layer norm: the math is exactly the three-step chain below.

namespace ecmc {

enum class Modality : std::size_t { Video = 0, Audio = 1, Text = 2 };

inline constexpr std::array<Modality, 3> kAllModalities = {Modality::Video, Modality::Audio,
                                                           Modality::Text};

inline const char* modality_name(Modality m) {
    switch (m) {
    case Modality::Video: return "video";
    case Modality::Audio: return "audio";
    case Modality::Text: return "text";
    }
    return "?";
}

// One modality's feature sequence (T_m x d_m) plus its tag.
struct ModalityFeatures {
    Modality modality = Modality::Video;
    Tensor features;
};

struct QFormerConfig {
    std::size_t num_queries = 8; // query tokens per bank
    std::size_t query_dim = 32;
    std::size_t key_dim = 32;
    std::size_t value_dim = 32;
    std::size_t embed_dim = 48; // fused embedding width; per-modality output is embed_dim/3

    std::size_t ffn_out_dim() const { return embed_dim / 3; }

    void validate() const {
        if (num_queries < 1 || query_dim < 1 || key_dim < 1 || value_dim < 1 || embed_dim < 1)
            throw ConfigError("QFormerConfig: all dimensions must be >= 1");
        if (embed_dim % 3 != 0)
            throw ConfigError("QFormerConfig: embed_dim must be divisible by 3, got " +
                              std::to_string(embed_dim));
    }
};

// All learnable tensors of one (stream, modality) Q-former.
struct QFormerParams {
    Var queries;  // num_queries x query_dim
    Var self_wq;  // query_dim x key_dim
    Var self_wk;  // query_dim x key_dim
    Var self_wv;  // query_dim x value_dim
    Var feat_proj; // feature_dim x query_dim
    Var cross_wq; // value_dim x key_dim
    Var cross_wk; // query_dim x key_dim
    Var cross_wv; // query_dim x value_dim
    Var ffn_w1;   // value_dim x embed_dim
    Var ffn_b1;   // 1 x embed_dim
    Var ffn_w2;   // embed_dim x embed_dim/3
    Var ffn_b2;   // 1 x embed_dim/3

    // Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start at zero.
    static QFormerParams init(const QFormerConfig& cfg, std::size_t feature_dim, Rng& rng) {
        cfg.validate();
        if (feature_dim < 1) throw ConfigError("QFormerParams: feature_dim must be >= 1");
        const auto mat = [&rng](std::size_t in, std::size_t out) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            return Var::parameter(Tensor::uniform(in, out, rng, -bound, bound));
        };
        QFormerParams p;
        p.queries = mat(cfg.num_queries, cfg.query_dim);
        p.self_wq = mat(cfg.query_dim, cfg.key_dim);
        p.self_wk = mat(cfg.query_dim, cfg.key_dim);
        p.self_wv = mat(cfg.query_dim, cfg.value_dim);
        p.feat_proj = mat(feature_dim, cfg.query_dim);
        p.cross_wq = mat(cfg.value_dim, cfg.key_dim);
        p.cross_wk = mat(cfg.query_dim, cfg.key_dim);
        p.cross_wv = mat(cfg.query_dim, cfg.value_dim);
        p.ffn_w1 = mat(cfg.value_dim, cfg.embed_dim);
        p.ffn_b1 = Var::parameter(Tensor(1, cfg.embed_dim));
        p.ffn_w2 = mat(cfg.embed_dim, cfg.ffn_out_dim());
        p.ffn_b2 = Var::parameter(Tensor(1, cfg.ffn_out_dim()));
        return p;
    }

    std::vector<std::pair<std::string, Var>> named(const std::string& prefix) const {
        return {{prefix + ".queries", queries},   {prefix + ".self_wq", self_wq},
                {prefix + ".self_wk", self_wk},   {prefix + ".self_wv", self_wv},
                {prefix + ".feat_proj", feat_proj}, {prefix + ".cross_wq", cross_wq},
                {prefix + ".cross_wk", cross_wk}, {prefix + ".cross_wv", cross_wv},
                {prefix + ".ffn_w1", ffn_w1},     {prefix + ".ffn_b1", ffn_b1},
                {prefix + ".ffn_w2", ffn_w2},     {prefix + ".ffn_b2", ffn_b2}};
    }
};

// H'_m = H_m W_m
inline Var modality_project(const Var& features, const QFormerParams& params) {
    if (features.cols() != params.feat_proj.rows())
        throw DimensionError("modality_project: features " + features.value().shape_string() +
                             " vs projection " + params.feat_proj.value().shape_string());
    return matmul(features, params.feat_proj);
}

// Q'_m = softmax(Q W_q (Q W_k)^T / sqrt(d_k)) Q W_v
inline Var query_self_attention(const QFormerParams& params) {
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.self_wq.cols()));
    Var q = matmul(params.queries, params.self_wq);
    Var k = matmul(params.queries, params.self_wk);
    Var v = matmul(params.queries, params.self_wv);
    Var weights = row_softmax(matmul(q, transpose(k)), inv_sqrt_dk);
    return matmul(weights, v);
}

// Z_m = softmax(Q'_m W'_q (H'_m W'_k)^T / sqrt(d_k)) H'_m W'_v
inline Var query_cross_attention(const Var& attended_queries, const Var& projected_features,
                                 const QFormerParams& params) {
    if (projected_features.rows() == 0)
        throw DimensionError("query_cross_attention: empty feature sequence");
    if (attended_queries.cols() != params.cross_wq.rows())
        throw DimensionError("query_cross_attention: queries " +
                             attended_queries.value().shape_string() + " vs W'_q " +
                             params.cross_wq.value().shape_string());
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.cross_wq.cols()));
    Var q = matmul(attended_queries, params.cross_wq);
    Var k = matmul(projected_features, params.cross_wk);
    Var v = matmul(projected_features, params.cross_wv);
    Var weights = row_softmax(matmul(q, transpose(k)), inv_sqrt_dk);
    return matmul(weights, v);
}

// Z'_m = ReLU(Z W_1 + b_1) W_2 + b_2
inline Var query_ffn(const Var& attended, const QFormerParams& params) {
    if (attended.cols() != params.ffn_w1.rows())
        throw DimensionError("query_ffn: input " + attended.value().shape_string() + " vs W_1 " +
                             params.ffn_w1.value().shape_string());
    Var hidden = relu(add_bias(matmul(attended, params.ffn_w1), params.ffn_b1));
    return add_bias(matmul(hidden, params.ffn_w2), params.ffn_b2);
}

// The whole chain for one modality: project -> self-attend -> cross-attend -> ffn.
inline Var qformer_modality_forward(const Var& features, const QFormerParams& params) {
    Var projected = modality_project(features, params);
    Var attended = query_self_attention(params);
    Var compressed = query_cross_attention(attended, projected, params);
    return query_ffn(compressed, params);
}

// All three modalities, each with its own query bank and parameters.
inline std::array<Var, 3> qformer_forward(const std::array<Var, 3>& features,
                                          const std::array<QFormerParams, 3>& params) {
    std::array<Var, 3> out;
    for (Modality m : kAllModalities) {
        const auto i = static_cast<std::size_t>(m);
        out[i] = qformer_modality_forward(features[i], params[i]);
    }
    return out;
}

} // namespace ecmc
