#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ecmc/qformer.hpp"

// Dual-stream BridgeNet: an emotion stream and a cognition stream, each three
// Q-formers plus a fusion head. Fusion concatenates the per-modality outputs,
// projects, mean-pools over the query axis and L2-normalizes, yielding one
// unit-norm embedding per stream.

namespace ecmc {

struct ModalityMask {
    bool use_video = true;
    bool use_audio = true;
    bool use_text = true;

    bool uses(Modality m) const {
        switch (m) {
        case Modality::Video: return use_video;
        case Modality::Audio: return use_audio;
        case Modality::Text: return use_text;
        }
        return false;
    }

    bool any() const { return use_video || use_audio || use_text; }

    // Parses subsets like "vat", "a", "vt".
    static ModalityMask from_string(const std::string& s) {
        ModalityMask m{false, false, false};
        for (char c : s) {
            if (c == 'v') m.use_video = true;
            else if (c == 'a') m.use_audio = true;
            else if (c == 't') m.use_text = true;
            else throw ConfigError(std::string("ModalityMask: unknown modality '") + c +
                                   "' (expected subset of \"vat\")");
        }
        if (!m.any()) throw ConfigError("ModalityMask: at least one modality must be enabled");
        return m;
    }

    std::string to_string() const {
        std::string s;
        if (use_video) s += 'v';
        if (use_audio) s += 'a';
        if (use_text) s += 't';
        return s;
    }
};

struct BridgeNetConfig {
    QFormerConfig emotion;   // embedding width d_e
    QFormerConfig cognition; // embedding width d_c (defaults to d_e)
    std::array<std::size_t, 3> feature_dims = {24, 24, 24}; // d_m per modality

    void validate() const {
        emotion.validate();
        cognition.validate();
        for (std::size_t d : feature_dims)
            if (d < 1) throw ConfigError("BridgeNetConfig: feature dims must be >= 1");
    }
};

// One stream: three per-modality Q-formers plus the fusion projection.
struct StreamParams {
    std::array<QFormerParams, 3> modality;
    Var fuse_w; // embed_dim x embed_dim
    Var fuse_b; // 1 x embed_dim

    static StreamParams init(const QFormerConfig& cfg, const std::array<std::size_t, 3>& dims,
                             Rng& rng) {
        StreamParams s;
        for (Modality m : kAllModalities) {
            const auto i = static_cast<std::size_t>(m);
            Rng sub = rng.split(modality_name(m));
            s.modality[i] = QFormerParams::init(cfg, dims[i], sub);
        }
        Rng fuse_rng = rng.split("fusion");
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
        s.fuse_w = Var::parameter(Tensor::uniform(cfg.embed_dim, cfg.embed_dim, fuse_rng, -bound, bound));
        s.fuse_b = Var::parameter(Tensor(1, cfg.embed_dim));
        return s;
    }

    std::vector<std::pair<std::string, Var>> named(const std::string& prefix) const {
        std::vector<std::pair<std::string, Var>> out;
        for (Modality m : kAllModalities) {
            const auto i = static_cast<std::size_t>(m);
            for (auto& kv : modality[i].named(prefix + "." + modality_name(m)))
                out.push_back(std::move(kv));
        }
        out.emplace_back(prefix + ".fuse_w", fuse_w);
        out.emplace_back(prefix + ".fuse_b", fuse_b);
        return out;
    }
};

struct BridgeNetParams {
    StreamParams emotion;
    StreamParams cognition;

    static BridgeNetParams init(const BridgeNetConfig& cfg, Rng& rng) {
        cfg.validate();
        BridgeNetParams p;
        Rng e = rng.split("emotion");
        Rng c = rng.split("cognition");
        p.emotion = StreamParams::init(cfg.emotion, cfg.feature_dims, e);
        p.cognition = StreamParams::init(cfg.cognition, cfg.feature_dims, c);
        return p;
    }

    std::vector<std::pair<std::string, Var>> named() const {
        auto out = emotion.named("emotion");
        for (auto& kv : cognition.named("cognition")) out.push_back(std::move(kv));
        return out;
    }
};

// The pair of unit-norm stream embeddings for one sample.
struct BridgeEmbeddings {
    Var emotion;   // 1 x d_e
    Var cognition; // 1 x d_c
};

// h = Norm(Pool(Concat(Z'_v, Z'_a, Z'_t) W_3 + b_3)). Masked-out modalities
// contribute zero blocks of the same shape, so the output shape never changes.
inline Var fuse_and_pool(const std::array<Var, 3>& blocks, const Var& fuse_w, const Var& fuse_b,
                         const ModalityMask& mask) {
    if (!mask.any()) throw ContractError("fuse_and_pool: all modalities masked out");
    std::size_t rows = 0, cols = 0;
    for (const Var& b : blocks)
        if (b.defined()) {
            rows = b.rows();
            cols = b.cols();
            break;
        }
    if (rows == 0) throw ContractError("fuse_and_pool: no defined modality blocks");

    std::vector<Var> parts;
    parts.reserve(3);
    for (Modality m : kAllModalities) {
        const auto i = static_cast<std::size_t>(m);
        if (mask.uses(m)) {
            if (!blocks[i].defined())
                throw ContractError(std::string("fuse_and_pool: modality '") + modality_name(m) +
                                    "' enabled but its block is missing");
            parts.push_back(blocks[i]);
        } else {
            parts.push_back(Var::constant(Tensor(rows, cols)));
        }
    }
    Var fused = add_bias(matmul(concat_cols(parts), fuse_w), fuse_b);
    return l2_normalize_rows(mean_pool_rows(fused));
}

// Runs one stream over the sample's features, skipping masked modalities
// (their blocks enter fusion as zeros, which is bit-identical to computing
// and then zeroing them).
inline Var stream_forward(const std::array<Tensor, 3>& features, const StreamParams& params,
                          const QFormerConfig& cfg, const ModalityMask& mask) {
    std::array<Var, 3> blocks;
    for (Modality m : kAllModalities) {
        const auto i = static_cast<std::size_t>(m);
        if (mask.uses(m)) {
            Var h = Var::constant(features[i]);
            blocks[i] = qformer_modality_forward(h, params.modality[i]);
        } else {
            blocks[i] = Var::constant(Tensor(cfg.num_queries, cfg.ffn_out_dim()));
        }
    }
    return fuse_and_pool(blocks, params.fuse_w, params.fuse_b, mask);
}

// Both streams; the emotion and cognition Q-formers share nothing.
inline BridgeEmbeddings bridge_forward(const std::array<Tensor, 3>& features,
                                       const BridgeNetParams& params, const BridgeNetConfig& cfg,
                                       const ModalityMask& mask = {}) {
    for (Modality m : kAllModalities) {
        const auto i = static_cast<std::size_t>(m);
        if (mask.uses(m) && features[i].cols() != cfg.feature_dims[i])
            throw DimensionError(std::string("bridge_forward: ") + modality_name(m) +
                                 " features have width " + std::to_string(features[i].cols()) +
                                 ", config expects " + std::to_string(cfg.feature_dims[i]));
    }
    BridgeEmbeddings out;
    out.emotion = stream_forward(features, params.emotion, cfg.emotion, mask);
    out.cognition = stream_forward(features, params.cognition, cfg.cognition, mask);
    return out;
}

} // namespace ecmc
