#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ecmc/autodiff.hpp"
#include "ecmc/rng.hpp"
#include "ecmc/vocab.hpp"

// Toy autoregressive caption decoder: one causal self-attention block with
// residual connections plus an output projection. The stream embeddings enter
// as two soft tokens right after BOS, mapped into the model width by a pair
// of bridge projections; during stage 2 only those bridges and the upstream
// BridgeNet train while every decoder weight stays frozen.

namespace ecmc {

struct DecoderConfig {
    std::size_t vocab_size = 0;
    std::size_t model_dim = 32;
    std::size_t ffn_dim = 64;
    std::size_t max_len = 64;       // positions available, prefix included
    std::size_t emotion_dim = 48;   // width of the incoming emotion embedding
    std::size_t cognition_dim = 48; // width of the incoming cognition embedding

    void validate() const {
        if (vocab_size < 4) throw ConfigError("DecoderConfig: vocab_size must be >= 4");
        if (model_dim < 1 || ffn_dim < 1 || max_len < 4)
            throw ConfigError("DecoderConfig: dimensions too small");
        if (emotion_dim < 1 || cognition_dim < 1)
            throw ConfigError("DecoderConfig: embedding widths must be >= 1");
    }
};

// Trainable projections from the stream embeddings into the decoder width.
struct PrefixBridges {
    Var emotion_to_model;   // emotion_dim x model_dim
    Var cognition_to_model; // cognition_dim x model_dim

    static PrefixBridges init(const DecoderConfig& cfg, Rng& rng) {
        const auto mat = [&rng](std::size_t in, std::size_t out) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            return Var::parameter(Tensor::uniform(in, out, rng, -bound, bound));
        };
        PrefixBridges b;
        b.emotion_to_model = mat(cfg.emotion_dim, cfg.model_dim);
        b.cognition_to_model = mat(cfg.cognition_dim, cfg.model_dim);
        return b;
    }

    std::vector<std::pair<std::string, Var>> named(const std::string& prefix) const {
        return {{prefix + ".emotion_to_model", emotion_to_model},
                {prefix + ".cognition_to_model", cognition_to_model}};
    }
};

struct DecoderParams {
    Var tok_emb; // vocab_size x model_dim
    Var pos_emb; // max_len x model_dim
    Var attn_wq, attn_wk, attn_wv, attn_wo; // model_dim x model_dim
    Var ffn_w1; // model_dim x ffn_dim
    Var ffn_b1; // 1 x ffn_dim
    Var ffn_w2; // ffn_dim x model_dim
    Var ffn_b2; // 1 x model_dim
    Var out_proj; // model_dim x vocab_size

    static DecoderParams init(const DecoderConfig& cfg, Rng& rng) {
        cfg.validate();
        const auto mat = [&rng](std::size_t in, std::size_t out) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            return Var::parameter(Tensor::uniform(in, out, rng, -bound, bound));
        };
        DecoderParams p;
        p.tok_emb = mat(cfg.vocab_size, cfg.model_dim);
        p.pos_emb = mat(cfg.max_len, cfg.model_dim);
        p.attn_wq = mat(cfg.model_dim, cfg.model_dim);
        p.attn_wk = mat(cfg.model_dim, cfg.model_dim);
        p.attn_wv = mat(cfg.model_dim, cfg.model_dim);
        p.attn_wo = mat(cfg.model_dim, cfg.model_dim);
        p.ffn_w1 = mat(cfg.model_dim, cfg.ffn_dim);
        p.ffn_b1 = Var::parameter(Tensor(1, cfg.ffn_dim));
        p.ffn_w2 = mat(cfg.ffn_dim, cfg.model_dim);
        p.ffn_b2 = Var::parameter(Tensor(1, cfg.model_dim));
        p.out_proj = mat(cfg.model_dim, cfg.vocab_size);
        return p;
    }

    std::vector<std::pair<std::string, Var>> named(const std::string& prefix) const {
        return {{prefix + ".tok_emb", tok_emb},   {prefix + ".pos_emb", pos_emb},
                {prefix + ".attn_wq", attn_wq},   {prefix + ".attn_wk", attn_wk},
                {prefix + ".attn_wv", attn_wv},   {prefix + ".attn_wo", attn_wo},
                {prefix + ".ffn_w1", ffn_w1},     {prefix + ".ffn_b1", ffn_b1},
                {prefix + ".ffn_w2", ffn_w2},     {prefix + ".ffn_b2", ffn_b2},
                {prefix + ".out_proj", out_proj}};
    }

    // Same values as constants: graphs built on the view never route
    // gradients into the decoder, so "frozen" holds by construction.
    DecoderParams frozen_view() const {
        DecoderParams f;
        f.tok_emb = Var::constant(tok_emb.value());
        f.pos_emb = Var::constant(pos_emb.value());
        f.attn_wq = Var::constant(attn_wq.value());
        f.attn_wk = Var::constant(attn_wk.value());
        f.attn_wv = Var::constant(attn_wv.value());
        f.attn_wo = Var::constant(attn_wo.value());
        f.ffn_w1 = Var::constant(ffn_w1.value());
        f.ffn_b1 = Var::constant(ffn_b1.value());
        f.ffn_w2 = Var::constant(ffn_w2.value());
        f.ffn_b2 = Var::constant(ffn_b2.value());
        f.out_proj = Var::constant(out_proj.value());
        return f;
    }
};

namespace detail {

inline Tensor causal_mask(std::size_t len) {
    Tensor m(len, len);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = i + 1; j < len; ++j) m(i, j) = -1e30;
    return m;
}

// Input rows: [BOS][h_e bridge][h_c bridge][prompt...][extra...]
inline Var decoder_inputs(const Var& h_e, const Var& h_c,
                          const std::vector<std::size_t>& prompt_ids,
                          const std::vector<std::size_t>& extra_ids, const DecoderParams& params,
                          const PrefixBridges& bridges) {
    std::vector<Var> parts;
    parts.push_back(gather_rows(params.tok_emb, {Vocab::kBos}));
    parts.push_back(matmul(h_e, bridges.emotion_to_model));
    parts.push_back(matmul(h_c, bridges.cognition_to_model));
    if (!prompt_ids.empty()) parts.push_back(gather_rows(params.tok_emb, prompt_ids));
    if (!extra_ids.empty()) parts.push_back(gather_rows(params.tok_emb, extra_ids));
    return concat_rows(parts);
}

inline Var decoder_block(const Var& inputs, const DecoderParams& params,
                         const DecoderConfig& cfg) {
    const std::size_t len = inputs.rows();
    if (len > cfg.max_len)
        throw DimensionError("decoder: sequence length " + std::to_string(len) +
                             " exceeds max_len " + std::to_string(cfg.max_len));
    std::vector<std::size_t> positions(len);
    for (std::size_t i = 0; i < len; ++i) positions[i] = i;
    Var x = add(inputs, gather_rows(params.pos_emb, positions));

    Var q = matmul(x, params.attn_wq);
    Var k = matmul(x, params.attn_wk);
    Var v = matmul(x, params.attn_wv);
    Var scores = add(matmul(q, transpose(k)), Var::constant(causal_mask(len)));
    Var attn = row_softmax(scores, 1.0 / std::sqrt(static_cast<double>(cfg.model_dim)));
    Var h1 = add(x, matmul(matmul(attn, v), params.attn_wo));

    Var hidden = relu(add_bias(matmul(h1, params.ffn_w1), params.ffn_b1));
    Var ffn = add_bias(matmul(hidden, params.ffn_w2), params.ffn_b2);
    return add(h1, ffn);
}

} // namespace detail

// Teacher-forced forward: row t of the result holds the logits predicting
// target_ids[t], conditioned on the prefix and targets before t.
inline Var decoder_forward(const Var& h_e, const Var& h_c,
                           const std::vector<std::size_t>& prompt_ids,
                           const std::vector<std::size_t>& target_ids,
                           const DecoderParams& params, const PrefixBridges& bridges,
                           const DecoderConfig& cfg) {
    if (target_ids.empty()) throw ContractError("decoder_forward: targets must be nonempty");
    for (std::size_t id : target_ids)
        if (id >= cfg.vocab_size)
            throw DimensionError("decoder_forward: target id " + std::to_string(id) +
                                 " out of vocab");
    std::vector<std::size_t> teacher(target_ids.begin(), target_ids.end() - 1);
    Var inputs = detail::decoder_inputs(h_e, h_c, prompt_ids, teacher, params, bridges);
    Var hidden = detail::decoder_block(inputs, params, cfg);
    const std::size_t prefix_len = 3 + prompt_ids.size();
    Var readout = slice_rows(hidden, prefix_len - 1, target_ids.size());
    return matmul(readout, params.out_proj);
}

// Mean cross-entropy over non-PAD target positions; differentiable back
// through the logits into the embeddings and bridges.
inline Var caption_ce_loss(const Var& logits, const std::vector<std::size_t>& target_ids) {
    if (logits.rows() != target_ids.size())
        throw DimensionError("caption_ce_loss: logits rows " + std::to_string(logits.rows()) +
                             " vs targets " + std::to_string(target_ids.size()));
    std::vector<std::size_t> live;
    for (std::size_t t = 0; t < target_ids.size(); ++t)
        if (target_ids[t] != Vocab::kPad) live.push_back(t);
    if (live.empty()) throw ContractError("caption_ce_loss: every position is PAD");

    const Tensor& lv = logits.value();
    const std::size_t v = lv.cols();
    Tensor grad(lv.rows(), v);
    double total = 0.0;
    for (std::size_t t : live) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, lv(t, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(lv(t, j) - mx);
        const double lse = mx + std::log(denom);
        total += lse - lv(t, target_ids[t]);
        const double inv = 1.0 / static_cast<double>(live.size());
        for (std::size_t j = 0; j < v; ++j) grad(t, j) = std::exp(lv(t, j) - lse) * inv;
        grad(t, target_ids[t]) -= inv;
    }
    Tensor value(1, 1, total / static_cast<double>(live.size()));
    return detail::make_op(std::move(value), "caption_ce_loss", {logits},
                           [g = std::move(grad)](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               Tensor& pg = p.ensure_grad();
                               const double s = self.grad(0, 0);
                               for (std::size_t i = 0; i < pg.size(); ++i)
                                   pg.data()[i] += s * g.data()[i];
                           });
}

// Argmax decoding until EOS or max_new_tokens; ties break toward the lowest id.
inline std::vector<std::size_t> greedy_decode(const Var& h_e, const Var& h_c,
                                              const std::vector<std::size_t>& prompt_ids,
                                              const DecoderParams& params,
                                              const PrefixBridges& bridges,
                                              const DecoderConfig& cfg,
                                              std::size_t max_new_tokens) {
    std::vector<std::size_t> generated;
    const std::size_t prefix_len = 3 + prompt_ids.size();
    while (generated.size() < max_new_tokens &&
           prefix_len + generated.size() < cfg.max_len) {
        Var inputs = detail::decoder_inputs(h_e, h_c, prompt_ids, generated, params, bridges);
        Var hidden = detail::decoder_block(inputs, params, cfg);
        Var last = slice_rows(hidden, hidden.rows() - 1, 1);
        const Tensor logits = matmul(last, params.out_proj).value();
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits(0, j) > logits(0, best)) best = j;
        if (best == Vocab::kEos) break;
        generated.push_back(best);
    }
    return generated;
}

} // namespace ecmc
