#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "ecmc/bridgenet.hpp"
#include "ecmc/data.hpp"
#include "ecmc/decoder.hpp"
#include "ecmc/losses.hpp"

// AdamW and the two-stage training procedure. Freezing is structural: a stage
// builds its graphs with constant views of the frozen groups, so no gradient
// ever reaches them and their bytes cannot change.

namespace ecmc {

enum class ParamGroup { EmotionStream, CognitionStream, Decoder, PrefixBridges };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
    case ParamGroup::EmotionStream: return "bridgenet-emotion";
    case ParamGroup::CognitionStream: return "bridgenet-cognition";
    case ParamGroup::Decoder: return "decoder";
    case ParamGroup::PrefixBridges: return "prefix-bridges";
    }
    return "?";
}

struct NamedParam {
    std::string name;
    ParamGroup group;
    Var var;
};

struct ModelConfig {
    BridgeNetConfig bridge;
    DecoderConfig decoder;
    double temperature = 0.1;

    void validate() const {
        bridge.validate();
        decoder.validate();
        if (temperature <= 0.0) throw ConfigError("ModelConfig: temperature must be positive");
        if (decoder.emotion_dim != bridge.emotion.embed_dim ||
            decoder.cognition_dim != bridge.cognition.embed_dim)
            throw ConfigError("ModelConfig: decoder bridge widths must match stream embeddings");
    }
};

struct ModelParams {
    BridgeNetParams bridge;
    DecoderParams decoder;
    PrefixBridges prefix;

    static ModelParams init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        ModelParams p;
        Rng bridge_rng = rng.split("bridgenet");
        p.bridge = BridgeNetParams::init(cfg.bridge, bridge_rng);
        Rng dec_rng = rng.split("decoder");
        p.decoder = DecoderParams::init(cfg.decoder, dec_rng);
        Rng prefix_rng = rng.split("prefix-bridges");
        p.prefix = PrefixBridges::init(cfg.decoder, prefix_rng);
        return p;
    }

    std::vector<NamedParam> named() const {
        std::vector<NamedParam> out;
        for (auto& [name, var] : bridge.emotion.named("emotion"))
            out.push_back({name, ParamGroup::EmotionStream, var});
        for (auto& [name, var] : bridge.cognition.named("cognition"))
            out.push_back({name, ParamGroup::CognitionStream, var});
        for (auto& [name, var] : decoder.named("decoder"))
            out.push_back({name, ParamGroup::Decoder, var});
        for (auto& [name, var] : prefix.named("prefix"))
            out.push_back({name, ParamGroup::PrefixBridges, var});
        return out;
    }

    std::vector<NamedParam> in_groups(std::initializer_list<ParamGroup> groups) const {
        std::vector<NamedParam> out;
        for (auto& p : named())
            for (ParamGroup g : groups)
                if (p.group == g) out.push_back(p);
        return out;
    }
};

// FNV-1a over the raw value bytes in canonical order; the freezing contracts
// compare these before/after a stage.
inline std::uint64_t params_hash(const std::vector<NamedParam>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const auto mix_byte = [&h](unsigned char b) {
        h ^= b;
        h *= 0x100000001b3ull;
    };
    for (const auto& p : params) {
        for (unsigned char c : p.name) mix_byte(c);
        for (double d : p.var.value().data()) {
            const auto bits = std::bit_cast<std::uint64_t>(d);
            for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>(bits >> (8 * i)));
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("OptimizerConfig: lr must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("OptimizerConfig: betas must be in [0, 1)");
        if (eps <= 0.0) throw ConfigError("OptimizerConfig: eps must be positive");
        if (weight_decay < 0.0) throw ConfigError("OptimizerConfig: weight_decay must be >= 0");
    }
};

// Decoupled weight decay applied after the bias-corrected moment update.
class AdamW {
public:
    AdamW(OptimizerConfig cfg, std::vector<NamedParam> params)
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.var.rows(), p.var.cols());
            v_.emplace_back(p.var.rows(), p.var.cols());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.var.has_grad())
                throw ContractError("AdamW: no gradient for parameter '" + p.name + "'");
            const Tensor& g = p.var.grad();
            if (!g.all_finite())
                throw NumericError("AdamW: NaN/Inf gradient in parameter '" + p.name + "'");
            Tensor& value = p.var.leaf_value();
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double gi = g.data()[i];
                double& m = m_[pi].data()[i];
                double& v = v_[pi].data()[i];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gi;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gi * gi;
                const double m_hat = m / bc1;
                const double v_hat = v / bc2;
                double& x = value.data()[i];
                x -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
                x -= cfg_.lr * cfg_.weight_decay * x;
            }
        }
    }

    std::uint64_t steps() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<NamedParam> params_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Loss curves
// ---------------------------------------------------------------------------

struct LossCurve {
    std::vector<std::string> columns; // without the leading "epoch"
    std::vector<std::pair<std::size_t, std::vector<double>>> rows;

    void append(std::size_t epoch, std::vector<double> values) {
        rows.emplace_back(epoch, std::move(values));
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("loss curve: cannot write '" + path + "'");
        out << "epoch";
        for (const auto& c : columns) out << ',' << c;
        out << '\n';
        char buf[40];
        for (const auto& [epoch, values] : rows) {
            out << epoch;
            for (double v : values) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << ',' << buf;
            }
            out << '\n';
        }
        if (!out) throw IoError("loss curve: write failed for '" + path + "'");
    }
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 16;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    bool shuffle = true;
    double divergence_threshold = 1e6;

    void validate() const {
        optimizer.validate();
        if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
        if (divergence_threshold <= 0.0)
            throw ConfigError("TrainConfig: divergence threshold must be positive");
    }
};

enum class Stage { DecoderPretrain, One, Two };

inline std::vector<ParamGroup> frozen_groups(Stage s) {
    switch (s) {
    case Stage::DecoderPretrain:
        return {ParamGroup::EmotionStream, ParamGroup::CognitionStream,
                ParamGroup::PrefixBridges};
    case Stage::One: return {ParamGroup::Decoder, ParamGroup::PrefixBridges};
    case Stage::Two: return {ParamGroup::Decoder};
    }
    return {};
}

namespace detail {

inline double checked_loss(const Var& loss, const TrainConfig& cfg, const char* stage) {
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value) || std::abs(value) > cfg.divergence_threshold)
        throw NumericError(std::string(stage) + ": loss diverged to " + std::to_string(value));
    return value;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: joint contrastive training of both streams
// ---------------------------------------------------------------------------

inline LossCurve train_stage1(const Dataset& dataset, ModelParams& params, const ModelConfig& cfg,
                              const TrainConfig& train, const ModalityMask& mask = {}) {
    cfg.validate();
    train.validate();
    const auto train_idx = dataset.split_indices(Split::Train);
    if (train_idx.size() < 2) throw ContractError("train_stage1: need at least 2 train samples");

    AdamW opt(train.optimizer,
              params.in_groups({ParamGroup::EmotionStream, ParamGroup::CognitionStream}));
    LossCurve curve;
    curve.columns = {"l_emo", "l_cog", "l1"};

    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const auto batches =
            batch_indices(train_idx.size(), train.batch_size, train.seed, epoch, train.shuffle);
        double sum_emo = 0.0, sum_cog = 0.0, sum_total = 0.0;
        for (const auto& batch : batches) {
            opt.zero_grad();
            std::vector<Var> he, hc;
            ContrastiveBatch be, bc;
            be.temperature = cfg.temperature;
            bc.temperature = cfg.temperature;
            for (std::size_t k : batch) {
                const auto& sample = dataset.samples[train_idx[k]];
                BridgeEmbeddings emb = bridge_forward(sample.features, params.bridge, cfg.bridge, mask);
                he.push_back(emb.emotion);
                hc.push_back(emb.cognition);
                be.emotion.push_back(sample.emotion);
                be.cognition.push_back(sample.cognition);
            }
            be.embeddings = concat_rows(he);
            bc.embeddings = concat_rows(hc);
            bc.emotion = be.emotion;
            bc.cognition = be.cognition;

            Var l_emo = emotion_contrastive_loss(be);
            Var l_cog = cognition_contrastive_loss(bc);
            Var total = add(l_emo, l_cog);
            sum_emo += detail::checked_loss(l_emo, train, "stage 1");
            sum_cog += detail::checked_loss(l_cog, train, "stage 1");
            sum_total += detail::checked_loss(total, train, "stage 1");
            backward(total);
            opt.step();
        }
        const double nb = static_cast<double>(batches.size());
        curve.append(epoch, {sum_emo / nb, sum_cog / nb, sum_total / nb});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Stage 2: caption cross-entropy against the frozen decoder
// ---------------------------------------------------------------------------

inline LossCurve train_stage2(const Dataset& dataset, ModelParams& params, const ModelConfig& cfg,
                              const Vocab& vocab, const std::vector<std::size_t>& prompt_ids,
                              const TrainConfig& train, const ModalityMask& mask = {}) {
    cfg.validate();
    train.validate();
    const auto train_idx = dataset.split_indices(Split::Train);
    if (train_idx.size() < 2) throw ContractError("train_stage2: need at least 2 train samples");

    AdamW opt(train.optimizer,
              params.in_groups({ParamGroup::EmotionStream, ParamGroup::CognitionStream,
                                ParamGroup::PrefixBridges}));
    const DecoderParams frozen = params.decoder.frozen_view();

    // Encode all captions once: ids are stable under training.
    std::vector<std::vector<std::size_t>> targets(train_idx.size());
    for (std::size_t k = 0; k < train_idx.size(); ++k) {
        targets[k] = vocab.encode(dataset.samples[train_idx[k]].caption);
        targets[k].push_back(Vocab::kEos);
    }

    LossCurve curve;
    curve.columns = {"l2"};
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const auto batches =
            batch_indices(train_idx.size(), train.batch_size, train.seed, epoch, train.shuffle);
        double sum_loss = 0.0;
        for (const auto& batch : batches) {
            opt.zero_grad();
            std::vector<Var> losses;
            losses.reserve(batch.size());
            for (std::size_t k : batch) {
                const auto& sample = dataset.samples[train_idx[k]];
                BridgeEmbeddings emb = bridge_forward(sample.features, params.bridge, cfg.bridge, mask);
                Var logits = decoder_forward(emb.emotion, emb.cognition, prompt_ids, targets[k],
                                             frozen, params.prefix, cfg.decoder);
                losses.push_back(caption_ce_loss(logits, targets[k]));
            }
            Var total = mean_pool_rows(concat_rows(losses));
            sum_loss += detail::checked_loss(total, train, "stage 2");
            backward(total);
            opt.step();
        }
        curve.append(epoch, {sum_loss / static_cast<double>(batches.size())});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Decoder pretraining: language modeling on captions with random prefixes
// ---------------------------------------------------------------------------

// Trains the decoder standalone on the caption corpus; the prefix slots see
// fresh random unit embeddings every pass so the captions carry all signal.
// Afterwards the decoder is frozen for stage 2.
inline LossCurve pretrain_decoder(const std::vector<std::vector<std::string>>& captions,
                                  const Vocab& vocab, ModelParams& params, const ModelConfig& cfg,
                                  const std::vector<std::size_t>& prompt_ids,
                                  const TrainConfig& train) {
    cfg.validate();
    train.validate();
    if (captions.size() < 2) throw ContractError("pretrain_decoder: need at least 2 captions");

    AdamW opt(train.optimizer, params.in_groups({ParamGroup::Decoder}));
    const PrefixBridges fixed{Var::constant(params.prefix.emotion_to_model.value()),
                              Var::constant(params.prefix.cognition_to_model.value())};

    std::vector<std::vector<std::size_t>> targets(captions.size());
    for (std::size_t k = 0; k < captions.size(); ++k) {
        targets[k] = vocab.encode(captions[k]);
        targets[k].push_back(Vocab::kEos);
    }

    Rng prefix_rng = Rng(train.seed).split("pretrain-prefixes");
    LossCurve curve;
    curve.columns = {"lm_ce"};
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const auto batches =
            batch_indices(captions.size(), train.batch_size, train.seed, epoch, train.shuffle);
        double sum_loss = 0.0;
        for (const auto& batch : batches) {
            opt.zero_grad();
            std::vector<Var> losses;
            for (std::size_t k : batch) {
                Tensor he = Tensor::gaussian(1, cfg.decoder.emotion_dim, prefix_rng);
                Tensor hc = Tensor::gaussian(1, cfg.decoder.cognition_dim, prefix_rng);
                const auto normalize = [](Tensor& t) {
                    double sq = 0.0;
                    for (double v : t.data()) sq += v * v;
                    const double norm = std::sqrt(sq);
                    if (norm > 0.0)
                        for (double& v : t.data()) v /= norm;
                };
                normalize(he);
                normalize(hc);
                Var logits = decoder_forward(Var::constant(he), Var::constant(hc), prompt_ids,
                                             targets[k], params.decoder, fixed, cfg.decoder);
                losses.push_back(caption_ce_loss(logits, targets[k]));
            }
            Var total = mean_pool_rows(concat_rows(losses));
            sum_loss += detail::checked_loss(total, train, "decoder pretrain");
            backward(total);
            opt.step();
        }
        curve.append(epoch, {sum_loss / static_cast<double>(batches.size())});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Shared evaluation helpers
// ---------------------------------------------------------------------------

// Emotion and cognition embedding matrices for the given samples.
inline std::pair<Tensor, Tensor> compute_embeddings(const Dataset& dataset,
                                                    const std::vector<std::size_t>& indices,
                                                    const BridgeNetParams& params,
                                                    const BridgeNetConfig& cfg,
                                                    const ModalityMask& mask = {}) {
    Tensor he(indices.size(), cfg.emotion.embed_dim);
    Tensor hc(indices.size(), cfg.cognition.embed_dim);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& sample = dataset.samples[indices[r]];
        const BridgeEmbeddings emb = bridge_forward(sample.features, params, cfg, mask);
        for (std::size_t j = 0; j < he.cols(); ++j) he(r, j) = emb.emotion.value()(0, j);
        for (std::size_t j = 0; j < hc.cols(); ++j) hc(r, j) = emb.cognition.value()(0, j);
    }
    return {std::move(he), std::move(hc)};
}

} // namespace ecmc
