#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ecmc/autodiff.hpp"

// Stage-1 objectives: a label-matching contrastive loss over emotion
// embeddings and a Jaccard-weighted multi-label contrastive loss over
// cognition embeddings. Both are computed from the temperature-scaled
// similarity matrix S_ij = h_i . h_j / tau with the self pair excluded from
// every sum. Each loss is a single graph node carrying an analytically
// derived dL/dS; gradients reach the embeddings through the similarity
// matmul.

namespace ecmc {

enum class EmotionLabel : int { Negative = -1, Neutral = 0, Positive = 1 };

inline EmotionLabel emotion_label_from_int(int v) {
    if (v < -1 || v > 1)
        throw ContractError("EmotionLabel: value must be in {-1, 0, 1}, got " + std::to_string(v));
    return static_cast<EmotionLabel>(v);
}

inline const char* emotion_label_name(EmotionLabel l) {
    switch (l) {
    case EmotionLabel::Negative: return "negative";
    case EmotionLabel::Neutral: return "neutral";
    case EmotionLabel::Positive: return "positive";
    }
    return "?";
}

enum class CognitionCategory : unsigned {
    OrientationDeficit = 0,
    AttentionDeficit = 1,
    MemoryDeficit = 2,
    LanguageDisorder = 3,
};

inline constexpr std::array<CognitionCategory, 4> kAllCognitionCategories = {
    CognitionCategory::OrientationDeficit, CognitionCategory::AttentionDeficit,
    CognitionCategory::MemoryDeficit, CognitionCategory::LanguageDisorder};

inline const char* cognition_category_name(CognitionCategory c) {
    switch (c) {
    case CognitionCategory::OrientationDeficit: return "orientation";
    case CognitionCategory::AttentionDeficit: return "attention";
    case CognitionCategory::MemoryDeficit: return "memory";
    case CognitionCategory::LanguageDisorder: return "language";
    }
    return "?";
}

// Subset of the four cognitive-impairment categories; may be empty.
class CognitionLabelSet {
public:
    CognitionLabelSet() = default;

    static CognitionLabelSet from_bits(std::uint8_t bits) {
        if (bits >= 16)
            throw ContractError("CognitionLabelSet: bits out of range");
        CognitionLabelSet s;
        s.bits_ = bits;
        return s;
    }

    static CognitionLabelSet of(std::initializer_list<CognitionCategory> cats) {
        CognitionLabelSet s;
        for (CognitionCategory c : cats) s.add(c);
        return s;
    }

    void add(CognitionCategory c) { bits_ |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(c)); }
    bool has(CognitionCategory c) const { return bits_ & (1u << static_cast<unsigned>(c)); }
    bool empty() const { return bits_ == 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::popcount(bits_)); }
    std::uint8_t bits() const { return bits_; }

    friend bool operator==(CognitionLabelSet a, CognitionLabelSet b) { return a.bits_ == b.bits_; }

private:
    std::uint8_t bits_ = 0;
};

inline double jaccard_index(CognitionLabelSet a, CognitionLabelSet b) {
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    const auto inter = std::popcount(static_cast<unsigned>(a.bits() & b.bits()));
    const auto uni = std::popcount(static_cast<unsigned>(a.bits() | b.bits()));
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// A batch of unit-norm embeddings with both label kinds and the temperature.
struct ContrastiveBatch {
    Var embeddings; // N x d, unit-norm rows
    std::vector<EmotionLabel> emotion;
    std::vector<CognitionLabelSet> cognition;
    double temperature = 0.1;

    std::size_t size() const { return embeddings.defined() ? embeddings.rows() : 0; }

    void validate() const {
        if (!embeddings.defined() || embeddings.rows() < 2)
            throw ContractError("ContrastiveBatch: need at least 2 samples");
        if (temperature <= 0.0)
            throw ContractError("ContrastiveBatch: temperature must be positive");
        for (std::size_t i = 0; i < embeddings.rows(); ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < embeddings.cols(); ++j)
                sq += embeddings.value()(i, j) * embeddings.value()(i, j);
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-3)
                throw ContractError("ContrastiveBatch: row " + std::to_string(i) +
                                    " is not unit-norm");
        }
    }
};

// S_ij = h_i . h_j / tau
inline Var similarity_matrix(const Var& embeddings, double temperature) {
    if (temperature <= 0.0)
        throw ContractError("similarity_matrix: temperature must be positive");
    return scale(matmul(embeddings, transpose(embeddings)), 1.0 / temperature);
}

// M_ij = 1 iff y_i = y_j and i != j.
inline Tensor emotion_mask(const std::vector<EmotionLabel>& labels) {
    const std::size_t n = labels.size();
    if (n < 2) throw ContractError("emotion_mask: need at least 2 labels");
    Tensor m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && labels[i] == labels[j]) m(i, j) = 1.0;
    return m;
}

// W_ij per the three-case Jaccard rule; symmetric, values in [0, 1].
inline Tensor jaccard_weights(const std::vector<CognitionLabelSet>& labels) {
    const std::size_t n = labels.size();
    if (n < 2) throw ContractError("jaccard_weights: need at least 2 labels");
    Tensor w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w(i, j) = jaccard_index(labels[i], labels[j]);
    return w;
}

// Value plus dL/dS of one loss evaluated on a similarity matrix.
struct SimilarityLossTerms {
    double compactness = 0.0; // pull term
    double separation = 0.0;  // push term
    double total = 0.0;
    Tensor sim_grad;
};

namespace detail {

inline double softplus(double x) {
    // log(1 + e^x) without overflow
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace detail

// Emotion loss on a precomputed similarity matrix. Anchors without positives
// are skipped in the pull term, which renormalizes over surviving anchors.
inline SimilarityLossTerms emotion_loss_on_similarity(const Tensor& sim,
                                                      const std::vector<EmotionLabel>& labels) {
    const std::size_t n = labels.size();
    if (n < 2) throw ContractError("emotion_loss: batch size must be >= 2");
    if (sim.rows() != n || sim.cols() != n)
        throw DimensionError("emotion_loss: similarity " + sim.shape_string() +
                             " vs N=" + std::to_string(n));

    SimilarityLossTerms out;
    out.sim_grad = Tensor(n, n);
    Tensor pull_grad(n, n);

    std::size_t anchors = 0;
    double pull_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> positives;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) positives.push_back(j);

        // log-sum-exp over all k != i
        double mx = -HUGE_VAL;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) mx = std::max(mx, sim(i, k));
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(sim(i, k) - mx);
        const double lse_all = mx + std::log(denom);

        if (!positives.empty()) {
            ++anchors;
            double mean_pos = 0.0;
            for (std::size_t j : positives) mean_pos += sim(i, j);
            mean_pos /= static_cast<double>(positives.size());
            pull_sum += -(mean_pos - lse_all);

            const double inv_p = 1.0 / static_cast<double>(positives.size());
            for (std::size_t j : positives) pull_grad(i, j) -= inv_p;
            for (std::size_t k = 0; k < n; ++k)
                if (k != i) pull_grad(i, k) += std::exp(sim(i, k) - lse_all);
        }

        // push term over different-label pairs
        double mneg = -HUGE_VAL;
        bool any_neg = false;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] != labels[i]) {
                any_neg = true;
                mneg = std::max(mneg, sim(i, j));
            }
        if (any_neg) {
            double eneg = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && labels[j] != labels[i]) eneg += std::exp(sim(i, j) - mneg);
            const double lse_neg = mneg + std::log(eneg);
            const double sp = detail::softplus(lse_neg);
            out.separation += sp;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && labels[j] != labels[i])
                    out.sim_grad(i, j) += std::exp(sim(i, j) - sp) / n;
        }
    }

    if (anchors > 0) {
        out.compactness = pull_sum / static_cast<double>(anchors);
        const double inv_a = 1.0 / static_cast<double>(anchors);
        for (std::size_t i = 0; i < n * n; ++i)
            out.sim_grad.data()[i] += inv_a * pull_grad.data()[i];
    }
    out.separation /= static_cast<double>(n);
    out.total = out.compactness + out.separation;
    return out;
}

// Cognition loss on a precomputed similarity matrix with Jaccard weights.
// Anchors whose weighted positive mass is zero are skipped in the pull term.
inline SimilarityLossTerms cognition_loss_on_similarity(const Tensor& sim, const Tensor& weights) {
    const std::size_t n = sim.rows();
    if (n < 2) throw ContractError("cognition_loss: batch size must be >= 2");
    if (sim.cols() != n || weights.rows() != n || weights.cols() != n)
        throw DimensionError("cognition_loss: similarity " + sim.shape_string() + " vs weights " +
                             weights.shape_string());

    SimilarityLossTerms out;
    out.sim_grad = Tensor(n, n);
    Tensor pull_grad(n, n);

    std::size_t anchors = 0;
    double pull_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        // denominator: logsumexp over all j != i
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) mx = std::max(mx, sim(i, j));
        double den = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) den += std::exp(sim(i, j) - mx);
        const double lse_den = mx + std::log(den);

        // numerator: logsumexp over j != i with W_ij > 0, shifted by log W_ij
        double mw = -HUGE_VAL;
        bool any_pos = false;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && weights(i, j) > 0.0) {
                any_pos = true;
                mw = std::max(mw, sim(i, j) + std::log(weights(i, j)));
            }
        if (any_pos) {
            ++anchors;
            double num = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && weights(i, j) > 0.0)
                    num += std::exp(sim(i, j) + std::log(weights(i, j)) - mw);
            const double lse_num = mw + std::log(num);
            pull_sum += lse_den - lse_num;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                pull_grad(i, j) += std::exp(sim(i, j) - lse_den);
                if (weights(i, j) > 0.0)
                    pull_grad(i, j) -= std::exp(sim(i, j) + std::log(weights(i, j)) - lse_num);
            }
        }

        // push term over 1 - W
        double mp = -HUGE_VAL;
        bool any_push = false;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && weights(i, j) < 1.0) {
                any_push = true;
                mp = std::max(mp, sim(i, j) + std::log1p(-weights(i, j)));
            }
        if (any_push) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && weights(i, j) < 1.0)
                    acc += std::exp(sim(i, j) + std::log1p(-weights(i, j)) - mp);
            const double lse_push = mp + std::log(acc);
            const double sp = detail::softplus(lse_push);
            out.separation += sp;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && weights(i, j) < 1.0)
                    out.sim_grad(i, j) +=
                        std::exp(sim(i, j) + std::log1p(-weights(i, j)) - sp) / n;
        }
    }

    if (anchors > 0) {
        out.compactness = pull_sum / static_cast<double>(anchors);
        const double inv_a = 1.0 / static_cast<double>(anchors);
        for (std::size_t i = 0; i < n * n; ++i)
            out.sim_grad.data()[i] += inv_a * pull_grad.data()[i];
    }
    out.separation /= static_cast<double>(n);
    out.total = out.compactness + out.separation;
    return out;
}

namespace detail {

inline Var similarity_loss_node(const Var& sim, SimilarityLossTerms terms, const char* name) {
    Tensor value(1, 1, terms.total);
    return make_op(std::move(value), name, {sim},
                   [g = std::move(terms.sim_grad)](Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       Tensor& pg = p.ensure_grad();
                       const double s = self.grad(0, 0);
                       for (std::size_t i = 0; i < pg.size(); ++i)
                           pg.data()[i] += s * g.data()[i];
                   });
}

} // namespace detail

inline Var emotion_contrastive_loss(const ContrastiveBatch& batch) {
    batch.validate();
    if (batch.emotion.size() != batch.size())
        throw ContractError("emotion_contrastive_loss: label count != batch size");
    Var sim = similarity_matrix(batch.embeddings, batch.temperature);
    auto terms = emotion_loss_on_similarity(sim.value(), batch.emotion);
    return detail::similarity_loss_node(sim, std::move(terms), "emotion_contrastive_loss");
}

inline Var cognition_contrastive_loss(const ContrastiveBatch& batch) {
    batch.validate();
    if (batch.cognition.size() != batch.size())
        throw ContractError("cognition_contrastive_loss: label count != batch size");
    Var sim = similarity_matrix(batch.embeddings, batch.temperature);
    auto terms = cognition_loss_on_similarity(sim.value(), jaccard_weights(batch.cognition));
    return detail::similarity_loss_node(sim, std::move(terms), "cognition_contrastive_loss");
}

// L1 = L_emo + L_cog over the same samples' emotion/cognition embeddings.
inline Var stage1_loss(const ContrastiveBatch& emotion_batch,
                       const ContrastiveBatch& cognition_batch) {
    if (emotion_batch.size() != cognition_batch.size())
        throw ContractError("stage1_loss: batches must cover the same samples");
    return add(emotion_contrastive_loss(emotion_batch),
               cognition_contrastive_loss(cognition_batch));
}

} // namespace ecmc
