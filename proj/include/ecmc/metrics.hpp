#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecmc/losses.hpp"
#include "ecmc/tensor.hpp"

// Caption quality metrics (BLEU-n, ROUGE-L, CIDEr), embedding-space
// diagnostics, and per-group label statistics. Metric values are only
// comparable under the tokenizer below: lowercase, split on any
// non-alphanumeric character.

namespace ecmc {

inline std::vector<std::string> tokenize_caption(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct TokenizedPair {
    std::vector<std::string> candidate;
    std::vector<std::vector<std::string>> references;
};

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace detail

// Corpus BLEU: clipped modified n-gram precision, uniform geometric mean up
// to max_n, brevity penalty min(1, e^(1 - r/c)) with per-pair closest
// reference lengths.
inline double corpus_bleu(const std::vector<TokenizedPair>& pairs, int max_n) {
    if (max_n != 1 && max_n != 2 && max_n != 4)
        throw ContractError("corpus_bleu: n must be 1, 2 or 4");
    if (pairs.empty()) throw ContractError("corpus_bleu: empty corpus");

    std::size_t cand_len = 0, ref_len = 0;
    bool any_candidate = false;
    for (const auto& p : pairs) {
        if (p.references.empty()) throw ContractError("corpus_bleu: pair without references");
        if (p.candidate.empty()) continue;
        any_candidate = true;
        cand_len += p.candidate.size();
        // closest reference length; ties resolve to the shorter one
        std::size_t best = p.references.front().size();
        for (const auto& r : p.references) {
            const auto d = [&](std::size_t len) {
                return len > p.candidate.size() ? len - p.candidate.size()
                                                : p.candidate.size() - len;
            };
            if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best))
                best = r.size();
        }
        ref_len += best;
    }
    if (!any_candidate) {
        std::cerr << "corpus_bleu: warning: every candidate is empty, score is 0\n";
        return 0.0;
    }

    double log_precision = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        std::size_t matched = 0, total = 0;
        for (const auto& p : pairs) {
            const auto cand = detail::count_ngrams(p.candidate, static_cast<std::size_t>(n));
            detail::NgramCounts best_ref;
            for (const auto& r : p.references)
                for (const auto& [g, c] : detail::count_ngrams(r, static_cast<std::size_t>(n)))
                    best_ref[g] = std::max(best_ref[g], c);
            for (const auto& [g, c] : cand) {
                auto it = best_ref.find(g);
                matched += std::min(c, it == best_ref.end() ? 0 : it->second);
                total += c;
            }
        }
        if (matched == 0 || total == 0) return 0.0;
        log_precision += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    log_precision /= max_n;

    const double bp =
        cand_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_precision);
}

inline double bleu_n(const TokenizedPair& pair, int n) {
    if (pair.candidate.empty()) {
        std::cerr << "bleu_n: warning: empty candidate, score is 0\n";
        return 0.0;
    }
    return corpus_bleu({pair}, n);
}

inline constexpr double kRougeBetaSquared = 1.2;

// ROUGE-L F-measure from the longest common subsequence; multiple references
// take the best F.
inline double rouge_l(const TokenizedPair& pair) {
    if (pair.references.empty()) throw ContractError("rouge_l: pair without references");
    double best = 0.0;
    for (const auto& ref : pair.references) {
        if (ref.empty()) throw ContractError("rouge_l: empty reference");
        if (pair.candidate.empty()) continue;
        const double lcs = static_cast<double>(detail::lcs_length(pair.candidate, ref));
        if (lcs == 0.0) continue;
        const double precision = lcs / static_cast<double>(pair.candidate.size());
        const double recall = lcs / static_cast<double>(ref.size());
        const double f = (1.0 + kRougeBetaSquared) * recall * precision /
                         (recall + kRougeBetaSquared * precision);
        best = std::max(best, f);
    }
    return best;
}

struct CiderResult {
    std::vector<double> per_pair;
    double mean = 0.0;
};

// CIDEr as unscaled tf-idf n-gram cosine, n = 1..4 averaged with equal
// weights. tf is the raw n-gram count; idf = ln(P / max(1, df)) with df the
// number of pairs whose reference set contains the n-gram. Zero-norm vectors
// contribute zero cosine, so a single-document corpus degenerates to 0.
inline CiderResult cider(const std::vector<TokenizedPair>& pairs) {
    if (pairs.empty()) throw ContractError("cider: empty corpus");
    const double corpus_size = static_cast<double>(pairs.size());

    CiderResult out;
    out.per_pair.resize(pairs.size(), 0.0);
    for (std::size_t n = 1; n <= 4; ++n) {
        // document frequency over reference sets
        detail::NgramCounts df;
        for (const auto& p : pairs) {
            detail::NgramCounts seen;
            for (const auto& r : p.references)
                for (const auto& [g, c] : detail::count_ngrams(r, n)) seen[g] = 1;
            for (const auto& [g, c] : seen) df[g] += 1;
        }
        const auto idf = [&](const std::vector<std::string>& g) {
            auto it = df.find(g);
            const double d = it == df.end() ? 1.0 : std::max<double>(1.0, static_cast<double>(it->second));
            return std::log(corpus_size / d);
        };

        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            const auto& p = pairs[pi];
            if (p.references.empty()) throw ContractError("cider: pair without references");
            const auto cand = detail::count_ngrams(p.candidate, n);
            double cand_norm_sq = 0.0;
            for (const auto& [g, c] : cand) {
                const double v = static_cast<double>(c) * idf(g);
                cand_norm_sq += v * v;
            }
            double pair_score = 0.0;
            for (const auto& r : p.references) {
                const auto ref = detail::count_ngrams(r, n);
                double dot = 0.0, ref_norm_sq = 0.0;
                for (const auto& [g, c] : ref) {
                    const double rv = static_cast<double>(c) * idf(g);
                    ref_norm_sq += rv * rv;
                    auto it = cand.find(g);
                    if (it != cand.end()) dot += rv * static_cast<double>(it->second) * idf(g);
                }
                if (cand_norm_sq > 0.0 && ref_norm_sq > 0.0)
                    pair_score += dot / (std::sqrt(cand_norm_sq) * std::sqrt(ref_norm_sq));
            }
            out.per_pair[pi] += pair_score / static_cast<double>(p.references.size()) / 4.0;
        }
    }
    for (double v : out.per_pair) out.mean += v;
    out.mean /= corpus_size;
    return out;
}

// ---------------------------------------------------------------------------
// Embedding-space diagnostics
// ---------------------------------------------------------------------------

struct SeparabilityReport {
    double intra_cosine = 0.0;
    double inter_cosine = 0.0;
    double margin = 0.0;
    double silhouette = 0.0;
};

namespace detail {

inline double cosine(const Tensor& e, std::size_t i, std::size_t j) {
    double dot = 0.0, ni = 0.0, nj = 0.0;
    for (std::size_t k = 0; k < e.cols(); ++k) {
        dot += e(i, k) * e(j, k);
        ni += e(i, k) * e(i, k);
        nj += e(j, k) * e(j, k);
    }
    const double denom = std::sqrt(ni) * std::sqrt(nj);
    return denom > 0.0 ? dot / denom : 0.0;
}

} // namespace detail

// Mean intra-/inter-class pairwise cosine, their margin, and the mean
// silhouette under cosine distance. Classes with a single member contribute
// no intra pairs and are skipped in the silhouette mean.
inline SeparabilityReport embedding_separability(const Tensor& embeddings,
                                                 const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    if (embeddings.rows() != n)
        throw DimensionError("embedding_separability: rows vs labels mismatch");
    std::map<int, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < n; ++i) classes[labels[i]].push_back(i);
    if (classes.size() < 2)
        throw ContractError("embedding_separability: need at least 2 classes");

    SeparabilityReport rep;
    std::size_t intra_pairs = 0, inter_pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = detail::cosine(embeddings, i, j);
            if (labels[i] == labels[j]) {
                rep.intra_cosine += c;
                ++intra_pairs;
            } else {
                rep.inter_cosine += c;
                ++inter_pairs;
            }
        }
    if (intra_pairs > 0) rep.intra_cosine /= static_cast<double>(intra_pairs);
    if (inter_pairs > 0) rep.inter_cosine /= static_cast<double>(inter_pairs);
    rep.margin = rep.intra_cosine - rep.inter_cosine;

    double sil_sum = 0.0;
    std::size_t sil_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& own = classes[labels[i]];
        if (own.size() < 2) continue;
        double a = 0.0;
        for (std::size_t j : own)
            if (j != i) a += 1.0 - detail::cosine(embeddings, i, j);
        a /= static_cast<double>(own.size() - 1);

        double b = HUGE_VAL;
        for (const auto& [cls, members] : classes) {
            if (cls == labels[i]) continue;
            double d = 0.0;
            for (std::size_t j : members) d += 1.0 - detail::cosine(embeddings, i, j);
            b = std::min(b, d / static_cast<double>(members.size()));
        }
        const double denom = std::max(a, b);
        sil_sum += denom > 0.0 ? (b - a) / denom : 0.0;
        ++sil_count;
    }
    rep.silhouette = sil_count > 0 ? sil_sum / static_cast<double>(sil_count) : 0.0;
    return rep;
}

// Spearman rank correlation with average ranks for ties; empty when either
// side is constant.
inline std::optional<double> spearman_correlation(const std::vector<double>& a,
                                                  const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("spearman: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw ContractError("spearman: need at least 2 observations");

    const auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);

    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return std::nullopt;
    return cov / std::sqrt(va * vb);
}

// Rank correlation between pairwise Jaccard weights and embedding cosines.
// Constant weights (e.g. identical label sets everywhere) have no defined
// rank correlation, which the empty optional signals.
inline std::optional<double>
jaccard_similarity_correlation(const Tensor& embeddings,
                               const std::vector<CognitionLabelSet>& labels) {
    const std::size_t n = labels.size();
    if (embeddings.rows() != n)
        throw DimensionError("jaccard_similarity_correlation: rows vs labels mismatch");
    if (n < 3) throw ContractError("jaccard_similarity_correlation: need at least 3 samples");

    std::vector<double> w, c;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            w.push_back(jaccard_index(labels[i], labels[j]));
            c.push_back(detail::cosine(embeddings, i, j));
        }
    return spearman_correlation(w, c);
}

// ---------------------------------------------------------------------------
// Group statistics
// ---------------------------------------------------------------------------

enum class SubjectGroup { Depression, Anxiety, Healthy };

inline const char* subject_group_name(SubjectGroup g) {
    switch (g) {
    case SubjectGroup::Depression: return "depression";
    case SubjectGroup::Anxiety: return "anxiety";
    case SubjectGroup::Healthy: return "healthy";
    }
    return "?";
}

inline SubjectGroup subject_group_from_string(const std::string& s) {
    if (s == "depression") return SubjectGroup::Depression;
    if (s == "anxiety") return SubjectGroup::Anxiety;
    if (s == "healthy") return SubjectGroup::Healthy;
    throw ParseError("unknown group '" + s + "'");
}

// Order: negative emotion, then the four cognition categories.
inline constexpr std::array<const char*, 5> kFlagNames = {"negative", "orientation", "attention",
                                                          "memory", "language"};

struct UtteranceFlags {
    std::array<bool, 5> flags = {false, false, false, false, false};
};

struct GroupLabelTable {
    std::map<std::string, SubjectGroup> subjects;
    std::vector<std::pair<std::string, UtteranceFlags>> utterances; // subject id, flags
};

struct GroupProportions {
    // group -> mean over subjects of per-subject flag proportions
    std::map<SubjectGroup, std::array<double, 5>> means;
    std::map<SubjectGroup, std::size_t> subject_counts;
};

// Per subject, the proportion of flagged utterances per category; then the
// unweighted mean over subjects within each group. Subjects with no
// utterances are excluded with a warning.
inline GroupProportions group_proportions(const GroupLabelTable& table) {
    if (table.utterances.empty()) throw ContractError("group_proportions: empty table");
    std::map<std::string, std::array<double, 5>> counts;
    std::map<std::string, double> totals;
    for (const auto& [subject, flags] : table.utterances) {
        if (!table.subjects.count(subject))
            throw ContractError("group_proportions: utterance for unknown subject '" + subject +
                                "'");
        auto& c = counts[subject];
        for (std::size_t k = 0; k < 5; ++k)
            if (flags.flags[k]) c[k] += 1.0;
        totals[subject] += 1.0;
    }

    GroupProportions out;
    std::map<SubjectGroup, std::array<double, 5>> sums;
    for (const auto& [subject, group] : table.subjects) {
        auto it = totals.find(subject);
        if (it == totals.end()) {
            std::cerr << "group_proportions: warning: subject '" << subject
                      << "' has no utterances, excluded\n";
            continue;
        }
        auto& sum = sums[group];
        for (std::size_t k = 0; k < 5; ++k) sum[k] += counts[subject][k] / it->second;
        out.subject_counts[group] += 1;
    }
    for (const auto& [group, sum] : sums) {
        std::array<double, 5> mean;
        for (std::size_t k = 0; k < 5; ++k)
            mean[k] = sum[k] / static_cast<double>(out.subject_counts[group]);
        out.means[group] = mean;
    }
    return out;
}

// CSV form: header then one row per utterance:
//   subject,group,negative,orientation,attention,memory,language
inline GroupLabelTable load_group_table_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("group table: cannot open '" + path + "'");
    GroupLabelTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (lineno == 1) {
            if (cells.size() != 7 || cells[0] != "subject" || cells[1] != "group")
                throw ParseError("'" + path + "': bad header on line 1");
            continue;
        }
        if (cells.size() != 7)
            throw ParseError("'" + path + "': expected 7 fields on line " +
                             std::to_string(lineno));
        const SubjectGroup group = subject_group_from_string(cells[1]);
        auto [it, inserted] = table.subjects.emplace(cells[0], group);
        if (!inserted && it->second != group)
            throw ParseError("'" + path + "': subject '" + cells[0] +
                             "' assigned to two groups (line " + std::to_string(lineno) + ")");
        UtteranceFlags flags;
        for (std::size_t k = 0; k < 5; ++k) {
            if (cells[2 + k] != "0" && cells[2 + k] != "1")
                throw ParseError("'" + path + "': flag must be 0 or 1 on line " +
                                 std::to_string(lineno));
            flags.flags[k] = cells[2 + k] == "1";
        }
        table.utterances.emplace_back(cells[0], flags);
    }
    if (table.utterances.empty())
        throw ParseError("'" + path + "': no utterance rows");
    return table;
}

// Share of positions where the generated sequence matches gold, relative to
// gold length.
inline double token_accuracy(const std::vector<std::size_t>& generated,
                             const std::vector<std::size_t>& gold) {
    if (gold.empty()) throw ContractError("token_accuracy: empty gold sequence");
    std::size_t match = 0;
    for (std::size_t i = 0; i < gold.size() && i < generated.size(); ++i)
        if (generated[i] == gold[i]) ++match;
    return static_cast<double>(match) / static_cast<double>(gold.size());
}

} // namespace ecmc
