#pragma once

#include <algorithm>
#include <array>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecmc/checkpoint.hpp"
#include "ecmc/losses.hpp"
#include "ecmc/qformer.hpp"
#include "ecmc/rng.hpp"
#include "ecmc/vocab.hpp"

// Synthetic multi-modal dataset generation plus file ingestion. Generation
// draws a class-conditional latent per sample (emotion centroid + summed
// cognition directions), maps it through fixed per-modality projections and
// adds Gaussian noise; captions are template renderings of the labels so
// correctness stays mechanically checkable.

namespace ecmc {

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ParseError("unknown split '" + s + "'");
}

struct UtteranceSample {
    std::string id;
    std::array<Tensor, 3> features; // indexed by Modality (video, audio, text)
    EmotionLabel emotion = EmotionLabel::Neutral;
    CognitionLabelSet cognition;
    std::vector<std::string> caption;
    Split split = Split::Train;
};

struct Dataset {
    std::vector<UtteranceSample> samples;
    std::array<std::size_t, 3> feature_dims = {0, 0, 0};

    std::size_t size() const { return samples.size(); }

    std::vector<std::size_t> split_indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == s) out.push_back(i);
        return out;
    }
};

// Hard sequence-length caps enforced on ingestion.
inline constexpr std::size_t kMaxAudioSteps = 1024;
inline constexpr std::size_t kMaxVideoSteps = 512;

struct ModalityGenConfig {
    std::size_t t_min = 1;
    std::size_t t_max = 1;
    std::size_t dim = 24;
};

struct SyntheticConfig {
    std::size_t n_train = 600;
    std::size_t n_val = 0;
    std::size_t n_test = 200;
    // video, audio, text
    std::array<ModalityGenConfig, 3> modalities = {
        ModalityGenConfig{4, 32, 24}, ModalityGenConfig{8, 64, 24}, ModalityGenConfig{2, 16, 24}};
    double noise_std = 0.1;
    double negative_rate = 0.3185;
    // orientation, attention, memory, language marginal rates
    std::array<double, 4> cognition_rates = {0.0091, 0.0854, 0.1038, 0.1589};
    double cognition_rate_scale = 1.0; // desk-scale class-balance multiplier
    int caption_template = 0;
    std::size_t latent_dim = 8;
    std::uint64_t seed = 0;

    std::size_t total() const { return n_train + n_val + n_test; }

    void validate() const {
        if (total() == 0) throw ConfigError("SyntheticConfig: no samples requested");
        if (noise_std < 0.0) throw ConfigError("SyntheticConfig: noise_std must be >= 0");
        if (negative_rate < 0.0 || negative_rate > 1.0)
            throw ConfigError("SyntheticConfig: negative_rate must be in [0, 1]");
        for (std::size_t k = 0; k < 4; ++k) {
            const double r = cognition_rates[k] * cognition_rate_scale;
            if (r < 0.0 || r > 1.0)
                throw ConfigError("SyntheticConfig: scaled cognition rate " +
                                  std::to_string(k) + " is " + std::to_string(r) +
                                  ", must be in [0, 1]");
        }
        for (const auto& m : modalities) {
            if (m.dim < 1) throw ConfigError("SyntheticConfig: modality dim must be >= 1");
            if (m.t_min < 1 || m.t_max < m.t_min)
                throw ConfigError("SyntheticConfig: invalid sequence length range");
        }
        if (modalities[static_cast<std::size_t>(Modality::Audio)].t_max > kMaxAudioSteps)
            throw ConfigError("SyntheticConfig: audio t_max exceeds cap of 1024");
        if (modalities[static_cast<std::size_t>(Modality::Video)].t_max > kMaxVideoSteps)
            throw ConfigError("SyntheticConfig: video t_max exceeds cap of 512");
        if (caption_template != 0)
            throw ConfigError("SyntheticConfig: unknown caption template " +
                              std::to_string(caption_template));
        if (latent_dim < 1) throw ConfigError("SyntheticConfig: latent_dim must be >= 1");
    }
};

// Template 0 caption, e.g. "emotion negative . cognition memory language ."
inline std::vector<std::string> caption_from_labels(EmotionLabel emotion,
                                                    CognitionLabelSet cognition,
                                                    int caption_template = 0) {
    if (caption_template != 0)
        throw ConfigError("caption_from_labels: unknown template " +
                          std::to_string(caption_template));
    std::vector<std::string> out = {"emotion", emotion_label_name(emotion), ".", "cognition"};
    if (cognition.empty()) {
        out.push_back("none");
    } else {
        for (CognitionCategory c : kAllCognitionCategories)
            if (cognition.has(c)) out.push_back(cognition_category_name(c));
    }
    out.push_back(".");
    return out;
}

// Every token the template captions and default prompt can produce.
inline Vocab caption_template_vocab() {
    return Vocab::from_tokens({"<bos>", "<eos>", "<pad>", "emotion", "negative", "neutral",
                               "positive", ".", "cognition", "orientation", "attention",
                               "memory", "language", "none", "describe"});
}

inline const std::vector<std::string>& default_prompt_tokens() {
    static const std::vector<std::string> prompt = {"describe"};
    return prompt;
}

namespace detail {

inline Tensor unit_gaussian_rows(std::size_t n, std::size_t d, Rng& rng) {
    Tensor t = Tensor::gaussian(n, d, rng);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += t(i, j) * t(i, j);
        const double norm = std::sqrt(sq);
        for (std::size_t j = 0; j < d; ++j) t(i, j) /= norm;
    }
    return t;
}

} // namespace detail

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);

    // Fixed structure: emotion class centroids, cognition category directions,
    // and one latent-to-feature map per modality.
    Rng structure = root.split("structure");
    Rng centroid_rng = structure.split("emotion-centroids");
    const Tensor centroids = detail::unit_gaussian_rows(3, cfg.latent_dim, centroid_rng);
    Rng direction_rng = structure.split("cognition-directions");
    const Tensor directions = detail::unit_gaussian_rows(4, cfg.latent_dim, direction_rng);

    const std::size_t latent2 = 2 * cfg.latent_dim;
    std::array<Tensor, 3> maps;
    for (Modality m : kAllModalities) {
        const auto i = static_cast<std::size_t>(m);
        Rng map_rng = structure.split(std::string("projection-") + modality_name(m));
        const double bound = 1.0 / std::sqrt(static_cast<double>(latent2));
        maps[i] = Tensor::uniform(latent2, cfg.modalities[i].dim, map_rng, -bound, bound);
    }

    Dataset out;
    for (Modality m : kAllModalities)
        out.feature_dims[static_cast<std::size_t>(m)] =
            cfg.modalities[static_cast<std::size_t>(m)].dim;

    Rng samples = root.split("samples");
    for (std::size_t i = 0; i < cfg.total(); ++i) {
        Rng rng = samples.split(i);
        UtteranceSample s;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "utt-%06zu", i);
        s.id = idbuf;
        s.split = i < cfg.n_train          ? Split::Train
                  : i < cfg.n_train + cfg.n_val ? Split::Val
                                                : Split::Test;

        const double u = rng.uniform();
        if (u < cfg.negative_rate) s.emotion = EmotionLabel::Negative;
        else if (u < cfg.negative_rate + (1.0 - cfg.negative_rate) / 2.0)
            s.emotion = EmotionLabel::Neutral;
        else s.emotion = EmotionLabel::Positive;

        for (std::size_t k = 0; k < 4; ++k)
            if (rng.bernoulli(cfg.cognition_rates[k] * cfg.cognition_rate_scale))
                s.cognition.add(kAllCognitionCategories[k]);

        // latent = [emotion centroid ; sum of active category directions]
        std::vector<double> latent(latent2, 0.0);
        const std::size_t cls = static_cast<std::size_t>(static_cast<int>(s.emotion) + 1);
        for (std::size_t j = 0; j < cfg.latent_dim; ++j) latent[j] = centroids(cls, j);
        for (std::size_t k = 0; k < 4; ++k)
            if (s.cognition.has(kAllCognitionCategories[k]))
                for (std::size_t j = 0; j < cfg.latent_dim; ++j)
                    latent[cfg.latent_dim + j] += directions(k, j);

        for (Modality m : kAllModalities) {
            const auto mi = static_cast<std::size_t>(m);
            const auto& mc = cfg.modalities[mi];
            const std::size_t t_len = mc.t_min + rng.uniform_index(mc.t_max - mc.t_min + 1);
            Tensor mean(1, mc.dim);
            for (std::size_t j = 0; j < mc.dim; ++j) {
                double acc = 0.0;
                for (std::size_t l = 0; l < latent2; ++l) acc += latent[l] * maps[mi](l, j);
                mean(0, j) = acc;
            }
            Tensor h(t_len, mc.dim);
            for (std::size_t r = 0; r < t_len; ++r)
                for (std::size_t j = 0; j < mc.dim; ++j)
                    h(r, j) = mean(0, j) +
                              (cfg.noise_std > 0.0 ? rng.normal(0.0, cfg.noise_std) : 0.0);
            s.features[mi] = std::move(h);
        }
        s.caption = caption_from_labels(s.emotion, s.cognition, cfg.caption_template);
        out.samples.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// File form: JSON manifest + one matrix file per (sample, modality)
// ---------------------------------------------------------------------------

enum class MatrixFileFormat { Ecmf, Csv };

inline void save_matrix_csv(const std::string& path, const Tensor& t) {
    std::ofstream out(path);
    if (!out) throw IoError("matrix: cannot write '" + path + "'");
    char buf[40];
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", t(i, j));
            if (j) out << ',';
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("matrix: write failed for '" + path + "'");
}

inline Tensor load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("matrix: cannot open '" + path + "'");
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t line_cols = 0;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw ParseError("'" + path + "': bad number '" + cell + "' on line " +
                                 std::to_string(rows + 1));
            }
            if (used != cell.size())
                throw ParseError("'" + path + "': bad number '" + cell + "' on line " +
                                 std::to_string(rows + 1));
            values.push_back(v);
            ++line_cols;
        }
        if (cols == 0) cols = line_cols;
        else if (line_cols != cols)
            throw ParseError("'" + path + "': ragged row on line " + std::to_string(rows + 1));
        ++rows;
    }
    if (rows == 0) throw ParseError("'" + path + "': empty matrix");
    return Tensor(rows, cols, std::move(values));
}

inline Tensor load_matrix(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0)
        return load_matrix_csv(path);
    return load_matrix_ecmf(path);
}

inline void save_dataset(const Dataset& dataset, const std::string& dir,
                         MatrixFileFormat format = MatrixFileFormat::Ecmf) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "matrices", ec);
    if (ec) throw IoError("save_dataset: cannot create '" + dir + "': " + ec.message());

    const char* ext = format == MatrixFileFormat::Ecmf ? ".ecmf" : ".csv";
    nlohmann::json manifest;
    manifest["schema"] = 1;
    manifest["feature_dims"] = dataset.feature_dims;
    auto& arr = manifest["samples"] = nlohmann::json::array();
    for (const auto& s : dataset.samples) {
        nlohmann::json j;
        j["id"] = s.id;
        j["split"] = split_name(s.split);
        j["emotion"] = static_cast<int>(s.emotion);
        auto cats = nlohmann::json::array();
        for (CognitionCategory c : kAllCognitionCategories)
            if (s.cognition.has(c)) cats.push_back(cognition_category_name(c));
        j["cognition"] = std::move(cats);
        std::string caption;
        for (std::size_t i = 0; i < s.caption.size(); ++i) {
            if (i) caption += ' ';
            caption += s.caption[i];
        }
        j["caption"] = caption;
        for (Modality m : kAllModalities) {
            const auto mi = static_cast<std::size_t>(m);
            const std::string rel = std::string("matrices/") + s.id + "-" +
                                    modality_name(m)[0] + std::string(ext);
            const std::string full = (fs::path(dir) / rel).string();
            if (format == MatrixFileFormat::Ecmf) save_matrix_ecmf(full, s.features[mi]);
            else save_matrix_csv(full, s.features[mi]);
            j[modality_name(m)] = rel;
        }
        arr.push_back(std::move(j));
    }
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ofstream out(manifest_path);
    if (!out) throw IoError("save_dataset: cannot write '" + manifest_path + "'");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("save_dataset: write failed for '" + manifest_path + "'");
}

inline Dataset load_dataset(const std::string& dir_or_manifest) {
    namespace fs = std::filesystem;
    fs::path manifest_path(dir_or_manifest);
    if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("load_dataset: cannot open '" + manifest_path.string() + "'");

    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("'" + manifest_path.string() + "': " + e.what());
    }
    const std::string where = manifest_path.string();
    if (!manifest.contains("schema") || manifest["schema"] != 1)
        throw ParseError("'" + where + "': missing or unsupported schema");
    if (!manifest.contains("samples") || !manifest["samples"].is_array())
        throw ParseError("'" + where + "': missing samples array");

    Dataset out;
    if (manifest.contains("feature_dims")) {
        const auto& fd = manifest["feature_dims"];
        if (!fd.is_array() || fd.size() != 3)
            throw ParseError("'" + where + "': feature_dims must have 3 entries");
        for (std::size_t i = 0; i < 3; ++i) out.feature_dims[i] = fd[i].get<std::size_t>();
    }

    const fs::path base = manifest_path.parent_path();
    for (const auto& j : manifest["samples"]) {
        UtteranceSample s;
        try {
            s.id = j.at("id").get<std::string>();
            s.split = split_from_string(j.at("split").get<std::string>());
            s.emotion = emotion_label_from_int(j.at("emotion").get<int>());
            for (const auto& cat : j.at("cognition")) {
                const std::string name = cat.get<std::string>();
                bool known = false;
                for (CognitionCategory c : kAllCognitionCategories)
                    if (name == cognition_category_name(c)) {
                        s.cognition.add(c);
                        known = true;
                    }
                if (!known)
                    throw ParseError("unknown cognition label '" + name + "'");
            }
            std::istringstream cs(j.at("caption").get<std::string>());
            std::string tok;
            while (cs >> tok) s.caption.push_back(tok);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("'" + where + "': sample entry malformed: " + e.what());
        } catch (const ContractError& e) {
            throw ParseError("'" + where + "': sample '" + s.id + "': " + e.what());
        } catch (const ParseError& e) {
            throw ParseError("'" + where + "': sample '" + s.id + "': " + e.what());
        }
        for (Modality m : kAllModalities) {
            const auto mi = static_cast<std::size_t>(m);
            std::string rel;
            try {
                rel = j.at(modality_name(m)).get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw ParseError("'" + where + "': sample '" + s.id + "' missing " +
                                 modality_name(m) + " path: " + e.what());
            }
            s.features[mi] = load_matrix((base / rel).string());
            if (out.feature_dims[mi] == 0) out.feature_dims[mi] = s.features[mi].cols();
            if (s.features[mi].cols() != out.feature_dims[mi])
                throw ParseError("'" + where + "': sample '" + s.id + "' " + modality_name(m) +
                                 " has width " + std::to_string(s.features[mi].cols()) +
                                 ", expected " + std::to_string(out.feature_dims[mi]));
            if (m == Modality::Audio && s.features[mi].rows() > kMaxAudioSteps)
                throw ParseError("'" + where + "': sample '" + s.id +
                                 "' audio exceeds 1024 time steps");
            if (m == Modality::Video && s.features[mi].rows() > kMaxVideoSteps)
                throw ParseError("'" + where + "': sample '" + s.id +
                                 "' video exceeds 512 time steps");
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

// Deterministic shuffle per (seed, epoch). A trailing batch of one sample is
// merged into the previous batch so every batch keeps at least a pair.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n_samples,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed,
                                                           std::uint64_t epoch, bool shuffle) {
    if (n_samples < 2) throw ContractError("batch_indices: need at least 2 samples");
    if (batch_size < 2) throw ContractError("batch_indices: batch size must be >= 2");

    std::vector<std::size_t> order(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;
    if (shuffle) {
        Rng rng = Rng(seed).split("shuffle").split(epoch);
        for (std::size_t i = n_samples; i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n_samples; start += batch_size) {
        const std::size_t len = std::min(batch_size, n_samples - start);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(start + len));
    }
    if (batches.size() > 1 && batches.back().size() < 2) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

} // namespace ecmc
