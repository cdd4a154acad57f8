#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ecmc/data.hpp"
#include "ecmc/trainer.hpp"

// Flat key=value run configuration with flag overrides. Settings apply in
// order: built-in desk defaults, then the config file top to bottom, then
// command-line overrides. "preset" rewrites the optimizer block when applied,
// so later explicit keys win over it.

namespace ecmc {

struct RunConfig {
    // q-former / stream dims
    std::size_t num_queries = 8;
    std::size_t query_dim = 32;
    std::size_t key_dim = 32;
    std::size_t value_dim = 32;
    std::size_t emotion_embed_dim = 48;
    std::size_t cognition_embed_dim = 48;
    // decoder
    std::size_t model_dim = 32;
    std::size_t ffn_dim = 64;
    std::size_t max_len = 64;
    std::string prompt = "describe";
    // losses / optimizer / schedule
    double temperature = 0.1;
    std::string preset = "desk"; // desk | paper  (paper-faithful values)
    double lr = 1e-3;
    double weight_decay = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t epochs = 200;
    // synthetic data
    std::size_t n_train = 600;
    std::size_t n_val = 0;
    std::size_t n_test = 200;
    std::size_t feat_dim_video = 24;
    std::size_t feat_dim_audio = 24;
    std::size_t feat_dim_text = 24;
    std::size_t t_video_min = 4, t_video_max = 32;
    std::size_t t_audio_min = 8, t_audio_max = 64;
    std::size_t t_text_min = 2, t_text_max = 16;
    double noise_std = 0.1;
    double negative_rate = 0.3185;
    double rate_orientation = 0.0091;
    double rate_attention = 0.0854;
    double rate_memory = 0.1038;
    double rate_language = 0.1589;
    double cognition_rate_scale = 1.0;
    std::size_t latent_dim = 8;
    // run
    std::string modalities = "vat";

    void apply(const std::string& key, const std::string& value) {
        const auto& table = setters();
        auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(*this, value);
    }

    void apply_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open '" + path + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::size_t begin = line.find_first_not_of(" \t\r");
            if (begin == std::string::npos) continue;
            std::size_t end = line.find_last_not_of(" \t\r");
            line = line.substr(begin, end - begin + 1);
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("'" + path + "' line " + std::to_string(lineno) +
                                  ": expected key=value");
            std::string key = line.substr(0, eq);
            std::string value = line.substr(eq + 1);
            const auto trim = [](std::string& s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t");
                s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
            };
            trim(key);
            trim(value);
            try {
                apply(key, value);
            } catch (const ConfigError& e) {
                throw ConfigError("'" + path + "' line " + std::to_string(lineno) + ": " +
                                  e.what());
            }
        }
    }

    void validate() const {
        model_config().validate();
        synthetic_config(0).validate();
        optimizer_config().validate();
        ModalityMask::from_string(modalities);
        if (epochs > 1000000) throw ConfigError("epochs out of range");
    }

    ModelConfig model_config() const {
        ModelConfig cfg;
        cfg.bridge.emotion.num_queries = num_queries;
        cfg.bridge.emotion.query_dim = query_dim;
        cfg.bridge.emotion.key_dim = key_dim;
        cfg.bridge.emotion.value_dim = value_dim;
        cfg.bridge.emotion.embed_dim = emotion_embed_dim;
        cfg.bridge.cognition = cfg.bridge.emotion;
        cfg.bridge.cognition.embed_dim = cognition_embed_dim;
        cfg.bridge.feature_dims = {feat_dim_video, feat_dim_audio, feat_dim_text};
        cfg.decoder.vocab_size = caption_template_vocab().size();
        cfg.decoder.model_dim = model_dim;
        cfg.decoder.ffn_dim = ffn_dim;
        cfg.decoder.max_len = max_len;
        cfg.decoder.emotion_dim = emotion_embed_dim;
        cfg.decoder.cognition_dim = cognition_embed_dim;
        cfg.temperature = temperature;
        return cfg;
    }

    SyntheticConfig synthetic_config(std::uint64_t seed) const {
        SyntheticConfig cfg;
        cfg.n_train = n_train;
        cfg.n_val = n_val;
        cfg.n_test = n_test;
        cfg.modalities = {ModalityGenConfig{t_video_min, t_video_max, feat_dim_video},
                          ModalityGenConfig{t_audio_min, t_audio_max, feat_dim_audio},
                          ModalityGenConfig{t_text_min, t_text_max, feat_dim_text}};
        cfg.noise_std = noise_std;
        cfg.negative_rate = negative_rate;
        cfg.cognition_rates = {rate_orientation, rate_attention, rate_memory, rate_language};
        cfg.cognition_rate_scale = cognition_rate_scale;
        cfg.latent_dim = latent_dim;
        cfg.seed = seed;
        return cfg;
    }

    OptimizerConfig optimizer_config() const {
        OptimizerConfig cfg;
        cfg.lr = lr;
        cfg.beta1 = beta1;
        cfg.beta2 = beta2;
        cfg.eps = adam_eps;
        cfg.weight_decay = weight_decay;
        return cfg;
    }

    TrainConfig train_config(std::uint64_t seed) const {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.optimizer = optimizer_config();
        cfg.seed = seed;
        return cfg;
    }

    std::vector<std::string> prompt_tokens() const {
        std::istringstream ps(prompt);
        std::vector<std::string> out;
        std::string tok;
        while (ps >> tok) out.push_back(tok);
        return out;
    }

private:
    using Setter = std::function<void(RunConfig&, const std::string&)>;

    static std::size_t parse_size(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(value, &used);
            if (used != value.size() || v < 0) throw std::invalid_argument("");
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected a non-negative integer, got '" +
                              value + "'");
        }
    }

    static double parse_double(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
        }
    }

    static const std::map<std::string, Setter>& setters() {
        static const std::map<std::string, Setter> table = [] {
            std::map<std::string, Setter> t;
            const auto size_key = [&t](const char* key, std::size_t RunConfig::* field) {
                t[key] = [key, field](RunConfig& c, const std::string& v) {
                    c.*field = parse_size(key, v);
                };
            };
            const auto double_key = [&t](const char* key, double RunConfig::* field) {
                t[key] = [key, field](RunConfig& c, const std::string& v) {
                    c.*field = parse_double(key, v);
                };
            };
            size_key("num_queries", &RunConfig::num_queries);
            size_key("query_dim", &RunConfig::query_dim);
            size_key("key_dim", &RunConfig::key_dim);
            size_key("value_dim", &RunConfig::value_dim);
            size_key("emotion_embed_dim", &RunConfig::emotion_embed_dim);
            size_key("cognition_embed_dim", &RunConfig::cognition_embed_dim);
            size_key("model_dim", &RunConfig::model_dim);
            size_key("ffn_dim", &RunConfig::ffn_dim);
            size_key("max_len", &RunConfig::max_len);
            size_key("batch_size", &RunConfig::batch_size);
            size_key("epochs", &RunConfig::epochs);
            size_key("n_train", &RunConfig::n_train);
            size_key("n_val", &RunConfig::n_val);
            size_key("n_test", &RunConfig::n_test);
            size_key("feat_dim_video", &RunConfig::feat_dim_video);
            size_key("feat_dim_audio", &RunConfig::feat_dim_audio);
            size_key("feat_dim_text", &RunConfig::feat_dim_text);
            size_key("t_video_min", &RunConfig::t_video_min);
            size_key("t_video_max", &RunConfig::t_video_max);
            size_key("t_audio_min", &RunConfig::t_audio_min);
            size_key("t_audio_max", &RunConfig::t_audio_max);
            size_key("t_text_min", &RunConfig::t_text_min);
            size_key("t_text_max", &RunConfig::t_text_max);
            size_key("latent_dim", &RunConfig::latent_dim);
            double_key("temperature", &RunConfig::temperature);
            double_key("lr", &RunConfig::lr);
            double_key("weight_decay", &RunConfig::weight_decay);
            double_key("beta1", &RunConfig::beta1);
            double_key("beta2", &RunConfig::beta2);
            double_key("adam_eps", &RunConfig::adam_eps);
            double_key("noise_std", &RunConfig::noise_std);
            double_key("negative_rate", &RunConfig::negative_rate);
            double_key("rate_orientation", &RunConfig::rate_orientation);
            double_key("rate_attention", &RunConfig::rate_attention);
            double_key("rate_memory", &RunConfig::rate_memory);
            double_key("rate_language", &RunConfig::rate_language);
            double_key("cognition_rate_scale", &RunConfig::cognition_rate_scale);
            t["prompt"] = [](RunConfig& c, const std::string& v) { c.prompt = v; };
            t["modalities"] = [](RunConfig& c, const std::string& v) {
                ModalityMask::from_string(v);
                c.modalities = v;
            };
            t["preset"] = [](RunConfig& c, const std::string& v) {
                if (v == "desk") {
                    c.lr = 1e-3;
                    c.weight_decay = 1e-6;
                    c.batch_size = 16;
                    c.epochs = 200;
                } else if (v == "paper") {
                    // paper-faithful optimizer values
                    c.lr = 1.3e-5;
                    c.weight_decay = 1e-6;
                    c.batch_size = 64;
                    c.epochs = 500;
                } else {
                    throw ConfigError("preset must be 'desk' or 'paper', got '" + v + "'");
                }
                c.preset = v;
            };
            return t;
        }();
        return table;
    }
};

} // namespace ecmc
