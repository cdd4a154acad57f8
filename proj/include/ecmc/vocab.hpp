#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecmc/error.hpp"

namespace ecmc {

// Token/id table. Ids 0, 1, 2 are reserved for BOS, EOS and PAD. The file
// form is UTF-8, one token per line, line number = id.
class Vocab {
public:
    static constexpr std::size_t kBos = 0;
    static constexpr std::size_t kEos = 1;
    static constexpr std::size_t kPad = 2;

    Vocab() = default;

    static Vocab from_tokens(std::vector<std::string> tokens) {
        if (tokens.size() < 4)
            throw ContractError("Vocab: need at least 4 tokens (3 reserved + content)");
        Vocab v;
        v.tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
            if (v.tokens_[i].empty())
                throw ContractError("Vocab: empty token at id " + std::to_string(i));
            if (!v.ids_.emplace(v.tokens_[i], i).second)
                throw ContractError("Vocab: duplicate token '" + v.tokens_[i] + "'");
        }
        return v;
    }

    static Vocab load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("Vocab: cannot open '" + path + "'");
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty())
                throw ParseError("Vocab: empty line " + std::to_string(tokens.size() + 1) +
                                 " in '" + path + "'");
            tokens.push_back(line);
        }
        try {
            return from_tokens(std::move(tokens));
        } catch (const ContractError& e) {
            throw ParseError(std::string(e.what()) + " while loading '" + path + "'");
        }
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("Vocab: cannot write '" + path + "'");
        for (const std::string& t : tokens_) out << t << '\n';
        if (!out) throw IoError("Vocab: write failed for '" + path + "'");
    }

    std::size_t size() const { return tokens_.size(); }

    const std::string& token(std::size_t id) const {
        if (id >= tokens_.size())
            throw ContractError("Vocab: id " + std::to_string(id) + " out of range");
        return tokens_[id];
    }

    bool contains(const std::string& tok) const { return ids_.count(tok) > 0; }

    std::size_t id(const std::string& tok) const {
        auto it = ids_.find(tok);
        if (it == ids_.end()) throw ContractError("Vocab: unknown token '" + tok + "'");
        return it->second;
    }

    std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
        std::vector<std::size_t> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id(t));
        return out;
    }

    std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (std::size_t i : ids) out.push_back(token(i));
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

// Caption corpus file: one caption per line, whitespace-tokenized.
inline std::vector<std::vector<std::string>> load_caption_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("caption corpus: cannot open '" + path + "'");
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<std::string> toks;
        std::string t;
        while (ls >> t) toks.push_back(t);
        if (!toks.empty()) out.push_back(std::move(toks));
    }
    return out;
}

inline void save_caption_corpus(const std::string& path,
                                const std::vector<std::vector<std::string>>& captions) {
    std::ofstream out(path);
    if (!out) throw IoError("caption corpus: cannot write '" + path + "'");
    for (const auto& caption : captions) {
        for (std::size_t i = 0; i < caption.size(); ++i) {
            if (i) out << ' ';
            out << caption[i];
        }
        out << '\n';
    }
    if (!out) throw IoError("caption corpus: write failed for '" + path + "'");
}

} // namespace ecmc
