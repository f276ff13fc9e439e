#include "vista/vocab.hpp"

#include <fstream>

#include "vista/errors.hpp"
#include "vista/rng.hpp"
#include "vista/scene.hpp"

namespace vista {

std::vector<std::string> caption_words(const std::string& caption) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : caption) {
        if (ch == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            out.push_back(",");
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocabulary::Vocabulary() {
    tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    auto push = [&](const std::string& t) { tokens_.push_back(t); };
    push("the");
    push("small");
    push("large");
    for (const auto& c : object_color_names()) push(c);
    for (const auto& s : shape_names()) push(s);
    for (const auto& v : verb_names()) push(v);
    push("on");
    push("background");
    push(",");
    push("with");
    push("a");
    for (const auto& c : background_color_names()) push(c);
    rebuild_index();
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (index_.count(tokens_[i])) throw ConfigError("duplicate vocabulary token: " + tokens_[i]);
        index_[tokens_[i]] = (int)i;
    }
}

int Vocabulary::id_of(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= (int)tokens_.size()) throw DataError("token id out of range");
    return tokens_[(size_t)id];
}

TokenSequence Vocabulary::tokenize(const std::string& caption) const {
    TokenSequence seq;
    seq.ids.assign(kMaxTokens, kPad);
    seq.mask.assign(kMaxTokens, 0);
    std::vector<int> ids;
    ids.push_back(kBos);
    for (const auto& w : caption_words(caption)) ids.push_back(id_of(w));
    ids.push_back(kEos);
    if ((int)ids.size() > kMaxTokens) {
        seq.truncated = true;
        ids.resize(kMaxTokens);
        ids.back() = kEos;
    }
    for (size_t i = 0; i < ids.size(); ++i) {
        seq.ids[i] = ids[i];
        seq.mask[i] = 1;
    }
    return seq;
}

std::string Vocabulary::detokenize(const TokenSequence& seq) const {
    std::string out;
    for (int i = 0; i < kMaxTokens; ++i) {
        if (!seq.mask[(size_t)i]) break;
        const int id = seq.ids[(size_t)i];
        if (id == kBos || id == kEos || id == kPad) continue;
        const std::string& t = token(id);
        if (t == ",") {
            out += ",";
        } else {
            if (!out.empty()) out += " ";
            out += t;
        }
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write vocabulary: " + path);
    for (const auto& t : tokens_) f << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read vocabulary: " + path);
    Vocabulary v;
    v.tokens_.clear();
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) v.tokens_.push_back(line);
    }
    v.rebuild_index();
    if (v.size() < 4) throw DataError("vocabulary file too small: " + path);
    return v;
}

uint64_t Vocabulary::grammar_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
        for (char c : t) {
            h ^= (uint64_t)(uint8_t)c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0x1fULL;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace vista
