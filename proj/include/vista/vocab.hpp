#pragma once

#include <map>
#include <string>
#include <vector>

namespace vista {

constexpr int kMaxTokens = 32;

struct TokenSequence {
    std::vector<int> ids;        // length kMaxTokens, PAD-filled
    std::vector<uint8_t> mask;   // 1 = real token (incl. BOS/EOS), 0 = PAD
    bool truncated = false;
};

// Fixed vocabulary drawn from the caption template grammar. Token ids are
// stable across runs for a given grammar version.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary(); // builds the grammar vocabulary

    int size() const { return (int)tokens_.size(); }
    int id_of(const std::string& tok) const;
    const std::string& token(int id) const;

    TokenSequence tokenize(const std::string& caption) const;
    std::string detokenize(const TokenSequence& seq) const;

    // One token per line, UTF-8.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    uint64_t grammar_hash() const;

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
    void rebuild_index();
};

// Whitespace split with "," broken out as its own token.
std::vector<std::string> caption_words(const std::string& caption);

} // namespace vista
