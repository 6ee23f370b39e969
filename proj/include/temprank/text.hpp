#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace temprank {

struct DatasetSplit;
struct LabelSchema;

using TokenId = int32_t;
using TokenSeq = std::vector<TokenId>;

// Word-level vocabulary with reserved special ids. Label words and category
// words are single tokens, so competing template candidates stay equal-length.
struct Vocab {
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr TokenId kSep = 4;
    static constexpr TokenId kCls = 5;
    static constexpr TokenId kMask = 6;
    static constexpr int kNumSpecials = 7;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, TokenId> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    bool contains(const std::string& tok) const { return token_to_id.count(tok) > 0; }

    // UNK for unknown tokens.
    TokenId id_of(const std::string& tok) const;
    const std::string& token(TokenId id) const;

    void save_json(const std::filesystem::path& path) const;
    static Vocab load_json(const std::filesystem::path& path);

    static Vocab with_specials();
    static const std::vector<std::string>& special_surfaces();
};

// Lowercase, split on whitespace; every non-alphanumeric character becomes
// its own token ("don't" -> don ' t).
std::vector<std::string> tokenize(const std::string& text);

Vocab build_vocab(const std::vector<const DatasetSplit*>& splits, const LabelSchema& schema);

TokenSeq encode_text(const std::string& text, const Vocab& vocab);
std::string decode_ids(const TokenSeq& seq, const Vocab& vocab);

}  // namespace temprank
