#include "temprank/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "temprank/corpus.hpp"
#include "temprank/templates.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

const std::vector<std::string>& Vocab::special_surfaces() {
    static const std::vector<std::string> s = {"<pad>", "<s>", "</s>", "<unk>",
                                               "<sep>", "<cls>", "<mask>"};
    return s;
}

Vocab Vocab::with_specials() {
    Vocab v;
    for (const auto& tok : special_surfaces()) {
        v.token_to_id.emplace(tok, static_cast<TokenId>(v.id_to_token.size()));
        v.id_to_token.push_back(tok);
    }
    return v;
}

TokenId Vocab::id_of(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw std::runtime_error("token id out of range: " + std::to_string(id) +
                                 " (|V|=" + std::to_string(size()) + ")");
    }
    return id_to_token[static_cast<size_t>(id)];
}

void Vocab::save_json(const std::filesystem::path& path) const {
    json specials = json::object();
    for (int i = 0; i < kNumSpecials; ++i) specials[id_to_token[static_cast<size_t>(i)]] = i;
    json j;
    j["specials"] = specials;
    j["tokens"] = id_to_token;
    write_file_atomic(path, j.dump(2) + "\n");
}

Vocab Vocab::load_json(const std::filesystem::path& path) {
    const json j = json::parse(read_file(path));
    Vocab v;
    v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
    if (static_cast<int>(v.id_to_token.size()) < kNumSpecials + 1) {
        throw std::runtime_error("vocab too small in " + path.string());
    }
    for (size_t i = 0; i < v.id_to_token.size(); ++i) {
        auto [it, fresh] = v.token_to_id.emplace(v.id_to_token[i], static_cast<TokenId>(i));
        (void)it;
        if (!fresh) throw std::runtime_error("duplicate token in vocab: " + v.id_to_token[i]);
    }
    const auto& expect = special_surfaces();
    for (int i = 0; i < kNumSpecials; ++i) {
        if (v.id_to_token[static_cast<size_t>(i)] != expect[static_cast<size_t>(i)]) {
            throw std::runtime_error("special token block mismatch in " + path.string());
        }
    }
    return v;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            out.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

namespace {

std::vector<std::string> pattern_words(const std::string& pattern) {
    // strip slot placeholders, tokenize the rest
    std::string s = pattern;
    for (const char* slot : {"{CATEGORY}", "{POLARITY}"}) {
        size_t pos;
        while ((pos = s.find(slot)) != std::string::npos) s.replace(pos, std::string(slot).size(), " ");
    }
    return tokenize(s);
}

}  // namespace

Vocab build_vocab(const std::vector<const DatasetSplit*>& splits, const LabelSchema& schema) {
    std::map<std::string, int64_t> counts;
    bool any = false;
    for (const DatasetSplit* split : splits) {
        for (const Example& ex : split->examples) {
            any = true;
            for (const auto& tok : ex.tokens) counts[tok]++;
        }
    }
    if (!any) throw std::runtime_error("build_vocab: empty corpus");

    auto ensure = [&counts](const std::string& tok) {
        if (!tok.empty()) counts.emplace(tok, 0);
    };
    for (const auto& c : schema.categories)
        for (const auto& t : tokenize(c)) ensure(t);
    for (const auto& p : schema.polarities) ensure(lowercase(p));
    ensure(lowercase(schema.none_label));
    if (schema.templates) {
        for (const auto& spec : schema.templates->specs)
            for (const auto& t : pattern_words(spec.pattern)) ensure(t);
    }

    // frequency desc, then lexicographic
    std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v = Vocab::with_specials();
    for (const auto& [tok, cnt] : items) {
        (void)cnt;
        if (v.token_to_id.count(tok)) continue;  // a corpus word spelled like a special surface
        v.token_to_id.emplace(tok, static_cast<TokenId>(v.id_to_token.size()));
        v.id_to_token.push_back(tok);
    }
    return v;
}

TokenSeq encode_text(const std::string& text, const Vocab& vocab) {
    TokenSeq out;
    for (const auto& tok : tokenize(text)) {
        auto it = vocab.token_to_id.find(tok);
        if (it == vocab.token_to_id.end() || it->second < Vocab::kNumSpecials) {
            out.push_back(Vocab::kUnk);
        } else {
            out.push_back(it->second);
        }
    }
    return out;
}

std::string decode_ids(const TokenSeq& seq, const Vocab& vocab) {
    std::string out;
    for (TokenId id : seq) {
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

}  // namespace temprank
