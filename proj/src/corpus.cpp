#include "temprank/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "temprank/templates.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

int LabelSchema::category_index(const std::string& c) const {
    for (size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == c) return static_cast<int>(i);
    return -1;
}

int LabelSchema::polarity_index(const std::string& p) const {
    for (size_t i = 0; i < polarities.size(); ++i)
        if (polarities[i] == p) return static_cast<int>(i);
    return -1;
}

void LabelSchema::validate() const {
    if (categories.empty()) throw std::runtime_error("schema: empty category set");
    if (polarities.empty()) throw std::runtime_error("schema: empty polarity set");
    std::set<std::string> seen(categories.begin(), categories.end());
    if (seen.size() != categories.size()) throw std::runtime_error("schema: duplicate category");
    std::set<std::string> pseen(polarities.begin(), polarities.end());
    if (pseen.size() != polarities.size()) throw std::runtime_error("schema: duplicate polarity");
    if (pseen.count(none_label))
        throw std::runtime_error("schema: none_label '" + none_label + "' collides with a polarity");
}

void LabelSchema::save_json(const std::filesystem::path& path) const {
    json j;
    j["categories"] = categories;
    j["polarities"] = polarities;
    j["none_label"] = none_label;
    write_file_atomic(path, j.dump(2) + "\n");
}

LabelSchema LabelSchema::load_json(const std::filesystem::path& path) {
    const json j = json::parse(read_file(path));
    LabelSchema s;
    s.categories = j.at("categories").get<std::vector<std::string>>();
    s.polarities = j.at("polarities").get<std::vector<std::string>>();
    s.none_label = j.value("none_label", std::string("none"));
    s.templates = std::make_shared<TemplateRegistry>(TemplateRegistry::builtin());
    s.validate();
    return s;
}

const char* bucket_name(FreqBucket b) {
    switch (b) {
        case FreqBucket::Zero: return "zero";
        case FreqBucket::Low: return "low";
        case FreqBucket::Mid: return "mid";
        case FreqBucket::High: return "high";
    }
    return "?";
}

namespace {

Example parse_example(const json& j, const LabelSchema& schema, size_t line_no) {
    auto fail = [line_no](const std::string& msg) -> std::runtime_error {
        return std::runtime_error("line " + std::to_string(line_no) + ": " + msg);
    };
    Example ex;
    if (!j.is_object()) throw fail("expected a JSON object");
    ex.id = j.at("id").get<std::string>();
    ex.text = j.at("text").get<std::string>();
    if (ex.text.empty()) throw fail("empty text (id=" + ex.id + ")");
    ex.tokens = tokenize(ex.text);
    std::set<std::string> cats;
    for (const json& lj : j.at("labels")) {
        AspectLabel lab;
        lab.category = lj.at("category").get<std::string>();
        lab.polarity = lj.at("polarity").get<std::string>();
        if (schema.category_index(lab.category) < 0)
            throw fail("unknown category '" + lab.category + "'");
        if (schema.polarity_index(lab.polarity) < 0)
            throw fail("unknown polarity '" + lab.polarity + "'");
        if (!cats.insert(lab.category).second)
            throw fail("duplicate category '" + lab.category + "' in one example");
        ex.labels.push_back(std::move(lab));
    }
    return ex;
}

}  // namespace

DatasetSplit load_jsonl(const std::filesystem::path& path, const LabelSchema& schema) {
    std::istringstream in(read_file(path));
    DatasetSplit split;
    split.name = path.stem().string();
    std::string line;
    size_t line_no = 0;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) +
                                     ": malformed JSON (" + e.what() + ")");
        }
        Example ex = parse_example(j, schema, line_no);
        if (!ids.insert(ex.id).second)
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) +
                                     ": duplicate id '" + ex.id + "'");
        split.examples.push_back(std::move(ex));
    }
    return split;
}

void save_jsonl(const DatasetSplit& split, const std::filesystem::path& path) {
    std::string out;
    for (const Example& ex : split.examples) {
        json labels = json::array();
        for (const AspectLabel& lab : ex.labels)
            labels.push_back({{"category", lab.category}, {"polarity", lab.polarity}});
        json j;
        j["id"] = ex.id;
        j["text"] = ex.text;
        j["labels"] = labels;
        out += j.dump();
        out.push_back('\n');
    }
    write_file_atomic(path, out);
}

DatasetSplit fewshot_sample(const DatasetSplit& split, int k, uint64_t seed,
                            const LabelSchema& schema, FewshotReport* report) {
    if (k < 1) throw std::runtime_error("fewshot_sample: k must be >= 1");
    std::set<size_t> chosen;
    for (size_t ci = 0; ci < schema.categories.size(); ++ci) {
        const std::string& cat = schema.categories[ci];
        std::vector<size_t> pool;
        for (size_t i = 0; i < split.examples.size(); ++i) {
            for (const AspectLabel& lab : split.examples[i].labels) {
                if (lab.category == cat) {
                    pool.push_back(i);
                    break;
                }
            }
        }
        std::mt19937_64 rng(mix64(seed, ci));
        std::shuffle(pool.begin(), pool.end(), rng);
        const size_t take = std::min<size_t>(pool.size(), static_cast<size_t>(k));
        for (size_t i = 0; i < take; ++i) chosen.insert(pool[i]);
        if (report && pool.size() < static_cast<size_t>(k))
            report->shortfall[cat] = static_cast<int>(pool.size());
    }
    DatasetSplit out;
    out.name = split.name + "-fewshot";
    for (size_t i : chosen) out.examples.push_back(split.examples[i]);
    return out;
}

DatasetSplit filter_hard_subset(const DatasetSplit& split) {
    DatasetSplit out;
    out.name = split.name + "-hard";
    for (const Example& ex : split.examples) {
        if (ex.labels.size() < 2) continue;
        std::set<std::string> pols;
        for (const AspectLabel& lab : ex.labels) pols.insert(lab.polarity);
        if (pols.size() >= 2) out.examples.push_back(ex);
    }
    return out;
}

namespace {

// contiguous subsequence match of the category's token form
bool contains_category_tokens(const std::vector<std::string>& tokens,
                              const std::vector<std::string>& cat_tokens) {
    if (cat_tokens.empty() || tokens.size() < cat_tokens.size()) return false;
    for (size_t i = 0; i + cat_tokens.size() <= tokens.size(); ++i) {
        bool all = true;
        for (size_t j = 0; j < cat_tokens.size(); ++j) {
            if (tokens[i + j] != cat_tokens[j]) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

}  // namespace

std::map<std::string, FreqBucket> frequency_buckets(const DatasetSplit& split,
                                                    const LabelSchema& schema) {
    if (split.examples.empty()) throw std::runtime_error("frequency_buckets: empty split");
    struct Entry {
        std::string category;
        size_t schema_index;
        double fraction;
    };
    std::map<std::string, FreqBucket> out;
    std::vector<Entry> nonzero;
    for (size_t ci = 0; ci < schema.categories.size(); ++ci) {
        const std::string& cat = schema.categories[ci];
        const auto cat_tokens = tokenize(cat);
        int labeled = 0;
        int with_term = 0;
        for (const Example& ex : split.examples) {
            bool has = false;
            for (const AspectLabel& lab : ex.labels) has = has || lab.category == cat;
            if (!has) continue;
            ++labeled;
            if (contains_category_tokens(ex.tokens, cat_tokens)) ++with_term;
        }
        if (labeled == 0) continue;  // excluded; caller may warn
        const double frac = static_cast<double>(with_term) / labeled;
        if (frac == 0.0) {
            out[cat] = FreqBucket::Zero;
        } else {
            nonzero.push_back({cat, ci, frac});
        }
    }
    std::sort(nonzero.begin(), nonzero.end(), [](const Entry& a, const Entry& b) {
        if (a.fraction != b.fraction) return a.fraction > b.fraction;
        return a.schema_index < b.schema_index;
    });
    const size_t n = nonzero.size();
    if (n > 0) {
        const size_t n_high = std::min<size_t>(n, static_cast<size_t>(std::ceil(0.30 * n)));
        const size_t n_low =
            std::min<size_t>(n - n_high, static_cast<size_t>(std::ceil(0.15 * n)));
        for (size_t i = 0; i < n; ++i) {
            FreqBucket b = FreqBucket::Mid;
            if (i < n_high) b = FreqBucket::High;
            else if (i >= n - n_low) b = FreqBucket::Low;
            out[nonzero[i].category] = b;
        }
    }
    return out;
}

void SynthConfig::validate() const {
    if (n_train < 0 || n_dev < 0 || n_test < 0) throw std::runtime_error("synth: negative count");
    if (categories.empty() || polarities.empty()) throw std::runtime_error("synth: empty schema");
    if (connectors.empty()) throw std::runtime_error("synth: no connectors");
    if (max_clauses < 1) throw std::runtime_error("synth: max_clauses must be >= 1");
    bool any_implicit = false;
    for (const auto& c : categories) {
        auto it = terms.find(c);
        if (it == terms.end() || it->second.empty()) any_implicit = true;
    }
    if (!any_implicit)
        throw std::runtime_error("synth: need at least one implicit category (empty term lexicon)");
    std::set<std::string> seen;
    for (const auto& p : polarities) {
        auto it = opinions.find(p);
        if (it == opinions.end() || it->second.empty())
            throw std::runtime_error("synth: missing opinion lexicon for polarity '" + p + "'");
        for (const auto& w : it->second) {
            if (!seen.insert(w).second)
                throw std::runtime_error("synth: opinion word '" + w +
                                         "' appears in more than one polarity lexicon");
        }
    }
}

SynthConfig SynthConfig::restaurant() {
    SynthConfig c;
    c.categories = {"food", "service", "price", "ambience", "miscellaneous"};
    c.terms = {
        {"food", {"pizza", "pasta", "burger", "salad", "steak", "soup"}},
        {"service", {"waiter", "waitress", "bartender", "hostess", "crew"}},
        {"price", {"bill", "prices", "cost", "tab"}},
        {"ambience", {"decor", "music", "lighting", "patio"}},
        {"miscellaneous", {}},
    };
    c.polarities = {"positive", "negative", "neutral"};
    c.opinions = {
        {"positive", {"great", "excellent", "wonderful", "lovely", "fantastic", "superb"}},
        {"negative", {"awful", "terrible", "rude", "bland", "overpriced", "dreadful"}},
        {"neutral", {"okay", "average", "ordinary", "passable", "unremarkable"}},
    };
    c.connectors = {"and", "but", "while"};
    c.id_prefix = "rest";
    return c;
}

SynthConfig SynthConfig::hotel() {
    SynthConfig c;
    c.categories = {"room", "location", "facilities", "comfort", "general"};
    c.terms = {
        {"room", {"bed", "shower", "bathroom", "suite", "balcony"}},
        {"location", {"neighborhood", "view", "district", "surroundings"}},
        {"facilities", {"pool", "gym", "lobby", "elevator"}},
        {"comfort", {"mattress", "pillows", "bedding", "linen"}},
        {"general", {}},
    };
    c.polarities = {"positive", "negative", "neutral"};
    c.opinions = {
        {"positive", {"great", "excellent", "wonderful", "lovely", "fantastic", "superb"}},
        {"negative", {"awful", "terrible", "rude", "bland", "overpriced", "dreadful"}},
        {"neutral", {"okay", "average", "ordinary", "passable", "unremarkable"}},
    };
    c.connectors = {"and", "but", "while"};
    c.id_prefix = "hotel";
    return c;
}

namespace {

Example make_sentence(const SynthConfig& cfg, std::mt19937_64& rng, const std::string& id) {
    std::vector<std::string> implicit_cats;
    std::vector<std::string> explicit_cats;
    for (const auto& c : cfg.categories) {
        auto it = cfg.terms.find(c);
        if (it == cfg.terms.end() || it->second.empty()) implicit_cats.push_back(c);
        else explicit_cats.push_back(c);
    }

    auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
        std::uniform_int_distribution<size_t> d(0, v.size() - 1);
        return v[d(rng)];
    };

    std::uniform_int_distribution<int> n_clauses_d(1, cfg.max_clauses);
    const int n_clauses = n_clauses_d(rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Example ex;
    ex.id = id;
    std::set<std::string> used;
    for (int i = 0; i < n_clauses; ++i) {
        // distinct categories within one sentence
        std::string cat;
        for (int attempt = 0; attempt < 64; ++attempt) {
            const bool implicit =
                !implicit_cats.empty() && (explicit_cats.empty() || unif(rng) < cfg.implicit_fraction);
            cat = implicit ? pick(implicit_cats) : pick(explicit_cats);
            if (!used.count(cat)) break;
            cat.clear();
        }
        if (cat.empty()) break;
        used.insert(cat);

        const std::string& polarity = cfg.polarities[std::uniform_int_distribution<size_t>(
            0, cfg.polarities.size() - 1)(rng)];
        const std::string& opinion = pick(cfg.opinions.at(polarity));

        std::string clause;
        auto terms_it = cfg.terms.find(cat);
        if (terms_it == cfg.terms.end() || terms_it->second.empty()) {
            clause = "overall it was " + opinion;
        } else {
            clause = "the " + pick(terms_it->second) + " was " + opinion;
        }
        if (!ex.text.empty()) ex.text += " " + pick(cfg.connectors) + " ";
        ex.text += clause;
        ex.labels.push_back({cat, polarity});
    }
    ex.tokens = tokenize(ex.text);
    return ex;
}

}  // namespace

SynthCorpus generate_synthetic(const SynthConfig& config) {
    config.validate();
    SynthCorpus out;
    out.schema.categories = config.categories;
    out.schema.polarities = config.polarities;
    out.schema.none_label = "none";
    out.schema.templates = std::make_shared<TemplateRegistry>(TemplateRegistry::builtin());
    out.schema.validate();

    struct Part {
        DatasetSplit* split;
        const char* name;
        int n;
        uint64_t stream;
    };
    Part parts[3] = {{&out.train, "train", config.n_train, 1},
                     {&out.dev, "dev", config.n_dev, 2},
                     {&out.test, "test", config.n_test, 3}};
    for (auto& part : parts) {
        part.split->name = part.name;
        std::mt19937_64 rng(mix64(config.seed, part.stream));
        for (int i = 0; i < part.n; ++i) {
            char idbuf[64];
            std::snprintf(idbuf, sizeof(idbuf), "%s-%s-%05d", config.id_prefix.c_str(), part.name,
                          i);
            part.split->examples.push_back(make_sentence(config, rng, idbuf));
        }
    }
    return out;
}

SplitStats split_stats(const DatasetSplit& split, const LabelSchema& schema) {
    SplitStats st;
    st.n_examples = static_cast<int>(split.examples.size());
    for (const auto& c : schema.categories) st.per_category[c] = 0;
    for (const auto& p : schema.polarities) st.per_polarity[p] = 0;
    for (const Example& ex : split.examples) {
        for (const AspectLabel& lab : ex.labels) {
            st.per_category[lab.category]++;
            st.per_polarity[lab.polarity]++;
            st.total_labels++;
        }
    }
    return st;
}

}  // namespace temprank
