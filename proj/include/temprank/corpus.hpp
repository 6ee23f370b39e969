#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "temprank/text.hpp"

namespace temprank {

struct TemplateRegistry;

struct AspectLabel {
    std::string category;
    std::string polarity;

    bool operator==(const AspectLabel& o) const {
        return category == o.category && polarity == o.polarity;
    }
};

struct Example {
    std::string id;
    std::string text;
    std::vector<std::string> tokens;  // derived from text
    std::vector<AspectLabel> labels;
};

// Category vocabulary A, polarity vocabulary P, and the registered templates.
// Orders are fixed and used for tie-breaking everywhere downstream.
struct LabelSchema {
    std::vector<std::string> categories;
    std::vector<std::string> polarities;
    std::string none_label = "none";
    std::shared_ptr<const TemplateRegistry> templates;

    int category_index(const std::string& c) const;
    int polarity_index(const std::string& p) const;
    void validate() const;

    void save_json(const std::filesystem::path& path) const;
    static LabelSchema load_json(const std::filesystem::path& path);
};

struct DatasetSplit {
    std::string name;  // train, dev or test
    std::vector<Example> examples;
};

// Deterministic synthetic review generator. Sentences are clause chains
// "the TERM was OPINION" joined by connectors; a category with an empty term
// lexicon is implicit and surfaces as "overall it was OPINION".
struct SynthConfig {
    uint64_t seed = 7;
    int n_train = 500;
    int n_dev = 100;
    int n_test = 100;
    int max_clauses = 3;
    double implicit_fraction = 0.15;
    std::string id_prefix = "synth";
    std::vector<std::string> categories;                         // schema order
    std::map<std::string, std::vector<std::string>> terms;       // per category; empty = implicit
    std::vector<std::string> polarities;                         // schema order
    std::map<std::string, std::vector<std::string>> opinions;    // per polarity, pairwise disjoint
    std::vector<std::string> connectors;

    void validate() const;
    static SynthConfig restaurant();
    static SynthConfig hotel();
};

struct SynthCorpus {
    DatasetSplit train;
    DatasetSplit dev;
    DatasetSplit test;
    LabelSchema schema;
};

struct SplitStats {
    std::map<std::string, int> per_category;
    std::map<std::string, int> per_polarity;
    int total_labels = 0;
    int n_examples = 0;
};

struct FewshotReport {
    // categories whose support was below k, with the available count
    std::map<std::string, int> shortfall;
};

enum class FreqBucket { Zero, Low, Mid, High };
const char* bucket_name(FreqBucket b);

DatasetSplit load_jsonl(const std::filesystem::path& path, const LabelSchema& schema);
void save_jsonl(const DatasetSplit& split, const std::filesystem::path& path);

DatasetSplit fewshot_sample(const DatasetSplit& split, int k, uint64_t seed,
                            const LabelSchema& schema, FewshotReport* report = nullptr);

DatasetSplit filter_hard_subset(const DatasetSplit& split);

// Buckets cover exactly the categories with at least one labeled example:
// fraction 0 -> zero; the rest ranked by fraction, top 30% high (ceil),
// bottom 15% low (ceil), remainder mid. Ties broken by schema order.
std::map<std::string, FreqBucket> frequency_buckets(const DatasetSplit& split,
                                                    const LabelSchema& schema);

SynthCorpus generate_synthetic(const SynthConfig& config);

SplitStats split_stats(const DatasetSplit& split, const LabelSchema& schema);

}  // namespace temprank
