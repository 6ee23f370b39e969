#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "temprank/scoring.hpp"

namespace temprank {

struct Decision {
    std::string category;
    std::string label;                     // polarity, none_label, present/absent
    std::map<std::string, double> scores;  // full candidate scores, kept for audit
};

struct Prediction {
    std::string id;
    std::vector<Decision> decisions;
};

// Argmax over the ACSA candidates; exact ties go to the earlier polarity in
// schema order.
std::string predict_acsa(const TemplateScorer& scorer, const TokenSeq& x,
                         const std::string& text, const std::string& category,
                         const LabelSchema& schema, const Vocab& vocab,
                         const std::string& spec_id = "", Decision* audit = nullptr);

// Category included iff f(T+) > f(T-); equality excludes it.
std::vector<std::string> predict_acd(const TemplateScorer& scorer, const TokenSeq& x,
                                     const std::string& text, const LabelSchema& schema,
                                     const Vocab& vocab, const std::string& variant = "",
                                     std::vector<Decision>* audit = nullptr);

// Per category, best polarity wins only if strictly above the none score.
std::vector<std::pair<std::string, std::string>> predict_joint(
    const TemplateScorer& scorer, const TokenSeq& x, const std::string& text,
    const LabelSchema& schema, const Vocab& vocab, const std::string& spec_id = "",
    std::vector<Decision>* audit = nullptr);

// ACD with the first scorer, then ACSA per detected category with the second.
std::vector<std::pair<std::string, std::string>> predict_pipeline(
    const TemplateScorer& acd_scorer, const TemplateScorer& acsa_scorer, const TokenSeq& x,
    const std::string& text, const LabelSchema& schema, const Vocab& vocab,
    const std::string& acd_variant = "", const std::string& acsa_spec = "");

void save_predictions_jsonl(const std::vector<Prediction>& preds,
                            const std::filesystem::path& path);

}  // namespace temprank
