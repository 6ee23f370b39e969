#include "temprank/inference.hpp"

#include "json.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

namespace {

Decision audit_of(const std::string& category, const std::string& label,
                  const std::vector<ScoredCandidate>& scored) {
    Decision d;
    d.category = category;
    d.label = label;
    for (const auto& sc : scored) d.scores[sc.label] = sc.score;
    return d;
}

}  // namespace

std::string predict_acsa(const TemplateScorer& scorer, const TokenSeq& x, const std::string& text,
                         const std::string& category, const LabelSchema& schema,
                         const Vocab& vocab, const std::string& spec_id, Decision* audit) {
    const auto candidates = candidates_acsa(category, schema, vocab, spec_id);
    const auto scored = score_candidates(scorer, x, text, candidates);
    size_t best = 0;
    for (size_t i = 1; i < scored.size(); ++i)
        if (scored[i].score > scored[best].score) best = i;
    if (audit) *audit = audit_of(category, scored[best].label, scored);
    return scored[best].label;
}

std::vector<std::string> predict_acd(const TemplateScorer& scorer, const TokenSeq& x,
                                     const std::string& text, const LabelSchema& schema,
                                     const Vocab& vocab, const std::string& variant,
                                     std::vector<Decision>* audit) {
    std::vector<std::string> out;
    for (const auto& category : schema.categories) {
        auto [pos, neg] = candidates_acd(category, schema, vocab, variant);
        const auto scored = score_candidates(scorer, x, text, {pos, neg});
        const bool present = scored[0].score > scored[1].score;
        if (present) out.push_back(category);
        if (audit) audit->push_back(audit_of(category, present ? "present" : "absent", scored));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> predict_joint(
    const TemplateScorer& scorer, const TokenSeq& x, const std::string& text,
    const LabelSchema& schema, const Vocab& vocab, const std::string& spec_id,
    std::vector<Decision>* audit) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& category : schema.categories) {
        const auto candidates = candidates_joint(category, schema, vocab, spec_id);
        const auto scored = score_candidates(scorer, x, text, candidates);
        // candidates are the polarities in schema order, then none last
        const size_t none_idx = scored.size() - 1;
        size_t best = 0;
        for (size_t i = 1; i < none_idx; ++i)
            if (scored[i].score > scored[best].score) best = i;
        const bool is_none = !(scored[best].score > scored[none_idx].score);
        if (!is_none) out.emplace_back(category, scored[best].label);
        if (audit)
            audit->push_back(
                audit_of(category, is_none ? schema.none_label : scored[best].label, scored));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> predict_pipeline(
    const TemplateScorer& acd_scorer, const TemplateScorer& acsa_scorer, const TokenSeq& x,
    const std::string& text, const LabelSchema& schema, const Vocab& vocab,
    const std::string& acd_variant, const std::string& acsa_spec) {
    std::vector<std::pair<std::string, std::string>> out;
    const auto detected = predict_acd(acd_scorer, x, text, schema, vocab, acd_variant);
    for (const auto& category : detected)
        out.emplace_back(category,
                         predict_acsa(acsa_scorer, x, text, category, schema, vocab, acsa_spec));
    return out;
}

void save_predictions_jsonl(const std::vector<Prediction>& preds,
                            const std::filesystem::path& path) {
    std::string out;
    for (const Prediction& p : preds) {
        json decisions = json::array();
        for (const Decision& d : p.decisions) {
            json scores = json::object();
            for (const auto& [label, score] : d.scores) scores[label] = score;
            decisions.push_back(
                {{"category", d.category}, {"label", d.label}, {"scores", scores}});
        }
        json j;
        j["id"] = p.id;
        j["decisions"] = decisions;
        out += j.dump();
        out.push_back('\n');
    }
    write_file_atomic(path, out);
}

}  // namespace temprank
