#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "temprank/corpus.hpp"
#include "temprank/text.hpp"

namespace temprank {

enum class TemplateTask { Acsa, AcdPos, AcdNeg, Joint };

const char* task_name(TemplateTask t);
TemplateTask task_from_name(const std::string& s);

// Patterns hold {CATEGORY} and, for acsa/joint, {POLARITY}.
struct TemplateSpec {
    std::string id;
    TemplateTask task = TemplateTask::Acsa;
    std::string pattern;
};

// A concrete target token sequence produced by slot filling; tokens always
// end with EOS and are what Eq-style scoring consumes.
struct FilledTemplate {
    std::string spec_id;
    std::string category;
    std::string label;  // polarity, none_label, "present" or "absent"
    std::string text;
    TokenSeq tokens;
};

struct TemplateRegistry {
    std::vector<TemplateSpec> specs;
    std::string default_acsa;
    std::string default_acd;    // variant key: specs "<key>+" and "<key>-"
    std::string default_joint;

    const TemplateSpec& get(const std::string& id) const;
    std::pair<const TemplateSpec*, const TemplateSpec*> acd_pair(const std::string& variant) const;
    std::vector<std::string> acsa_variants() const;
    std::vector<std::string> acd_variants() const;

    void save_json(const std::filesystem::path& path) const;
    static TemplateRegistry load_json(const std::filesystem::path& path);

    // The built-in registry: three ACSA variants, three ACD pairs and the
    // joint extension of the best ACSA pattern.
    static TemplateRegistry builtin();
};

FilledTemplate fill(const TemplateSpec& spec, const std::string& category,
                    const std::string& label, const Vocab& vocab);

// One candidate per polarity, in schema order.
std::vector<FilledTemplate> candidates_acsa(const std::string& category, const LabelSchema& schema,
                                            const Vocab& vocab, const std::string& spec_id = "");

// (T+, T-) for the given category.
std::pair<FilledTemplate, FilledTemplate> candidates_acd(const std::string& category,
                                                         const LabelSchema& schema,
                                                         const Vocab& vocab,
                                                         const std::string& variant = "");

// |L| polarity candidates plus the none candidate, none last.
std::vector<FilledTemplate> candidates_joint(const std::string& category, const LabelSchema& schema,
                                             const Vocab& vocab, const std::string& spec_id = "");

}  // namespace temprank
