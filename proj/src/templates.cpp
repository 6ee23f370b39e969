#include "temprank/templates.hpp"

#include <stdexcept>

#include "json.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

const char* task_name(TemplateTask t) {
    switch (t) {
        case TemplateTask::Acsa: return "acsa";
        case TemplateTask::AcdPos: return "acd_pos";
        case TemplateTask::AcdNeg: return "acd_neg";
        case TemplateTask::Joint: return "joint";
    }
    return "?";
}

TemplateTask task_from_name(const std::string& s) {
    if (s == "acsa") return TemplateTask::Acsa;
    if (s == "acd_pos") return TemplateTask::AcdPos;
    if (s == "acd_neg") return TemplateTask::AcdNeg;
    if (s == "joint") return TemplateTask::Joint;
    throw std::runtime_error("unknown template task: " + s);
}

const TemplateSpec& TemplateRegistry::get(const std::string& id) const {
    for (const auto& s : specs)
        if (s.id == id) return s;
    throw std::runtime_error("template id not registered: " + id);
}

std::pair<const TemplateSpec*, const TemplateSpec*> TemplateRegistry::acd_pair(
    const std::string& variant) const {
    const TemplateSpec* pos = nullptr;
    const TemplateSpec* neg = nullptr;
    for (const auto& s : specs) {
        if (s.id == variant + "+") pos = &s;
        if (s.id == variant + "-") neg = &s;
    }
    if (pos == nullptr || neg == nullptr)
        throw std::runtime_error("incomplete acd template pair: " + variant);
    if (pos->task != TemplateTask::AcdPos || neg->task != TemplateTask::AcdNeg)
        throw std::runtime_error("acd pair '" + variant + "' has wrong task tags");
    return {pos, neg};
}

std::vector<std::string> TemplateRegistry::acsa_variants() const {
    std::vector<std::string> out;
    for (const auto& s : specs)
        if (s.task == TemplateTask::Acsa) out.push_back(s.id);
    return out;
}

std::vector<std::string> TemplateRegistry::acd_variants() const {
    std::vector<std::string> out;
    for (const auto& s : specs)
        if (s.task == TemplateTask::AcdPos && s.id.size() > 1)
            out.push_back(s.id.substr(0, s.id.size() - 1));
    return out;
}

void TemplateRegistry::save_json(const std::filesystem::path& path) const {
    json arr = json::array();
    for (const auto& s : specs)
        arr.push_back({{"id", s.id}, {"task", task_name(s.task)}, {"pattern", s.pattern}});
    json j;
    j["templates"] = arr;
    j["default_acsa"] = default_acsa;
    j["default_acd"] = default_acd;
    j["default_joint"] = default_joint;
    write_file_atomic(path, j.dump(2) + "\n");
}

namespace {

void validate_spec(const TemplateSpec& s) {
    const bool has_cat = s.pattern.find("{CATEGORY}") != std::string::npos;
    const bool has_pol = s.pattern.find("{POLARITY}") != std::string::npos;
    if (!has_cat) throw std::runtime_error("template '" + s.id + "': missing {CATEGORY} slot");
    const bool wants_pol = s.task == TemplateTask::Acsa || s.task == TemplateTask::Joint;
    if (wants_pol && !has_pol)
        throw std::runtime_error("template '" + s.id + "': missing {POLARITY} slot");
    if (!wants_pol && has_pol)
        throw std::runtime_error("template '" + s.id + "': unexpected {POLARITY} slot");
}

}  // namespace

TemplateRegistry TemplateRegistry::load_json(const std::filesystem::path& path) {
    const json j = json::parse(read_file(path));
    TemplateRegistry r;
    for (const json& tj : j.at("templates")) {
        TemplateSpec s;
        s.id = tj.at("id").get<std::string>();
        s.task = task_from_name(tj.at("task").get<std::string>());
        s.pattern = tj.at("pattern").get<std::string>();
        validate_spec(s);
        r.specs.push_back(std::move(s));
    }
    r.default_acsa = j.value("default_acsa", std::string());
    r.default_acd = j.value("default_acd", std::string());
    r.default_joint = j.value("default_joint", std::string());
    if (!r.default_acsa.empty()) r.get(r.default_acsa);
    if (!r.default_acd.empty()) r.acd_pair(r.default_acd);
    if (!r.default_joint.empty()) r.get(r.default_joint);
    return r;
}

TemplateRegistry TemplateRegistry::builtin() {
    TemplateRegistry r;
    r.specs = {
        {"acsa-polarity-of", TemplateTask::Acsa,
         "The sentiment polarity of {CATEGORY} is {POLARITY}"},
        {"acsa-sentiment-for", TemplateTask::Acsa, "The sentiment is {POLARITY} for {CATEGORY}"},
        {"acsa-has-label", TemplateTask::Acsa, "The {CATEGORY} category has a {POLARITY} label"},
        {"acd-discussed+", TemplateTask::AcdPos, "The {CATEGORY} category is discussed"},
        {"acd-discussed-", TemplateTask::AcdNeg, "The {CATEGORY} category is not discussed"},
        {"acd-sentence+", TemplateTask::AcdPos, "The sentence discusses the {CATEGORY} category"},
        {"acd-sentence-", TemplateTask::AcdNeg, "The sentence discusses no {CATEGORY} category"},
        {"acd-about+", TemplateTask::AcdPos, "It is about the {CATEGORY} category"},
        {"acd-about-", TemplateTask::AcdNeg, "It is not about the {CATEGORY} category"},
        {"joint-polarity-of", TemplateTask::Joint,
         "The sentiment polarity of {CATEGORY} is {POLARITY}"},
    };
    r.default_acsa = "acsa-polarity-of";
    r.default_acd = "acd-discussed";
    r.default_joint = "joint-polarity-of";
    return r;
}

namespace {

std::string substitute(const std::string& pattern, const char* slot, const std::string& value) {
    std::string out = pattern;
    size_t pos;
    while ((pos = out.find(slot)) != std::string::npos)
        out.replace(pos, std::string(slot).size(), value);
    return out;
}

const TemplateRegistry& registry_of(const LabelSchema& schema) {
    if (!schema.templates) throw std::runtime_error("schema has no template registry");
    return *schema.templates;
}

}  // namespace

FilledTemplate fill(const TemplateSpec& spec, const std::string& category,
                    const std::string& label, const Vocab& vocab) {
    const bool wants_pol = spec.task == TemplateTask::Acsa || spec.task == TemplateTask::Joint;
    if (wants_pol && label.empty())
        throw std::runtime_error("fill('" + spec.id + "'): missing polarity value");
    if (!wants_pol && !label.empty())
        throw std::runtime_error("fill('" + spec.id + "'): extra slot value '" + label + "'");
    if (category.empty()) throw std::runtime_error("fill('" + spec.id + "'): empty category");

    FilledTemplate out;
    out.spec_id = spec.id;
    out.category = category;
    out.text = substitute(spec.pattern, "{CATEGORY}", category);
    if (wants_pol) {
        out.text = substitute(out.text, "{POLARITY}", label);
        out.label = label;
    } else {
        out.label = spec.task == TemplateTask::AcdPos ? "present" : "absent";
    }
    out.tokens = encode_text(out.text, vocab);
    out.tokens.push_back(Vocab::kEos);
    return out;
}

std::vector<FilledTemplate> candidates_acsa(const std::string& category, const LabelSchema& schema,
                                            const Vocab& vocab, const std::string& spec_id) {
    if (schema.category_index(category) < 0)
        throw std::runtime_error("candidates_acsa: unknown category '" + category + "'");
    const auto& reg = registry_of(schema);
    const TemplateSpec& spec = reg.get(spec_id.empty() ? reg.default_acsa : spec_id);
    std::vector<FilledTemplate> out;
    out.reserve(schema.polarities.size());
    for (const auto& pol : schema.polarities) out.push_back(fill(spec, category, pol, vocab));
    return out;
}

std::pair<FilledTemplate, FilledTemplate> candidates_acd(const std::string& category,
                                                         const LabelSchema& schema,
                                                         const Vocab& vocab,
                                                         const std::string& variant) {
    if (schema.category_index(category) < 0)
        throw std::runtime_error("candidates_acd: unknown category '" + category + "'");
    const auto& reg = registry_of(schema);
    auto [pos, neg] = reg.acd_pair(variant.empty() ? reg.default_acd : variant);
    return {fill(*pos, category, "", vocab), fill(*neg, category, "", vocab)};
}

std::vector<FilledTemplate> candidates_joint(const std::string& category, const LabelSchema& schema,
                                             const Vocab& vocab, const std::string& spec_id) {
    if (schema.category_index(category) < 0)
        throw std::runtime_error("candidates_joint: unknown category '" + category + "'");
    if (schema.polarities.empty()) throw std::runtime_error("candidates_joint: empty polarity set");
    const auto& reg = registry_of(schema);
    const TemplateSpec& spec = reg.get(spec_id.empty() ? reg.default_joint : spec_id);
    std::vector<FilledTemplate> out;
    out.reserve(schema.polarities.size() + 1);
    for (const auto& pol : schema.polarities) out.push_back(fill(spec, category, pol, vocab));
    out.push_back(fill(spec, category, schema.none_label, vocab));
    return out;
}

}  // namespace temprank
