#include "temprank/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "temprank/eval.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

const char* task_mode_name(TaskMode m) {
    switch (m) {
        case TaskMode::Acsa: return "acsa";
        case TaskMode::Acd: return "acd";
        case TaskMode::Joint: return "joint";
        case TaskMode::Pipeline: return "pipeline";
    }
    return "?";
}

TaskMode task_mode_from_name(const std::string& s) {
    if (s == "acsa") return TaskMode::Acsa;
    if (s == "acd") return TaskMode::Acd;
    if (s == "joint") return TaskMode::Joint;
    if (s == "pipeline") return TaskMode::Pipeline;
    throw std::runtime_error("unknown task: " + s);
}

void TrainConfig::validate() const {
    if (max_epochs < 1) throw std::runtime_error("train config: max_epochs must be >= 1");
    if (patience < 1 || patience > max_epochs)
        throw std::runtime_error("train config: patience must be in [1, max_epochs]");
    if (learning_rate <= 0.0) throw std::runtime_error("train config: learning rate must be > 0");
    if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
    if (acd_negative_ratio <= 0.0 || acd_negative_ratio > 1.0)
        throw std::runtime_error("train config: acd_negative_ratio must be in (0, 1]");
}

std::string TrainConfig::to_json_text() const {
    json j;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["selection_metric"] = selection_metric;
    j["acd_negative_ratio"] = acd_negative_ratio;
    return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    TrainConfig c;
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.selection_metric = j.value("selection_metric", c.selection_metric);
    c.acd_negative_ratio = j.value("acd_negative_ratio", c.acd_negative_ratio);
    c.validate();
    return c;
}

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path,
                      uint64_t fingerprint) {
    std::string out = "epoch,train_loss,dev_metric,metric_name,fingerprint\n";
    for (const EpochStat& e : history.epochs) {
        out += std::to_string(e.epoch) + "," + format_metric(e.train_loss) + "," +
               format_metric(e.dev_metric) + "," + history.metric_name + "," +
               fingerprint_hex(fingerprint) + "\n";
    }
    write_file_atomic(path, out);
}

std::vector<TrainPair> build_pairs(const DatasetSplit& split, const LabelSchema& schema,
                                   const Vocab& vocab, TaskMode mode,
                                   const std::string& template_id, const TrainConfig* cfg) {
    if (mode == TaskMode::Pipeline)
        throw std::runtime_error("build_pairs: pipeline has no pairs of its own; "
                                 "train acd and acsa models separately");
    const TemplateRegistry& reg = *schema.templates;
    std::vector<TrainPair> out;
    const double neg_ratio = cfg ? cfg->acd_negative_ratio : 1.0;
    const uint64_t neg_seed = cfg ? cfg->seed : 0;

    for (size_t ei = 0; ei < split.examples.size(); ++ei) {
        const Example& ex = split.examples[ei];
        const TokenSeq src = encode_text(ex.text, vocab);
        std::set<std::string> present;
        for (const AspectLabel& lab : ex.labels) present.insert(lab.category);

        if (mode == TaskMode::Acsa) {
            const TemplateSpec& spec =
                reg.get(template_id.empty() ? reg.default_acsa : template_id);
            for (const AspectLabel& lab : ex.labels) {
                TrainPair p;
                p.source = src;
                p.target = fill(spec, lab.category, lab.polarity, vocab);
                p.task = mode;
                out.push_back(std::move(p));
            }
        } else if (mode == TaskMode::Acd) {
            auto [pos, neg] = reg.acd_pair(template_id.empty() ? reg.default_acd : template_id);
            for (const AspectLabel& lab : ex.labels) {
                TrainPair p;
                p.source = src;
                p.target = fill(*pos, lab.category, "", vocab);
                p.task = mode;
                out.push_back(std::move(p));
            }
            std::vector<std::string> absent;
            for (const auto& cat : schema.categories)
                if (!present.count(cat)) absent.push_back(cat);
            if (neg_ratio < 1.0 && absent.size() > 1) {
                Rng rng(mix64(neg_seed, ei));
                std::shuffle(absent.begin(), absent.end(), rng);
                const size_t keep = std::max<size_t>(
                    1, static_cast<size_t>(std::ceil(neg_ratio * absent.size())));
                absent.resize(keep);
            }
            for (const auto& cat : absent) {
                TrainPair p;
                p.source = src;
                p.target = fill(*neg, cat, "", vocab);
                p.task = mode;
                out.push_back(std::move(p));
            }
        } else {  // Joint
            const TemplateSpec& spec =
                reg.get(template_id.empty() ? reg.default_joint : template_id);
            for (const auto& cat : schema.categories) {
                std::string label = schema.none_label;
                for (const AspectLabel& lab : ex.labels)
                    if (lab.category == cat) label = lab.polarity;
                TrainPair p;
                p.source = src;
                p.target = fill(spec, cat, label, vocab);
                p.task = mode;
                out.push_back(std::move(p));
            }
        }
    }
    return out;
}

// ------------------------------------------------------------------ trainer

template <class T>
TrainHistory train_loop(TrainTask<T>& task, const TrainConfig& cfg) {
    cfg.validate();
    const size_t n = task.size();
    if (n == 0) throw std::runtime_error("train: no training items");

    auto groups = task.param_groups();
    struct AdamState {
        std::vector<double> m, v;
    };
    std::vector<AdamState> adam(groups.size());
    std::vector<std::vector<T>> best(groups.size());
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        adam[gi].m.assign(groups[gi]->flat.size(), 0.0);
        adam[gi].v.assign(groups[gi]->flat.size(), 0.0);
        best[gi] = groups[gi]->flat;
    }
    std::vector<ParamStore<T>> grads;
    for (auto* g : groups) grads.push_back(g->like_zeros());

    TrainHistory hist;
    hist.metric_name = task.metric_name();
    double best_metric = -std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    long long adam_t = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        Rng shuffle_rng(mix64(cfg.seed, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        bool diverged = false;
        for (size_t start = 0; start < n && !diverged; start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(n, start + static_cast<size_t>(cfg.batch_size));
            std::vector<size_t> idx(order.begin() + static_cast<long>(start),
                                    order.begin() + static_cast<long>(end));
            for (auto& g : grads) g.zero();
            const uint64_t drop_seed = mix64(cfg.seed, (static_cast<uint64_t>(epoch) << 32) | start);
            T loss;
            try {
                loss = task.batch_loss_grad(idx, grads, drop_seed);
            } catch (const std::exception& e) {
                if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
                diverged = true;
                break;
            }
            epoch_loss += static_cast<double>(loss);

            ++adam_t;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));
            for (size_t gi = 0; gi < groups.size(); ++gi) {
                auto& flat = groups[gi]->flat;
                auto& m = adam[gi].m;
                auto& v = adam[gi].v;
                const auto& g = grads[gi].flat;
                for (size_t j = 0; j < flat.size(); ++j) {
                    const double gj = static_cast<double>(g[j]);
                    m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * gj;
                    v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * gj * gj;
                    const double update =
                        cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
                    flat[j] = static_cast<T>(static_cast<double>(flat[j]) - update);
                }
            }
        }
        if (diverged) {
            hist.diverged = true;
            break;
        }

        EpochStat stat;
        stat.epoch = epoch;
        stat.train_loss = epoch_loss / static_cast<double>(n);
        stat.dev_metric = task.dev_metric();
        hist.epochs.push_back(stat);

        if (stat.dev_metric > best_metric) {
            best_metric = stat.dev_metric;
            best_epoch = epoch;
            for (size_t gi = 0; gi < groups.size(); ++gi) best[gi] = groups[gi]->flat;
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }

    for (size_t gi = 0; gi < groups.size(); ++gi) groups[gi]->flat = best[gi];
    hist.best_epoch = best_epoch;
    hist.best_metric = best_metric == -std::numeric_limits<double>::infinity() ? 0.0 : best_metric;
    return hist;
}

// -------------------------------------------------------- generation task

template <class T>
GenerationTask<T>::GenerationTask(Seq2SeqModel<T>& model, std::vector<TrainPair> pairs,
                                  const DatasetSplit& dev, const LabelSchema& schema,
                                  const Vocab& vocab, TaskMode mode, std::string template_id)
    : model_(model),
      pairs_(std::move(pairs)),
      dev_(dev),
      schema_(schema),
      vocab_(vocab),
      mode_(mode),
      template_id_(std::move(template_id)) {}

template <class T>
T GenerationTask<T>::batch_loss_grad(const std::vector<size_t>& indices,
                                     std::vector<ParamStore<T>>& grads, uint64_t dropout_seed) {
    std::vector<IdPair> batch;
    batch.reserve(indices.size());
    for (size_t i : indices) batch.push_back({&pairs_[i].source, &pairs_[i].target.tokens});
    return model_.loss_and_grad(batch, grads[0], true, dropout_seed);
}

template <class T>
double GenerationTask<T>::dev_metric() const {
    return generation_dev_metric(model_, dev_, schema_, vocab_, mode_, template_id_);
}

template <class T>
const char* GenerationTask<T>::metric_name() const {
    return mode_ == TaskMode::Acsa ? "dev_accuracy" : "dev_micro_f1";
}

template <class T>
double generation_dev_metric(const Seq2SeqModel<T>& model, const DatasetSplit& split,
                             const LabelSchema& schema, const Vocab& vocab, TaskMode mode,
                             const std::string& template_id) {
    LocalScorer<T> scorer(model);
    const int n = static_cast<int>(split.examples.size());
    if (n == 0) throw std::runtime_error("dev metric: empty split");

    std::vector<TokenSeq> ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        ids[static_cast<size_t>(i)] = encode_text(split.examples[static_cast<size_t>(i)].text, vocab);

    if (mode == TaskMode::Acsa) {
        struct Inst {
            int example;
            const std::string* category;
            const std::string* gold;
        };
        std::vector<Inst> insts;
        for (int i = 0; i < n; ++i)
            for (const AspectLabel& lab : split.examples[static_cast<size_t>(i)].labels)
                insts.push_back({i, &lab.category, &lab.polarity});
        std::vector<char> correct(insts.size(), 0);
#pragma omp parallel for schedule(dynamic)
        for (int k = 0; k < static_cast<int>(insts.size()); ++k) {
            const Inst& inst = insts[static_cast<size_t>(k)];
            const Example& ex = split.examples[static_cast<size_t>(inst.example)];
            const std::string pred =
                predict_acsa(scorer, ids[static_cast<size_t>(inst.example)], ex.text,
                             *inst.category, schema, vocab, template_id);
            correct[static_cast<size_t>(k)] = pred == *inst.gold ? 1 : 0;
        }
        size_t good = 0;
        for (char c : correct) good += static_cast<size_t>(c);
        return insts.empty() ? 0.0 : static_cast<double>(good) / static_cast<double>(insts.size());
    }

    std::vector<std::set<std::string>> pred_sets(static_cast<size_t>(n));
    std::vector<std::set<std::string>> gold_sets(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const Example& ex = split.examples[static_cast<size_t>(i)];
        std::set<std::string>& pred = pred_sets[static_cast<size_t>(i)];
        std::set<std::string>& gold = gold_sets[static_cast<size_t>(i)];
        if (mode == TaskMode::Acd) {
            for (const auto& cat :
                 predict_acd(scorer, ids[static_cast<size_t>(i)], ex.text, schema, vocab, template_id))
                pred.insert(cat);
            for (const AspectLabel& lab : ex.labels) gold.insert(lab.category);
        } else {
            for (const auto& [cat, pol] : predict_joint(scorer, ids[static_cast<size_t>(i)],
                                                        ex.text, schema, vocab, template_id))
                pred.insert(cat + "\t" + pol);
            for (const AspectLabel& lab : ex.labels) gold.insert(lab.category + "\t" + lab.polarity);
        }
    }
    return micro_prf(pred_sets, gold_sets).f1;
}

double eval_acsa_accuracy(const Seq2SeqModel<float>& model, const DatasetSplit& split,
                          const LabelSchema& schema, const Vocab& vocab,
                          const std::string& spec_id) {
    return generation_dev_metric(model, split, schema, vocab, TaskMode::Acsa, spec_id);
}

template <class T>
TrainHistory train_generation(Seq2SeqModel<T>& model, std::vector<TrainPair> pairs,
                              const DatasetSplit& dev, const LabelSchema& schema,
                              const Vocab& vocab, TaskMode mode, const TrainConfig& cfg,
                              const std::string& template_id) {
    GenerationTask<T> task(model, std::move(pairs), dev, schema, vocab, mode, template_id);
    return train_loop(task, cfg);
}

template class GenerationTask<float>;
template class GenerationTask<double>;
template TrainHistory train_loop<float>(TrainTask<float>&, const TrainConfig&);
template TrainHistory train_loop<double>(TrainTask<double>&, const TrainConfig&);
template double generation_dev_metric<float>(const Seq2SeqModel<float>&, const DatasetSplit&,
                                             const LabelSchema&, const Vocab&, TaskMode,
                                             const std::string&);
template double generation_dev_metric<double>(const Seq2SeqModel<double>&, const DatasetSplit&,
                                              const LabelSchema&, const Vocab&, TaskMode,
                                              const std::string&);
template TrainHistory train_generation<float>(Seq2SeqModel<float>&, std::vector<TrainPair>,
                                              const DatasetSplit&, const LabelSchema&,
                                              const Vocab&, TaskMode, const TrainConfig&,
                                              const std::string&);
template TrainHistory train_generation<double>(Seq2SeqModel<double>&, std::vector<TrainPair>,
                                               const DatasetSplit&, const LabelSchema&,
                                               const Vocab&, TaskMode, const TrainConfig&,
                                               const std::string&);

}  // namespace temprank
