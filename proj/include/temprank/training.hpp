#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "temprank/inference.hpp"
#include "temprank/model.hpp"
#include "temprank/templates.hpp"

namespace temprank {

enum class TaskMode { Acsa, Acd, Joint, Pipeline };
const char* task_mode_name(TaskMode m);
TaskMode task_mode_from_name(const std::string& s);

struct TrainPair {
    TokenSeq source;
    FilledTemplate target;
    TaskMode task = TaskMode::Acsa;
};

struct TrainConfig {
    int max_epochs = 30;
    int patience = 5;  // early stop when the dev metric stalls this many epochs
    double learning_rate = 3e-4;
    int batch_size = 16;
    uint64_t seed = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string selection_metric = "auto";  // accuracy | f1 | auto (by task)
    // 1.0 takes the full complement of absent categories as ACD negatives;
    // lower values subsample them (non-default escape hatch for large |C|).
    double acd_negative_ratio = 1.0;

    void validate() const;
    std::string to_json_text() const;
    static TrainConfig from_json_text(const std::string& text);
};

struct EpochStat {
    int epoch = 0;
    double train_loss = 0.0;  // mean per pair
    double dev_metric = 0.0;
};

struct TrainHistory {
    std::vector<EpochStat> epochs;
    int best_epoch = 0;
    double best_metric = 0.0;
    std::string metric_name;
    bool diverged = false;
};

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path,
                      uint64_t fingerprint);

// acsa: one pair per gold label; acd: T+ per gold category plus T- for every
// absent schema category; joint: one pair per schema category (gold polarity
// or the none template).
std::vector<TrainPair> build_pairs(const DatasetSplit& split, const LabelSchema& schema,
                                   const Vocab& vocab, TaskMode mode,
                                   const std::string& template_id = "",
                                   const TrainConfig* cfg = nullptr);

// One optimization objective the shared loop can drive.
template <class T>
class TrainTask {
  public:
    virtual ~TrainTask() = default;
    virtual size_t size() const = 0;
    // group_grads is parallel to param_groups()
    virtual T batch_loss_grad(const std::vector<size_t>& indices,
                              std::vector<ParamStore<T>>& group_grads, uint64_t dropout_seed) = 0;
    virtual double dev_metric() const = 0;
    virtual const char* metric_name() const = 0;
    // every parameter the optimizer owns (backbone, and heads when present)
    virtual std::vector<ParamStore<T>*> param_groups() = 0;
};

// Adam + per-epoch reshuffle + best-on-dev snapshot + patience early stop.
template <class T>
TrainHistory train_loop(TrainTask<T>& task, const TrainConfig& cfg);

// Generation objective over (X, T) pairs; dev metric is task-dependent
// (acsa: accuracy; acd/joint: micro-F1).
template <class T>
class GenerationTask : public TrainTask<T> {
  public:
    GenerationTask(Seq2SeqModel<T>& model, std::vector<TrainPair> pairs, const DatasetSplit& dev,
                   const LabelSchema& schema, const Vocab& vocab, TaskMode mode,
                   std::string template_id = "");

    size_t size() const override { return pairs_.size(); }
    T batch_loss_grad(const std::vector<size_t>& indices, std::vector<ParamStore<T>>& group_grads,
                      uint64_t dropout_seed) override;
    double dev_metric() const override;
    const char* metric_name() const override;
    std::vector<ParamStore<T>*> param_groups() override { return {&model_.params}; }

  private:
    Seq2SeqModel<T>& model_;
    std::vector<TrainPair> pairs_;
    const DatasetSplit& dev_;
    const LabelSchema& schema_;
    const Vocab& vocab_;
    TaskMode mode_;
    std::string template_id_;
};

// Dev-set metrics shared by training and the harness.
double eval_acsa_accuracy(const Seq2SeqModel<float>& model, const DatasetSplit& split,
                          const LabelSchema& schema, const Vocab& vocab,
                          const std::string& spec_id = "");
template <class T>
double generation_dev_metric(const Seq2SeqModel<T>& model, const DatasetSplit& split,
                             const LabelSchema& schema, const Vocab& vocab, TaskMode mode,
                             const std::string& template_id);

// Convenience wrapper: train the generation model in place (params end up at
// the best dev epoch) and return the history.
template <class T>
TrainHistory train_generation(Seq2SeqModel<T>& model, std::vector<TrainPair> pairs,
                              const DatasetSplit& dev, const LabelSchema& schema,
                              const Vocab& vocab, TaskMode mode, const TrainConfig& cfg,
                              const std::string& template_id = "");

}  // namespace temprank
