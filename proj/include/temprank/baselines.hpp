#pragma once

#include <string>
#include <vector>

#include "temprank/model.hpp"
#include "temprank/templates.hpp"
#include "temprank/training.hpp"

namespace temprank {

struct HeadIdx {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

// Two-layer perceptron over the final decoder hidden state.
template <class T>
struct ClassifierHead {
    ParamStore<T> params;
    HeadIdx idx;
    int in_dim = 0;
    int out_dim = 0;
    bool trained = false;

    static ClassifierHead make(int in_dim, int out_dim);
    void init(uint64_t seed);
};

// <s> X </s> category </s>, with SEP as the boundary token.
TokenSeq classification_input(const TokenSeq& x, const std::string& category, const Vocab& vocab);

template <class T>
std::vector<T> classify_logits(const Seq2SeqModel<T>& model, const ClassifierHead<T>& head,
                               const TokenSeq& input);

// Argmax over polarities with schema-order tie-break.
template <class T>
std::string classify(const Seq2SeqModel<T>& model, const ClassifierHead<T>& head,
                     const TokenSeq& x, const std::string& category, const LabelSchema& schema,
                     const Vocab& vocab);

// Template with the polarity slot replaced by a single MASK.
struct PromptSpec {
    std::string spec_id;
    std::string pattern;  // contains {CATEGORY} and exactly one {MASK}
};

PromptSpec prompt_from_acsa(const TemplateSpec& spec);

// X concatenated with the filled prompt; returns the MASK position.
TokenSeq mlm_input(const TokenSeq& x, const PromptSpec& prompt, const std::string& category,
                   const Vocab& vocab, int* mask_pos);

// Ids of the polarity label words; every label must be a single known token.
std::vector<TokenId> label_word_ids(const LabelSchema& schema, const Vocab& vocab);

// Decoder distribution at the MASK position, argmax restricted to the label
// words, schema-order tie-break.
template <class T>
std::string mlm_predict(const Seq2SeqModel<T>& model, const TokenSeq& x, const PromptSpec& prompt,
                        const std::string& category, const LabelSchema& schema,
                        const Vocab& vocab);

// -------------------------------------------------- baseline training tasks

template <class T>
class ClassificationTask : public TrainTask<T> {
  public:
    // task_mode acsa: one item per gold label, classes are the polarities;
    // acd: one item per (example, schema category), classes absent/present.
    ClassificationTask(Seq2SeqModel<T>& model, ClassifierHead<T>& head, const DatasetSplit& train,
                       const DatasetSplit& dev, const LabelSchema& schema, const Vocab& vocab,
                       TaskMode mode);

    size_t size() const override { return items_.size(); }
    T batch_loss_grad(const std::vector<size_t>& indices, std::vector<ParamStore<T>>& group_grads,
                      uint64_t dropout_seed) override;
    double dev_metric() const override;
    const char* metric_name() const override;
    std::vector<ParamStore<T>*> param_groups() override { return {&model_.params, &head_.params}; }

  private:
    struct Item {
        TokenSeq input;
        int cls = 0;
    };
    Seq2SeqModel<T>& model_;
    ClassifierHead<T>& head_;
    const DatasetSplit& dev_;
    const LabelSchema& schema_;
    const Vocab& vocab_;
    TaskMode mode_;
    std::vector<Item> items_;

    T item_loss_grad(const Item& item, ParamStore<T>& model_grads, ParamStore<T>& head_grads,
                     Rng* rng) const;
};

template <class T>
class MlmTask : public TrainTask<T> {
  public:
    MlmTask(Seq2SeqModel<T>& model, const DatasetSplit& train, const DatasetSplit& dev,
            const LabelSchema& schema, const Vocab& vocab, PromptSpec prompt);

    size_t size() const override { return items_.size(); }
    T batch_loss_grad(const std::vector<size_t>& indices, std::vector<ParamStore<T>>& group_grads,
                      uint64_t dropout_seed) override;
    double dev_metric() const override;
    const char* metric_name() const override { return "dev_accuracy"; }
    std::vector<ParamStore<T>*> param_groups() override { return {&model_.params}; }

  private:
    struct Item {
        TokenSeq input;
        int mask_pos = 0;
        int gold = 0;  // index into the label word list
    };
    Seq2SeqModel<T>& model_;
    const DatasetSplit& dev_;
    const LabelSchema& schema_;
    const Vocab& vocab_;
    PromptSpec prompt_;
    std::vector<TokenId> label_ids_;
    std::vector<Item> items_;

    T item_loss_grad(const Item& item, ParamStore<T>& model_grads, Rng* rng) const;
};

}  // namespace temprank
