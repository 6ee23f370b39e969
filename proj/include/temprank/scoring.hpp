#pragma once

#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "temprank/model.hpp"
#include "temprank/templates.hpp"

namespace temprank {

struct ScoredCandidate {
    std::string category;
    std::string label;
    std::string spec_id;
    double score = 0.0;  // summed log-probability, nats
};

// Behavioral contract: deterministic for fixed state, f <= 0, safe for
// concurrent read-only use.
class TemplateScorer {
  public:
    virtual ~TemplateScorer() = default;
    virtual double score(const TokenSeq& source_ids, const std::string& source_text,
                         const FilledTemplate& target) const = 0;
};

template <class T>
class LocalScorer : public TemplateScorer {
  public:
    explicit LocalScorer(const Seq2SeqModel<T>& model) : model_(model) {}
    double score(const TokenSeq& source_ids, const std::string& source_text,
                 const FilledTemplate& target) const override {
        (void)source_text;
        return model_.sequence_logprob(source_ids, target.tokens);
    }

  private:
    const Seq2SeqModel<T>& model_;
};

struct ScoreOptions {
    // Raw sum by default. Length normalization is a deliberately non-default
    // mode for schemas whose competing candidates differ in length.
    bool length_normalize = false;
};

double score_target(const TemplateScorer& scorer, const TokenSeq& source_ids,
                    const std::string& source_text, const FilledTemplate& target,
                    const ScoreOptions& opts = {});

std::vector<ScoredCandidate> score_candidates(const TemplateScorer& scorer,
                                              const TokenSeq& source_ids,
                                              const std::string& source_text,
                                              const std::vector<FilledTemplate>& candidates,
                                              const ScoreOptions& opts = {});

// Newline-delimited JSON over a child process's stdin/stdout.
// Request:  {"id": int, "source": str, "target": str}
// Response: {"id": int, "logprob": float} or {"id": int, "error": str}
struct ExternalScorerConfig {
    std::vector<std::string> command;
    double timeout_sec = 10.0;
    int max_restarts = 1;
};

class ExternalScorer : public TemplateScorer {
  public:
    explicit ExternalScorer(ExternalScorerConfig config);
    ~ExternalScorer() override;
    ExternalScorer(const ExternalScorer&) = delete;
    ExternalScorer& operator=(const ExternalScorer&) = delete;

    double score(const TokenSeq& source_ids, const std::string& source_text,
                 const FilledTemplate& target) const override;

  private:
    ExternalScorerConfig cfg_;
    mutable std::mutex mu_;
    mutable int pid_ = -1;
    mutable int write_fd_ = -1;
    mutable int read_fd_ = -1;
    mutable std::string read_buf_;
    mutable long long next_id_ = 0;
    mutable int restarts_used_ = 0;

    void spawn() const;
    void shutdown() const;
    std::string roundtrip_line(const std::string& line) const;
};

// Serves the bridge protocol over the given streams with a local model;
// the CLI exposes this as the serve-scorer subcommand.
int run_scorer_server(const Checkpoint<float>& ck, std::istream& in, std::ostream& out);

}  // namespace temprank
