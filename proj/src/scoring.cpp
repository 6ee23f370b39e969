#include "temprank/scoring.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

double score_target(const TemplateScorer& scorer, const TokenSeq& source_ids,
                    const std::string& source_text, const FilledTemplate& target,
                    const ScoreOptions& opts) {
    if (target.tokens.empty()) throw std::runtime_error("score_target: empty target");
    double f;
    try {
        f = scorer.score(source_ids, source_text, target);
    } catch (const std::exception& e) {
        throw std::runtime_error("score_target('" + target.text + "'): " + e.what());
    }
    if (!std::isfinite(f)) throw std::runtime_error("score_target: non-finite score");
    if (f > 1e-9) throw std::runtime_error("score_target: positive log-probability " +
                                           std::to_string(f));
    if (f > 0.0) f = 0.0;
    if (opts.length_normalize) f /= static_cast<double>(target.tokens.size());
    return f;
}

std::vector<ScoredCandidate> score_candidates(const TemplateScorer& scorer,
                                              const TokenSeq& source_ids,
                                              const std::string& source_text,
                                              const std::vector<FilledTemplate>& candidates,
                                              const ScoreOptions& opts) {
    if (candidates.empty()) throw std::runtime_error("score_candidates: empty candidate list");
    const int n = static_cast<int>(candidates.size());
    std::vector<ScoredCandidate> out(static_cast<size_t>(n));
    std::string error;
    int error_index = n;
#pragma omp parallel for schedule(dynamic) if (n > 1)
    for (int i = 0; i < n; ++i) {
        const FilledTemplate& cand = candidates[static_cast<size_t>(i)];
        try {
            ScoredCandidate sc;
            sc.category = cand.category;
            sc.label = cand.label;
            sc.spec_id = cand.spec_id;
            sc.score = score_target(scorer, source_ids, source_text, cand, opts);
            out[static_cast<size_t>(i)] = std::move(sc);
        } catch (const std::exception& e) {
#pragma omp critical
            if (i < error_index) {
                error_index = i;
                error = e.what();
            }
        }
    }
    if (error_index < n)
        throw std::runtime_error("candidate #" + std::to_string(error_index) + ": " + error);
    return out;
}

// ----------------------------------------------------------- external bridge

ExternalScorer::ExternalScorer(ExternalScorerConfig config) : cfg_(std::move(config)) {
    if (cfg_.command.empty()) throw std::runtime_error("external scorer: empty command");
    signal(SIGPIPE, SIG_IGN);
}

ExternalScorer::~ExternalScorer() { shutdown(); }

void ExternalScorer::spawn() const {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
        throw std::runtime_error("external scorer: pipe() failed");
    const int pid = fork();
    if (pid < 0) throw std::runtime_error("external scorer: fork() failed");
    if (pid == 0) {
        dup2(to_child[0], STDIN_FILENO);
        dup2(from_child[1], STDOUT_FILENO);
        close(to_child[0]);
        close(to_child[1]);
        close(from_child[0]);
        close(from_child[1]);
        std::vector<char*> argv;
        for (const auto& a : cfg_.command) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        execvp(argv[0], argv.data());
        _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    pid_ = pid;
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    read_buf_.clear();
}

void ExternalScorer::shutdown() const {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
        kill(pid_, SIGKILL);
        int status = 0;
        waitpid(pid_, &status, 0);
    }
    pid_ = -1;
    write_fd_ = read_fd_ = -1;
    read_buf_.clear();
}

std::string ExternalScorer::roundtrip_line(const std::string& line) const {
    size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = write(write_fd_, line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("write to scorer process failed: " +
                                     std::string(std::strerror(errno)));
        }
        written += static_cast<size_t>(n);
    }
    while (true) {
        const size_t nl = read_buf_.find('\n');
        if (nl != std::string::npos) {
            std::string out = read_buf_.substr(0, nl);
            read_buf_.erase(0, nl + 1);
            return out;
        }
        struct pollfd pfd {};
        pfd.fd = read_fd_;
        pfd.events = POLLIN;
        const int pr = poll(&pfd, 1, static_cast<int>(cfg_.timeout_sec * 1000.0));
        if (pr == 0) throw std::runtime_error("scorer process timed out");
        if (pr < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("poll on scorer process failed");
        }
        char buf[4096];
        const ssize_t n = read(read_fd_, buf, sizeof(buf));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("read from scorer process failed");
        }
        if (n == 0) throw std::runtime_error("scorer process closed its output");
        read_buf_.append(buf, static_cast<size_t>(n));
    }
}

double ExternalScorer::score(const TokenSeq& source_ids, const std::string& source_text,
                             const FilledTemplate& target) const {
    (void)source_ids;
    std::lock_guard<std::mutex> lock(mu_);
    std::string last_error;
    for (int attempt = 0;; ++attempt) {
        if (pid_ < 0) spawn();
        const long long id = next_id_++;
        json req;
        req["id"] = id;
        req["source"] = source_text;
        req["target"] = target.text;
        try {
            const std::string resp_line = roundtrip_line(req.dump() + "\n");
            json resp;
            try {
                resp = json::parse(resp_line);
            } catch (const json::exception& e) {
                throw std::runtime_error("bad scorer response: " + std::string(e.what()));
            }
            if (resp.contains("error"))
                throw std::runtime_error("scorer error: " + resp.at("error").get<std::string>());
            if (!resp.contains("id") || resp.at("id").get<long long>() != id)
                throw std::runtime_error("scorer response id mismatch");
            if (!resp.contains("logprob")) throw std::runtime_error("scorer response missing logprob");
            return resp.at("logprob").get<double>();
        } catch (const std::exception& e) {
            last_error = e.what();
            shutdown();
            if (attempt >= cfg_.max_restarts)
                throw std::runtime_error("external scorer failed after " +
                                         std::to_string(attempt + 1) + " attempt(s): " +
                                         last_error);
        }
    }
}

// ------------------------------------------------------------------ server

int run_scorer_server(const Checkpoint<float>& ck, std::istream& in, std::ostream& out) {
    Seq2SeqModel<float> model(ck.config);
    model.params = ck.params;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json resp;
        long long id = -1;
        try {
            const json req = json::parse(line);
            id = req.at("id").get<long long>();
            const std::string source = req.at("source").get<std::string>();
            const std::string target = req.at("target").get<std::string>();
            TokenSeq src = encode_text(source, ck.vocab);
            TokenSeq tgt = encode_text(target, ck.vocab);
            tgt.push_back(Vocab::kEos);
            if (src.empty()) throw std::runtime_error("empty source");
            resp["id"] = id;
            resp["logprob"] = model.sequence_logprob(src, tgt);
        } catch (const std::exception& e) {
            resp = json::object();
            resp["id"] = id;
            resp["error"] = e.what();
        }
        out << resp.dump() << "\n" << std::flush;
    }
    return 0;
}

}  // namespace temprank
