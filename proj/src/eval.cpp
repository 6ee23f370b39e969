#include "temprank/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "temprank/util.hpp"

namespace temprank {

double accuracy(const std::vector<std::pair<std::string, std::string>>& gold_pred) {
    if (gold_pred.empty()) throw std::runtime_error("accuracy: empty input");
    size_t correct = 0;
    for (const auto& [gold, pred] : gold_pred) correct += gold == pred ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(gold_pred.size());
}

Prf micro_prf(const std::vector<std::set<std::string>>& pred_sets,
              const std::vector<std::set<std::string>>& gold_sets) {
    if (pred_sets.size() != gold_sets.size())
        throw std::runtime_error("micro_prf: prediction/gold example counts disagree");
    Prf out;
    for (size_t i = 0; i < pred_sets.size(); ++i) {
        for (const auto& p : pred_sets[i])
            gold_sets[i].count(p) ? ++out.tp : ++out.fp;
        for (const auto& g : gold_sets[i])
            if (!pred_sets[i].count(g)) ++out.fn;
    }
    if (out.tp + out.fp > 0) out.precision = static_cast<double>(out.tp) / (out.tp + out.fp);
    else out.degenerate = true;
    if (out.tp + out.fn > 0) out.recall = static_cast<double>(out.tp) / (out.tp + out.fn);
    else out.degenerate = true;
    if (out.precision + out.recall > 0.0)
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

std::vector<BucketRow> bucket_report(const std::vector<AcsaInstance>& instances,
                                     const DatasetSplit& split, const LabelSchema& schema) {
    const auto buckets = frequency_buckets(split, schema);
    std::map<std::string, std::pair<int, int>> agg;  // bucket -> (correct, total)
    for (const AcsaInstance& inst : instances) {
        auto it = buckets.find(inst.category);
        if (it == buckets.end()) continue;
        auto& [correct, total] = agg[bucket_name(it->second)];
        ++total;
        if (inst.gold == inst.pred) ++correct;
    }
    std::vector<BucketRow> out;
    for (const char* name : {"zero", "low", "mid", "high"}) {
        auto it = agg.find(name);
        if (it == agg.end()) continue;
        BucketRow row;
        row.bucket = name;
        row.count = it->second.second;
        row.accuracy = static_cast<double>(it->second.first) / it->second.second;
        out.push_back(row);
    }
    return out;
}

std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
}

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace

std::filesystem::path write_report_csv(const EvalReport& report,
                                       const std::filesystem::path& out_dir,
                                       const std::string& timestamp) {
    std::string body;
    for (size_t i = 0; i < report.columns.size(); ++i) {
        if (i) body.push_back(',');
        body += csv_escape(report.columns[i]);
    }
    body += ",fingerprint\n";
    const std::string fp = fingerprint_hex(report.fingerprint);
    for (const auto& row : report.rows) {
        for (size_t i = 0; i < report.columns.size(); ++i) {
            if (i) body.push_back(',');
            auto it = row.find(report.columns[i]);
            body += csv_escape(it == row.end() ? std::string() : it->second);
        }
        body += "," + fp + "\n";
    }
    const auto path = out_dir / (report.protocol + "_" + timestamp + ".csv");
    write_file_atomic(path, body);
    return path;
}

std::filesystem::path write_report_md(const EvalReport& report,
                                      const std::filesystem::path& out_dir,
                                      const std::string& timestamp) {
    std::string body = "# " + report.protocol + "\n\n";
    body += "fingerprint: `" + fingerprint_hex(report.fingerprint) + "`\n\n";
    body += "|";
    for (const auto& c : report.columns) body += " " + c + " |";
    body += "\n|";
    for (size_t i = 0; i < report.columns.size(); ++i) body += " --- |";
    body += "\n";
    for (const auto& row : report.rows) {
        body += "|";
        for (const auto& c : report.columns) {
            auto it = row.find(c);
            body += " " + (it == row.end() ? std::string() : it->second) + " |";
        }
        body += "\n";
    }
    const auto path = out_dir / (report.protocol + "_" + timestamp + ".md");
    write_file_atomic(path, body);
    return path;
}

}  // namespace temprank
