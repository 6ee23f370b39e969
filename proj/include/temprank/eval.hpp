#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "temprank/corpus.hpp"

namespace temprank {

// exact match fraction over (gold, predicted) pairs
double accuracy(const std::vector<std::pair<std::string, std::string>>& gold_pred);

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long tp = 0, fp = 0, fn = 0;
    bool degenerate = false;  // some denominator was empty and forced a 0
};

// TP/FP/FN pooled over aligned example sets.
Prf micro_prf(const std::vector<std::set<std::string>>& pred_sets,
              const std::vector<std::set<std::string>>& gold_sets);

struct AcsaInstance {
    std::string example_id;
    std::string category;
    std::string gold;
    std::string pred;
};

struct BucketRow {
    std::string bucket;
    int count = 0;
    double accuracy = 0.0;
};

// Per-bucket ACSA accuracy; buckets come from frequency_buckets over the
// evaluated split, and empty buckets are omitted.
std::vector<BucketRow> bucket_report(const std::vector<AcsaInstance>& instances,
                                     const DatasetSplit& split, const LabelSchema& schema);

struct EvalReport {
    std::string protocol;
    std::vector<std::string> columns;
    std::vector<std::map<std::string, std::string>> rows;
    uint64_t fingerprint = 0;
};

// CSV plus a rendered markdown table, named {protocol}_{timestamp}.{csv,md}.
// The fingerprint rides along as a column so rows are self-describing.
std::filesystem::path write_report_csv(const EvalReport& report,
                                       const std::filesystem::path& out_dir,
                                       const std::string& timestamp);
std::filesystem::path write_report_md(const EvalReport& report,
                                      const std::filesystem::path& out_dir,
                                      const std::string& timestamp);

std::string format_metric(double v);

}  // namespace temprank
