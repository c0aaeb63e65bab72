#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vocmix/corpus.hpp"
#include "vocmix/wordpiece.hpp"

namespace vocmix {

struct CoverageReport {
  double unk_token_pct = 0.0;  // [0, 100]
  double fertility = 0.0;      // wordpieces per word token, >= 1 for nonempty input
  uint64_t token_count = 0;
  std::string vocab_digest;
  std::string corpus_digest;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

struct DeltaRecord {
  std::string language_tag;
  double unk_delta = 0.0;  // percentage points, after - before
  std::map<std::string, double> task_deltas;
  std::string type;    // language type label ("0" | "1" | "2")
  std::string script;  // script label
};

// Percentage of word tokens whose segmentation contains at least one UNK
// piece; 0 for an empty corpus by convention.
double unk_token_percentage(const Vocabulary& vocab, const Corpus& corpus);

// Total wordpieces over total word tokens; an UNK-mapped word contributes one
// piece. Errors on an empty corpus.
double fertility(const Vocabulary& vocab, const Corpus& corpus);

CoverageReport coverage_report(const Vocabulary& vocab, const Corpus& corpus);

// unk%(after) - unk%(before), in percentage points; negative = improvement.
double coverage_delta(const Vocabulary& before, const Vocabulary& after, const Corpus& corpus);

// Spearman's rho with average ranks for ties. Lengths must match and be >= 2.
// Returns nullopt when either side has zero rank variance (rho undefined).
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);

struct GroupSummary {
  struct Row {
    std::string label;
    size_t count = 0;
    double mean_unk_delta = 0.0;
    // task -> (mean, number of records carrying the task)
    std::map<std::string, std::pair<double, size_t>> task_means;
  };
  std::vector<Row> groups;  // sorted by label
  Row overall;              // label "all"
};

// Per-group arithmetic means plus an overall row. Every record's tag must be
// mapped in grouping.
GroupSummary group_summary(const std::vector<DeltaRecord>& records,
                           const std::map<std::string, std::string>& grouping);

nlohmann::json group_summary_to_json(const GroupSummary& summary);
std::string group_summary_to_text(const GroupSummary& summary);

nlohmann::json delta_record_to_json(const DeltaRecord& record);
DeltaRecord delta_record_from_json(const nlohmann::json& j);

// Scatter rows, one per (record, task): header
// language,unk_delta,task,task_delta,type,script
std::string scatter_csv(const std::vector<DeltaRecord>& records);

}  // namespace vocmix
