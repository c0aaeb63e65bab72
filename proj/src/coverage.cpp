#include "vocmix/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vocmix/errors.hpp"

namespace vocmix {

namespace {

struct CoverageCounts {
  uint64_t tokens = 0;
  uint64_t unk_tokens = 0;
  uint64_t pieces = 0;
};

CoverageCounts count_coverage(const Vocabulary& vocab, const Corpus& corpus) {
  // Cache per distinct word; corpora repeat words heavily.
  std::map<std::string, std::pair<bool, uint64_t>> cache;  // word -> (unk?, piece count)
  CoverageCounts counts;
  for (const auto& sentence : corpus.sentences) {
    for (const auto& token : basic_tokenize(sentence).tokens) {
      auto it = cache.find(token);
      if (it == cache.end()) {
        const Segmentation seg = tokenize_word(vocab, token);
        it = cache.emplace(token, std::make_pair(seg.contains_unk, seg.pieces.size())).first;
      }
      ++counts.tokens;
      if (it->second.first) ++counts.unk_tokens;
      counts.pieces += it->second.second;
    }
  }
  return counts;
}

}  // namespace

double unk_token_percentage(const Vocabulary& vocab, const Corpus& corpus) {
  const CoverageCounts counts = count_coverage(vocab, corpus);
  if (counts.tokens == 0) return 0.0;
  return 100.0 * static_cast<double>(counts.unk_tokens) / static_cast<double>(counts.tokens);
}

double fertility(const Vocabulary& vocab, const Corpus& corpus) {
  if (corpus.sentences.empty()) {
    throw ValidationError("fertility requires a non-empty corpus");
  }
  const CoverageCounts counts = count_coverage(vocab, corpus);
  if (counts.tokens == 0) {
    throw ValidationError("fertility requires at least one word token");
  }
  return static_cast<double>(counts.pieces) / static_cast<double>(counts.tokens);
}

CoverageReport coverage_report(const Vocabulary& vocab, const Corpus& corpus) {
  if (corpus.sentences.empty()) {
    throw ValidationError("coverage_report requires a non-empty corpus");
  }
  const CoverageCounts counts = count_coverage(vocab, corpus);
  CoverageReport report;
  report.token_count = counts.tokens;
  report.unk_token_pct =
      counts.tokens == 0
          ? 0.0
          : 100.0 * static_cast<double>(counts.unk_tokens) / static_cast<double>(counts.tokens);
  report.fertility = counts.tokens == 0
                         ? 0.0
                         : static_cast<double>(counts.pieces) / static_cast<double>(counts.tokens);
  report.vocab_digest = "sha256:" + vocab.digest();
  report.corpus_digest = "sha256:" + corpus.digest();
  return report;
}

double coverage_delta(const Vocabulary& before, const Vocabulary& after, const Corpus& corpus) {
  return unk_token_percentage(after, corpus) - unk_token_percentage(before, corpus);
}

nlohmann::json CoverageReport::to_json() const {
  return nlohmann::json{{"schema", "vocmix.coverage/1"},
                        {"unk_token_pct", unk_token_pct},
                        {"fertility", fertility},
                        {"token_count", token_count},
                        {"vocab_digest", vocab_digest},
                        {"corpus_digest", corpus_digest}};
}

std::string CoverageReport::to_text() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "tokens         %12llu\n"
                "unk token %%    %12.4f\n"
                "fertility      %12.4f\n",
                static_cast<unsigned long long>(token_count), unk_token_pct, fertility);
  std::string out(buf);
  out += "vocab digest   " + vocab_digest + "\n";
  out += "corpus digest  " + corpus_digest + "\n";
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // ranks are 1-based; tied values share the average rank
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ValidationError("spearman requires equally long inputs");
  }
  if (xs.size() < 2) {
    throw ValidationError("spearman requires at least two observations");
  }
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean_x = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double mean_y = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean_x;
    const double dy = ry[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

GroupSummary group_summary(const std::vector<DeltaRecord>& records,
                           const std::map<std::string, std::string>& grouping) {
  std::map<std::string, std::vector<const DeltaRecord*>> buckets;
  for (const auto& record : records) {
    const auto it = grouping.find(record.language_tag);
    if (it == grouping.end()) {
      throw ValidationError("no group mapped for language tag \"" + record.language_tag + "\"");
    }
    buckets[it->second].push_back(&record);
  }

  auto summarize = [](const std::string& label, const std::vector<const DeltaRecord*>& members) {
    GroupSummary::Row row;
    row.label = label;
    row.count = members.size();
    std::map<std::string, std::pair<double, size_t>> task_sums;
    double unk_sum = 0.0;
    for (const auto* record : members) {
      unk_sum += record->unk_delta;
      for (const auto& [task, delta] : record->task_deltas) {
        task_sums[task].first += delta;
        task_sums[task].second += 1;
      }
    }
    if (!members.empty()) row.mean_unk_delta = unk_sum / static_cast<double>(members.size());
    for (const auto& [task, sum_count] : task_sums) {
      row.task_means[task] = {sum_count.first / static_cast<double>(sum_count.second),
                              sum_count.second};
    }
    return row;
  };

  GroupSummary summary;
  for (const auto& [label, members] : buckets) {
    summary.groups.push_back(summarize(label, members));
  }
  std::vector<const DeltaRecord*> all;
  all.reserve(records.size());
  for (const auto& record : records) all.push_back(&record);
  summary.overall = summarize("all", all);
  return summary;
}

nlohmann::json group_summary_to_json(const GroupSummary& summary) {
  auto row_json = [](const GroupSummary::Row& row) {
    nlohmann::json tasks = nlohmann::json::object();
    for (const auto& [task, mean_count] : row.task_means) {
      tasks[task] = {{"mean", mean_count.first}, {"count", mean_count.second}};
    }
    return nlohmann::json{{"label", row.label},
                          {"count", row.count},
                          {"mean_unk_delta", row.mean_unk_delta},
                          {"tasks", std::move(tasks)}};
  };
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& row : summary.groups) groups.push_back(row_json(row));
  return nlohmann::json{{"schema", "vocmix.group-summary/1"},
                        {"groups", std::move(groups)},
                        {"overall", row_json(summary.overall)}};
}

std::string group_summary_to_text(const GroupSummary& summary) {
  // Column set = union of tasks, sorted.
  std::vector<std::string> tasks;
  auto collect = [&](const GroupSummary::Row& row) {
    for (const auto& [task, _] : row.task_means) {
      if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) tasks.push_back(task);
    }
  };
  collect(summary.overall);
  for (const auto& row : summary.groups) collect(row);
  std::sort(tasks.begin(), tasks.end());

  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-14s %4s %11s", "group", "n", "unk-delta");
  out << buf;
  for (const auto& task : tasks) {
    std::snprintf(buf, sizeof(buf), " %11s", task.c_str());
    out << buf;
  }
  out << '\n';
  auto emit = [&](const GroupSummary::Row& row) {
    std::snprintf(buf, sizeof(buf), "%-14s %4zu %+11.4f", row.label.c_str(), row.count,
                  row.mean_unk_delta);
    out << buf;
    for (const auto& task : tasks) {
      const auto it = row.task_means.find(task);
      if (it == row.task_means.end()) {
        std::snprintf(buf, sizeof(buf), " %11s", "--");
      } else {
        std::snprintf(buf, sizeof(buf), " %+11.4f", it->second.first);
      }
      out << buf;
    }
    out << '\n';
  };
  emit(summary.overall);
  for (const auto& row : summary.groups) emit(row);
  return out.str();
}

nlohmann::json delta_record_to_json(const DeltaRecord& record) {
  return nlohmann::json{{"language", record.language_tag},
                        {"unk_delta", record.unk_delta},
                        {"task_deltas", record.task_deltas},
                        {"type", record.type},
                        {"script", record.script}};
}

DeltaRecord delta_record_from_json(const nlohmann::json& j) {
  DeltaRecord record;
  if (!j.contains("language")) throw ValidationError("delta record lacks field \"language\"");
  if (!j.contains("unk_delta")) throw ValidationError("delta record lacks field \"unk_delta\"");
  record.language_tag = j.at("language").get<std::string>();
  record.unk_delta = j.at("unk_delta").get<double>();
  if (j.contains("task_deltas")) {
    record.task_deltas = j.at("task_deltas").get<std::map<std::string, double>>();
  }
  record.type = j.value("type", std::string{});
  record.script = j.value("script", std::string{});
  return record;
}

std::string scatter_csv(const std::vector<DeltaRecord>& records) {
  std::ostringstream out;
  out << "language,unk_delta,task,task_delta,type,script\n";
  char buf[64];
  for (const auto& record : records) {
    for (const auto& [task, delta] : record.task_deltas) {
      std::snprintf(buf, sizeof(buf), "%.6g", record.unk_delta);
      out << record.language_tag << ',' << buf << ',' << task << ',';
      std::snprintf(buf, sizeof(buf), "%.6g", delta);
      out << buf << ',' << record.type << ',' << record.script << '\n';
    }
  }
  return out.str();
}

}  // namespace vocmix
