#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vocmix/augment.hpp"
#include "vocmix/corpus.hpp"
#include "vocmix/wordpiece.hpp"

namespace vocmix {

// Ordered longest-match grapheme rewrite rules. Unmatched code points are
// copied verbatim (passthrough).
struct TransliterationScheme {
  struct Rule {
    std::string source;  // non-empty, unique across rules
    std::string target;  // may be empty (deletion)
  };
  std::vector<Rule> rules;  // file order, kept for documentation
  std::string name;
  bool passthrough = true;
  // Set when some rule target contains some rule source as a substring, in
  // which case repeated application may keep rewriting.
  bool non_idempotent = false;
  std::string digest;  // SHA-256 of the scheme file bytes

  // Lookup structures; built by finalize().
  StringMap<std::string> by_source;
  size_t max_source_chars = 0;

  void finalize();
};

struct TranslitStats {
  uint64_t matched = 0;     // rule applications
  uint64_t unmatched = 0;   // code points copied verbatim
};

// UTF-8 TSV, two columns (source, target), '#' comment lines, blank lines
// skipped. Duplicate sources and empty sources are rejected.
TransliterationScheme load_scheme(const std::filesystem::path& path);

// Left-to-right scan; at each position the longest matching source grapheme
// wins; otherwise the code point passes through.
std::string transliterate(const TransliterationScheme& scheme, std::string_view text,
                          TranslitStats* stats = nullptr);

// Sentence-wise transliteration followed by re-normalization; sentences that
// come out empty are dropped and tallied in provenance.
Corpus transliterate_corpus(const TransliterationScheme& scheme, const Corpus& corpus);

// One mix-in: either a transliteration step or a vocabulary-augmentation step.
struct MixinStep {
  enum class Kind { kTransliterate, kAugment };
  Kind kind = Kind::kAugment;

  // kTransliterate
  std::filesystem::path scheme_path;
  std::shared_ptr<const TransliterationScheme> scheme;

  // kAugment
  std::optional<Preset> preset_name;
  uint64_t n = 99;
  double a = 1.0;
  size_t candidate_size = 5000;
  size_t min_frequency = 2;
  RescueRanking ranking = RescueRanking::kOccurrences;
};

// Ordered mix-ins: at most one transliteration step, and it must precede any
// augmentation step.
struct MixinPipeline {
  std::vector<MixinStep> steps;

  void validate() const;
  static MixinPipeline from_json(const nlohmann::json& descriptor,
                                 const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
};

struct PipelineResult {
  Corpus corpus;
  Vocabulary vocabulary;
  std::optional<AugmentationPlan> plan;  // the last augmentation step's plan
  std::vector<std::string> log;          // per-step digests and notes
};

// Transliteration (if any) rewrites the corpus first; each augmentation step
// trains its candidate on the current corpus, selects, and applies.
PipelineResult run_pipeline(const Corpus& corpus, const Vocabulary& base,
                            const MixinPipeline& pipeline);

}  // namespace vocmix
