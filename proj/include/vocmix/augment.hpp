#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vocmix/corpus.hpp"
#include "vocmix/wordpiece.hpp"

namespace vocmix {

// Ranking rule for rescue selection: by total piece occurrences inside
// candidate segmentations of UNK-bearing tokens (default), or by the number
// of UNK-bearing token occurrences a piece appears in.
enum class RescueRanking { kOccurrences, kTokensRescued };

struct AugmentationPlan {
  struct Entry {
    std::string piece;
    uint64_t rescue_count = 0;
  };
  std::vector<Entry> selected;  // rescue_counts non-increasing
  uint64_t n = 0;               // requested count
  double a = 1.0;               // learning-rate multiplier
  std::string source;           // candidate + corpus digests
  std::vector<std::string> warnings;
};

// For every word token whose base segmentation contains UNK, segments it with
// the candidate vocabulary and counts candidate pieces absent from base;
// returns the top n by count, ties broken lexicographically.
AugmentationPlan select_augmentation(const Vocabulary& base, const Vocabulary& candidate,
                                     const Corpus& corpus, uint64_t n,
                                     RescueRanking ranking = RescueRanking::kOccurrences);

// Appends plan pieces to base in order; base ids unchanged. Pieces already in
// base are skipped with a warning (never happens for generated plans).
Vocabulary apply_augmentation(const Vocabulary& base, const AugmentationPlan& plan,
                              std::vector<std::string>* warnings = nullptr);

enum class Preset { kVa, kTva, kEmbert };

struct PresetSpec {
  uint64_t n = 0;
  double a = 1.0;
  size_t candidate_size = 0;
};

// VA -> (99, 1, 5000); TVA -> (99, a_override, 5000); EMBERT -> (candidate_size, 1,
// candidate_size). a_override is only valid for TVA and must be positive.
PresetSpec preset(Preset name, size_t candidate_size, std::optional<double> a_override = {});

Preset parse_preset(std::string_view name);
std::string preset_name(Preset name);

nlohmann::json plan_to_json(const AugmentationPlan& plan);
AugmentationPlan plan_from_json(const nlohmann::json& j);
void save_plan(const AugmentationPlan& plan, const std::filesystem::path& path);
AugmentationPlan load_plan(const std::filesystem::path& path);

}  // namespace vocmix
