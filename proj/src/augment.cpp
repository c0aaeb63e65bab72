#include "vocmix/augment.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "vocmix/errors.hpp"

namespace vocmix {

AugmentationPlan select_augmentation(const Vocabulary& base, const Vocabulary& candidate,
                                     const Corpus& corpus, uint64_t n, RescueRanking ranking) {
  // Distinct-word cache: (is UNK-bearing under base, candidate segmentation).
  std::map<std::string, uint64_t> word_counts;
  for (const auto& sentence : corpus.sentences) {
    for (const auto& token : basic_tokenize(sentence).tokens) {
      ++word_counts[token];
    }
  }

  std::map<std::string, uint64_t> piece_counts;
  for (const auto& [word, count] : word_counts) {
    if (!tokenize_word(base, word).contains_unk) continue;
    const Segmentation cand = tokenize_word(candidate, word);
    if (ranking == RescueRanking::kOccurrences) {
      for (const auto& piece : cand.pieces) {
        if (!base.contains(piece)) piece_counts[piece] += count;
      }
    } else {
      std::vector<std::string> distinct(cand.pieces);
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      for (const auto& piece : distinct) {
        if (!base.contains(piece)) piece_counts[piece] += count;
      }
    }
  }

  // Sort by count descending; the map's key order supplies the lexicographic
  // tie-break via stable_sort.
  std::vector<AugmentationPlan::Entry> ranked;
  ranked.reserve(piece_counts.size());
  for (const auto& [piece, count] : piece_counts) {
    ranked.push_back({piece, count});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.rescue_count > y.rescue_count; });

  AugmentationPlan plan;
  plan.n = n;
  plan.a = 1.0;
  plan.source = "candidate:sha256:" + candidate.digest() + ";corpus:sha256:" + corpus.digest();
  if (ranked.size() > n) ranked.resize(n);
  plan.selected = std::move(ranked);
  if (plan.selected.size() < n) {
    plan.warnings.push_back("requested n=" + std::to_string(n) + " but only " +
                            std::to_string(plan.selected.size()) +
                            " rescuing pieces were available");
  }
  return plan;
}

Vocabulary apply_augmentation(const Vocabulary& base, const AugmentationPlan& plan,
                              std::vector<std::string>* warnings) {
  std::vector<std::string> entries = base.entries();
  for (const auto& entry : plan.selected) {
    if (base.contains(entry.piece)) {
      if (warnings != nullptr) {
        warnings->push_back("plan piece already present in base vocabulary, skipped: " +
                            entry.piece);
      }
      continue;
    }
    entries.push_back(entry.piece);
  }
  Vocabulary out(std::move(entries), base.unk(), base.continuation_prefix());
  out.set_metadata(base.metadata());
  return out;
}

PresetSpec preset(Preset name, size_t candidate_size, std::optional<double> a_override) {
  if (a_override.has_value()) {
    if (name != Preset::kTva) {
      throw ValidationError("a_override is only valid for the TVA preset");
    }
    if (!(*a_override > 0.0)) {
      throw ValidationError("a_override must be positive");
    }
  }
  switch (name) {
    case Preset::kVa:
      return {99, 1.0, 5000};
    case Preset::kTva:
      if (!a_override.has_value()) {
        throw ValidationError("the TVA preset requires an explicit multiplier a");
      }
      return {99, *a_override, 5000};
    case Preset::kEmbert:
      if (candidate_size == 0) {
        throw ValidationError("EMBERT requires a positive candidate size");
      }
      return {candidate_size, 1.0, candidate_size};
  }
  throw ValidationError("unknown preset");
}

Preset parse_preset(std::string_view name) {
  if (name == "VA") return Preset::kVa;
  if (name == "TVA") return Preset::kTva;
  if (name == "EMBERT") return Preset::kEmbert;
  throw ValidationError("unknown preset \"" + std::string(name) + "\"; expected VA, TVA, or EMBERT");
}

std::string preset_name(Preset name) {
  switch (name) {
    case Preset::kVa:
      return "VA";
    case Preset::kTva:
      return "TVA";
    case Preset::kEmbert:
      return "EMBERT";
  }
  return "?";
}

nlohmann::json plan_to_json(const AugmentationPlan& plan) {
  nlohmann::json selected = nlohmann::json::array();
  for (const auto& entry : plan.selected) {
    selected.push_back({{"piece", entry.piece}, {"rescue_count", entry.rescue_count}});
  }
  return nlohmann::json{{"schema", "vocmix.plan/1"},
                        {"n", plan.n},
                        {"a", plan.a},
                        {"source", plan.source},
                        {"selected", std::move(selected)},
                        {"warnings", plan.warnings}};
}

AugmentationPlan plan_from_json(const nlohmann::json& j) {
  AugmentationPlan plan;
  try {
    plan.n = j.at("n").get<uint64_t>();
    plan.a = j.at("a").get<double>();
    plan.source = j.value("source", std::string{});
    for (const auto& entry : j.at("selected")) {
      plan.selected.push_back(
          {entry.at("piece").get<std::string>(), entry.at("rescue_count").get<uint64_t>()});
    }
    if (j.contains("warnings")) {
      plan.warnings = j.at("warnings").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed augmentation plan: ") + e.what());
  }
  for (size_t i = 1; i < plan.selected.size(); ++i) {
    if (plan.selected[i].rescue_count > plan.selected[i - 1].rescue_count) {
      throw ValidationError("plan rescue_counts must be non-increasing");
    }
  }
  if (plan.selected.size() > plan.n) {
    throw ValidationError("plan holds more pieces than its requested n");
  }
  return plan;
}

void save_plan(const AugmentationPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write plan file: " + path.string());
  }
  out << plan_to_json(plan).dump(2) << '\n';
}

AugmentationPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read plan file: " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return plan_from_json(j);
}

}  // namespace vocmix
