#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vocmix/corpus.hpp"

namespace vocmix {

// Heterogeneous lookup so string_view probes do not allocate.
struct StringHash {
  using is_transparent = void;
  size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};
using StringSet = std::unordered_set<std::string, StringHash, std::equal_to<>>;
template <typename V>
using StringMap = std::unordered_map<std::string, V, StringHash, std::equal_to<>>;

// Ordered wordpiece inventory. Ids are list positions; entries are unique and
// non-empty; the UNK entry is always present; word-internal pieces carry the
// continuation prefix ("##" by default).
class Vocabulary {
 public:
  static constexpr std::string_view kDefaultUnk = "[UNK]";
  static constexpr std::string_view kDefaultContinuation = "##";

  Vocabulary(std::vector<std::string> entries, std::string unk = std::string(kDefaultUnk),
             std::string continuation_prefix = std::string(kDefaultContinuation));

  // Minimal vocabulary holding only the UNK entry.
  Vocabulary() : Vocabulary({std::string(kDefaultUnk)}) {}

  // Fixture convenience: prepends the UNK entry when the list lacks it.
  static Vocabulary with_unk(std::vector<std::string> pieces,
                             std::string unk = std::string(kDefaultUnk));

  const std::vector<std::string>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  bool contains(std::string_view piece) const;
  std::optional<int64_t> id_of(std::string_view piece) const;
  const std::string& unk() const { return entries_[static_cast<size_t>(unk_id_)]; }
  int64_t unk_id() const { return unk_id_; }
  const std::string& continuation_prefix() const { return continuation_prefix_; }

  // True when the entry at word-start (resp. word-internal) position matches
  // exactly this content. Content excludes the continuation prefix.
  bool has_initial(std::string_view content) const { return initial_.contains(content); }
  bool has_continuation(std::string_view content) const {
    return continuation_.contains(content);
  }
  size_t max_content_chars() const { return max_content_chars_; }

  // SHA-256 of the serialized file form.
  const std::string& digest() const;

  // Free-form notes from the trainer (algorithm, min_frequency, normalization).
  // Not persisted in the file format; recorded in run manifests.
  const std::string& metadata() const { return metadata_; }
  void set_metadata(std::string metadata) { metadata_ = std::move(metadata); }

 private:
  std::vector<std::string> entries_;
  StringMap<int64_t> ids_;
  StringSet initial_;
  StringSet continuation_;
  int64_t unk_id_ = -1;
  std::string continuation_prefix_;
  size_t max_content_chars_ = 0;
  std::string metadata_;
  mutable std::string digest_;
};

struct Segmentation {
  std::vector<std::string> pieces;
  bool contains_unk = false;
};

// Trains a vocabulary by frequency-ranked pair merging over NFC-normalized,
// word-tokenized text: UNK, then every character seen at least min_frequency
// times (initial and continuation form), then merges while the top pair count
// stays at or above min_frequency and the size budget allows. Ties in pair
// counts break lexicographically by (left, right). Deterministic; sentence
// order does not matter.
Vocabulary train_vocabulary(const Corpus& corpus, size_t target_size, size_t min_frequency);

// Longest-match-first segmentation over matches that leave the rest of the
// word segmentable. A word with no full segmentation, or longer than 100 code
// points, maps to a single UNK piece.
Segmentation tokenize_word(const Vocabulary& vocab, std::string_view word);

// Per-sentence, per-word segmentations, same shape as basic_tokenize output.
std::vector<std::vector<Segmentation>> tokenize_corpus(const Vocabulary& vocab,
                                                       const Corpus& corpus);

// One wordpiece per line, line number = id, LF endings; bit-exact round-trip.
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path,
                           std::string unk = std::string(Vocabulary::kDefaultUnk));

std::string serialize_vocabulary(const Vocabulary& vocab);

inline constexpr size_t kMaxWordChars = 100;

}  // namespace vocmix
