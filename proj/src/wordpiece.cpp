#include "vocmix/wordpiece.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "vocmix/digest.hpp"
#include "vocmix/errors.hpp"
#include "vocmix/unicode.hpp"

namespace vocmix {

Vocabulary::Vocabulary(std::vector<std::string> entries, std::string unk,
                       std::string continuation_prefix)
    : entries_(std::move(entries)), continuation_prefix_(std::move(continuation_prefix)) {
  if (continuation_prefix_.empty()) {
    throw ValidationError("continuation prefix must be non-empty");
  }
  ids_.reserve(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) {
    const std::string& entry = entries_[i];
    if (entry.empty()) {
      throw ValidationError("vocabulary entry " + std::to_string(i) + " is empty");
    }
    if (entry == continuation_prefix_) {
      throw ValidationError("vocabulary entry " + std::to_string(i) +
                            " consists only of the continuation prefix");
    }
    if (entry.find('\n') != std::string::npos || entry.find('\r') != std::string::npos) {
      throw ValidationError("vocabulary entry " + std::to_string(i) + " contains a line break");
    }
    if (!ids_.emplace(entry, static_cast<int64_t>(i)).second) {
      throw ValidationError("duplicate vocabulary entry: " + entry);
    }
    std::string_view content = entry;
    const bool is_continuation = content.size() > continuation_prefix_.size() &&
                                 content.substr(0, continuation_prefix_.size()) == continuation_prefix_;
    if (is_continuation) {
      content.remove_prefix(continuation_prefix_.size());
      continuation_.insert(std::string(content));
    } else {
      initial_.insert(std::string(content));
    }
    max_content_chars_ = std::max(max_content_chars_, uni::count_code_points(content));
  }
  const auto it = ids_.find(unk);
  if (it == ids_.end()) {
    throw ValidationError("vocabulary lacks the UNK entry \"" + unk + "\"");
  }
  unk_id_ = it->second;
}

Vocabulary Vocabulary::with_unk(std::vector<std::string> pieces, std::string unk) {
  if (std::find(pieces.begin(), pieces.end(), unk) == pieces.end()) {
    pieces.insert(pieces.begin(), unk);
  }
  return Vocabulary(std::move(pieces), std::move(unk));
}

bool Vocabulary::contains(std::string_view piece) const { return ids_.contains(piece); }

std::optional<int64_t> Vocabulary::id_of(std::string_view piece) const {
  const auto it = ids_.find(piece);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::digest() const {
  if (digest_.empty()) {
    digest_ = sha256_hex(serialize_vocabulary(*this));
  }
  return digest_;
}

namespace {

// A word under training: symbols are entry-form piece strings ("c" / "##c").
struct TrainWord {
  std::vector<std::string> symbols;
  uint64_t count = 0;
};

std::string merge_symbols(const std::string& left, const std::string& right,
                          const std::string& prefix) {
  std::string_view right_content = right;
  if (right_content.substr(0, prefix.size()) == prefix) {
    right_content.remove_prefix(prefix.size());
  }
  return left + std::string(right_content);
}

}  // namespace

Vocabulary train_vocabulary(const Corpus& corpus, size_t target_size, size_t min_frequency) {
  if (corpus.sentences.empty()) {
    throw ValidationError("cannot train a vocabulary on an empty corpus");
  }
  if (min_frequency == 0) {
    throw ValidationError("min_frequency must be positive");
  }
  const std::string prefix(Vocabulary::kDefaultContinuation);
  const std::string unk(Vocabulary::kDefaultUnk);
  constexpr size_t kReserved = 1;  // UNK
  if (target_size <= kReserved) {
    throw ValidationError("target_size " + std::to_string(target_size) +
                          " cannot hold the reserved entries plus one character");
  }

  // Word counts over the normalized corpus. std::map keeps iteration
  // deterministic and sentence-order-free.
  std::map<std::string, uint64_t> word_counts;
  for (const auto& sentence : corpus.sentences) {
    for (const auto& token : basic_tokenize(sentence).tokens) {
      ++word_counts[token];
    }
  }

  // Character totals across all positions.
  std::map<char32_t, uint64_t> char_counts;
  for (const auto& [word, count] : word_counts) {
    for (const char32_t cp : uni::decode_utf8(word)) {
      char_counts[cp] += count;
    }
  }

  std::vector<std::string> entries;
  entries.push_back(unk);
  std::unordered_set<std::string> entry_set{unk};
  auto try_add = [&](const std::string& piece) {
    if (entries.size() >= target_size) return false;
    if (entry_set.insert(piece).second) entries.push_back(piece);
    return true;
  };

  // Alphabet in code-point order, initial form before continuation form.
  std::unordered_set<char32_t> alphabet;
  for (const auto& [cp, count] : char_counts) {
    if (count < min_frequency) continue;
    alphabet.insert(cp);
    const std::string c = uni::encode_utf8(cp);
    if (!try_add(c)) break;
    if (!try_add(prefix + c)) break;
  }
  if (entries.size() <= kReserved) {
    throw ValidationError("no character reaches min_frequency=" + std::to_string(min_frequency));
  }

  // Words whose characters all made the alphabet, as symbol sequences.
  std::vector<TrainWord> words;
  for (const auto& [word, count] : word_counts) {
    const std::u32string cps = uni::decode_utf8(word);
    bool in_alphabet = true;
    for (const char32_t cp : cps) {
      if (alphabet.count(cp) == 0) {
        in_alphabet = false;
        break;
      }
    }
    if (!in_alphabet || cps.empty()) continue;
    TrainWord tw;
    tw.count = count;
    tw.symbols.reserve(cps.size());
    for (size_t i = 0; i < cps.size(); ++i) {
      const std::string c = uni::encode_utf8(cps[i]);
      tw.symbols.push_back(i == 0 ? c : prefix + c);
    }
    words.push_back(std::move(tw));
  }

  while (entries.size() < target_size) {
    // Count adjacent pairs; ordered map gives the lexicographic tie-break.
    std::map<std::pair<std::string, std::string>, uint64_t> pair_counts;
    for (const auto& w : words) {
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    const std::pair<std::string, std::string>* best = nullptr;
    uint64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < min_frequency) break;

    const std::string merged = merge_symbols(best->first, best->second, prefix);
    if (entry_set.insert(merged).second) {
      entries.push_back(merged);
    }
    // Replace left-to-right, non-overlapping.
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      size_t i = 0;
      while (i < w.symbols.size()) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best->first &&
            w.symbols[i + 1] == best->second) {
          next.push_back(merge_symbols(w.symbols[i], w.symbols[i + 1], prefix));
          i += 2;
        } else {
          next.push_back(w.symbols[i]);
          ++i;
        }
      }
      w.symbols = std::move(next);
    }
  }

  Vocabulary vocab(std::move(entries), unk, prefix);
  std::ostringstream meta;
  meta << "trainer=freq-pair-merge;min_frequency=" << min_frequency
       << ";normalization=nfc;tie_break=lex(left,right)"
       << ";alphabet=code-point-order,truncated-at-budget"
       << ";words-with-rare-chars=excluded-from-merges";
  vocab.set_metadata(meta.str());
  return vocab;
}

Segmentation tokenize_word(const Vocabulary& vocab, std::string_view word) {
  if (word.empty()) {
    throw ValidationError("tokenize_word requires a non-empty word");
  }
  const auto decoded = uni::decode_utf8_with_offsets(word);
  const size_t n = decoded.code_points.size();

  Segmentation unk_result;
  unk_result.pieces.push_back(vocab.unk());
  unk_result.contains_unk = true;
  if (n > kMaxWordChars) {
    return unk_result;
  }

  const size_t max_len = std::min(vocab.max_content_chars(), n);
  auto slice = [&](size_t from, size_t to) {
    return word.substr(decoded.byte_offsets[from],
                       decoded.byte_offsets[to] - decoded.byte_offsets[from]);
  };

  // feasible[i]: the suffix starting at code point i (word-internal position)
  // admits a full segmentation from continuation pieces.
  std::vector<char> feasible(n + 1, 0);
  feasible[n] = 1;
  for (size_t i = n; i-- > 1;) {
    const size_t limit = std::min(max_len, n - i);
    for (size_t len = 1; len <= limit; ++len) {
      if (feasible[i + len] && vocab.has_continuation(slice(i, i + len))) {
        feasible[i] = 1;
        break;
      }
    }
  }

  // Longest feasible match at the word start, then at each internal position.
  size_t pos = 0;
  Segmentation result;
  {
    size_t chosen = 0;
    for (size_t len = std::min(max_len, n); len >= 1; --len) {
      if (feasible[len] && vocab.has_initial(slice(0, len))) {
        chosen = len;
        break;
      }
    }
    if (chosen == 0) return unk_result;
    result.pieces.emplace_back(slice(0, chosen));
    pos = chosen;
  }
  while (pos < n) {
    size_t chosen = 0;
    for (size_t len = std::min(max_len, n - pos); len >= 1; --len) {
      if (feasible[pos + len] && vocab.has_continuation(slice(pos, pos + len))) {
        chosen = len;
        break;
      }
    }
    if (chosen == 0) return unk_result;  // unreachable: feasibility guarantees a match
    result.pieces.push_back(vocab.continuation_prefix() + std::string(slice(pos, pos + chosen)));
    pos += chosen;
  }
  for (const auto& piece : result.pieces) {
    if (piece == vocab.unk()) {
      result.contains_unk = true;
      break;
    }
  }
  return result;
}

std::vector<std::vector<Segmentation>> tokenize_corpus(const Vocabulary& vocab,
                                                       const Corpus& corpus) {
  std::vector<std::vector<Segmentation>> out;
  out.reserve(corpus.sentences.size());
  for (const auto& sentence : corpus.sentences) {
    std::vector<Segmentation> row;
    const TokenizedSentence words = basic_tokenize(sentence);
    row.reserve(words.tokens.size());
    for (const auto& w : words.tokens) {
      row.push_back(tokenize_word(vocab, w));
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string serialize_vocabulary(const Vocabulary& vocab) {
  std::string out;
  for (const auto& entry : vocab.entries()) {
    out += entry;
    out += '\n';
  }
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write vocabulary file: " + path.string());
  }
  out << serialize_vocabulary(vocab);
  if (!out) {
    throw IoError("write failure on vocabulary file: " + path.string());
  }
}

Vocabulary load_vocabulary(const std::filesystem::path& path, std::string unk) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read vocabulary file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::string content = buffer.str();
  uni::decode_utf8(content);

  std::vector<std::string> entries;
  size_t start = 0;
  size_t line_no = 1;
  while (start < content.size()) {
    size_t nl = content.find('\n', start);
    if (nl == std::string::npos) nl = content.size();
    size_t end = nl;
    if (end > start && content[end - 1] == '\r') --end;
    if (end == start) {
      throw ParseError("empty vocabulary entry at " + path.string() + ":" +
                       std::to_string(line_no));
    }
    entries.push_back(content.substr(start, end - start));
    start = nl + 1;
    ++line_no;
  }
  try {
    return Vocabulary(std::move(entries), std::move(unk));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) + " (file " + path.string() + ")");
  }
}

}  // namespace vocmix
