#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vocmix {

struct Provenance {
  std::string source;
  std::vector<std::string> transforms;
};

// {"source": ..., "language_tag": ..., "transforms": [...]} written alongside
// corpus outputs by the CLI.
std::string provenance_json(const struct Corpus& corpus);

// Immutable-after-construction sentence store. Sentences are NFC-normalized
// with whitespace runs collapsed to single spaces; none is empty; order is
// deterministic given the same input.
struct Corpus {
  std::vector<std::string> sentences;
  std::string language_tag;
  Provenance provenance;

  // SHA-256 over sentences joined with '\n' (trailing newline included).
  std::string digest() const;
};

struct TokenizedSentence {
  std::vector<std::string> tokens;
};

// NFC, trim, collapse internal whitespace runs to single U+0020. Returns the
// empty string when nothing is left.
std::string normalize_sentence(std::string_view raw);

// Reads a UTF-8, one-sentence-per-line file. Blank lines are dropped.
Corpus load_corpus(const std::filesystem::path& path, std::string language_tag = {});

// Builds a corpus from in-memory lines, applying the same normalization as
// load_corpus. Used by pipeline steps and fixtures.
Corpus make_corpus(std::vector<std::string> raw_sentences, std::string language_tag = {},
                   std::string source = "<memory>");

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Order-preserving uniform subset of round(fraction * N) sentences,
// deterministic per seed. fraction must be in (0, 1].
Corpus downsample(const Corpus& corpus, double fraction, uint64_t seed);

// Removes every sentence whose normalized form equals a normalized held-out
// sentence; order preserved.
Corpus dedup_against(const Corpus& corpus, const std::vector<Corpus>& held_out);

// Whitespace split; every code point of Unicode category P becomes its own
// token. Never emits an empty token.
TokenizedSentence basic_tokenize(std::string_view sentence);

std::vector<TokenizedSentence> tokenize_sentences(const Corpus& corpus);

}  // namespace vocmix
