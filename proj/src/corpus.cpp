#include "vocmix/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "vocmix/digest.hpp"
#include "vocmix/errors.hpp"
#include "vocmix/rng.hpp"
#include "vocmix/unicode.hpp"

namespace vocmix {

std::string provenance_json(const Corpus& corpus) {
  return nlohmann::json{{"schema", "vocmix.provenance/1"},
                        {"source", corpus.provenance.source},
                        {"language_tag", corpus.language_tag},
                        {"transforms", corpus.provenance.transforms},
                        {"sentences", corpus.sentences.size()},
                        {"digest", "sha256:" + corpus.digest()}}
      .dump(2);
}

std::string Corpus::digest() const {
  std::string joined;
  for (const auto& s : sentences) {
    joined += s;
    joined += '\n';
  }
  return sha256_hex(joined);
}

std::string normalize_sentence(std::string_view raw) {
  const std::string composed = uni::nfc(raw);
  const std::u32string cps = uni::decode_utf8(composed);
  std::u32string out;
  out.reserve(cps.size());
  bool pending_space = false;
  for (const char32_t cp : cps) {
    if (uni::is_whitespace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(U' ');
      pending_space = false;
    }
    out.push_back(cp);
  }
  return uni::encode_utf8(out);
}

namespace {

Corpus from_lines(std::vector<std::string>&& lines, std::string&& language_tag,
                  std::string&& source) {
  Corpus corpus;
  corpus.language_tag = std::move(language_tag);
  corpus.provenance.source = std::move(source);
  corpus.provenance.transforms.push_back("normalize:nfc+whitespace");
  corpus.sentences.reserve(lines.size());
  for (auto& line : lines) {
    std::string normalized = normalize_sentence(line);
    if (!normalized.empty()) {
      corpus.sentences.push_back(std::move(normalized));
    }
  }
  return corpus;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, std::string language_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read corpus file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) {
    throw IoError("read failure on corpus file: " + path.string());
  }
  std::string content = buffer.str();
  // Validate the whole stream once so the reported offset is file-absolute.
  uni::decode_utf8(content);

  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= content.size()) {
    const size_t nl = content.find('\n', start);
    if (nl == std::string::npos) {
      if (start < content.size()) lines.push_back(content.substr(start));
      break;
    }
    size_t end = nl;
    if (end > start && content[end - 1] == '\r') --end;  // tolerate CRLF
    lines.push_back(content.substr(start, end - start));
    start = nl + 1;
  }
  return from_lines(std::move(lines), std::move(language_tag), path.string());
}

Corpus make_corpus(std::vector<std::string> raw_sentences, std::string language_tag,
                   std::string source) {
  return from_lines(std::move(raw_sentences), std::move(language_tag), std::move(source));
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write corpus file: " + path.string());
  }
  for (const auto& s : corpus.sentences) {
    out << s << '\n';
  }
  if (!out) {
    throw IoError("write failure on corpus file: " + path.string());
  }
}

Corpus downsample(const Corpus& corpus, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ValidationError("downsample fraction must be in (0, 1], got " +
                          std::to_string(fraction));
  }
  const size_t n = corpus.sentences.size();
  const auto k = static_cast<size_t>(std::llround(fraction * static_cast<double>(n)));

  // Partial Fisher-Yates over the index vector, then restore input order.
  std::vector<size_t> indices(n);
  for (size_t i = 0; i < n; ++i) indices[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < k && i + 1 < n; ++i) {
    const size_t j = i + static_cast<size_t>(rng.bounded(n - i));
    std::swap(indices[i], indices[j]);
  }
  indices.resize(k);
  std::sort(indices.begin(), indices.end());

  Corpus out;
  out.language_tag = corpus.language_tag;
  out.provenance = corpus.provenance;
  out.provenance.transforms.push_back("downsample:fraction=" + std::to_string(fraction) +
                                      ",seed=" + std::to_string(seed));
  out.sentences.reserve(k);
  for (const size_t i : indices) out.sentences.push_back(corpus.sentences[i]);
  return out;
}

Corpus dedup_against(const Corpus& corpus, const std::vector<Corpus>& held_out) {
  std::unordered_set<std::string> blocked;
  for (const auto& held : held_out) {
    for (const auto& s : held.sentences) {
      blocked.insert(normalize_sentence(s));
    }
  }
  Corpus out;
  out.language_tag = corpus.language_tag;
  out.provenance = corpus.provenance;
  size_t removed = 0;
  for (const auto& s : corpus.sentences) {
    if (blocked.count(normalize_sentence(s)) == 0) {
      out.sentences.push_back(s);
    } else {
      ++removed;
    }
  }
  out.provenance.transforms.push_back("dedup:removed=" + std::to_string(removed));
  return out;
}

TokenizedSentence basic_tokenize(std::string_view sentence) {
  TokenizedSentence result;
  const std::u32string cps = uni::decode_utf8(sentence);
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) {
      result.tokens.push_back(uni::encode_utf8(current));
      current.clear();
    }
  };
  for (const char32_t cp : cps) {
    if (uni::is_whitespace(cp)) {
      flush();
    } else if (uni::is_punctuation(cp)) {
      flush();
      result.tokens.push_back(uni::encode_utf8(cp));
    } else {
      current.push_back(cp);
    }
  }
  flush();
  return result;
}

std::vector<TokenizedSentence> tokenize_sentences(const Corpus& corpus) {
  std::vector<TokenizedSentence> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) out.push_back(basic_tokenize(s));
  return out;
}

}  // namespace vocmix
