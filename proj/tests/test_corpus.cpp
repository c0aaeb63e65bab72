#include "vocmix/corpus.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vocmix/errors.hpp"
#include "vocmix/rng.hpp"
#include "vocmix/unicode.hpp"

using namespace vocmix;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("load_corpus reads one sentence per line") {
  const auto path = write_temp("vocmix_corpus_3.txt", "one\ntwo\nthree\n");
  const Corpus corpus = load_corpus(path);
  CHECK(corpus.sentences.size() == 3);
  CHECK(corpus.sentences[0] == "one");
  CHECK(corpus.sentences[2] == "three");
}

TEST_CASE("load_corpus on an empty file yields an empty corpus") {
  const auto path = write_temp("vocmix_corpus_empty.txt", "");
  const Corpus corpus = load_corpus(path);
  CHECK(corpus.sentences.empty());
}

TEST_CASE("load_corpus keeps duplicate lines") {
  const auto path = write_temp("vocmix_corpus_dup.txt", "same\nsame\n");
  CHECK(load_corpus(path).sentences.size() == 2);
}

TEST_CASE("load_corpus normalizes whitespace and drops blanks") {
  const auto path = write_temp("vocmix_corpus_ws.txt", "  a \t b  \n\n\t\n c\n");
  const Corpus corpus = load_corpus(path);
  REQUIRE(corpus.sentences.size() == 2);
  CHECK(corpus.sentences[0] == "a b");
  CHECK(corpus.sentences[1] == "c");
}

TEST_CASE("load_corpus reports the byte offset of invalid UTF-8") {
  const auto path = write_temp("vocmix_corpus_bad.txt", std::string("ok\n\xff\xfe\n"));
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("byte offset 3"), ParseError);
}

TEST_CASE("load_corpus raises IoError for a missing file") {
  CHECK_THROWS_AS(load_corpus("/nonexistent/vocmix.txt"), IoError);
}

TEST_CASE("downsample with fraction 1.0 is the identity") {
  const Corpus corpus = make_corpus({"a", "b", "c", "d"});
  const Corpus out = downsample(corpus, 1.0, 123);
  CHECK(out.sentences == corpus.sentences);
}

TEST_CASE("downsample is deterministic per seed") {
  std::vector<std::string> lines;
  for (int i = 0; i < 10; ++i) lines.push_back("sentence " + std::to_string(i));
  const Corpus corpus = make_corpus(lines);
  const Corpus first = downsample(corpus, 0.5, 7);
  const Corpus second = downsample(corpus, 0.5, 7);
  CHECK(first.sentences.size() == 5);
  CHECK(first.sentences == second.sentences);
}

TEST_CASE("downsample matches the Table-1-style 10 percent setting") {
  std::vector<std::string> lines;
  lines.reserve(357000);
  for (int i = 0; i < 357000; ++i) lines.push_back("s" + std::to_string(i));
  const Corpus corpus = make_corpus(std::move(lines));
  CHECK(downsample(corpus, 0.10, 1).sentences.size() == 35700);
}

TEST_CASE("downsample size always rounds fraction times N") {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const size_t n = 1 + rng.bounded(50);
    std::vector<std::string> lines;
    for (size_t i = 0; i < n; ++i) lines.push_back("x" + std::to_string(i));
    const Corpus corpus = make_corpus(std::move(lines));
    const double fraction = 0.05 + 0.95 * rng.uniform01();
    const auto expected =
        static_cast<size_t>(std::llround(fraction * static_cast<double>(n)));
    CHECK(downsample(corpus, fraction, rng.next()).sentences.size() == expected);
  }
}

TEST_CASE("downsample preserves order") {
  std::vector<std::string> lines;
  for (int i = 0; i < 30; ++i) lines.push_back("s" + std::to_string(i));
  const Corpus corpus = make_corpus(lines);
  const Corpus out = downsample(corpus, 0.4, 5);
  for (size_t i = 1; i < out.sentences.size(); ++i) {
    const auto prev = std::find(corpus.sentences.begin(), corpus.sentences.end(),
                                out.sentences[i - 1]);
    const auto curr = std::find(corpus.sentences.begin(), corpus.sentences.end(),
                                out.sentences[i]);
    CHECK(prev < curr);
  }
}

TEST_CASE("downsample rejects fractions outside (0,1]") {
  const Corpus corpus = make_corpus({"a"});
  CHECK_THROWS_AS(downsample(corpus, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(downsample(corpus, -0.5, 1), ValidationError);
  CHECK_THROWS_AS(downsample(corpus, 1.5, 1), ValidationError);
}

TEST_CASE("dedup_against removes exact held-out sentences") {
  const Corpus corpus = make_corpus({"A", "B", "C"});
  const Corpus held = make_corpus({"B"});
  const Corpus out = dedup_against(corpus, {held});
  CHECK(out.sentences == std::vector<std::string>{"A", "C"});
}

TEST_CASE("dedup_against with no held-out corpora is the identity") {
  const Corpus corpus = make_corpus({"A", "B"});
  CHECK(dedup_against(corpus, {}).sentences == corpus.sentences);
}

TEST_CASE("dedup_against against itself removes everything") {
  const Corpus corpus = make_corpus({"A", "B"});
  CHECK(dedup_against(corpus, {corpus}).sentences.empty());
}

TEST_CASE("dedup matches on whitespace-normalized form") {
  Corpus corpus;
  corpus.sentences = {"a  b"};  // hand-built, bypassing normalization
  const Corpus held = make_corpus({"a b"});
  CHECK(dedup_against(corpus, {held}).sentences.empty());
}

TEST_CASE("dedup matches across NFC forms") {
  // U+00E9 vs e + U+0301
  const Corpus corpus = make_corpus({"caf\xc3\xa9"});
  const Corpus held = make_corpus({"cafe\xcc\x81"});
  CHECK(dedup_against(corpus, {held}).sentences.empty());
}

TEST_CASE("basic_tokenize splits whitespace and isolates punctuation") {
  const auto tokens = basic_tokenize("Hello, world!").tokens;
  CHECK(tokens == std::vector<std::string>{"Hello", ",", "world", "!"});
}

TEST_CASE("basic_tokenize of the empty string is empty") {
  CHECK(basic_tokenize("").tokens.empty());
}

TEST_CASE("basic_tokenize splits interior punctuation") {
  CHECK(basic_tokenize("ab-cd").tokens == std::vector<std::string>{"ab", "-", "cd"});
}

TEST_CASE("basic_tokenize never emits empty tokens") {
  Rng rng(4242);
  const std::u32string pool = U"ab с.!- \t€д";
  for (int trial = 0; trial < 200; ++trial) {
    std::u32string raw;
    const size_t len = rng.bounded(20);
    for (size_t i = 0; i < len; ++i) raw.push_back(pool[rng.bounded(pool.size())]);
    const std::string sentence = uni::encode_utf8(raw);
    const auto tokens = basic_tokenize(sentence).tokens;
    for (const auto& token : tokens) CHECK(!token.empty());
    if (!normalize_sentence(sentence).empty()) CHECK(tokens.size() >= 1);
  }
}

TEST_CASE("corpus digest is stable and content-derived") {
  const Corpus a = make_corpus({"x", "y"});
  const Corpus b = make_corpus({"x", "y"});
  const Corpus c = make_corpus({"x", "z"});
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != c.digest());
}

TEST_CASE("save_corpus round-trips through load_corpus") {
  const Corpus corpus = make_corpus({"alpha beta", "gamma"});
  const auto path = std::filesystem::temp_directory_path() / "vocmix_corpus_rt.txt";
  save_corpus(corpus, path);
  CHECK(load_corpus(path).sentences == corpus.sentences);
}
