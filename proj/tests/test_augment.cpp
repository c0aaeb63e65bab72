#include "vocmix/augment.hpp"

#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "vocmix/coverage.hpp"
#include "vocmix/errors.hpp"

using namespace vocmix;

TEST_CASE("n = 0 yields an empty plan") {
  const Vocabulary base = Vocabulary::with_unk({"a"});
  const Vocabulary candidate = Vocabulary::with_unk({"a", "b"});
  const Corpus corpus = make_corpus({"ba"});
  const AugmentationPlan plan = select_augmentation(base, candidate, corpus, 0);
  CHECK(plan.selected.empty());
  CHECK(plan.n == 0);
}

TEST_CASE("selection counts pieces inside candidate segmentations of UNK tokens") {
  const Vocabulary base = Vocabulary::with_unk({"a"});
  const Vocabulary candidate = Vocabulary::with_unk({"a", "b", "##a"});
  const Corpus corpus = make_corpus({"ba ba ab"});

  // "ba" (x2) and "ab" are all UNK under base; candidate segments "ba" as
  // [b, ##a] and cannot segment "ab". Counts: b=2, ##a=2; ties go
  // lexicographically, so n=1 picks "##a".
  const AugmentationPlan one = select_augmentation(base, candidate, corpus, 1);
  REQUIRE(one.selected.size() == 1);
  CHECK(one.selected[0].piece == "##a");
  CHECK(one.selected[0].rescue_count == 2);

  const AugmentationPlan two = select_augmentation(base, candidate, corpus, 2);
  REQUIRE(two.selected.size() == 2);
  CHECK(two.selected[0].piece == "##a");
  CHECK(two.selected[1].piece == "b");
  CHECK(two.selected[1].rescue_count == 2);
}

TEST_CASE("the tokens-rescued ranking counts each token once per piece") {
  const Vocabulary base = Vocabulary::with_unk({"a"});
  const Vocabulary candidate = Vocabulary::with_unk({"b", "##b", "c", "##a"});
  // "bbb" segments to [b, ##b, ##b]: ##b occurs twice in one token.
  const Corpus corpus = make_corpus({"bbb ca ca"});

  const AugmentationPlan by_occurrence =
      select_augmentation(base, candidate, corpus, 100, RescueRanking::kOccurrences);
  const AugmentationPlan by_tokens =
      select_augmentation(base, candidate, corpus, 100, RescueRanking::kTokensRescued);

  auto count_of = [](const AugmentationPlan& plan, const std::string& piece) -> uint64_t {
    for (const auto& entry : plan.selected) {
      if (entry.piece == piece) return entry.rescue_count;
    }
    return 0;
  };
  CHECK(count_of(by_occurrence, "##b") == 2);
  CHECK(count_of(by_tokens, "##b") == 1);
  CHECK(count_of(by_occurrence, "##a") == 2);
  CHECK(count_of(by_tokens, "##a") == 2);
}

TEST_CASE("plans shorter than n carry a warning") {
  const Vocabulary base = Vocabulary::with_unk({"a"});
  const Vocabulary candidate = Vocabulary::with_unk({"a", "b", "##a"});
  const Corpus corpus = make_corpus({"ba"});
  const AugmentationPlan plan = select_augmentation(base, candidate, corpus, 99);
  CHECK(plan.selected.size() == 2);
  REQUIRE(plan.warnings.size() == 1);
  CHECK(plan.warnings[0].find("99") != std::string::npos);
}

TEST_CASE("apply_augmentation appends in order and keeps base ids") {
  std::vector<std::string> pieces{"[UNK]"};
  for (int i = 0; i < 9; ++i) pieces.push_back(std::string(1, static_cast<char>('a' + i)));
  const Vocabulary base{pieces};
  AugmentationPlan plan;
  plan.n = 3;
  plan.selected = {{"zz", 5}, {"yy", 3}, {"xx", 1}};
  const Vocabulary out = apply_augmentation(base, plan);
  REQUIRE(out.size() == 13);
  for (const auto& entry : base.entries()) {
    CHECK(*out.id_of(entry) == *base.id_of(entry));
  }
  CHECK(*out.id_of("zz") == 10);
  CHECK(*out.id_of("yy") == 11);
  CHECK(*out.id_of("xx") == 12);
}

TEST_CASE("an empty plan leaves the vocabulary unchanged") {
  const Vocabulary base = Vocabulary::with_unk({"a", "b"});
  const AugmentationPlan plan;
  CHECK(apply_augmentation(base, plan).entries() == base.entries());
}

TEST_CASE("pieces already present are skipped with a warning") {
  const Vocabulary base = Vocabulary::with_unk({"a"});
  AugmentationPlan plan;
  plan.n = 2;
  plan.selected = {{"a", 4}, {"b", 2}};
  std::vector<std::string> warnings;
  const Vocabulary out = apply_augmentation(base, plan, &warnings);
  CHECK(out.size() == base.size() + 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("a") != std::string::npos);
}

TEST_CASE("selection matches exhaustive recounting on random fixtures") {
  oracle::FixtureGen gen(808);
  const std::vector<char32_t> alphabet{U'a', U'b', U'c', U'd'};
  for (int trial = 0; trial < 250; ++trial) {
    oracle::RefVocab ref_base;
    ref_base.entries = gen.random_pieces(1 + gen.rng.bounded(6), alphabet);
    ref_base.entries.insert(ref_base.entries.begin(), "[UNK]");
    oracle::RefVocab ref_candidate;
    ref_candidate.entries = gen.random_pieces(1 + gen.rng.bounded(12), alphabet);
    ref_candidate.entries.insert(ref_candidate.entries.begin(), "[UNK]");

    const size_t n_words = 1 + gen.rng.bounded(30);
    std::vector<std::string> tokens;
    std::string line;
    for (size_t w = 0; w < n_words; ++w) {
      tokens.push_back(gen.random_word(1, 6, alphabet));
      line += tokens.back();
      line += ' ';
    }
    const Corpus corpus = make_corpus({line});

    const Vocabulary base(ref_base.entries);
    const Vocabulary candidate(ref_candidate.entries);
    const AugmentationPlan plan =
        select_augmentation(base, candidate, corpus, 1000);  // no truncation

    const auto expected = oracle::ref_rescue_counts(ref_base, ref_candidate, tokens);
    REQUIRE(plan.selected.size() == expected.size());
    for (const auto& entry : plan.selected) {
      const auto it = expected.find(entry.piece);
      REQUIRE(it != expected.end());
      CHECK(entry.rescue_count == it->second);
    }
    for (size_t i = 1; i < plan.selected.size(); ++i) {
      CHECK(plan.selected[i].rescue_count <= plan.selected[i - 1].rescue_count);
    }
  }
}

TEST_CASE("applying a plan selected on a corpus never raises its UNK share") {
  oracle::FixtureGen gen(909);
  const std::vector<char32_t> alphabet{U'x', U'y', U'z', U'w'};
  for (int trial = 0; trial < 60; ++trial) {
    const Vocabulary base =
        Vocabulary::with_unk(gen.random_pieces(2 + gen.rng.bounded(5), alphabet));
    std::vector<std::string> lines;
    for (int s = 0; s < 4; ++s) {
      std::string line;
      for (int w = 0; w < 6; ++w) {
        line += gen.random_word(1, 5, alphabet);
        line += ' ';
      }
      lines.push_back(line);
    }
    const Corpus corpus = make_corpus(std::move(lines));
    const Vocabulary candidate = train_vocabulary(corpus, 60, 1);
    const AugmentationPlan plan =
        select_augmentation(base, candidate, corpus, 1 + gen.rng.bounded(20));
    const Vocabulary augmented = apply_augmentation(base, plan);
    CHECK(unk_token_percentage(augmented, corpus) <= unk_token_percentage(base, corpus));
  }
}

TEST_CASE("re-selecting after applying a plan yields disjoint pieces") {
  const Vocabulary base = Vocabulary::with_unk({"q"});
  const Corpus corpus = make_corpus({"qab qab qba cd cd cd"});
  const Vocabulary candidate = train_vocabulary(corpus, 60, 1);
  const AugmentationPlan first = select_augmentation(base, candidate, corpus, 3);
  REQUIRE(!first.selected.empty());
  const Vocabulary augmented = apply_augmentation(base, first);
  const AugmentationPlan second = select_augmentation(augmented, candidate, corpus, 3);
  for (const auto& entry : second.selected) {
    for (const auto& prior : first.selected) {
      CHECK(entry.piece != prior.piece);
    }
  }
}

TEST_CASE("presets pin the published parameter settings") {
  const PresetSpec va = preset(Preset::kVa, 5000);
  CHECK(va.n == 99);
  CHECK(va.a == 1.0);
  CHECK(va.candidate_size == 5000);

  const PresetSpec embert = preset(Preset::kEmbert, 5000);
  CHECK(embert.n == 5000);
  CHECK(embert.a == 1.0);
  CHECK(embert.candidate_size == 5000);

  const PresetSpec tva = preset(Preset::kTva, 5000, 5.0);
  CHECK(tva.n == 99);
  CHECK(tva.a == 5.0);
  CHECK(tva.candidate_size == 5000);
}

TEST_CASE("preset validation") {
  CHECK_THROWS_AS(parse_preset("NOPE"), ValidationError);
  CHECK_THROWS_AS(preset(Preset::kTva, 5000), ValidationError);        // a required
  CHECK_THROWS_AS(preset(Preset::kTva, 5000, -1.0), ValidationError);  // a positive
  CHECK_THROWS_AS(preset(Preset::kVa, 5000, 2.0), ValidationError);    // a only for TVA
  CHECK(parse_preset("VA") == Preset::kVa);
  CHECK(parse_preset("TVA") == Preset::kTva);
  CHECK(parse_preset("EMBERT") == Preset::kEmbert);
}

TEST_CASE("plans round-trip through JSON") {
  AugmentationPlan plan;
  plan.n = 4;
  plan.a = 2.5;
  plan.source = "candidate:sha256:x;corpus:sha256:y";
  plan.selected = {{"##ко", 7}, {"ба", 3}};
  plan.warnings = {"requested n=4 but only 2 rescuing pieces were available"};
  const AugmentationPlan back = plan_from_json(plan_to_json(plan));
  CHECK(back.n == plan.n);
  CHECK(back.a == plan.a);
  CHECK(back.source == plan.source);
  REQUIRE(back.selected.size() == 2);
  CHECK(back.selected[0].piece == "##ко");
  CHECK(back.selected[1].rescue_count == 3);
  CHECK(back.warnings == plan.warnings);
}

TEST_CASE("plan JSON validation rejects increasing counts") {
  nlohmann::json j{{"n", 2},
                   {"a", 1.0},
                   {"selected", {{{"piece", "a"}, {"rescue_count", 1}},
                                 {{"piece", "b"}, {"rescue_count", 5}}}}};
  CHECK_THROWS_AS(plan_from_json(j), ValidationError);
}
