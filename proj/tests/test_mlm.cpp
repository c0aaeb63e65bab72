#include "vocmix/mlm.hpp"

#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vocmix/errors.hpp"
#include "vocmix/rng.hpp"

using namespace vocmix;

namespace {

Vocabulary small_vocab(size_t letters = 6) {
  std::vector<std::string> pieces;
  for (size_t i = 0; i < letters; ++i) {
    const std::string c(1, static_cast<char>('a' + i));
    pieces.push_back(c);
    pieces.push_back("##" + c);
  }
  return ensure_mlm_specials(Vocabulary::with_unk(std::move(pieces)));
}

std::string state_bytes(const MlmState& state) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("vocmix_state_" + std::to_string(Rng(reinterpret_cast<uintptr_t>(&state)).next()) + ".bin");
  save_checkpoint(state, path);
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::filesystem::remove(path);
  return buf.str();
}

MlmArch tiny_arch() {
  MlmArch arch;
  arch.width = 8;
  arch.blocks = 1;
  arch.heads = 2;
  arch.ff_mult = 2;
  arch.max_seq = 12;
  return arch;
}

AugmentationPlan plan_of(std::vector<std::string> pieces) {
  AugmentationPlan plan;
  plan.n = pieces.size();
  uint64_t count = pieces.size();
  for (auto& piece : pieces) {
    plan.selected.push_back({std::move(piece), count--});
  }
  return plan;
}

}  // namespace

TEST_CASE("ensure_mlm_specials appends [MASK] and [PAD] once") {
  const Vocabulary base = Vocabulary::with_unk({"a"});
  const Vocabulary prepared = ensure_mlm_specials(base);
  CHECK(prepared.size() == base.size() + 2);
  CHECK(prepared.contains("[MASK]"));
  CHECK(prepared.contains("[PAD]"));
  const Vocabulary again = ensure_mlm_specials(prepared);
  CHECK(again.entries() == prepared.entries());
}

TEST_CASE("fresh states are deterministic per seed") {
  const Vocabulary vocab = small_vocab();
  const MlmArch arch = tiny_arch();
  const MlmState a = MlmState::fresh(vocab, arch, 42);
  const MlmState b = MlmState::fresh(vocab, arch, 42);
  const MlmState c = MlmState::fresh(vocab, arch, 43);
  CHECK(state_bytes(a) == state_bytes(b));
  CHECK(state_bytes(a) != state_bytes(c));
  CHECK(a.params.embeddings.rows() == static_cast<Eigen::Index>(vocab.size()));
  CHECK(a.new_row_start == a.params.embeddings.rows());
}

TEST_CASE("fresh requires the reserved pieces") {
  const Vocabulary bare = Vocabulary::with_unk({"a"});
  CHECK_THROWS_AS(MlmState::fresh(bare, tiny_arch(), 1), ValidationError);
}

TEST_CASE("init_extended appends exactly the plan rows") {
  const Vocabulary vocab = small_vocab();
  const MlmState base = MlmState::fresh(vocab, tiny_arch(), 7);
  const AugmentationPlan plan = plan_of({"xy", "##yz", "zq"});
  const MlmState extended = init_extended(base, vocab, plan, InitPolicy::kRandomNormal, 0.5, 11);
  CHECK(extended.params.embeddings.rows() == base.params.embeddings.rows() + 3);
  CHECK(extended.new_row_start == base.params.embeddings.rows());
  CHECK(extended.params.output_bias.size() == base.params.output_bias.size() + 3);
  // Base rows untouched.
  CHECK(extended.params.embeddings.topRows(base.params.embeddings.rows()) ==
        base.params.embeddings);
}

TEST_CASE("mean_plus_noise with zero noise gives the column mean exactly") {
  const Vocabulary vocab = small_vocab();
  const MlmState base = MlmState::fresh(vocab, tiny_arch(), 7);
  const AugmentationPlan plan = plan_of({"xy"});
  const MlmState extended = init_extended(base, vocab, plan, InitPolicy::kMeanPlusNoise, 0.0, 3);
  const Eigen::VectorXd mean = base.params.embeddings.colwise().mean().transpose();
  CHECK((extended.params.embeddings.bottomRows(1).transpose() - mean).norm() == 0.0);
}

TEST_CASE("init_extended is deterministic per seed") {
  const Vocabulary vocab = small_vocab();
  const MlmState base = MlmState::fresh(vocab, tiny_arch(), 7);
  const AugmentationPlan plan = plan_of({"xy", "zq"});
  const MlmState a = init_extended(base, vocab, plan, InitPolicy::kMeanPlusNoise, 0.1, 5);
  const MlmState b = init_extended(base, vocab, plan, InitPolicy::kMeanPlusNoise, 0.1, 5);
  CHECK(state_bytes(a) == state_bytes(b));
}

TEST_CASE("init_extended rejects mismatched vocabularies") {
  const Vocabulary vocab = small_vocab();
  const Vocabulary other = small_vocab(4);
  const MlmState base = MlmState::fresh(vocab, tiny_arch(), 7);
  const AugmentationPlan plan = plan_of({"xy"});
  CHECK_THROWS_AS(init_extended(base, other, plan, InitPolicy::kMeanPlusNoise, 0.1, 5),
                  ValidationError);
}

TEST_CASE("mask_batch with probability zero changes nothing") {
  MlmConfig config;
  config.mask_probability = 0.0;
  const std::vector<std::vector<int>> ids{{1, 2, 3}, {4, 5}};
  const MaskedBatch out = mask_batch(ids, config, 9, 32, 0);
  CHECK(out.inputs == ids);
  for (const auto& labels : out.labels) {
    for (const int label : labels) CHECK(label == kIgnoreLabel);
  }
}

TEST_CASE("mask split fractions concentrate at (0.8, 0.1, 0.1)") {
  MlmConfig config;
  config.mask_probability = 1.0;
  const int mask_id = 30;
  const int vocab_size = 31;
  std::vector<std::vector<int>> ids(1000, std::vector<int>(100, 7));
  const MaskedBatch out = mask_batch(ids, config, 123, vocab_size, mask_id);
  uint64_t masked = 0;
  uint64_t kept = 0;
  uint64_t randomized = 0;
  uint64_t total = 0;
  for (const auto& seq : out.inputs) {
    for (const int v : seq) {
      ++total;
      if (v == mask_id) {
        ++masked;
      } else if (v == 7) {
        ++kept;
      } else {
        ++randomized;
      }
    }
  }
  CHECK(total == 100000);
  const double n = static_cast<double>(total);
  // "kept" also absorbs random draws equal to the original id (p = 1/31).
  CHECK(std::abs(static_cast<double>(masked) / n - 0.8) < 0.01);
  CHECK(std::abs(static_cast<double>(randomized) / n - 0.1 * 30.0 / 31.0) < 0.01);
  CHECK(std::abs(static_cast<double>(kept) / n - (0.1 + 0.1 / 31.0)) < 0.01);
  for (size_t s = 0; s < out.labels.size(); ++s) {
    for (const int label : out.labels[s]) CHECK(label == 7);
  }
}

TEST_CASE("mask_batch is deterministic per step seed") {
  MlmConfig config;
  const std::vector<std::vector<int>> ids{{1, 2, 3, 4, 5, 6, 7, 8}};
  const MaskedBatch a = mask_batch(ids, config, 77, 32, 0);
  const MaskedBatch b = mask_batch(ids, config, 77, 32, 0);
  CHECK(a.inputs == b.inputs);
  CHECK(a.labels == b.labels);
}

TEST_CASE("mask_split must sum to one") {
  MlmConfig config;
  config.mask_split = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(config.validate(), ValidationError);
}

TEST_CASE("uniform logits give ln |V| exactly") {
  const Vocabulary vocab = small_vocab();
  MlmState state = MlmState::fresh(vocab, tiny_arch(), 5);
  state.params.embeddings.setZero();  // logits collapse to output_bias == 0
  MaskedBatch batch;
  batch.inputs = {{1, 2, 3, 4}};
  batch.labels = {{1, kIgnoreLabel, 3, kIgnoreLabel}};
  const auto result = mlm_loss(state, batch);
  REQUIRE(result.has_value());
  CHECK(result->labeled_positions == 2);
  CHECK(result->loss ==
        doctest::Approx(std::log(static_cast<double>(vocab.size()))).epsilon(1e-12));
}

TEST_CASE("a batch with no labels is signaled distinctly") {
  const Vocabulary vocab = small_vocab();
  const MlmState state = MlmState::fresh(vocab, tiny_arch(), 5);
  MaskedBatch batch;
  batch.inputs = {{1, 2}};
  batch.labels = {{kIgnoreLabel, kIgnoreLabel}};
  CHECK(!mlm_loss(state, batch).has_value());
}

TEST_CASE("single-label loss equals that position's cross-entropy") {
  const Vocabulary vocab = small_vocab();
  const MlmState state = MlmState::fresh(vocab, tiny_arch(), 5);
  MaskedBatch batch;
  batch.inputs = {{1, 2, 3}};
  batch.labels = {{kIgnoreLabel, 4, kIgnoreLabel}};
  const auto result = mlm_loss(state, batch);
  REQUIRE(result.has_value());

  const Eigen::MatrixXd hidden = encoder_forward(state, batch.inputs[0]);
  const Eigen::VectorXd logits =
      state.params.embeddings * hidden.row(1).transpose() + state.params.output_bias;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  CHECK(result->loss == doctest::Approx(lse - logits(4)).epsilon(1e-12));
}

TEST_CASE("every parameter group passes central finite differences") {
  std::vector<std::string> pieces;
  for (char c = 'a'; c < 'a' + 13; ++c) {
    pieces.push_back(std::string(1, c));
    pieces.push_back("##" + std::string(1, c));
  }
  // 1 + 26 + mask + pad = 29 entries; add one more for |V| = 30
  pieces.push_back("zz");
  const Vocabulary vocab = ensure_mlm_specials(Vocabulary::with_unk(std::move(pieces)));
  REQUIRE(vocab.size() == 30);

  MlmArch arch = tiny_arch();  // d = 8
  MlmState state = MlmState::fresh(vocab, arch, 99, 0.4);

  Rng rng(2718);
  MaskedBatch batch;
  for (int s = 0; s < 2; ++s) {
    std::vector<int> inputs;
    std::vector<int> labels;
    for (int t = 0; t < 8; ++t) {
      inputs.push_back(static_cast<int>(rng.bounded(vocab.size())));
      labels.push_back(rng.uniform01() < 0.5 ? static_cast<int>(rng.bounded(vocab.size()))
                                             : kIgnoreLabel);
    }
    labels[0] = 3;  // guarantee a labeled position
    batch.inputs.push_back(std::move(inputs));
    batch.labels.push_back(std::move(labels));
  }

  const gradcheck::Report report = gradcheck::check_all(state, batch);
  for (const auto& [tensor, rel] : report.per_tensor) {
    INFO("tensor ", tensor);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("warmup schedule is exact") {
  MlmConfig config;
  config.peak_lr = 0.4;
  config.warmup_steps = 1000;
  CHECK(lr_at(1, config) == 0.4 * (1.0 / 1000.0));
  CHECK(lr_at(500, config) == 0.4 * 0.5);
  CHECK(lr_at(1000, config) == 0.4);
  CHECK(lr_at(5000, config) == 0.4);
  CHECK_THROWS_AS(lr_at(0, config), ValidationError);
}

TEST_CASE("sgd multiplier scales new rows exactly and leaves base rows alone") {
  const Vocabulary vocab = small_vocab();
  const MlmState base = MlmState::fresh(vocab, tiny_arch(), 21);
  const AugmentationPlan plan = plan_of({"qq", "##qq"});
  const MlmState start = init_extended(base, vocab, plan, InitPolicy::kMeanPlusNoise, 0.05, 2);
  const Vocabulary extended = apply_augmentation(vocab, plan);

  const auto seqs = encode_corpus(extended, make_corpus({"ab qq ba", "qq ab"}), 12);
  MlmConfig config;
  const int mask_id = static_cast<int>(*extended.id_of("[MASK]"));
  const MaskedBatch batch =
      mask_batch(seqs, config, 5, static_cast<int>(extended.size()), mask_id);
  const auto loss = mlm_loss(start, batch);
  REQUIRE(loss.has_value());

  MlmState one = start;
  sgd_update(one, loss->grads, 0.25, 1.0);
  MlmState three = start;
  sgd_update(three, loss->grads, 0.25, 3.0);

  const Eigen::Index split = start.new_row_start;
  const Eigen::MatrixXd delta_one =
      one.params.embeddings.bottomRows(2) - start.params.embeddings.bottomRows(2);
  const Eigen::MatrixXd delta_three =
      three.params.embeddings.bottomRows(2) - start.params.embeddings.bottomRows(2);
  CHECK((delta_three - 3.0 * delta_one).cwiseAbs().maxCoeff() <= 1e-12);
  // Base embedding rows and every other tensor agree bit for bit.
  CHECK(one.params.embeddings.topRows(split) == three.params.embeddings.topRows(split));
  CHECK(one.params.positional == three.params.positional);
  CHECK(one.params.blocks[0].wq == three.params.blocks[0].wq);
  CHECK(one.params.output_bias == three.params.output_bias);
}

TEST_CASE("with no appended rows the multiplier is inert") {
  const Vocabulary vocab = small_vocab();
  const Corpus train_c = make_corpus({"ab ba ab", "ba ab", "ab ab ab", "ba ba"});
  const Corpus valid_c = make_corpus({"ab ba ab ba", "ba ab ab", "ab ba ba ab"});
  MlmConfig config;
  config.max_epochs = 2;
  config.warmup_steps = 4;
  config.peak_lr = 0.1;
  config.mask_probability = 0.4;
  config.seed = 31;
  const MlmState state = MlmState::fresh(vocab, tiny_arch(), 31);

  MlmConfig config_a = config;
  config_a.a = 5.0;
  const auto [state_one, report_one] = train(state, train_c, valid_c, vocab, config);
  const auto [state_five, report_five] = train(state, train_c, valid_c, vocab, config_a);
  CHECK(state_bytes(state_one) == state_bytes(state_five));
  CHECK(report_one.to_json().dump() == report_five.to_json().dump());
}

TEST_CASE("training is bit-for-bit deterministic under SGD") {
  const Vocabulary vocab = small_vocab();
  const Corpus train_c =
      make_corpus({"ab ba ab", "ba ab", "ab ab", "ba ba ba", "ab ba ba", "ba ab ab"});
  const Corpus valid_c = make_corpus({"ab ba", "ba ab"});
  MlmConfig config;
  config.max_epochs = 3;
  config.warmup_steps = 5;
  config.peak_lr = 0.2;
  config.seed = 77;
  config.batch_size = 2;
  const MlmState state = MlmState::fresh(vocab, tiny_arch(), 77);
  const auto [s1, r1] = train(state, train_c, valid_c, vocab, config);
  const auto [s2, r2] = train(state, train_c, valid_c, vocab, config);
  CHECK(state_bytes(s1) == state_bytes(s2));
  CHECK(r1.to_json().dump() == r2.to_json().dump());
}

TEST_CASE("the adaptive optimizer trains deterministically") {
  const Vocabulary vocab = small_vocab();
  const Corpus train_c =
      make_corpus({"ab ba ab ba", "ba ab ab", "ab ab ba ba", "ba ba ab", "ab ba ab"});
  const Corpus valid_c = make_corpus({"ab ba ab ba", "ba ab ba"});
  MlmConfig config;
  config.max_epochs = 4;
  config.warmup_steps = 5;
  config.peak_lr = 0.01;
  config.mask_probability = 0.4;
  config.optimizer = MlmConfig::Optimizer::kAdaptive;
  config.batch_size = 2;
  config.seed = 13;
  const MlmState state = MlmState::fresh(vocab, tiny_arch(), 13);
  const auto [s1, r1] = train(state, train_c, valid_c, vocab, config);
  const auto [s2, r2] = train(state, train_c, valid_c, vocab, config);
  CHECK(state_bytes(s1) == state_bytes(s2));
  CHECK(r1.to_json().dump() == r2.to_json().dump());
  CHECK(r1.train_loss.back() < r1.train_loss.front());
}

TEST_CASE("a memorizable corpus halves the training loss and selects the argmin epoch") {
  // Memorizable = a rigid skeleton with two low-entropy slots, so most
  // masked pieces are recoverable from position and the rest stay cheap.
  oracle::FixtureGen gen(4096);
  std::vector<std::string> templates;
  for (const char* x : {"ta", "tu"}) {
    for (const char* y : {"ri", "ro", "ru"}) {
      templates.push_back(std::string("ka lo ") + x + " mi " + y + " ne po");
    }
  }
  std::vector<std::string> lines;
  for (int i = 0; i < 200; ++i) {
    lines.push_back(templates[gen.rng.bounded(templates.size())]);
  }
  const Corpus full = make_corpus(std::move(lines));
  Corpus train_c;
  Corpus valid_c;
  for (size_t i = 0; i < full.sentences.size(); ++i) {
    (i % 10 == 9 ? valid_c : train_c).sentences.push_back(full.sentences[i]);
  }
  const Vocabulary vocab = ensure_mlm_specials(train_vocabulary(train_c, 40, 1));

  MlmConfig config;
  config.max_epochs = 20;
  config.warmup_steps = 50;
  config.peak_lr = 0.3;
  config.batch_size = 2;
  config.seed = 11;
  MlmArch arch;
  arch.width = 16;
  arch.blocks = 1;
  arch.heads = 2;
  arch.ff_mult = 2;
  arch.max_seq = 24;
  const MlmState state = MlmState::fresh(vocab, arch, 11);
  const auto [trained, report] = train(state, train_c, valid_c, vocab, config);

  REQUIRE(report.train_loss.size() == 20);
  CHECK(report.train_loss.back() < 0.5 * report.train_loss.front());
  int argmin = 0;
  for (size_t e = 1; e < report.valid_loss.size(); ++e) {
    if (report.valid_loss[e] < report.valid_loss[argmin]) argmin = static_cast<int>(e);
  }
  CHECK(report.selected_epoch == argmin + 1);

  // The schedule trace is exactly lr_at of each recorded step.
  REQUIRE(!report.lr_trace.empty());
  for (const auto& [step, lr] : report.lr_trace) {
    CHECK(lr == lr_at(step, config));
  }
}

TEST_CASE("train aborts with diagnostics on non-finite loss") {
  const Vocabulary vocab = small_vocab();
  MlmState state = MlmState::fresh(vocab, tiny_arch(), 1);
  state.params.embeddings.setConstant(std::numeric_limits<double>::quiet_NaN());
  MlmConfig config;
  config.max_epochs = 1;
  config.mask_probability = 1.0;  // every position labeled, first batch trips
  const Corpus train_c = make_corpus({"ab ba"});
  const Corpus valid_c = make_corpus({"ab"});
  CHECK_THROWS_WITH_AS((void)train(state, train_c, valid_c, vocab, config),
                       doctest::Contains("non-finite"), TrainingError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const Vocabulary vocab = small_vocab();
  const MlmState base = MlmState::fresh(vocab, tiny_arch(), 13);
  const AugmentationPlan plan = plan_of({"rr"});
  const MlmState state = init_extended(base, vocab, plan, InitPolicy::kMeanPlusNoise, 0.1, 4);

  const auto p1 = std::filesystem::temp_directory_path() / "vocmix_ckpt_a.bin";
  const auto p2 = std::filesystem::temp_directory_path() / "vocmix_ckpt_b.bin";
  save_checkpoint(state, p1);
  const MlmState loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);

  std::ifstream a(p1, std::ios::binary);
  std::ifstream b(p2, std::ios::binary);
  std::ostringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(loaded.new_row_start == state.new_row_start);
  CHECK(loaded.vocab_digest == state.vocab_digest);
  CHECK(loaded.params.embeddings == state.params.embeddings);
  CHECK(loaded.arch == state.arch);
}

TEST_CASE("initial loss sits near ln |V| for a fresh state") {
  const Vocabulary vocab = small_vocab();  // 17 entries
  const MlmState state = MlmState::fresh(vocab, tiny_arch(), 3, 0.02);
  Rng rng(5);
  MaskedBatch batch;
  std::vector<int> inputs;
  std::vector<int> labels;
  for (int t = 0; t < 10; ++t) {
    inputs.push_back(static_cast<int>(rng.bounded(vocab.size())));
    labels.push_back(static_cast<int>(rng.bounded(vocab.size())));
  }
  batch.inputs.push_back(inputs);
  batch.labels.push_back(labels);
  const auto result = mlm_loss(state, batch);
  REQUIRE(result.has_value());
  const double uniform = std::log(static_cast<double>(vocab.size()));
  CHECK(result->loss > 0.9 * uniform);
  CHECK(result->loss < 1.1 * uniform);
}
