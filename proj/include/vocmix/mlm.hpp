#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vocmix/augment.hpp"
#include "vocmix/corpus.hpp"
#include "vocmix/wordpiece.hpp"

namespace vocmix {

inline constexpr std::string_view kMaskPiece = "[MASK]";
inline constexpr std::string_view kPadPiece = "[PAD]";

// Appends [MASK] and [PAD] when absent. Call before creating a state and
// before applying an augmentation plan, so plan rows stay the trailing block.
Vocabulary ensure_mlm_specials(const Vocabulary& vocab);

struct MlmArch {
  int width = 32;      // embedding and hidden width d
  int blocks = 1;      // self-attention blocks
  int heads = 2;       // attention heads; width % heads == 0
  int ff_mult = 4;     // MLP inner width = ff_mult * d
  int max_seq = 64;    // sequence cap in pieces

  void validate() const;
  bool operator==(const MlmArch&) const = default;
};

struct MlmConfig {
  double mask_probability = 0.15;
  std::array<double, 3> mask_split{0.8, 0.1, 0.1};  // mask / random / keep
  double peak_lr = 0.5;
  int warmup_steps = 1000;
  int max_epochs = 20;
  double a = 1.0;  // learning-rate multiplier for appended embedding rows
  uint64_t seed = 0;
  enum class Optimizer { kSgd, kAdaptive } optimizer = Optimizer::kSgd;
  int batch_size = 16;
  // Adaptive (Adam) settings; the SGD path ignores them.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct BlockParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::VectorXd bq, bk, bv, bo;  // d
  Eigen::VectorXd ln1_g, ln1_b, ln2_g, ln2_b;  // d
  Eigen::MatrixXd w1;  // d x ff
  Eigen::VectorXd b1;  // ff
  Eigen::MatrixXd w2;  // ff x d
  Eigen::VectorXd b2;  // d
};

// Every trainable tensor; doubles as the gradient container.
struct MlmParams {
  Eigen::MatrixXd embeddings;  // |V| x d; also the tied output projection
  Eigen::MatrixXd positional;  // max_seq x d
  std::vector<BlockParams> blocks;
  Eigen::VectorXd ln_f_g, ln_f_b;  // final layer norm
  Eigen::VectorXd output_bias;     // |V|

  static MlmParams zeros_like(const MlmParams& shape);

  // Visits every tensor in a fixed order as (name, data, rows, cols);
  // column-major storage. Used by the optimizer, checkpoints, and tests.
  void for_each_tensor(
      const std::function<void(const std::string&, double*, Eigen::Index, Eigen::Index)>& f);
  void for_each_tensor(const std::function<void(const std::string&, const double*, Eigen::Index,
                                                Eigen::Index)>& f) const;
};

struct MlmState {
  MlmArch arch;
  MlmParams params;
  Eigen::Index new_row_start = 0;  // rows >= this are plan-appended pieces
  std::string vocab_digest;

  Eigen::Index vocab_size() const { return params.embeddings.rows(); }

  // Fresh random initialization; requires [MASK] and [PAD] in the vocabulary.
  static MlmState fresh(const Vocabulary& vocab, const MlmArch& arch, uint64_t seed,
                        double init_scale = 0.02);
};

enum class InitPolicy { kMeanPlusNoise, kRandomNormal };

// Appends one embedding row (and output-bias slot) per plan piece. The
// extended vocabulary is apply_augmentation(vocab, plan) of the state's vocab.
MlmState init_extended(const MlmState& base, const Vocabulary& base_vocab,
                       const AugmentationPlan& plan, InitPolicy policy, double noise_scale,
                       uint64_t seed);

inline constexpr int kIgnoreLabel = -1;

struct MaskedBatch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> labels;  // kIgnoreLabel at unselected positions
};

// Each position is selected independently with mask_probability; selected
// positions get label = original id and an input drawn per mask_split.
MaskedBatch mask_batch(const std::vector<std::vector<int>>& token_ids, const MlmConfig& config,
                       uint64_t step_seed, int vocab_size, int mask_id);

// Per-sequence activations kept for the backward pass.
struct BlockCache {
  Eigen::MatrixXd x_in, n1, q, k, v, heads_out, x_mid, n2, h_pre, h_act;
  std::vector<Eigen::MatrixXd> attn;  // per head, T x T
  Eigen::VectorXd mean1, inv_std1, mean2, inv_std2;
};
struct SeqCache {
  std::vector<int> ids;
  Eigen::MatrixXd x0;
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd x_pre_final;
  Eigen::VectorXd mean_f, inv_std_f;
  Eigen::MatrixXd hidden;  // final hidden states, T x d
};

// Runs the encoder on one piece-id sequence; returns final hidden states.
Eigen::MatrixXd encoder_forward(const MlmState& state, std::span<const int> ids,
                                SeqCache* cache = nullptr);

// Accumulates gradients for d_hidden (T x d) at the final hidden states.
void encoder_backward(const MlmState& state, const SeqCache& cache,
                      const Eigen::MatrixXd& d_hidden, MlmParams& grads);

struct LossResult {
  double loss = 0.0;
  uint64_t labeled_positions = 0;
  MlmParams grads;
};

// Mean cross-entropy over labeled positions with the tied output projection.
// Returns nullopt when the batch has no labeled position (caller skips it).
std::optional<LossResult> mlm_loss(const MlmState& state, const MaskedBatch& batch);

// peak_lr * min(1, step / warmup_steps); constant at peak afterwards.
double lr_at(int64_t step, const MlmConfig& config);

// One plain SGD update. Embedding rows at or past new_row_start step with
// rate a * lr; every other parameter (and embedding row) steps with lr.
void sgd_update(MlmState& state, const MlmParams& grads, double lr, double a);

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> valid_loss;  // per epoch
  int selected_epoch = 0;          // 1-based argmin of valid_loss
  std::vector<std::pair<int64_t, double>> lr_trace;

  nlohmann::json to_json() const;
};

// Epoch loop with per-step linear-warmup SGD (or Adam); appended embedding
// rows train at a times the schedule rate; returns the best-epoch snapshot.
std::pair<MlmState, TrainReport> train(const MlmState& initial, const Corpus& train_corpus,
                                       const Corpus& valid_corpus, const Vocabulary& vocab,
                                       const MlmConfig& config);

// Sentence -> piece ids (basic_tokenize + tokenize_word), truncated to max_seq.
std::vector<std::vector<int>> encode_corpus(const Vocabulary& vocab, const Corpus& corpus,
                                            int max_seq);

// Self-describing binary container; little-endian f64 tensors; bit-exact
// round-trip.
void save_checkpoint(const MlmState& state, const std::filesystem::path& path);
MlmState load_checkpoint(const std::filesystem::path& path);

}  // namespace vocmix
