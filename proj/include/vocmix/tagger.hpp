#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vocmix/mlm.hpp"
#include "vocmix/translit.hpp"

namespace vocmix {

struct TagDataset {
  enum class Column { kXpos, kUpos };
  struct Sentence {
    std::vector<std::string> tokens;
    std::vector<int> tag_ids;
  };
  std::vector<Sentence> sentences;
  std::vector<std::string> tagset;  // first-appearance order
  std::string source;
  Column column = Column::kXpos;
  bool used_upos_fallback = false;
};

// Ten-column tab-separated annotation reader. Comment lines, multiword-range
// ids, and empty-node ids are skipped. When column is XPOS and any token
// lacks an XPOS value ("_"), the whole dataset falls back to UPOS.
TagDataset load_conllu(const std::filesystem::path& path, TagDataset::Column column);

// Re-expresses tag ids in the given tagset order. Evaluation data must share
// the id space of the dataset the tagger was trained on; unknown tags error.
TagDataset align_tagset(const TagDataset& data, const std::vector<std::string>& tagset);

enum class WordPooling { kFirstPiece, kMean };

struct TaggerParams {
  Eigen::MatrixXd projection;  // d x |tagset|
  Eigen::VectorXd bias;        // |tagset|
};

struct TaggerTrainResult {
  TaggerParams params;
  MlmState encoder;  // updated when finetuning, otherwise a copy of the input
  std::vector<double> epoch_loss;
};

// Linear softmax probe over encoder states, one representation per word
// (first wordpiece by default), plain per-sentence gradient descent.
TaggerTrainResult train_tagger(const MlmState& encoder, const Vocabulary& vocab,
                               const TagDataset& data, int epochs, double lr,
                               bool finetune_encoder, uint64_t seed,
                               WordPooling pooling = WordPooling::kFirstPiece);

// Token-level accuracy; logit ties break toward the lowest tag index.
double evaluate_accuracy(const MlmState& encoder, const Vocabulary& vocab,
                         const TaggerParams& params, const TagDataset& data,
                         WordPooling pooling = WordPooling::kFirstPiece);

// Maps every token through the scheme; pairs whose token transliterates to
// the empty string are dropped, as are sentences that become empty.
TagDataset transliterate_dataset(const TransliterationScheme& scheme, const TagDataset& data);

enum class PipelineConfig { kBase, kLapt, kVa, kLaptTranslit, kVaTranslit };

PipelineConfig parse_pipeline_config(std::string_view name);
std::string pipeline_config_name(PipelineConfig config);

struct ComparisonSpec {
  Corpus unlabeled;        // target-language pretraining text
  Corpus valid;            // held-out split for MLM validation
  Vocabulary base_vocab;   // pre-specials base vocabulary
  TagDataset tag_train;
  TagDataset tag_test;
  std::optional<TransliterationScheme> scheme;  // required by *Translit configs

  MlmArch arch;
  MlmConfig mlm;              // per-run seed is derived and overridden
  uint64_t va_n = 99;
  size_t va_candidate_size = 5000;
  size_t min_frequency = 2;
  InitPolicy init_policy = InitPolicy::kMeanPlusNoise;
  double init_noise_scale = 0.01;
  int tagger_epochs = 30;
  double tagger_lr = 0.2;
  bool finetune_encoder = true;
  WordPooling pooling = WordPooling::kFirstPiece;
};

struct ComparisonCell {
  std::string config;
  std::vector<double> scores;  // one per seed, in seed order
  double mean = 0.0;
  double stderr_mean = 0.0;    // sample sd / sqrt(n); 0 for n == 1
};

struct ComparisonTable {
  std::vector<uint64_t> seeds;
  std::vector<ComparisonCell> cells;
  struct Delta {
    std::string a;
    std::string b;
    double mean_delta = 0.0;  // mean(a) - mean(b)
  };
  std::vector<Delta> deltas;  // all ordered pairs

  nlohmann::json to_json() const;
  std::string to_text() const;
};
ComparisonTable comparison_table_from_json(const nlohmann::json& j);

// Executes mix-ins -> continued pretraining -> probe training -> evaluation
// for every (config, seed); independent runs may execute on up to `jobs`
// threads, assembled in deterministic order.
ComparisonTable run_comparison(const ComparisonSpec& spec,
                               const std::vector<PipelineConfig>& configs,
                               const std::vector<uint64_t>& seeds, int jobs = 1);

}  // namespace vocmix
