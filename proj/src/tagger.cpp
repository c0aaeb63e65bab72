#include "vocmix/tagger.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "vocmix/errors.hpp"
#include "vocmix/rng.hpp"

namespace vocmix {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TagDataset load_conllu(const std::filesystem::path& path, TagDataset::Column column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read dataset file: " + path.string());
  }

  struct RawToken {
    std::string form, upos, xpos;
  };
  std::vector<std::vector<RawToken>> raw_sentences;
  std::vector<RawToken> current;

  std::string line;
  size_t line_no = 0;
  bool any_missing_xpos = false;
  auto flush = [&] {
    if (!current.empty()) {
      raw_sentences.push_back(std::move(current));
      current.clear();
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 10) {
      throw ParseError("expected 10 tab-separated columns at " + path.string() + ":" +
                       std::to_string(line_no));
    }
    const std::string& id = fields[0];
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos) {
      continue;  // multiword range or empty node
    }
    if (fields[1].empty()) {
      throw ParseError("empty FORM at " + path.string() + ":" + std::to_string(line_no));
    }
    if (fields[4] == "_") any_missing_xpos = true;
    current.push_back({fields[1], fields[3], fields[4]});
  }
  flush();

  TagDataset data;
  data.source = path.string();
  data.column = column;
  data.used_upos_fallback = column == TagDataset::Column::kXpos && any_missing_xpos;
  const bool use_upos = column == TagDataset::Column::kUpos || data.used_upos_fallback;

  std::map<std::string, int> tag_ids;
  for (const auto& raw : raw_sentences) {
    TagDataset::Sentence sentence;
    for (const auto& token : raw) {
      const std::string& tag = use_upos ? token.upos : token.xpos;
      auto it = tag_ids.find(tag);
      if (it == tag_ids.end()) {
        it = tag_ids.emplace(tag, static_cast<int>(data.tagset.size())).first;
        data.tagset.push_back(tag);
      }
      sentence.tokens.push_back(token.form);
      sentence.tag_ids.push_back(it->second);
    }
    data.sentences.push_back(std::move(sentence));
  }
  return data;
}

TagDataset align_tagset(const TagDataset& data, const std::vector<std::string>& tagset) {
  std::map<std::string, int> ids;
  for (size_t i = 0; i < tagset.size(); ++i) ids[tagset[i]] = static_cast<int>(i);
  TagDataset out = data;
  out.tagset = tagset;
  for (auto& sentence : out.sentences) {
    for (auto& tag_id : sentence.tag_ids) {
      const std::string& name = data.tagset[static_cast<size_t>(tag_id)];
      const auto it = ids.find(name);
      if (it == ids.end()) {
        throw ValidationError("tag \"" + name + "\" is absent from the training tagset");
      }
      tag_id = it->second;
    }
  }
  return out;
}

namespace {

struct EncodedSentence {
  std::vector<int> piece_ids;
  // Per kept word: [first, last) piece span and its gold tag.
  std::vector<std::pair<int, int>> spans;
  std::vector<int> tags;
};

EncodedSentence encode_tagged_sentence(const Vocabulary& vocab,
                                       const TagDataset::Sentence& sentence, int max_seq) {
  EncodedSentence out;
  for (size_t w = 0; w < sentence.tokens.size(); ++w) {
    const Segmentation seg = tokenize_word(vocab, sentence.tokens[w]);
    const int first = static_cast<int>(out.piece_ids.size());
    if (first >= max_seq) break;  // words past the sequence cap are dropped
    for (const auto& piece : seg.pieces) {
      if (static_cast<int>(out.piece_ids.size()) >= max_seq) break;
      out.piece_ids.push_back(static_cast<int>(*vocab.id_of(piece)));
    }
    const int last = static_cast<int>(out.piece_ids.size());
    if (last == first) break;
    out.spans.emplace_back(first, last);
    out.tags.push_back(sentence.tag_ids[w]);
  }
  return out;
}

VectorXd word_representation(const MatrixXd& hidden, std::pair<int, int> span,
                             WordPooling pooling) {
  if (pooling == WordPooling::kFirstPiece) {
    return hidden.row(span.first).transpose();
  }
  return hidden.middleRows(span.first, span.second - span.first).colwise().mean().transpose();
}

}  // namespace

TaggerTrainResult train_tagger(const MlmState& encoder, const Vocabulary& vocab,
                               const TagDataset& data, int epochs, double lr,
                               bool finetune_encoder, uint64_t seed, WordPooling pooling) {
  if (data.tagset.empty() || data.sentences.empty()) {
    throw ValidationError("tagger training requires a non-empty dataset");
  }
  if (epochs <= 0 || !(lr > 0.0)) {
    throw ValidationError("tagger training requires positive epochs and lr");
  }
  const Index d = encoder.arch.width;
  const auto n_tags = static_cast<Index>(data.tagset.size());

  TaggerTrainResult result;
  result.encoder = encoder;
  result.params.projection = MatrixXd::Zero(d, n_tags);
  result.params.bias = VectorXd::Zero(n_tags);

  std::vector<EncodedSentence> encoded;
  encoded.reserve(data.sentences.size());
  for (const auto& sentence : data.sentences) {
    EncodedSentence e = encode_tagged_sentence(vocab, sentence, encoder.arch.max_seq);
    if (!e.spans.empty()) encoded.push_back(std::move(e));
  }
  if (encoded.empty()) {
    throw ValidationError("no trainable words after encoding");
  }

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(seed, "tagger-order", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.bounded(i));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    uint64_t word_count = 0;
    for (const size_t si : order) {
      const EncodedSentence& e = encoded[si];
      SeqCache cache;
      const MatrixXd hidden = encoder_forward(result.encoder, e.piece_ids, &cache);
      const double inv_w = 1.0 / static_cast<double>(e.spans.size());

      MatrixXd d_hidden = MatrixXd::Zero(hidden.rows(), hidden.cols());
      MatrixXd d_proj = MatrixXd::Zero(d, n_tags);
      VectorXd d_bias = VectorXd::Zero(n_tags);
      for (size_t w = 0; w < e.spans.size(); ++w) {
        const VectorXd rep = word_representation(hidden, e.spans[w], pooling);
        VectorXd logits = result.params.projection.transpose() * rep + result.params.bias;
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        const int gold = e.tags[w];
        loss_sum += (lse - logits(gold)) * inv_w;
        VectorXd softmax = (logits.array() - lse).exp().matrix();
        softmax(gold) -= 1.0;
        softmax *= inv_w;
        d_proj += rep * softmax.transpose();
        d_bias += softmax;
        const VectorXd d_rep = result.params.projection * softmax;
        const auto [first, last] = e.spans[w];
        if (pooling == WordPooling::kFirstPiece) {
          d_hidden.row(first) += d_rep.transpose();
        } else {
          const double inv_span = 1.0 / static_cast<double>(last - first);
          for (int t = first; t < last; ++t) {
            d_hidden.row(t) += d_rep.transpose() * inv_span;
          }
        }
      }
      if (finetune_encoder) {
        MlmParams grads = MlmParams::zeros_like(result.encoder.params);
        encoder_backward(result.encoder, cache, d_hidden, grads);
        sgd_update(result.encoder, grads, lr, 1.0);
      }
      result.params.projection -= lr * d_proj;
      result.params.bias -= lr * d_bias;
      word_count += e.spans.size();
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(encoded.size()));
    (void)word_count;
  }
  return result;
}

double evaluate_accuracy(const MlmState& encoder, const Vocabulary& vocab,
                         const TaggerParams& params, const TagDataset& data,
                         WordPooling pooling) {
  if (data.sentences.empty()) {
    throw ValidationError("evaluate_accuracy requires a non-empty dataset");
  }
  uint64_t correct = 0;
  uint64_t total = 0;
  for (const auto& sentence : data.sentences) {
    const EncodedSentence e = encode_tagged_sentence(vocab, sentence, encoder.arch.max_seq);
    if (e.spans.empty()) continue;
    const MatrixXd hidden = encoder_forward(encoder, e.piece_ids);
    for (size_t w = 0; w < e.spans.size(); ++w) {
      const VectorXd rep = word_representation(hidden, e.spans[w], pooling);
      const VectorXd logits = params.projection.transpose() * rep + params.bias;
      Index best = 0;
      for (Index t = 1; t < logits.size(); ++t) {
        if (logits(t) > logits(best)) best = t;  // ties keep the lowest index
      }
      if (static_cast<int>(best) == e.tags[w]) ++correct;
      ++total;
    }
  }
  if (total == 0) {
    throw ValidationError("no evaluable words in dataset");
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

TagDataset transliterate_dataset(const TransliterationScheme& scheme, const TagDataset& data) {
  TagDataset out;
  out.tagset = data.tagset;
  out.source = data.source + " (transliterated: " + scheme.name + ")";
  out.column = data.column;
  out.used_upos_fallback = data.used_upos_fallback;
  for (const auto& sentence : data.sentences) {
    TagDataset::Sentence mapped;
    for (size_t w = 0; w < sentence.tokens.size(); ++w) {
      std::string token = transliterate(scheme, sentence.tokens[w]);
      if (token.empty()) continue;
      mapped.tokens.push_back(std::move(token));
      mapped.tag_ids.push_back(sentence.tag_ids[w]);
    }
    if (!mapped.tokens.empty()) out.sentences.push_back(std::move(mapped));
  }
  return out;
}

PipelineConfig parse_pipeline_config(std::string_view name) {
  if (name == "BASE") return PipelineConfig::kBase;
  if (name == "LAPT") return PipelineConfig::kLapt;
  if (name == "VA") return PipelineConfig::kVa;
  if (name == "LAPT+translit") return PipelineConfig::kLaptTranslit;
  if (name == "VA+translit") return PipelineConfig::kVaTranslit;
  throw ValidationError("unknown pipeline config \"" + std::string(name) +
                        "\"; expected BASE, LAPT, VA, LAPT+translit, or VA+translit");
}

std::string pipeline_config_name(PipelineConfig config) {
  switch (config) {
    case PipelineConfig::kBase:
      return "BASE";
    case PipelineConfig::kLapt:
      return "LAPT";
    case PipelineConfig::kVa:
      return "VA";
    case PipelineConfig::kLaptTranslit:
      return "LAPT+translit";
    case PipelineConfig::kVaTranslit:
      return "VA+translit";
  }
  return "?";
}

namespace {

double run_single(const ComparisonSpec& spec, PipelineConfig config, uint64_t seed) {
  const std::string name = pipeline_config_name(config);
  const bool wants_translit =
      config == PipelineConfig::kLaptTranslit || config == PipelineConfig::kVaTranslit;
  const bool wants_va = config == PipelineConfig::kVa || config == PipelineConfig::kVaTranslit;

  Corpus corpus = spec.unlabeled;
  Corpus valid = spec.valid;
  TagDataset tag_train = spec.tag_train;
  TagDataset tag_test = spec.tag_test;
  if (wants_translit) {
    if (!spec.scheme.has_value()) {
      throw ValidationError(name + " requires a transliteration scheme");
    }
    corpus = transliterate_corpus(*spec.scheme, corpus);
    valid = transliterate_corpus(*spec.scheme, valid);
    tag_train = transliterate_dataset(*spec.scheme, tag_train);
    tag_test = transliterate_dataset(*spec.scheme, tag_test);
  }

  const Vocabulary prepared = ensure_mlm_specials(spec.base_vocab);
  MlmState state = MlmState::fresh(prepared, spec.arch, derive_seed(seed, name + "/init"));
  Vocabulary vocab = prepared;
  if (wants_va) {
    const Vocabulary candidate =
        train_vocabulary(corpus, spec.va_candidate_size, spec.min_frequency);
    const AugmentationPlan plan = select_augmentation(prepared, candidate, corpus, spec.va_n);
    state = init_extended(state, prepared, plan, spec.init_policy, spec.init_noise_scale,
                          derive_seed(seed, name + "/extend"));
    vocab = apply_augmentation(prepared, plan);
  }

  if (config != PipelineConfig::kBase) {
    MlmConfig mlm_config = spec.mlm;
    mlm_config.seed = derive_seed(seed, name + "/mlm");
    auto [trained, report] = train(state, corpus, valid, vocab, mlm_config);
    state = std::move(trained);
  }

  const TaggerTrainResult probe =
      train_tagger(state, vocab, tag_train, spec.tagger_epochs, spec.tagger_lr,
                   spec.finetune_encoder, derive_seed(seed, name + "/tagger"), spec.pooling);
  const TagDataset aligned_test = align_tagset(tag_test, tag_train.tagset);
  return evaluate_accuracy(probe.encoder, vocab, probe.params, aligned_test, spec.pooling);
}

}  // namespace

ComparisonTable run_comparison(const ComparisonSpec& spec,
                               const std::vector<PipelineConfig>& configs,
                               const std::vector<uint64_t>& seeds, int jobs) {
  if (seeds.empty()) {
    throw ValidationError("run_comparison requires at least one seed");
  }
  if (configs.empty()) {
    throw ValidationError("run_comparison requires at least one config");
  }

  struct Task {
    size_t config_index;
    size_t seed_index;
  };
  std::vector<Task> tasks;
  for (size_t c = 0; c < configs.size(); ++c) {
    for (size_t s = 0; s < seeds.size(); ++s) tasks.push_back({c, s});
  }
  std::vector<double> scores(tasks.size(), 0.0);
  std::vector<std::string> failures(tasks.size());

  const size_t workers =
      std::min<size_t>(std::max(jobs, 1), std::max<size_t>(tasks.size(), size_t{1}));
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        scores[i] = run_single(spec, configs[tasks[i].config_index], seeds[tasks[i].seed_index]);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (size_t i = 0; i < tasks.size(); ++i) {
    if (!failures[i].empty()) {
      throw ValidationError("comparison run failed (" +
                            pipeline_config_name(configs[tasks[i].config_index]) + ", seed " +
                            std::to_string(seeds[tasks[i].seed_index]) + "): " + failures[i]);
    }
  }

  ComparisonTable table;
  table.seeds = seeds;
  for (size_t c = 0; c < configs.size(); ++c) {
    ComparisonCell cell;
    cell.config = pipeline_config_name(configs[c]);
    for (size_t s = 0; s < seeds.size(); ++s) {
      cell.scores.push_back(scores[c * seeds.size() + s]);
    }
    const double n = static_cast<double>(cell.scores.size());
    cell.mean = std::accumulate(cell.scores.begin(), cell.scores.end(), 0.0) / n;
    if (cell.scores.size() > 1) {
      double ss = 0.0;
      for (const double v : cell.scores) ss += (v - cell.mean) * (v - cell.mean);
      cell.stderr_mean = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    table.cells.push_back(std::move(cell));
  }
  for (size_t i = 0; i < table.cells.size(); ++i) {
    for (size_t j = i + 1; j < table.cells.size(); ++j) {
      table.deltas.push_back({table.cells[j].config, table.cells[i].config,
                              table.cells[j].mean - table.cells[i].mean});
    }
  }
  return table;
}

nlohmann::json ComparisonTable::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& cell : cells) {
    cells_json.push_back({{"config", cell.config},
                          {"scores", cell.scores},
                          {"mean", cell.mean},
                          {"stderr", cell.stderr_mean}});
  }
  nlohmann::json deltas_json = nlohmann::json::array();
  for (const auto& delta : deltas) {
    deltas_json.push_back({{"a", delta.a}, {"b", delta.b}, {"mean_delta", delta.mean_delta}});
  }
  return nlohmann::json{{"schema", "vocmix.comparison/1"},
                        {"seeds", seeds},
                        {"configs", std::move(cells_json)},
                        {"deltas", std::move(deltas_json)}};
}

ComparisonTable comparison_table_from_json(const nlohmann::json& j) {
  ComparisonTable table;
  try {
    table.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    for (const auto& cell_json : j.at("configs")) {
      ComparisonCell cell;
      cell.config = cell_json.at("config").get<std::string>();
      cell.scores = cell_json.at("scores").get<std::vector<double>>();
      cell.mean = cell_json.at("mean").get<double>();
      cell.stderr_mean = cell_json.at("stderr").get<double>();
      table.cells.push_back(std::move(cell));
    }
    if (j.contains("deltas")) {
      for (const auto& delta_json : j.at("deltas")) {
        table.deltas.push_back({delta_json.at("a").get<std::string>(),
                                delta_json.at("b").get<std::string>(),
                                delta_json.at("mean_delta").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed comparison table: ") + e.what());
  }
  return table;
}

std::string ComparisonTable::to_text() const {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-14s %10s %10s  %s\n", "config", "mean", "stderr",
                "scores");
  out << buf;
  for (const auto& cell : cells) {
    std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f  ", cell.config.c_str(), cell.mean,
                  cell.stderr_mean);
    out << buf;
    for (size_t i = 0; i < cell.scores.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.4f", i == 0 ? "" : " ", cell.scores[i]);
      out << buf;
    }
    out << '\n';
  }
  if (!deltas.empty()) {
    out << "deltas (mean differences):\n";
    for (const auto& delta : deltas) {
      std::snprintf(buf, sizeof(buf), "  %s - %s = %+.4f\n", delta.a.c_str(), delta.b.c_str(),
                    delta.mean_delta);
      out << buf;
    }
  }
  return out.str();
}

}  // namespace vocmix
