// vocmix: specialize a subword tokenizer and a small masked LM to a target
// language via vocabulary-augmentation and transliteration mix-ins, with
// coverage analytics and reproducible run manifests.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vocmix/augment.hpp"
#include "vocmix/corpus.hpp"
#include "vocmix/coverage.hpp"
#include "vocmix/digest.hpp"
#include "vocmix/errors.hpp"
#include "vocmix/log.hpp"
#include "vocmix/manifest.hpp"
#include "vocmix/mlm.hpp"
#include "vocmix/rng.hpp"
#include "vocmix/tagger.hpp"
#include "vocmix/translit.hpp"
#include "vocmix/version.hpp"
#include "vocmix/wordpiece.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vocmix;

namespace {

// Configuration precedence: flags > config file (JSON) > defaults. Options
// registered here pick up config-file values only when absent on the command
// line; the resolved values are echoed into the run manifest.
class Overlay {
 public:
  template <typename T>
  CLI::Option* option(CLI::App& app, const std::string& name, T& var, const std::string& desc) {
    CLI::Option* opt = app.add_option(name, var, desc);
    const std::string key = name.substr(name.find_first_not_of('-'));
    appliers_.emplace_back(opt, [&var, key](const json& config) {
      if (config.contains(key)) var = config.at(key).get<T>();
    });
    return opt;
  }

  CLI::Option* flag(CLI::App& app, const std::string& name, bool& var, const std::string& desc) {
    CLI::Option* opt = app.add_flag(name, var, desc);
    const std::string primary = name.substr(0, name.find(','));
    const std::string key = primary.substr(primary.find_first_not_of('-'));
    appliers_.emplace_back(opt, [&var, key](const json& config) {
      if (config.contains(key)) var = config.at(key).get<bool>();
    });
    return opt;
  }

  void apply(const fs::path& config_path) {
    if (config_path.empty()) return;
    std::ifstream in(config_path, std::ios::binary);
    if (!in) {
      throw IoError("cannot read config file: " + config_path.string());
    }
    json config;
    try {
      in >> config;
    } catch (const json::exception& e) {
      throw ParseError("invalid JSON in config file " + config_path.string() + ": " + e.what());
    }
    for (auto& [opt, fn] : appliers_) {
      if (opt->count() == 0) fn(config);
    }
  }

 private:
  std::vector<std::pair<CLI::Option*, std::function<void(const json&)>>> appliers_;
};

fs::path manifest_path(const std::string& command, const fs::path& out,
                       const fs::path& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  if (!out.empty()) return out.string() + ".manifest.json";
  return "vocmix-" + command + ".manifest.json";
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write file: " + path.string());
  }
  out << content;
  if (!out) {
    throw IoError("write failure on file: " + path.string());
  }
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read file: " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

Corpus load_corpus_opts(const fs::path& path, double downsample_fraction, uint64_t seed,
                        RunManifest& manifest) {
  manifest.add_input(path);
  Corpus corpus = load_corpus(path);
  if (downsample_fraction > 0.0) {
    corpus = downsample(corpus, downsample_fraction, derive_seed(seed, "downsample"));
  }
  return corpus;
}

struct CommonArgs {
  fs::path config_path;
  fs::path manifest_override;
  uint64_t seed = 0;
  std::string format = "json";
};

void add_common(CLI::App& app, Overlay& overlay, CommonArgs& args, bool with_format = true) {
  app.add_option("--config", args.config_path, "JSON config file (flags take precedence)");
  app.add_option("--manifest", args.manifest_override, "run manifest path");
  overlay.option(app, "--seed", args.seed, "root seed; stage seeds derive from it");
  if (with_format) {
    overlay.option(app, "--format", args.format, "output format {json,text,csv}")
        ->check(CLI::IsMember({"json", "text", "csv"}));
  }
}

// ---------------------------------------------------------------------------
// train-vocab

void cmd_train_vocab(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto corpus_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();
  auto candidate_size = std::make_shared<size_t>(5000);
  auto min_frequency = std::make_shared<size_t>(2);
  auto downsample_fraction = std::make_shared<double>(0.0);

  add_common(app, *overlay, *args, false);
  overlay->option(app, "--corpus", *corpus_path, "training corpus, one sentence per line")
      ->required();
  overlay->option(app, "--out", *out_path, "vocabulary output path")->required();
  overlay->option(app, "--candidate-size", *candidate_size, "vocabulary size budget");
  overlay->option(app, "--min-frequency", *min_frequency, "minimum unit frequency");
  overlay->option(app, "--downsample", *downsample_fraction,
                  "keep this fraction of sentences before training");

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "train-vocab";
    manifest.argv = argv;

    const Corpus corpus =
        load_corpus_opts(*corpus_path, *downsample_fraction, args->seed, manifest);
    const Vocabulary vocab = train_vocabulary(corpus, *candidate_size, *min_frequency);
    save_vocabulary(vocab, *out_path);
    manifest.add_output(*out_path);
    manifest.resolved_config = {{"corpus", corpus_path->string()},
                                {"out", out_path->string()},
                                {"candidate_size", *candidate_size},
                                {"min_frequency", *min_frequency},
                                {"downsample", *downsample_fraction},
                                {"seed", args->seed},
                                {"vocab_metadata", vocab.metadata()},
                                {"vocab_size", vocab.size()}};
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("train-vocab", *out_path, args->manifest_override));
    log_info("trained vocabulary of " + std::to_string(vocab.size()) + " entries");
  });
}

// ---------------------------------------------------------------------------
// augment

void cmd_augment(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto base_path = std::make_shared<fs::path>();
  auto corpus_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();
  auto vocab_out = std::make_shared<fs::path>();
  auto preset_name_arg = std::make_shared<std::string>();
  auto n_arg = std::make_shared<uint64_t>(0);
  auto a_arg = std::make_shared<double>(0.0);
  auto candidate_size = std::make_shared<size_t>(0);
  auto min_frequency = std::make_shared<size_t>(2);
  auto ranking_arg = std::make_shared<std::string>("occurrences");
  auto downsample_fraction = std::make_shared<double>(0.0);

  add_common(app, *overlay, *args, false);
  overlay->option(app, "--base", *base_path, "base vocabulary file")->required();
  overlay->option(app, "--corpus", *corpus_path, "target-language corpus")->required();
  overlay->option(app, "--out", *out_path, "augmentation plan output (JSON)")->required();
  overlay->option(app, "--vocab-out", *vocab_out, "also write the augmented vocabulary here");
  auto* preset_opt =
      overlay->option(app, "--preset", *preset_name_arg, "named preset {VA,TVA,EMBERT}");
  preset_opt->check(CLI::IsMember({"VA", "TVA", "EMBERT"}));
  auto* n_opt = overlay->option(app, "--n", *n_arg, "number of wordpieces to add");
  auto* a_opt = overlay->option(app, "--a", *a_arg, "embedding learning-rate multiplier");
  auto* size_opt =
      overlay->option(app, "--candidate-size", *candidate_size, "candidate vocabulary size");
  overlay->option(app, "--min-frequency", *min_frequency, "candidate trainer min frequency");
  overlay->option(app, "--ranking", *ranking_arg, "rescue ranking {occurrences,tokens}")
      ->check(CLI::IsMember({"occurrences", "tokens"}));
  overlay->option(app, "--downsample", *downsample_fraction,
                  "keep this fraction of sentences first");

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "augment";
    manifest.argv = argv;

    manifest.add_input(*base_path);
    const Vocabulary base = load_vocabulary(*base_path);
    const Corpus corpus =
        load_corpus_opts(*corpus_path, *downsample_fraction, args->seed, manifest);

    // Resolve (n, a, candidate_size): preset first, explicit flags may widen.
    uint64_t n = 99;
    double a = 1.0;
    size_t cand_size = 5000;
    if (preset_opt->count() > 0) {
      const Preset p = parse_preset(*preset_name_arg);
      std::optional<double> a_override;
      if (a_opt->count() > 0) a_override = *a_arg;
      const PresetSpec spec =
          preset(p, size_opt->count() > 0 ? *candidate_size : 5000, a_override);
      n = spec.n;
      a = spec.a;
      cand_size = spec.candidate_size;
    } else {
      if (n_opt->count() > 0) n = *n_arg;
      if (a_opt->count() > 0) a = *a_arg;
      if (size_opt->count() > 0) cand_size = *candidate_size;
    }

    const Vocabulary candidate = train_vocabulary(corpus, cand_size, *min_frequency);
    const RescueRanking ranking = *ranking_arg == "occurrences"
                                      ? RescueRanking::kOccurrences
                                      : RescueRanking::kTokensRescued;
    AugmentationPlan plan = select_augmentation(base, candidate, corpus, n, ranking);
    plan.a = a;
    save_plan(plan, *out_path);
    manifest.add_output(*out_path);
    if (!vocab_out->empty()) {
      save_vocabulary(apply_augmentation(base, plan), *vocab_out);
      manifest.add_output(*vocab_out);
    }
    manifest.resolved_config = {{"base", base_path->string()},
                                {"corpus", corpus_path->string()},
                                {"out", out_path->string()},
                                {"preset", *preset_name_arg},
                                {"n", n},
                                {"a", a},
                                {"candidate_size", cand_size},
                                {"min_frequency", *min_frequency},
                                {"ranking", *ranking_arg},
                                {"downsample", *downsample_fraction},
                                {"seed", args->seed},
                                {"selected", plan.selected.size()}};
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("augment", *out_path, args->manifest_override));
    log_info("selected " + std::to_string(plan.selected.size()) + " rescue pieces");
  });
}

// ---------------------------------------------------------------------------
// translit

void cmd_translit(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto scheme_path = std::make_shared<fs::path>();
  auto corpus_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();

  add_common(app, *overlay, *args, false);
  overlay->option(app, "--scheme", *scheme_path, "transliteration scheme (TSV)")->required();
  overlay->option(app, "--corpus", *corpus_path, "input corpus")->required();
  overlay->option(app, "--out", *out_path, "rewritten corpus output")->required();

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "translit";
    manifest.argv = argv;

    manifest.add_input(*scheme_path);
    manifest.add_input(*corpus_path);
    const TransliterationScheme scheme = load_scheme(*scheme_path);
    if (scheme.non_idempotent) {
      log_warn("scheme " + scheme.name + " is not idempotent (a target contains a source)");
    }
    const Corpus corpus = load_corpus(*corpus_path);
    const Corpus rewritten = transliterate_corpus(scheme, corpus);
    save_corpus(rewritten, *out_path);
    manifest.add_output(*out_path);
    const fs::path provenance_out = out_path->string() + ".provenance.json";
    write_text_file(provenance_out, provenance_json(rewritten) + "\n");
    manifest.add_output(provenance_out);
    manifest.resolved_config = {{"scheme", scheme_path->string()},
                                {"scheme_digest", "sha256:" + scheme.digest},
                                {"corpus", corpus_path->string()},
                                {"out", out_path->string()},
                                {"sentences", rewritten.sentences.size()}};
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("translit", *out_path, args->manifest_override));
  });
}

// ---------------------------------------------------------------------------
// coverage

void cmd_coverage(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto vocab_path = std::make_shared<fs::path>();
  auto corpus_path = std::make_shared<fs::path>();
  auto base_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();

  add_common(app, *overlay, *args);
  overlay->option(app, "--vocab", *vocab_path, "vocabulary to measure")->required();
  overlay->option(app, "--corpus", *corpus_path, "corpus to measure on")->required();
  overlay->option(app, "--base", *base_path,
                  "baseline vocabulary; adds the unk_delta against it");
  overlay->option(app, "--out", *out_path, "report path (default: stdout)");

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "coverage";
    manifest.argv = argv;

    manifest.add_input(*vocab_path);
    manifest.add_input(*corpus_path);
    const Vocabulary vocab = load_vocabulary(*vocab_path);
    const Corpus corpus = load_corpus(*corpus_path);
    const CoverageReport report = coverage_report(vocab, corpus);
    json j = report.to_json();
    std::string text = report.to_text();
    if (!base_path->empty()) {
      manifest.add_input(*base_path);
      const Vocabulary base = load_vocabulary(*base_path);
      const double delta = coverage_delta(base, vocab, corpus);
      j["unk_delta"] = delta;
      j["base_vocab_digest"] = "sha256:" + base.digest();
      char buf[64];
      std::snprintf(buf, sizeof(buf), "unk delta      %+12.4f\n", delta);
      text += buf;
    }
    const std::string payload = (args->format == "text") ? text : j.dump(2) + "\n";
    if (out_path->empty()) {
      std::cout << payload;
    } else {
      write_text_file(*out_path, payload);
      manifest.add_output(*out_path);
    }
    manifest.resolved_config = {{"vocab", vocab_path->string()},
                                {"corpus", corpus_path->string()},
                                {"base", base_path->string()},
                                {"format", args->format}};
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("coverage", *out_path, args->manifest_override));
  });
}

// ---------------------------------------------------------------------------
// pretrain

struct MlmFlags {
  int epochs = 20;
  double peak_lr = 0.5;
  int warmup = 1000;
  int batch_size = 16;
  double mask_prob = 0.15;
  std::string optimizer = "sgd";
  int width = 32;
  int blocks = 1;
  int heads = 2;
  int ff_mult = 4;
  int max_seq = 64;

  void add(CLI::App& app, Overlay& overlay) {
    overlay.option(app, "--epochs", epochs, "maximum training epochs");
    overlay.option(app, "--peak-lr", peak_lr, "peak learning rate after warmup");
    overlay.option(app, "--warmup", warmup, "linear warmup steps");
    overlay.option(app, "--batch-size", batch_size, "sequences per step");
    overlay.option(app, "--mask-prob", mask_prob, "masking probability");
    overlay.option(app, "--optimizer", optimizer, "optimizer {sgd,adaptive}")
        ->check(CLI::IsMember({"sgd", "adaptive"}));
    overlay.option(app, "--width", width, "model width");
    overlay.option(app, "--blocks", blocks, "attention blocks");
    overlay.option(app, "--heads", heads, "attention heads");
    overlay.option(app, "--ff-mult", ff_mult, "MLP width multiplier");
    overlay.option(app, "--max-seq", max_seq, "sequence cap in pieces");
  }

  MlmConfig config(uint64_t seed, double a) const {
    MlmConfig c;
    c.max_epochs = epochs;
    c.peak_lr = peak_lr;
    c.warmup_steps = warmup;
    c.batch_size = batch_size;
    c.mask_probability = mask_prob;
    c.optimizer =
        optimizer == "sgd" ? MlmConfig::Optimizer::kSgd : MlmConfig::Optimizer::kAdaptive;
    c.seed = seed;
    c.a = a;
    return c;
  }

  MlmArch arch() const {
    MlmArch a;
    a.width = width;
    a.blocks = blocks;
    a.heads = heads;
    a.ff_mult = ff_mult;
    a.max_seq = max_seq;
    return a;
  }

  json to_json() const {
    return {{"epochs", epochs},         {"peak_lr", peak_lr},     {"warmup", warmup},
            {"batch_size", batch_size}, {"mask_prob", mask_prob}, {"optimizer", optimizer},
            {"width", width},           {"blocks", blocks},       {"heads", heads},
            {"ff_mult", ff_mult},       {"max_seq", max_seq}};
  }
};

// Deterministic 90/10 split: every tenth sentence validates.
std::pair<Corpus, Corpus> split_valid(const Corpus& corpus) {
  Corpus train;
  Corpus valid;
  train.language_tag = valid.language_tag = corpus.language_tag;
  train.provenance = valid.provenance = corpus.provenance;
  for (size_t i = 0; i < corpus.sentences.size(); ++i) {
    (i % 10 == 9 ? valid : train).sentences.push_back(corpus.sentences[i]);
  }
  return {std::move(train), std::move(valid)};
}

void cmd_pretrain(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto vocab_path = std::make_shared<fs::path>();
  auto corpus_path = std::make_shared<fs::path>();
  auto valid_path = std::make_shared<fs::path>();
  auto plan_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();
  auto vocab_out = std::make_shared<fs::path>();
  auto report_path = std::make_shared<fs::path>();
  auto a_arg = std::make_shared<double>(0.0);
  auto init_policy = std::make_shared<std::string>("mean");
  auto noise_scale = std::make_shared<double>(0.01);
  auto downsample_fraction = std::make_shared<double>(0.0);
  auto flags = std::make_shared<MlmFlags>();

  add_common(app, *overlay, *args, false);
  overlay->option(app, "--vocab", *vocab_path, "base vocabulary file")->required();
  overlay->option(app, "--corpus", *corpus_path, "pretraining corpus")->required();
  overlay->option(app, "--valid-corpus", *valid_path,
                  "validation corpus (default: every tenth sentence of --corpus)");
  overlay->option(app, "--plan", *plan_path, "augmentation plan to extend the model with");
  overlay->option(app, "--out", *out_path, "checkpoint output path")->required();
  overlay->option(app, "--vocab-out", *vocab_out,
                  "training vocabulary output (default: <out>.vocab.txt)");
  overlay->option(app, "--report", *report_path,
                  "training report JSON (default: <out>.report.json)");
  auto* a_opt = overlay->option(app, "--a", *a_arg,
                                "learning-rate multiplier for appended rows "
                                "(default: the plan's a)");
  overlay->option(app, "--init", *init_policy, "new-row init {mean,random}")
      ->check(CLI::IsMember({"mean", "random"}));
  overlay->option(app, "--noise-scale", *noise_scale, "new-row init noise scale");
  overlay->option(app, "--downsample", *downsample_fraction,
                  "keep this fraction of sentences first");
  flags->add(app, *overlay);

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.argv = argv;

    manifest.add_input(*vocab_path);
    const Vocabulary base = load_vocabulary(*vocab_path);
    const Corpus corpus =
        load_corpus_opts(*corpus_path, *downsample_fraction, args->seed, manifest);
    Corpus train_c;
    Corpus valid_c;
    if (valid_path->empty()) {
      std::tie(train_c, valid_c) = split_valid(corpus);
    } else {
      manifest.add_input(*valid_path);
      train_c = corpus;
      valid_c = load_corpus(*valid_path);
    }

    const Vocabulary prepared = ensure_mlm_specials(base);
    MlmState state = MlmState::fresh(prepared, flags->arch(), derive_seed(args->seed, "init"));
    Vocabulary vocab = prepared;
    double a = 1.0;
    if (!plan_path->empty()) {
      manifest.add_input(*plan_path);
      const AugmentationPlan plan = load_plan(*plan_path);
      const InitPolicy policy =
          *init_policy == "mean" ? InitPolicy::kMeanPlusNoise : InitPolicy::kRandomNormal;
      state = init_extended(state, prepared, plan, policy, *noise_scale,
                            derive_seed(args->seed, "extend"));
      vocab = apply_augmentation(prepared, plan);
      a = plan.a;
    }
    if (a_opt->count() > 0) a = *a_arg;

    const MlmConfig config = flags->config(derive_seed(args->seed, "mlm"), a);
    auto [trained, report] = train(state, train_c, valid_c, vocab, config);

    save_checkpoint(trained, *out_path);
    manifest.add_output(*out_path);
    const fs::path vocab_out_path =
        vocab_out->empty() ? fs::path(out_path->string() + ".vocab.txt") : *vocab_out;
    save_vocabulary(vocab, vocab_out_path);
    manifest.add_output(vocab_out_path);
    const fs::path report_out =
        report_path->empty() ? fs::path(out_path->string() + ".report.json") : *report_path;
    write_text_file(report_out, report.to_json().dump(2) + "\n");
    manifest.add_output(report_out);

    json config_json = flags->to_json();
    config_json["vocab"] = vocab_path->string();
    config_json["corpus"] = corpus_path->string();
    config_json["plan"] = plan_path->string();
    config_json["a"] = a;
    config_json["init"] = *init_policy;
    config_json["noise_scale"] = *noise_scale;
    config_json["seed"] = args->seed;
    config_json["downsample"] = *downsample_fraction;
    manifest.resolved_config = std::move(config_json);
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("pretrain", *out_path, args->manifest_override));
    log_info("selected epoch " + std::to_string(report.selected_epoch) + " of " +
             std::to_string(report.valid_loss.size()));
  });
}

// ---------------------------------------------------------------------------
// probe

void cmd_probe(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto state_path = std::make_shared<fs::path>();
  auto vocab_path = std::make_shared<fs::path>();
  auto train_path = std::make_shared<fs::path>();
  auto test_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();
  auto column = std::make_shared<std::string>("xpos");
  auto pooling = std::make_shared<std::string>("first");
  auto tagger_epochs = std::make_shared<int>(30);
  auto tagger_lr = std::make_shared<double>(0.2);
  auto no_finetune = std::make_shared<bool>(false);

  add_common(app, *overlay, *args, false);
  overlay->option(app, "--state", *state_path, "encoder checkpoint")->required();
  overlay->option(app, "--vocab", *vocab_path, "matching vocabulary file")->required();
  overlay->option(app, "--tag-train", *train_path, "training data (CoNLL-U)")->required();
  overlay->option(app, "--tag-test", *test_path, "evaluation data (CoNLL-U)")->required();
  overlay->option(app, "--out", *out_path, "results JSON (default: stdout)");
  overlay->option(app, "--column", *column, "tag column {xpos,upos}")
      ->check(CLI::IsMember({"xpos", "upos"}));
  overlay->option(app, "--pooling", *pooling, "word pooling {first,mean}")
      ->check(CLI::IsMember({"first", "mean"}));
  overlay->option(app, "--tagger-epochs", *tagger_epochs, "probe training epochs");
  overlay->option(app, "--tagger-lr", *tagger_lr, "probe learning rate");
  overlay->flag(app, "--no-finetune", *no_finetune, "freeze the encoder during probe training");

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "probe";
    manifest.argv = argv;

    manifest.add_input(*state_path);
    manifest.add_input(*vocab_path);
    manifest.add_input(*train_path);
    manifest.add_input(*test_path);
    const MlmState state = load_checkpoint(*state_path);
    const Vocabulary vocab = load_vocabulary(*vocab_path);
    if (vocab.digest() != state.vocab_digest) {
      throw ValidationError("vocabulary does not match the checkpoint digest");
    }
    const auto col = *column == "xpos" ? TagDataset::Column::kXpos : TagDataset::Column::kUpos;
    const TagDataset train_data = load_conllu(*train_path, col);
    const TagDataset test_data = align_tagset(load_conllu(*test_path, col), train_data.tagset);
    const WordPooling pool = *pooling == "first" ? WordPooling::kFirstPiece : WordPooling::kMean;

    const TaggerTrainResult result =
        train_tagger(state, vocab, train_data, *tagger_epochs, *tagger_lr, !*no_finetune,
                     derive_seed(args->seed, "tagger"), pool);
    const double train_acc =
        evaluate_accuracy(result.encoder, vocab, result.params, train_data, pool);
    const double test_acc =
        evaluate_accuracy(result.encoder, vocab, result.params, test_data, pool);

    const json results{{"schema", "vocmix.probe/1"},
                       {"accuracy", test_acc},
                       {"train_accuracy", train_acc},
                       {"epoch_loss", result.epoch_loss},
                       {"tagset", train_data.tagset},
                       {"upos_fallback", train_data.used_upos_fallback},
                       {"finetuned", !*no_finetune},
                       {"pooling", *pooling}};
    if (out_path->empty()) {
      std::cout << results.dump(2) << '\n';
    } else {
      write_text_file(*out_path, results.dump(2) + "\n");
      manifest.add_output(*out_path);
    }
    manifest.resolved_config = {{"state", state_path->string()},
                                {"vocab", vocab_path->string()},
                                {"tag_train", train_path->string()},
                                {"tag_test", test_path->string()},
                                {"column", *column},
                                {"pooling", *pooling},
                                {"tagger_epochs", *tagger_epochs},
                                {"tagger_lr", *tagger_lr},
                                {"finetune", !*no_finetune},
                                {"seed", args->seed}};
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("probe", *out_path, args->manifest_override));
  });
}

// ---------------------------------------------------------------------------
// compare

void cmd_compare(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto base_path = std::make_shared<fs::path>();
  auto corpus_path = std::make_shared<fs::path>();
  auto train_path = std::make_shared<fs::path>();
  auto test_path = std::make_shared<fs::path>();
  auto scheme_path = std::make_shared<fs::path>();
  auto out_dir = std::make_shared<fs::path>();
  auto configs_arg = std::make_shared<std::string>("BASE,LAPT,VA");
  auto column = std::make_shared<std::string>("xpos");
  auto num_seeds = std::make_shared<int>(5);
  auto jobs = std::make_shared<int>(1);
  auto candidate_size = std::make_shared<size_t>(5000);
  auto n_arg = std::make_shared<uint64_t>(99);
  auto a_arg = std::make_shared<double>(1.0);
  auto min_frequency = std::make_shared<size_t>(2);
  auto tagger_epochs = std::make_shared<int>(30);
  auto tagger_lr = std::make_shared<double>(0.2);
  auto no_finetune = std::make_shared<bool>(false);
  auto downsample_fraction = std::make_shared<double>(0.0);
  auto flags = std::make_shared<MlmFlags>();

  add_common(app, *overlay, *args, false);
  overlay->option(app, "--base", *base_path, "base vocabulary file")->required();
  overlay->option(app, "--corpus", *corpus_path, "target-language corpus")->required();
  overlay->option(app, "--tag-train", *train_path, "probe training data")->required();
  overlay->option(app, "--tag-test", *test_path, "probe evaluation data")->required();
  overlay->option(app, "--scheme", *scheme_path, "scheme for *+translit configs");
  overlay->option(app, "--out", *out_dir, "output directory")->required();
  overlay->option(app, "--configs", *configs_arg,
                  "comma list of {BASE,LAPT,VA,LAPT+translit,VA+translit}");
  overlay->option(app, "--column", *column, "tag column {xpos,upos}")
      ->check(CLI::IsMember({"xpos", "upos"}));
  overlay->option(app, "--num-seeds", *num_seeds, "seeds per config (seed, seed+1, ...)");
  overlay->option(app, "--jobs", *jobs, "parallel (config, seed) runs");
  overlay->option(app, "--candidate-size", *candidate_size, "VA candidate vocabulary size");
  overlay->option(app, "--n", *n_arg, "VA wordpiece count");
  overlay->option(app, "--a", *a_arg, "VA learning-rate multiplier");
  overlay->option(app, "--min-frequency", *min_frequency, "candidate trainer min frequency");
  overlay->option(app, "--tagger-epochs", *tagger_epochs, "probe training epochs");
  overlay->option(app, "--tagger-lr", *tagger_lr, "probe learning rate");
  overlay->flag(app, "--no-finetune", *no_finetune, "freeze encoders during probe training");
  overlay->option(app, "--downsample", *downsample_fraction,
                  "keep this fraction of sentences first");
  flags->add(app, *overlay);

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "compare";
    manifest.argv = argv;

    manifest.add_input(*base_path);
    manifest.add_input(*train_path);
    manifest.add_input(*test_path);

    ComparisonSpec spec;
    spec.base_vocab = load_vocabulary(*base_path);
    const Corpus corpus =
        load_corpus_opts(*corpus_path, *downsample_fraction, args->seed, manifest);
    std::tie(spec.unlabeled, spec.valid) = split_valid(corpus);
    const auto col = *column == "xpos" ? TagDataset::Column::kXpos : TagDataset::Column::kUpos;
    spec.tag_train = load_conllu(*train_path, col);
    spec.tag_test = load_conllu(*test_path, col);
    if (!scheme_path->empty()) {
      manifest.add_input(*scheme_path);
      spec.scheme = load_scheme(*scheme_path);
    }
    spec.arch = flags->arch();
    spec.mlm = flags->config(0, *a_arg);
    spec.va_n = *n_arg;
    spec.va_candidate_size = *candidate_size;
    spec.min_frequency = *min_frequency;
    spec.tagger_epochs = *tagger_epochs;
    spec.tagger_lr = *tagger_lr;
    spec.finetune_encoder = !*no_finetune;

    std::vector<PipelineConfig> configs;
    for (size_t start = 0; start <= configs_arg->size();) {
      size_t comma = configs_arg->find(',', start);
      if (comma == std::string::npos) comma = configs_arg->size();
      const std::string token = configs_arg->substr(start, comma - start);
      if (!token.empty()) configs.push_back(parse_pipeline_config(token));
      start = comma + 1;
    }
    if (*num_seeds < 1) {
      throw ValidationError("--num-seeds must be at least 1");
    }
    std::vector<uint64_t> seeds;
    for (int i = 0; i < *num_seeds; ++i) seeds.push_back(args->seed + static_cast<uint64_t>(i));

    const ComparisonTable table = run_comparison(spec, configs, seeds, *jobs);

    fs::create_directories(*out_dir);
    const fs::path json_path = *out_dir / "comparison.json";
    const fs::path text_path = *out_dir / "comparison.txt";
    write_text_file(json_path, table.to_json().dump(2) + "\n");
    write_text_file(text_path, table.to_text());
    manifest.add_output(json_path);
    manifest.add_output(text_path);

    json config_json = flags->to_json();
    config_json["configs"] = *configs_arg;
    config_json["seed"] = args->seed;
    config_json["num_seeds"] = *num_seeds;
    config_json["jobs"] = *jobs;
    config_json["candidate_size"] = *candidate_size;
    config_json["n"] = *n_arg;
    config_json["a"] = *a_arg;
    config_json["min_frequency"] = *min_frequency;
    config_json["tagger_epochs"] = *tagger_epochs;
    config_json["tagger_lr"] = *tagger_lr;
    config_json["finetune"] = !*no_finetune;
    config_json["downsample"] = *downsample_fraction;
    config_json["column"] = *column;
    manifest.resolved_config = std::move(config_json);
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("compare", *out_dir / "comparison", args->manifest_override));
    std::cout << table.to_text();
  });
}

// ---------------------------------------------------------------------------
// report

void cmd_report(const std::vector<std::string>& argv, CLI::App& app) {
  auto overlay = std::make_shared<Overlay>();
  auto args = std::make_shared<CommonArgs>();
  auto kind = std::make_shared<std::string>();
  auto records_path = std::make_shared<fs::path>();
  auto before_path = std::make_shared<fs::path>();
  auto after_path = std::make_shared<fs::path>();
  auto out_path = std::make_shared<fs::path>();

  add_common(app, *overlay, *args);
  overlay->option(app, "--kind", *kind, "report kind {table2,fig1,table4}")
      ->required()
      ->check(CLI::IsMember({"table2", "fig1", "table4"}));
  overlay->option(app, "--records", *records_path, "delta-record JSON array (table2, fig1)");
  overlay->option(app, "--before", *before_path, "comparison JSON before (table4)");
  overlay->option(app, "--after", *after_path, "comparison JSON after (table4)");
  overlay->option(app, "--out", *out_path, "output path (default: stdout)");

  app.callback([=]() {
    overlay->apply(args->config_path);
    WallTimer timer;
    RunManifest manifest;
    manifest.command = "report";
    manifest.argv = argv;

    std::string payload;
    if (*kind == "table2" || *kind == "fig1") {
      if (records_path->empty()) {
        throw ValidationError("--records is required for " + *kind);
      }
      manifest.add_input(*records_path);
      const json records_json = load_json_file(*records_path);
      if (!records_json.is_array()) {
        throw ValidationError("records file must hold a JSON array");
      }
      std::vector<DeltaRecord> records;
      for (const auto& j : records_json) {
        records.push_back(delta_record_from_json(j));
      }
      if (*kind == "fig1") {
        if (args->format == "json") {
          // Scatter rows plus the per-task rank correlation across languages.
          json tasks = json::object();
          std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_task;
          for (const auto& record : records) {
            for (const auto& [task, delta] : record.task_deltas) {
              by_task[task].first.push_back(record.unk_delta);
              by_task[task].second.push_back(delta);
            }
          }
          for (const auto& [task, xy] : by_task) {
            if (xy.first.size() >= 2) {
              const auto rho = spearman(xy.first, xy.second);
              tasks[task] = rho.has_value() ? json(*rho) : json(nullptr);
            } else {
              tasks[task] = nullptr;
            }
          }
          json rows = json::array();
          for (const auto& record : records) rows.push_back(delta_record_to_json(record));
          payload = json{{"schema", "vocmix.fig1/1"},
                         {"records", std::move(rows)},
                         {"spearman", std::move(tasks)}}
                        .dump(2) +
                    "\n";
        } else {
          payload = scatter_csv(records);
        }
      } else {  // table2
        std::map<std::string, std::string> by_type;
        std::map<std::string, std::string> by_script;
        for (const auto& record : records) {
          if (record.type.empty()) {
            throw ValidationError("record \"" + record.language_tag +
                                  "\" lacks field \"type\"");
          }
          if (record.script.empty()) {
            throw ValidationError("record \"" + record.language_tag +
                                  "\" lacks field \"script\"");
          }
          by_type[record.language_tag] = "type " + record.type;
          by_script[record.language_tag] = record.script;
        }
        const GroupSummary types = group_summary(records, by_type);
        const GroupSummary scripts = group_summary(records, by_script);
        if (args->format == "json") {
          payload = json{{"schema", "vocmix.table2/1"},
                         {"by_type", group_summary_to_json(types)},
                         {"by_script", group_summary_to_json(scripts)}}
                        .dump(2) +
                    "\n";
        } else {
          payload = "by language type\n" + group_summary_to_text(types) + "\nby script\n" +
                    group_summary_to_text(scripts);
        }
      }
    } else {  // table4
      if (before_path->empty() || after_path->empty()) {
        throw ValidationError("table4 requires --before and --after comparison files");
      }
      manifest.add_input(*before_path);
      manifest.add_input(*after_path);
      const ComparisonTable before = comparison_table_from_json(load_json_file(*before_path));
      const ComparisonTable after = comparison_table_from_json(load_json_file(*after_path));
      json rows = json::array();
      std::string text;
      char buf[160];
      for (const auto& cell : before.cells) {
        const ComparisonCell* matching = nullptr;
        for (const auto& other : after.cells) {
          if (other.config == cell.config) matching = &other;
        }
        if (matching == nullptr) continue;
        const double delta = matching->mean - cell.mean;
        std::snprintf(buf, sizeof(buf), "%-14s %8.2f → %8.2f  (%+.2f)\n",
                      cell.config.c_str(), 100.0 * cell.mean, 100.0 * matching->mean,
                      100.0 * delta);
        text += buf;
        rows.push_back({{"config", cell.config},
                        {"before", cell.mean},
                        {"after", matching->mean},
                        {"delta", delta}});
      }
      payload = args->format == "json"
                    ? json{{"schema", "vocmix.table4/1"}, {"rows", std::move(rows)}}.dump(2) +
                          "\n"
                    : text;
    }

    if (out_path->empty()) {
      std::cout << payload;
    } else {
      write_text_file(*out_path, payload);
      manifest.add_output(*out_path);
    }
    manifest.resolved_config = {{"kind", *kind},
                                {"records", records_path->string()},
                                {"before", before_path->string()},
                                {"after", after_path->string()},
                                {"format", args->format}};
    manifest.toolkit_version = kVersion;
    manifest.wall_seconds = timer.seconds();
    manifest.write(manifest_path("report", *out_path, args->manifest_override));
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vocabulary mix-in toolkit for low-resource tokenizer and encoder adaptation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  const std::vector<std::string> raw_args(argv, argv + argc);

  cmd_train_vocab(raw_args,
                  *app.add_subcommand("train-vocab", "train a wordpiece vocabulary"));
  cmd_augment(raw_args, *app.add_subcommand("augment", "select and emit an augmentation plan"));
  cmd_translit(raw_args, *app.add_subcommand("translit", "rewrite a corpus through a scheme"));
  cmd_coverage(raw_args, *app.add_subcommand("coverage", "UNK token percentage and fertility"));
  cmd_pretrain(raw_args,
               *app.add_subcommand("pretrain",
                                   "continued masked-LM pretraining, optionally extended"));
  cmd_probe(raw_args,
            *app.add_subcommand("probe", "train and evaluate the linear tagging probe"));
  cmd_compare(raw_args, *app.add_subcommand("compare", "run named pipelines across seeds"));
  cmd_report(raw_args, *app.add_subcommand("report", "emit summary artifacts from records"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
