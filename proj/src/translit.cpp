#include "vocmix/translit.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "vocmix/digest.hpp"
#include "vocmix/errors.hpp"
#include "vocmix/unicode.hpp"

namespace vocmix {

void TransliterationScheme::finalize() {
  by_source.clear();
  max_source_chars = 0;
  for (const auto& rule : rules) {
    if (rule.source.empty()) {
      throw ValidationError("transliteration rule with empty source in scheme " + name);
    }
    if (!by_source.emplace(rule.source, rule.target).second) {
      throw ValidationError("duplicate transliteration source \"" + rule.source +
                            "\" in scheme " + name);
    }
    max_source_chars = std::max(max_source_chars, uni::count_code_points(rule.source));
  }
  non_idempotent = false;
  for (const auto& rule : rules) {
    for (const auto& other : rules) {
      if (!rule.target.empty() && rule.target.find(other.source) != std::string::npos) {
        non_idempotent = true;
        return;
      }
    }
  }
}

TransliterationScheme load_scheme(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read scheme file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();
  uni::decode_utf8(content);

  TransliterationScheme scheme;
  scheme.name = path.stem().string();
  scheme.digest = sha256_hex(content);

  size_t start = 0;
  size_t line_no = 0;
  while (start <= content.size()) {
    size_t nl = content.find('\n', start);
    const bool last = nl == std::string::npos;
    if (last) nl = content.size();
    size_t end = nl;
    if (end > start && content[end - 1] == '\r') --end;
    std::string_view line(content.data() + start, end - start);
    ++line_no;
    start = nl + 1;
    if (line.empty() || line.front() == '#') {
      if (last) break;
      continue;
    }
    const size_t tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw ParseError("expected exactly two tab-separated fields at " + path.string() + ":" +
                       std::to_string(line_no));
    }
    scheme.rules.push_back(
        {std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
    if (scheme.rules.back().source.empty()) {
      throw ParseError("empty source grapheme at " + path.string() + ":" +
                       std::to_string(line_no));
    }
    if (last) break;
  }
  scheme.finalize();
  return scheme;
}

std::string transliterate(const TransliterationScheme& scheme, std::string_view text,
                          TranslitStats* stats) {
  const auto decoded = uni::decode_utf8_with_offsets(text);
  const size_t n = decoded.code_points.size();
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < n) {
    size_t matched_len = 0;
    const std::string* target = nullptr;
    const size_t limit = std::min(scheme.max_source_chars, n - i);
    for (size_t len = limit; len >= 1; --len) {
      const std::string_view candidate =
          text.substr(decoded.byte_offsets[i], decoded.byte_offsets[i + len] - decoded.byte_offsets[i]);
      const auto it = scheme.by_source.find(candidate);
      if (it != scheme.by_source.end()) {
        matched_len = len;
        target = &it->second;
        break;
      }
    }
    if (target != nullptr) {
      out += *target;
      i += matched_len;
      if (stats != nullptr) ++stats->matched;
    } else {
      out += uni::encode_utf8(decoded.code_points[i]);
      ++i;
      if (stats != nullptr) ++stats->unmatched;
    }
  }
  return out;
}

Corpus transliterate_corpus(const TransliterationScheme& scheme, const Corpus& corpus) {
  std::vector<std::string> rewritten;
  rewritten.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    rewritten.push_back(transliterate(scheme, s));
  }
  Corpus out = make_corpus(std::move(rewritten), corpus.language_tag, corpus.provenance.source);
  const size_t dropped = corpus.sentences.size() - out.sentences.size();
  out.provenance.transforms = corpus.provenance.transforms;
  out.provenance.transforms.push_back("transliterate:scheme=" + scheme.name +
                                      ",digest=sha256:" + scheme.digest +
                                      ",dropped_empty=" + std::to_string(dropped));
  return out;
}

void MixinPipeline::validate() const {
  size_t translit_count = 0;
  bool augment_seen = false;
  for (const auto& step : steps) {
    if (step.kind == MixinStep::Kind::kTransliterate) {
      ++translit_count;
      if (augment_seen) {
        throw ValidationError("transliteration must precede augmentation in a pipeline");
      }
      if (step.scheme == nullptr) {
        throw ValidationError("transliteration step has no loaded scheme");
      }
    } else {
      augment_seen = true;
    }
  }
  if (translit_count > 1) {
    throw ValidationError("a pipeline admits at most one transliteration step");
  }
}

MixinPipeline MixinPipeline::from_json(const nlohmann::json& descriptor,
                                       const std::filesystem::path& base_dir) {
  if (!descriptor.is_array()) {
    throw ParseError("pipeline descriptor must be a JSON array of steps");
  }
  MixinPipeline pipeline;
  for (const auto& step_json : descriptor) {
    const std::string type = step_json.value("type", "");
    MixinStep step;
    if (type == "transliterate") {
      step.kind = MixinStep::Kind::kTransliterate;
      if (!step_json.contains("scheme")) {
        throw ParseError("transliterate step requires a \"scheme\" path");
      }
      std::filesystem::path p = step_json.at("scheme").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      step.scheme_path = p;
      step.scheme = std::make_shared<TransliterationScheme>(load_scheme(p));
    } else if (type == "augment") {
      step.kind = MixinStep::Kind::kAugment;
      if (step_json.contains("preset")) {
        step.preset_name = parse_preset(step_json.at("preset").get<std::string>());
        std::optional<double> a_override;
        if (step_json.contains("a")) {
          const double a_value = step_json.at("a").get<double>();
          if (*step.preset_name == Preset::kTva) {
            a_override = a_value;
          } else if (a_value != 1.0) {
            throw ParseError("a overrides are only valid for the TVA preset");
          }
        }
        const PresetSpec spec =
            preset(*step.preset_name, step_json.value("candidate_size", size_t{5000}), a_override);
        step.n = spec.n;
        step.a = spec.a;
        step.candidate_size = spec.candidate_size;
      }
      if (step_json.contains("n")) step.n = step_json.at("n").get<uint64_t>();
      if (step_json.contains("a") && !step.preset_name.has_value()) {
        step.a = step_json.at("a").get<double>();
      }
      if (step_json.contains("candidate_size") && !step.preset_name.has_value()) {
        step.candidate_size = step_json.at("candidate_size").get<size_t>();
      }
      if (step_json.contains("min_frequency")) {
        step.min_frequency = step_json.at("min_frequency").get<size_t>();
      }
      if (step_json.contains("ranking")) {
        const std::string r = step_json.at("ranking").get<std::string>();
        if (r == "occurrences") {
          step.ranking = RescueRanking::kOccurrences;
        } else if (r == "tokens") {
          step.ranking = RescueRanking::kTokensRescued;
        } else {
          throw ParseError("unknown ranking \"" + r + "\"; expected occurrences or tokens");
        }
      }
    } else {
      throw ParseError("unknown pipeline step type \"" + type + "\"");
    }
    pipeline.steps.push_back(std::move(step));
  }
  pipeline.validate();
  return pipeline;
}

nlohmann::json MixinPipeline::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& step : steps) {
    if (step.kind == MixinStep::Kind::kTransliterate) {
      steps_json.push_back({{"type", "transliterate"}, {"scheme", step.scheme_path.string()}});
    } else {
      nlohmann::json j{{"type", "augment"},
                       {"n", step.n},
                       {"a", step.a},
                       {"candidate_size", step.candidate_size},
                       {"min_frequency", step.min_frequency},
                       {"ranking", step.ranking == RescueRanking::kOccurrences ? "occurrences"
                                                                               : "tokens"}};
      if (step.preset_name.has_value()) j["preset"] = preset_name(*step.preset_name);
      steps_json.push_back(std::move(j));
    }
  }
  return steps_json;
}

PipelineResult run_pipeline(const Corpus& corpus, const Vocabulary& base,
                            const MixinPipeline& pipeline) {
  pipeline.validate();
  PipelineResult result{corpus, base, std::nullopt, {}};
  for (const auto& step : pipeline.steps) {
    if (step.kind == MixinStep::Kind::kTransliterate) {
      result.corpus = transliterate_corpus(*step.scheme, result.corpus);
      result.log.push_back("transliterate scheme=" + step.scheme->name +
                           " digest=sha256:" + step.scheme->digest);
    } else {
      const Vocabulary candidate =
          train_vocabulary(result.corpus, step.candidate_size, step.min_frequency);
      AugmentationPlan plan =
          select_augmentation(result.vocabulary, candidate, result.corpus, step.n, step.ranking);
      plan.a = step.a;
      result.vocabulary = apply_augmentation(result.vocabulary, plan);
      result.log.push_back("augment n=" + std::to_string(step.n) +
                           " selected=" + std::to_string(plan.selected.size()) +
                           " candidate=sha256:" + candidate.digest());
      result.plan = std::move(plan);
    }
  }
  return result;
}

}  // namespace vocmix
