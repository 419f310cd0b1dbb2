// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/evaluation.hpp"

#include <json.hpp>
#include <sstream>

#include "binary_io.hpp"
#include "modatt/errors.hpp"

namespace modatt {
namespace {

std::optional<double> mean_weight(const DecodeResult& d, std::size_t modality) {
  if (d.modality_weights.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& w : d.modality_weights) total += w[modality];
  return total / static_cast<double>(d.modality_weights.size());
}

}  // namespace

std::optional<double> UtteranceRecord::mean_alpha_audio() const { return mean_weight(decode, 0); }
std::optional<double> UtteranceRecord::mean_alpha_video() const { return mean_weight(decode, 1); }

void check_compatible(const ModelConfig& model, const CorpusSpec& corpus) {
  if (model.vocab_size != corpus.vocab_size()) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) +
                      " does not match corpus vocabulary " + std::to_string(corpus.vocab_size()));
  }
  if (model.uses_audio() && model.audio.input_dim != corpus.audio_dim) {
    throw ConfigError("model audio_input_dim " + std::to_string(model.audio.input_dim) +
                      " does not match corpus audio_dim " + std::to_string(corpus.audio_dim));
  }
  if (model.uses_video() && model.video.input_dim != corpus.video_dim) {
    throw ConfigError("model video_input_dim " + std::to_string(model.video.input_dim) +
                      " does not match corpus video_dim " + std::to_string(corpus.video_dim));
  }
}

EvalReport evaluate(const Seq2SeqModel& model, std::span<const Utterance> utterances,
                    const DecodeOptions& options, std::size_t workers) {
  std::vector<UtteranceRecord> records(utterances.size());
  parallel_for(utterances.size(), workers, [&](std::size_t i) {
    const Utterance& utt = utterances[i];
    UtteranceRecord& r = records[i];
    r.id = utt.id;
    r.reference = utt.symbols;
    r.audio_snr = utt.audio_snr;
    r.decode = decode_utterance(model, utt, options);
    r.ops = edit_distance(r.reference, r.decode.hypothesis());
  });
  return summarize(std::move(records),
                   model.config().strategy == FusionStrategy::kModalityAttention);
}

EvalReport summarize(std::vector<UtteranceRecord> records, bool modality_attention) {
  EvalReport report;
  if (modality_attention) report.attention.emplace();
  for (const UtteranceRecord& r : records) {
    report.cer.add(r.ops, r.reference.size());
    if (report.attention) report.attention->add(r.decode.modality_weights, r.audio_snr);
  }
  report.records = std::move(records);
  return report;
}

std::string records_jsonl(std::span<const UtteranceRecord> records) {
  std::ostringstream out;
  for (const UtteranceRecord& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["reference"] = r.reference;
    j["hypothesis"] = r.decode.hypothesis();
    j["log_prob"] = r.decode.log_prob;
    j["truncated"] = r.decode.truncated;
    j["audio_snr"] = snr_label(r.audio_snr);
    j["edits"] = {{"distance", r.ops.distance},
                  {"substitutions", r.ops.substitutions},
                  {"insertions", r.ops.insertions},
                  {"deletions", r.ops.deletions}};
    const auto a = r.mean_alpha_audio(), v = r.mean_alpha_video();
    j["mean_alpha_audio"] = a ? nlohmann::json(*a) : nlohmann::json(nullptr);
    j["mean_alpha_video"] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
  return out.str();
}

void write_records(const std::filesystem::path& path, std::span<const UtteranceRecord> records) {
  io::write_file(path, records_jsonl(records));
}

}  // namespace modatt
