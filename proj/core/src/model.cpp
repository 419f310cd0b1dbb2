// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "modatt/errors.hpp"

namespace modatt {

namespace {

std::string subsample_text(const std::vector<bool>& flags) {
  std::string out;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (i) out += ",";
    out += flags[i] ? "1" : "0";
  }
  return out;
}

std::vector<bool> parse_subsample(const std::vector<std::string>& items) {
  std::vector<bool> flags;
  for (const std::string& s : items) {
    if (s == "1" || s == "true") {
      flags.push_back(true);
    } else if (s == "0" || s == "false") {
      flags.push_back(false);
    } else {
      throw ConfigError("subsample flags must be 0/1, got '" + s + "'");
    }
  }
  return flags;
}

EncoderConfig encoder_from(const KeyValues& kv, const std::string& prefix, EncoderConfig cfg) {
  cfg.input_dim = kv.get_size(prefix + "_input_dim", cfg.input_dim);
  cfg.hidden = kv.get_size(prefix + "_hidden", cfg.hidden);
  if (auto v = kv.get(prefix + "_subsample")) cfg.subsample = parse_subsample(split_list(*v));
  return cfg;
}

std::string prefix_of(std::string_view component, std::string_view rest) {
  return std::string(component) + "." + std::string(rest);
}

}  // namespace

std::string_view strategy_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kAudioOnly: return "audio_only";
    case FusionStrategy::kVideoOnly: return "video_only";
    case FusionStrategy::kConcat: return "concat";
    case FusionStrategy::kModalityAttention: return "modality_attention";
  }
  return "?";
}

FusionStrategy parse_strategy(std::string_view name) {
  for (auto s : {FusionStrategy::kAudioOnly, FusionStrategy::kVideoOnly, FusionStrategy::kConcat,
                 FusionStrategy::kModalityAttention}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown fusion strategy '" + std::string(name) + "'");
}

// ModelConfig ----------------------------------------------------------------

std::size_t ModelConfig::context_dim() const {
  switch (strategy) {
    case FusionStrategy::kAudioOnly: return audio.output_dim();
    case FusionStrategy::kVideoOnly: return video.output_dim();
    case FusionStrategy::kConcat: return audio.output_dim() + video.output_dim();
    case FusionStrategy::kModalityAttention: return audio.output_dim();
  }
  return 0;
}

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kFirstSymbol)) {
    throw ConfigError("model: vocab_size must exceed the reserved SOS/EOS/UNK ids");
  }
  if (embed_dim == 0 || decoder_hidden == 0 || scorer_hidden == 0) {
    throw ConfigError("model: sizes must be positive");
  }
  for (const EncoderConfig* e : {&audio, &video}) {
    if (e->layers() == 0 || e->hidden == 0 || e->input_dim == 0) {
      throw ConfigError("model: encoders need at least one layer and positive sizes");
    }
  }
  const EncoderConfig& init = uses_audio() ? audio : video;
  if (decoder_hidden != init.output_dim()) {
    throw ConfigError("model: decoder_hidden (" + std::to_string(decoder_hidden) +
                      ") must equal twice the initialising encoder's hidden size (" +
                      std::to_string(init.output_dim()) + ")");
  }
  if (strategy == FusionStrategy::kModalityAttention &&
      audio.output_dim() != video.output_dim()) {
    throw ConfigError("model: modality attention needs equal audio and video context widths");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("model: label_smoothing must lie in [0, 1)");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "vocab_size = " << vocab_size << "\n"
      << "embed_dim = " << embed_dim << "\n"
      << "audio_input_dim = " << audio.input_dim << "\n"
      << "audio_hidden = " << audio.hidden << "\n"
      << "audio_subsample = " << subsample_text(audio.subsample) << "\n"
      << "video_input_dim = " << video.input_dim << "\n"
      << "video_hidden = " << video.hidden << "\n"
      << "video_subsample = " << subsample_text(video.subsample) << "\n"
      << "decoder_hidden = " << decoder_hidden << "\n"
      << "attention_dim = " << attention_dim << "\n"
      << "scorer_hidden = " << scorer_hidden << "\n"
      << "strategy = " << strategy_name(strategy) << "\n"
      << "label_smoothing = " << label_smoothing << "\n";
  return out.str();
}

std::uint64_t ModelConfig::digest() const { return fnv1a64(to_text()); }

ModelConfig ModelConfig::from_config(const KeyValues& kv) {
  ModelConfig cfg;
  cfg.vocab_size = kv.get_size("vocab_size", cfg.vocab_size);
  cfg.embed_dim = kv.get_size("embed_dim", cfg.embed_dim);
  cfg.audio = encoder_from(kv, "audio", cfg.audio);
  cfg.video = encoder_from(kv, "video", cfg.video);
  cfg.decoder_hidden = kv.get_size("decoder_hidden", cfg.decoder_hidden);
  cfg.attention_dim = kv.get_size("attention_dim", cfg.attention_dim);
  cfg.scorer_hidden = kv.get_size("scorer_hidden", cfg.scorer_hidden);
  if (auto v = kv.get("strategy")) cfg.strategy = parse_strategy(*v);
  cfg.label_smoothing = kv.get_double("label_smoothing", cfg.label_smoothing);
  cfg.validate();
  return cfg;
}

// Seq2SeqModel -----------------------------------------------------------------

Seq2SeqModel::Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t s = cfg_.decoder_hidden;
  const std::size_t a = cfg_.effective_attention_dim();
  const std::size_t c = cfg_.context_dim();
  if (cfg_.uses_audio()) {
    EncoderParams::create(params_, std::string(kListenerPrefix), cfg_.audio, rng);
    AttenderParams::create(params_, prefix_of(kSpellerPrefix, "att_audio"),
                           cfg_.audio.output_dim(), s, a, rng);
  }
  if (cfg_.uses_video()) {
    EncoderParams::create(params_, std::string(kWatcherPrefix), cfg_.video, rng);
    AttenderParams::create(params_, prefix_of(kSpellerPrefix, "att_video"),
                           cfg_.video.output_dim(), s, a, rng);
  }
  if (cfg_.strategy == FusionStrategy::kModalityAttention) {
    for (const char* m : {"audio", "video"}) {
      ModalityScorerParams::create(params_, prefix_of(kSpellerPrefix, std::string("modality.") + m),
                                   c, cfg_.scorer_hidden, rng);
    }
  }
  params_.add_uniform(prefix_of(kSpellerPrefix, "embed"), {cfg_.vocab_size, cfg_.embed_dim}, 1,
                      rng);
  LstmParams::create(params_, prefix_of(kSpellerPrefix, "decoder"), cfg_.embed_dim + c, s, rng);
  params_.add_uniform(prefix_of(kSpellerPrefix, "out.w"), {cfg_.vocab_size, s + c}, s + c, rng);
  params_.add(prefix_of(kSpellerPrefix, "out.b"),
              Tensor::parameter({cfg_.vocab_size}, std::vector<double>(cfg_.vocab_size, 0.0)));
  bind();
}

Seq2SeqModel::Seq2SeqModel(const ModelConfig& cfg, ParameterSet params) : cfg_(cfg) {
  cfg_.validate();
  const Seq2SeqModel reference(cfg_, 0);
  if (params.size() != reference.params_.size()) {
    throw ConfigError("parameters do not match the model config (" +
                      std::to_string(params.size()) + " tensors, expected " +
                      std::to_string(reference.params_.size()) + ")");
  }
  for (const auto& [name, t] : reference.params_) {
    if (!params.contains(name) || params.at(name).shape() != t.shape()) {
      throw ConfigError("parameter " + name + " missing or mis-shaped for the model config");
    }
  }
  params_ = std::move(params);
  bind();
}

Seq2SeqModel Seq2SeqModel::from_checkpoint(const Checkpoint& ck) {
  return Seq2SeqModel(ModelConfig::from_config(KeyValues::parse(ck.config_text, "checkpoint")),
                      ck.params.clone());
}

void Seq2SeqModel::bind() {
  const std::string sp(kSpellerPrefix);
  if (cfg_.uses_audio()) {
    listener_ = EncoderParams::bind(params_, std::string(kListenerPrefix), cfg_.audio);
    audio_attender_ = AttenderParams::bind(params_, sp + ".att_audio");
  }
  if (cfg_.uses_video()) {
    watcher_ = EncoderParams::bind(params_, std::string(kWatcherPrefix), cfg_.video);
    video_attender_ = AttenderParams::bind(params_, sp + ".att_video");
  }
  scorer_.clear();
  if (cfg_.strategy == FusionStrategy::kModalityAttention) {
    scorer_.push_back(ModalityScorerParams::bind(params_, sp + ".modality.audio"));
    scorer_.push_back(ModalityScorerParams::bind(params_, sp + ".modality.video"));
  }
  embedding_ = params_.at(sp + ".embed");
  decoder_ = LstmParams::bind(params_, sp + ".decoder");
  out_w_ = params_.at(sp + ".out.w");
  out_b_ = params_.at(sp + ".out.b");
}

EncodedUtterance Seq2SeqModel::encode(const Utterance& utt) const {
  auto valid = [](const Tensor& stream, std::size_t frames, const char* name) {
    if (!stream.defined()) {
      throw ConfigError(std::string("utterance lacks the ") + name + " stream the strategy needs");
    }
    const std::size_t rows = stream.shape()[0];
    if (frames == 0 || frames > rows) {
      throw ContractError(std::string(name) + " stream: valid length out of range");
    }
    return frames == rows ? stream : slice(stream, 0, 0, frames);
  };
  EncodedUtterance enc;
  std::optional<EncoderOutput> audio, video;
  if (cfg_.uses_audio()) {
    if (utt.audio.defined() && utt.audio.shape()[1] != cfg_.audio.input_dim) {
      throw ConfigError("audio feature width " + std::to_string(utt.audio.shape()[1]) +
                        " does not match model input " + std::to_string(cfg_.audio.input_dim));
    }
    audio = modatt::encode(cfg_.audio, *listener_, valid(utt.audio, utt.audio_frames, "audio"));
    enc.audio_memory = audio->memory;
    enc.audio_keys = attention_keys(*audio_attender_, audio->memory);
  }
  if (cfg_.uses_video()) {
    if (utt.video.defined() && utt.video.shape()[1] != cfg_.video.input_dim) {
      throw ConfigError("video feature width " + std::to_string(utt.video.shape()[1]) +
                        " does not match model input " + std::to_string(cfg_.video.input_dim));
    }
    video = modatt::encode(cfg_.video, *watcher_, valid(utt.video, utt.video_frames, "video"));
    enc.video_memory = video->memory;
    enc.video_keys = attention_keys(*video_attender_, video->memory);
  }
  enc.init_state = audio ? audio->final_state : video->final_state;
  return enc;
}

DecoderState Seq2SeqModel::initial_state(const EncodedUtterance& enc) const {
  DecoderState state;
  state.lstm = enc.init_state;
  state.context = Tensor::zeros({1, cfg_.context_dim()});
  if (cfg_.strategy == FusionStrategy::kModalityAttention) state.scorer.emplace(scorer_);
  return state;
}

Tensor Seq2SeqModel::decoder_step(const Tensor& s_prev, int y_prev, const Tensor& c_prev) const {
  if (y_prev < 0) throw VocabularyError("decoder_step: negative token id");
  const Tensor x = concat({embedding(embedding_, static_cast<std::size_t>(y_prev)), c_prev}, 1);
  return lstm_step(decoder_, x, s_prev);
}

Tensor Seq2SeqModel::output_distribution(const Tensor& s, const Tensor& c) const {
  return linear(concat({s, c}, 1), out_w_, out_b_);
}

Tensor Seq2SeqModel::fuse_contexts(DecoderState& state, const std::optional<Attended>& audio,
                                   const std::optional<Attended>& video,
                                   StepTelemetry& tel) const {
  switch (cfg_.strategy) {
    case FusionStrategy::kAudioOnly: return audio->context;
    case FusionStrategy::kVideoOnly: return video->context;
    case FusionStrategy::kConcat: return concat({audio->context, video->context}, 1);
    case FusionStrategy::kModalityAttention: {
      const ModalityInput inputs[] = {{kAudio, audio->context}, {kVideo, video->context}};
      FusionStep fused = state.scorer->fuse(inputs);
      tel.modality_weights = fused.alpha;
      return fused.fused;
    }
  }
  throw ContractError("unknown fusion strategy");
}

StepOutput Seq2SeqModel::step(const EncodedUtterance& enc, DecoderState& state,
                              int prev_token) const {
  state.lstm = decoder_step(state.lstm, prev_token, state.context);
  const Tensor s = slice(state.lstm, 0, 0, 1);
  StepOutput out;
  std::optional<Attended> audio, video;
  if (cfg_.uses_audio()) {
    audio = attend_with_keys(*audio_attender_, *enc.audio_keys, *enc.audio_memory, s);
    out.telemetry.attention.emplace_back(audio->weights.values().begin(),
                                         audio->weights.values().end());
  }
  if (cfg_.uses_video()) {
    video = attend_with_keys(*video_attender_, *enc.video_keys, *enc.video_memory, s);
    out.telemetry.attention.emplace_back(video->weights.values().begin(),
                                         video->weights.values().end());
  }
  state.context = fuse_contexts(state, audio, video, out.telemetry);
  out.logits = output_distribution(s, state.context);
  return out;
}

TeacherForcedResult Seq2SeqModel::forward_teacher_forced(const Utterance& utt, double ss_rate,
                                                         std::mt19937_64& rng) const {
  if (!(ss_rate >= 0.0 && ss_rate <= 1.0)) {
    throw ContractError("forward_teacher_forced: ss_rate must lie in [0, 1]");
  }
  std::vector<int> targets = utt.symbols;
  targets.push_back(kEos);
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
      throw VocabularyError("target id " + std::to_string(t) + " outside vocabulary");
    }
  }
  const EncodedUtterance enc = encode(utt);
  DecoderState state = initial_state(enc);
  TeacherForcedResult result;
  std::vector<Tensor> logits;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  int prev = kSos;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    result.inputs.push_back(prev);
    StepOutput out = step(enc, state, prev);
    result.telemetry.push_back(std::move(out.telemetry));
    logits.push_back(out.logits);
    prev = targets[i];
    if (ss_rate > 0.0 && i + 1 < targets.size() && coin(rng) < ss_rate) {
      const auto lv = out.logits.values();
      const double max = *std::max_element(lv.begin(), lv.end());
      std::vector<double> weights(lv.size());
      for (std::size_t v = 0; v < lv.size(); ++v) weights[v] = std::exp(lv[v] - max);
      std::discrete_distribution<int> sample(weights.begin(), weights.end());
      prev = sample(rng);
    }
  }
  result.logits = concat(logits, 0);
  result.loss = cross_entropy_label_smoothed(result.logits, targets, cfg_.label_smoothing);
  return result;
}

}  // namespace modatt
