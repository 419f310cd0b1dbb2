// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "modatt/corpus.hpp"
#include "modatt/errors.hpp"
#include "modatt/model.hpp"

namespace modatt {

struct DecodeOptions {
  std::size_t beam_width = 5;
  double temperature = 1.0;
  std::size_t max_len = 16;
};

struct DecodeResult {
  std::vector<int> tokens;  // EOS-terminated
  double log_prob = 0.0;
  /// The hypothesis hit max_len and was closed with an EOS it never scored.
  bool truncated = false;
  /// [step][modality][memory row], audio first when present.
  std::vector<std::vector<std::vector<double>>> attention;
  /// [step][modality]; empty unless the model fuses with modality attention.
  std::vector<std::vector<double>> modality_weights;

  /// Symbols without the terminating EOS.
  std::vector<int> hypothesis() const;
  bool operator==(const DecodeResult&) const = default;
};

struct SearchStep {
  std::vector<double> logits;
  StepTelemetry telemetry;
};

/// Anything that can be searched: an initial state and a transition that
/// consumes the previous token and returns next-token logits.
template <typename M>
concept SearchModel = requires(const M& m, typename M::State& s, int token) {
  { m.initial_state() } -> std::convertible_to<typename M::State>;
  { m.advance(s, token) } -> std::convertible_to<SearchStep>;
  { m.sos() } -> std::convertible_to<int>;
  { m.eos() } -> std::convertible_to<int>;
};

/// log softmax(logits / temperature).
std::vector<double> scaled_log_softmax(std::span<const double> logits, double temperature);

/// Survivors after each search step, for inspection.
struct BeamTrace {
  struct Entry {
    std::vector<int> tokens;
    double score;
  };
  std::vector<std::vector<Entry>> steps;
};

/// Adapter exposing one encoded utterance to the search.
class UtteranceSearch {
 public:
  using State = DecoderState;

  UtteranceSearch(const Seq2SeqModel& model, const Utterance& utt)
      : model_(model), encoded_(model.encode(utt)) {}

  State initial_state() const { return model_.initial_state(encoded_); }
  SearchStep advance(State& state, int token) const {
    StepOutput out = model_.step(encoded_, state, token);
    return {{out.logits.values().begin(), out.logits.values().end()}, std::move(out.telemetry)};
  }
  int sos() const { return kSos; }
  int eos() const { return kEos; }

 private:
  const Seq2SeqModel& model_;
  EncodedUtterance encoded_;
};

namespace detail {

template <typename State>
struct Hypothesis {
  State state;
  std::vector<int> tokens;
  double score = 0.0;
  std::vector<StepTelemetry> telemetry;
};

inline DecodeResult finish(std::vector<int> tokens, double score, bool truncated,
                           std::vector<StepTelemetry> telemetry) {
  DecodeResult r;
  r.tokens = std::move(tokens);
  r.log_prob = score;
  r.truncated = truncated;
  for (StepTelemetry& t : telemetry) {
    r.attention.push_back(std::move(t.attention));
    if (!t.modality_weights.empty()) r.modality_weights.push_back(std::move(t.modality_weights));
  }
  return r;
}

inline void check_options(const DecodeOptions& opt) {
  if (opt.beam_width < 1) throw ContractError("beam width must be at least 1");
  if (!(opt.temperature > 0.0)) throw ContractError("temperature must be positive");
  if (opt.max_len < 1) throw ContractError("max_len must be at least 1");
}

}  // namespace detail

/// Picks argmax_v (score + log p(v)) at every step, lowest id on ties.
template <SearchModel M>
DecodeResult greedy_decode(const M& model, const DecodeOptions& opt) {
  detail::check_options(opt);
  auto state = model.initial_state();
  std::vector<int> tokens;
  std::vector<StepTelemetry> telemetry;
  double score = 0.0;
  int prev = model.sos();
  for (std::size_t step = 1; step <= opt.max_len; ++step) {
    SearchStep out = model.advance(state, prev);
    const std::vector<double> logp = scaled_log_softmax(out.logits, opt.temperature);
    std::size_t best = 0;
    for (std::size_t v = 1; v < logp.size(); ++v) {
      if (score + logp[v] > score + logp[best]) best = v;
    }
    score += logp[best];
    tokens.push_back(static_cast<int>(best));
    telemetry.push_back(std::move(out.telemetry));
    if (static_cast<int>(best) == model.eos()) {
      return detail::finish(std::move(tokens), score, false, std::move(telemetry));
    }
    prev = static_cast<int>(best);
  }
  tokens.push_back(model.eos());
  return detail::finish(std::move(tokens), score, true, std::move(telemetry));
}

/// Beam search over EOS-terminated hypotheses ranked by summed
/// temperature-scaled log-probabilities, no length normalisation.
///
/// Each step expands every live hypothesis by every token and keeps the
/// `beam_width` best candidates, ordered by score, then by parent rank, then
/// by token id. Candidates ending in EOS leave the beam as finished. At
/// max_len survivors are closed with an unscored EOS and flagged truncated.
/// Search stops once no live hypothesis can beat the best finished one.
/// Among equal scores the earliest finished hypothesis wins.
template <SearchModel M>
DecodeResult beam_search(const M& model, const DecodeOptions& opt, BeamTrace* trace = nullptr) {
  detail::check_options(opt);
  using Hyp = detail::Hypothesis<typename M::State>;
  struct Candidate {
    double score;
    std::size_t parent;
    int token;
  };

  std::vector<Hyp> live;
  live.push_back(Hyp{model.initial_state(), {}, 0.0, {}});
  std::vector<DecodeResult> finished;

  for (std::size_t step = 1; step <= opt.max_len && !live.empty(); ++step) {
    std::vector<typename M::State> next_states;
    std::vector<StepTelemetry> step_telemetry;
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      auto state = live[h].state;
      const int prev = live[h].tokens.empty() ? model.sos() : live[h].tokens.back();
      SearchStep out = model.advance(state, prev);
      const std::vector<double> logp = scaled_log_softmax(out.logits, opt.temperature);
      for (std::size_t v = 0; v < logp.size(); ++v) {
        candidates.push_back({live[h].score + logp[v], h, static_cast<int>(v)});
      }
      next_states.push_back(std::move(state));
      step_telemetry.push_back(std::move(out.telemetry));
    }
    const std::size_t keep = std::min(opt.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hyp> survivors;
    if (trace) trace->steps.emplace_back();
    for (std::size_t k = 0; k < keep; ++k) {
      const Candidate& c = candidates[k];
      const Hyp& parent = live[c.parent];
      std::vector<int> tokens = parent.tokens;
      tokens.push_back(c.token);
      std::vector<StepTelemetry> telemetry = parent.telemetry;
      telemetry.push_back(step_telemetry[c.parent]);
      if (trace) trace->steps.back().push_back({tokens, c.score});
      if (c.token == model.eos()) {
        finished.push_back(detail::finish(std::move(tokens), c.score, false, std::move(telemetry)));
      } else if (step == opt.max_len) {
        tokens.push_back(model.eos());
        finished.push_back(detail::finish(std::move(tokens), c.score, true, std::move(telemetry)));
      } else {
        survivors.push_back(Hyp{next_states[c.parent], std::move(tokens), c.score,
                                std::move(telemetry)});
      }
    }
    live = std::move(survivors);
    if (!finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const DecodeResult& f : finished) best_finished = std::max(best_finished, f.log_prob);
      // Survivors are sorted, so live.front() has the best live score.
      if (best_finished >= live.front().score) break;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].log_prob > finished[best].log_prob) best = i;
  }
  return std::move(finished[best]);
}

/// Beam search over one utterance.
DecodeResult decode_utterance(const Seq2SeqModel& model, const Utterance& utt,
                              const DecodeOptions& opt);

}  // namespace modatt
