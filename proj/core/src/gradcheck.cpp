// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "modatt/attention.hpp"
#include "modatt/errors.hpp"
#include "modatt/modality_fusion.hpp"
#include "modatt/recurrent.hpp"

namespace modatt {

GradCheckResult check_gradients(std::string name, std::span<Tensor> inputs,
                                const std::function<Tensor()>& loss,
                                const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = std::move(name);
  result.tolerance = options.tolerance;

  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs) t.zero_grad();
  {
    Graph graph;
    graph.backward(loss());
  }
  for (Tensor& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);  // never reached: true gradient is zero
    }
  }

  NoGradScope no_grad;
  std::size_t fallback_failures = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::span<double> values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss().item();
      values[i] = saved - options.step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double bound = std::max(options.tolerance * scale, options.abs_floor);
      ++result.coordinates;
      if (diff <= bound) {
        ++result.within_tolerance;
      } else if (diff <= std::max(options.fallback_tolerance * scale, options.abs_floor)) {
        ++result.within_fallback;
      } else {
        ++fallback_failures;
      }
      result.max_error = std::max(result.max_error, diff / bound);
    }
  }
  const double share = result.coordinates == 0
                           ? 1.0
                           : static_cast<double>(result.within_tolerance) /
                                 static_cast<double>(result.coordinates);
  result.passed = result.coordinates > 0 && fallback_failures == 0 &&
                  share >= options.required_fraction;
  return result;
}

GradCheckResult check_model_gradients(std::string name, Seq2SeqModel& model,
                                      const std::function<Tensor()>& loss,
                                      const GradCheckOptions& options) {
  std::vector<Tensor> inputs;
  for (auto& [key, t] : model.params()) inputs.push_back(t);
  return check_gradients(std::move(name), inputs, loss, options);
}

ModelConfig tiny_model_config(FusionStrategy strategy) {
  ModelConfig cfg;
  cfg.vocab_size = 5;
  cfg.embed_dim = 4;
  cfg.audio = EncoderConfig{3, 4, {true, true}};
  cfg.video = EncoderConfig{3, 4, {false}};
  cfg.decoder_hidden = 8;
  cfg.attention_dim = 6;
  cfg.scorer_hidden = 4;
  cfg.strategy = strategy;
  cfg.label_smoothing = 0.1;
  return cfg;
}

Utterance tiny_utterance(std::uint64_t seed, std::size_t symbols) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> symbol(kFirstSymbol, 4);
  auto stream = [&](std::size_t rows) {
    std::vector<double> v(rows * 3);
    for (double& x : v) x = normal(rng);
    return Tensor({rows, 3}, std::move(v));
  };
  Utterance u;
  u.id = "tiny-" + std::to_string(seed);
  for (std::size_t i = 0; i < symbols; ++i) u.symbols.push_back(symbol(rng));
  u.audio = stream(8 * symbols);
  u.video = stream(2 * symbols);
  u.audio_frames = 8 * symbols;
  u.video_frames = 2 * symbols;
  return u;
}

namespace {

class Fixture {
 public:
  explicit Fixture(std::uint64_t seed) : rng_(seed) {}

  Tensor leaf(Shape shape, double scale = 1.0) {
    return Tensor::parameter(shape, draw(element_count(shape), scale));
  }
  Tensor constant(Shape shape, double scale = 1.0) {
    return Tensor(shape, draw(element_count(shape), scale));
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<double> draw(std::size_t n, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng_);
    return v;
  }
  std::mt19937_64 rng_;
};

/// sum(out * r) with a fixed random r, so every output coordinate matters.
Tensor project(const Tensor& out, const Tensor& r) { return sum(mul(out, r)); }

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Fixture fx(seed);
  std::vector<GradCheckResult> results;
  GradCheckOptions primitive;
  primitive.tolerance = 1e-6;
  GradCheckOptions composite;
  composite.tolerance = 1e-5;
  GradCheckOptions model;

  auto check = [&](const std::string& name, std::vector<Tensor> inputs,
                   const std::function<Tensor()>& loss, const GradCheckOptions& opt) {
    results.push_back(check_gradients(name, inputs, loss, opt));
  };

  {
    Tensor a = fx.leaf({3, 4}), b = fx.leaf({4, 2}), r = fx.constant({3, 2});
    check("matmul", {a, b}, [=] { return project(matmul(a, b), r); }, primitive);
  }
  {
    Tensor x = fx.leaf({3, 4}), w = fx.leaf({2, 4}), bias = fx.leaf({2}), r = fx.constant({3, 2});
    check("linear", {x, w, bias}, [=] { return project(linear(x, w, bias), r); }, primitive);
  }
  for (ElementwiseOp op : {ElementwiseOp::kAdd, ElementwiseOp::kSub, ElementwiseOp::kMul}) {
    Tensor a = fx.leaf({2, 3}), b = fx.leaf({2, 3}), r = fx.constant({2, 3});
    const char* names[] = {"add", "sub", "mul"};
    check(names[static_cast<int>(op)], {a, b}, [=] {
      const Tensor args[] = {a, b};
      return project(elementwise(op, args), r);
    }, primitive);
  }
  for (ElementwiseOp op : {ElementwiseOp::kTanh, ElementwiseOp::kSigmoid}) {
    Tensor a = fx.leaf({2, 3}), r = fx.constant({2, 3});
    check(op == ElementwiseOp::kTanh ? "tanh" : "sigmoid", {a}, [=] {
      const Tensor args[] = {a};
      return project(elementwise(op, args), r);
    }, primitive);
  }
  {
    Tensor a = fx.leaf({2, 3}), r = fx.constant({2, 3});
    check("scale", {a}, [=] { return project(scale(a, -1.7), r); }, primitive);
  }
  {
    Tensor x = fx.leaf({2, 4}), r = fx.constant({2, 4});
    const std::vector<std::uint8_t> keep{1, 0, 1, 1, 1, 1, 0, 1};
    check("softmax_last_dim", {x}, [=] { return project(softmax_last_dim(x, keep), r); },
          primitive);
  }
  {
    Tensor a = fx.leaf({2, 3}), b = fx.leaf({2, 2}), r = fx.constant({2, 5});
    check("concat", {a, b}, [=] { return project(concat({a, b}, 1), r); }, primitive);
  }
  {
    Tensor a = fx.leaf({3, 4}), r = fx.constant({3, 2});
    check("slice", {a}, [=] { return project(slice(a, 1, 1, 3), r); }, primitive);
  }
  {
    Tensor table = fx.leaf({5, 3}), r = fx.constant({1, 3});
    check("embedding", {table}, [=] { return project(embedding(table, 2), r); }, primitive);
  }
  {
    Tensor p0 = fx.leaf({2, 3}), p1 = fx.leaf({2, 3}), r = fx.constant({2, 3});
    check("gather_rows", {p0, p1}, [=] {
      const Tensor parts[] = {p0, p1};
      return project(gather_rows(parts, 1), r);
    }, primitive);
  }
  {
    Tensor xs = fx.leaf({5, 2}), r = fx.constant({3, 4});
    check("pyramidal_subsample", {xs}, [=] { return project(pyramidal_subsample(xs), r); },
          primitive);
  }
  {
    Tensor logits = fx.leaf({3, 5});
    const std::vector<int> targets{1, 4, 0};
    check("cross_entropy_label_smoothed", {logits}, [=] {
      return cross_entropy_label_smoothed(logits, targets, 0.1);
    }, primitive);
  }
  {
    Tensor proj = fx.leaf({2, 12}), state = fx.leaf({2, 3}), w_hh = fx.leaf({12, 3}, 0.5);
    Tensor r = fx.constant({2, 3});
    check("lstm_cell", {proj, state, w_hh}, [=] {
      return project(lstm_cell(proj, 1, state, w_hh), r);
    }, primitive);
  }
  {
    Tensor keys = fx.leaf({4, 3}), query = fx.leaf({1, 3}), v = fx.leaf({1, 3});
    Tensor r = fx.constant({1, 4});
    check("additive_energies", {keys, query, v}, [=] {
      return project(additive_energies(keys, query, v), r);
    }, primitive);
  }

  // Composite modules.
  {
    ParameterSet ps;
    LstmParams p = LstmParams::create(ps, "lstm", 3, 4, fx.rng());
    Tensor xs = fx.leaf({5, 3}), r = fx.constant({2, 4});
    std::vector<Tensor> inputs{xs};
    for (auto& [k, t] : ps) inputs.push_back(t);
    check("lstm_step x5", inputs, [=] {
      Tensor state = lstm_zero_state(4);
      for (std::size_t t = 0; t < 5; ++t) state = lstm_step(p, slice(xs, 0, t, t + 1), state);
      return project(state, r);
    }, composite);
  }
  {
    ParameterSet ps;
    const EncoderConfig cfg{3, 3, {false, true}};
    EncoderParams p = EncoderParams::create(ps, "enc", cfg, fx.rng());
    Tensor xs = fx.leaf({5, 3}), r = fx.constant({3, 6}), rf = fx.constant({2, 6});
    std::vector<Tensor> inputs{xs};
    for (auto& [k, t] : ps) inputs.push_back(t);
    check("encoder", inputs, [=] {
      const EncoderOutput out = encode(cfg, p, xs);
      return add(project(out.memory, r), project(out.final_state, rf));
    }, composite);
  }
  {
    ParameterSet ps;
    AttenderParams p = AttenderParams::create(ps, "att", 4, 3, 5, fx.rng());
    Tensor memory = fx.leaf({4, 4}), s = fx.leaf({1, 3});
    Tensor rc = fx.constant({1, 4}), rw = fx.constant({1, 4});
    std::vector<Tensor> inputs{memory, s};
    for (auto& [k, t] : ps) inputs.push_back(t);
    check("attend", inputs, [=] {
      const Attended a = attend(p, s, memory);
      return add(project(a.context, rc), project(a.weights, rw));
    }, composite);
  }
  {
    ParameterSet ps;
    std::vector<ModalityScorerParams> per{
        ModalityScorerParams::create(ps, "sc.audio", 3, 4, fx.rng()),
        ModalityScorerParams::create(ps, "sc.video", 3, 4, fx.rng())};
    Tensor fa = fx.leaf({2, 3}), fv = fx.leaf({2, 3}), r = fx.constant({1, 3});
    std::vector<Tensor> inputs{fa, fv};
    for (auto& [k, t] : ps) inputs.push_back(t);
    check("modality fuse x2", inputs, [=] {
      ModalityScorer scorer(per);
      Tensor total;
      for (std::size_t t = 0; t < 2; ++t) {
        const ModalityInput in[] = {{kAudio, slice(fa, 0, t, t + 1)},
                                    {kVideo, slice(fv, 0, t, t + 1)}};
        const Tensor part = project(scorer.fuse(in).fused, r);
        total = total.defined() ? add(total, part) : part;
      }
      return total;
    }, composite);
  }

  // Full models, every parameter.
  for (FusionStrategy strategy :
       {FusionStrategy::kAudioOnly, FusionStrategy::kVideoOnly, FusionStrategy::kConcat,
        FusionStrategy::kModalityAttention}) {
    Seq2SeqModel m(tiny_model_config(strategy), seed + 17);
    const Utterance utt = tiny_utterance(seed + 29);
    results.push_back(check_model_gradients(
        "model/" + std::string(strategy_name(strategy)), m,
        [&m, &utt] {
          std::mt19937_64 unused(0);
          return m.forward_teacher_forced(utt, 0.0, unused).loss;
        },
        model));
  }
  return results;
}

}  // namespace modatt
