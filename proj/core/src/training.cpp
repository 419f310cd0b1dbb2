// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "modatt/errors.hpp"
#include "modatt/evaluation.hpp"

namespace modatt {
namespace {

constexpr std::size_t kReferenceEpochs = 15;

std::size_t scale_anchor(std::size_t anchor, std::size_t epochs) {
  const double scaled = static_cast<double>(anchor) * static_cast<double>(epochs) /
                        static_cast<double>(kReferenceEpochs);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

std::string norm_report(const ParameterSet& params) {
  std::map<std::string, double> by_prefix;
  for (const auto& [name, t] : params) {
    double sq = 0.0;
    for (double x : t.values()) sq += x * x;
    by_prefix[name.substr(0, name.find('.'))] += sq;
  }
  std::ostringstream out;
  for (const auto& [prefix, sq] : by_prefix) out << ' ' << prefix << '=' << std::sqrt(sq);
  return out.str();
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

}  // namespace

TrainSchedule TrainSchedule::scaled(std::size_t epochs) {
  TrainSchedule s;
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  s.epochs = epochs;
  s.ss_start = scale_anchor(s.ss_start, epochs);
  s.ss_end = std::max(s.ss_start, scale_anchor(s.ss_end, epochs));
  s.halve_from = std::min(epochs, scale_anchor(s.halve_from, epochs));
  return s;
}

TrainSchedule TrainSchedule::from_config(const KeyValues& kv) {
  TrainSchedule s = scaled(kv.get_size("epochs", kReferenceEpochs));
  s.ss_start = kv.get_size("ss_start", s.ss_start);
  s.ss_end = kv.get_size("ss_end", s.ss_end);
  s.ss_final = kv.get_double("ss_final", s.ss_final);
  s.learning_rate = kv.get_double("learning_rate", s.learning_rate);
  s.halve_from = kv.get_size("halve_from", s.halve_from);
  s.curriculum = kv.get_bool("curriculum", s.curriculum);
  s.batch_size = kv.get_size("batch_size", s.batch_size);
  s.clip_norm = kv.get_double("clip_norm", s.clip_norm);
  if (auto text = kv.get("stages")) s.stages = parse_stages(*text);
  s.dev_beam = kv.get_size("dev_beam", s.dev_beam);
  s.validate();
  return s;
}

void TrainSchedule::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (ss_start == 0 || ss_end < ss_start) {
    throw ConfigError("train: need 1 <= ss_start <= ss_end");
  }
  if (!(ss_final >= 0.0 && ss_final <= 1.0)) throw ConfigError("train: ss_final must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (halve_from == 0 || halve_from > epochs) {
    throw ConfigError("train: halve_from must lie in [1, epochs]");
  }
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  if (dev_beam == 0) throw ConfigError("train: dev_beam must be positive");
  if (!stages.empty()) {
    std::size_t total = 0;
    for (const TrainStage& st : stages) {
      if (st.epochs == 0) throw ConfigError("train: every stage needs at least one epoch");
      total += st.epochs;
    }
    if (total != epochs) {
      throw ConfigError("train: stage epochs sum to " + std::to_string(total) + ", expected " +
                        std::to_string(epochs));
    }
  }
}

std::string TrainSchedule::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epochs = " << epochs << "\n"
      << "ss_start = " << ss_start << "\n"
      << "ss_end = " << ss_end << "\n"
      << "ss_final = " << ss_final << "\n"
      << "learning_rate = " << learning_rate << "\n"
      << "halve_from = " << halve_from << "\n"
      << "curriculum = " << (curriculum ? "true" : "false") << "\n"
      << "batch_size = " << batch_size << "\n"
      << "clip_norm = " << clip_norm << "\n"
      << "stages = " << stages_text(stages) << "\n"
      << "dev_beam = " << dev_beam << "\n";
  return out.str();
}

std::size_t TrainSchedule::stage_at(std::size_t epoch) const {
  std::size_t end = 0;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    end += stages[k].epochs;
    if (epoch <= end) return k;
  }
  return stages.empty() ? 0 : stages.size() - 1;
}

double ss_rate_at(const TrainSchedule& sched, std::size_t epoch) {
  if (epoch < sched.ss_start) return 0.0;
  if (epoch >= sched.ss_end) return sched.ss_final;
  const double done = static_cast<double>(epoch - sched.teacher_forced_epochs());
  const double span = static_cast<double>(sched.ss_end - sched.teacher_forced_epochs());
  return sched.ss_final * done / span;
}

double lr_at(const TrainSchedule& sched, std::size_t epoch) {
  if (epoch < sched.halve_from) return sched.learning_rate;
  return std::ldexp(sched.learning_rate, -static_cast<int>(epoch - sched.halve_from + 1));
}

std::vector<TrainStage> parse_stages(std::string_view text) {
  std::vector<TrainStage> stages;
  if (trim(text).empty()) return stages;
  for (const std::string& item : split_list(text)) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) {
      throw ConfigError("stage '" + item + "' must look like prefix+prefix:epochs");
    }
    TrainStage st;
    try {
      std::size_t used = 0;
      const std::string count = trim(item.substr(colon + 1));
      st.epochs = std::stoul(count, &used);
      if (used != count.size()) throw std::invalid_argument(count);
    } catch (const std::exception&) {
      throw ConfigError("stage '" + item + "' has a malformed epoch count");
    }
    const std::string who = trim(item.substr(0, colon));
    if (who != "all") {
      for (const std::string& p : split_list(who, '+')) st.trainable.push_back(p + ".");
    }
    stages.push_back(std::move(st));
  }
  return stages;
}

std::string stages_text(const std::vector<TrainStage>& stages) {
  std::string out;
  for (const TrainStage& st : stages) {
    if (!out.empty()) out += ",";
    std::string who;
    for (const std::string& p : st.trainable) {
      if (!who.empty()) who += "+";
      who += p.substr(0, p.size() - (p.ends_with('.') ? 1 : 0));
    }
    out += (who.empty() ? "all" : who) + ":" + std::to_string(st.epochs);
  }
  return out;
}

void adam_step(AdamState& state, ParameterSet& params, double lr) {
  ++state.step;
  for (auto& [name, t] : params) {
    if (!t.requires_grad()) continue;
    if (!t.has_grad()) throw ContractError("adam_step: trainable parameter " + name + " has no gradient");
    AdamState::Moments& mom = state.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(t.size(), 0.0);
      mom.v.assign(t.size(), 0.0);
    }
    ++mom.updates;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(mom.updates));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(mom.updates));
    const std::span<const double> g = t.grad();
    const std::span<double> w = t.mutable_values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      mom.m[k] = state.beta1 * mom.m[k] + (1.0 - state.beta1) * g[k];
      mom.v[k] = state.beta2 * mom.v[k] + (1.0 - state.beta2) * g[k] * g[k];
      w[k] -= lr * (mom.m[k] / c1) / (std::sqrt(mom.v[k] / c2) + state.epsilon);
    }
  }
}

double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : params) {
      if (!t.requires_grad() || !t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

std::string epoch_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["stage"] = r.stage;
  j["lr"] = r.lr;
  j["ss_rate"] = r.ss_rate;
  j["train_loss"] = r.train_loss;
  j["dev_cer"] = r.dev_cer;
  return j.dump();
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const Utterance> data,
                                                    const TrainSchedule& sched,
                                                    std::size_t epoch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto by_length = [&](std::size_t a, std::size_t b) {
    return data[a].symbols.size() < data[b].symbols.size();
  };
  const std::size_t b = sched.batch_size;
  std::vector<std::vector<std::size_t>> batches;
  auto cut = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; i += b) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(end, i + b)));
    }
  };
  if (epoch == 1 && sched.curriculum) {
    std::stable_sort(order.begin(), order.end(), by_length);
    cut(0, order.size());
    return batches;
  }
  // Shuffle, then sort within windows so each batch holds similar lengths,
  // then shuffle the batches themselves.
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t window = b * 16;
  for (std::size_t i = 0; i < order.size(); i += window) {
    const std::size_t end = std::min(order.size(), i + window);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end), by_length);
    cut(i, end);
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

TrainResult train(const ModelConfig& cfg, const TrainSchedule& sched,
                  std::span<const Utterance> train_set, std::span<const Utterance> dev_set,
                  std::uint64_t seed, const TrainOptions& options) {
  sched.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  Seq2SeqModel model(cfg, seed);
  AdamState adam;
  std::mt19937_64 order_rng = stream_rng(seed, 1);
  std::mt19937_64 sampling_rng = stream_rng(seed, 2);

  const bool write = !options.output_dir.empty();
  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(options.output_dir);
    log.open(options.output_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw FormatError("cannot open training log in " + options.output_dir.string());
  }

  TrainResult result;
  result.config = cfg;
  double best_cer = std::numeric_limits<double>::infinity();
  DecodeOptions dev_decode;
  dev_decode.beam_width = sched.dev_beam;

  for (std::size_t epoch = 1; epoch <= sched.epochs; ++epoch) {
    const std::size_t stage = sched.stage_at(epoch);
    model.params().set_trainable_prefixes(sched.stages.empty() ? std::vector<std::string>{}
                                                               : sched.stages[stage].trainable);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.lr = lr_at(sched, epoch);
    rec.ss_rate = ss_rate_at(sched, epoch);

    double loss_total = 0.0;
    std::size_t batch_no = 0;
    for (const auto& batch : epoch_batches(train_set, sched, epoch, order_rng)) {
      ++batch_no;
      model.params().zero_grad();
      const double weight = 1.0 / static_cast<double>(batch.size());
      for (std::size_t idx : batch) {
        Graph graph;
        TeacherForcedResult fwd = model.forward_teacher_forced(train_set[idx], rec.ss_rate,
                                                                sampling_rng);
        const double loss = fwd.loss.item();
        if (!std::isfinite(loss)) {
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(batch_no) + " utterance " + train_set[idx].id +
                                "; parameter norms:" + norm_report(model.params()));
        }
        loss_total += loss;
        graph.backward(scale(fwd.loss, weight));
      }
      const double norm = clip_gradients(model.params(), sched.clip_norm);
      if (!std::isfinite(norm)) {
        throw DivergenceError("non-finite gradient norm at epoch " + std::to_string(epoch) +
                              " batch " + std::to_string(batch_no) +
                              "; parameter norms:" + norm_report(model.params()));
      }
      adam_step(adam, model.params(), rec.lr);
    }
    rec.train_loss = loss_total / static_cast<double>(train_set.size());
    model.params().set_trainable_prefixes({});

    rec.dev_cer = dev_set.empty() ? 0.0
                                  : evaluate(model, dev_set, dev_decode, options.eval_workers)
                                        .cer.cer();
    if (rec.dev_cer < best_cer) {
      best_cer = rec.dev_cer;
      result.best = model.params().clone();
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (write) {
      log << epoch_json(rec) << '\n' << std::flush;
      std::ostringstream name;
      name << "epoch_" << std::setw(2) << std::setfill('0') << epoch << ".ckpt";
      save_checkpoint(options.output_dir / name.str(), model.params(), cfg.to_text());
      if (result.best_epoch == epoch) {
        save_checkpoint(options.output_dir / "best.ckpt", result.best, cfg.to_text());
      }
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

}  // namespace modatt
