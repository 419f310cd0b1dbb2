// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

// Acceptance suite. Each criterion prints one PASS or FAIL line followed by
// the measurements behind it; the exit status is 1 if any selected criterion
// failed. Usage: acceptance [--work DIR] [criterion ...]

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../unit/oracles.hpp"
#include "modatt/beam_search.hpp"
#include "modatt/corpus.hpp"
#include "modatt/evaluation.hpp"
#include "modatt/experiment.hpp"
#include "modatt/gradcheck.hpp"
#include "modatt/metrics.hpp"
#include "modatt/modality_fusion.hpp"
#include "modatt/training.hpp"

namespace modatt {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string summary;
  std::ostringstream detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::size_t hardware_workers() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// 1 -------------------------------------------------------------------------

void gradient_integrity(Outcome& o) {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck_suite(1);
  const double secs = seconds_since(t0);
  // Primitives run at 1e-6, composite layers at 1e-5, whole models at 1e-4.
  std::size_t failed = 0, primitives = 0, layers = 0, models = 0;
  for (const auto& r : results) {
    if (r.name.starts_with("model/")) {
      ++models;
      if (r.tolerance > 1e-4) ++failed;
    } else if (r.tolerance <= 1e-6) {
      ++primitives;
    } else {
      ++layers;
    }
    if (!r.passed) ++failed;
    o.detail << "  " << (r.passed ? "ok  " : "FAIL") << " " << r.name << " coords "
             << r.coordinates << " within " << r.within_tolerance << " tol "
             << r.tolerance << " worst " << fmt("%.3g", r.max_error) << "\n";
  }
  o.pass = failed == 0 && primitives > 0 && models == 4 && secs < 120.0;
  o.summary = std::to_string(primitives) + " primitive, " + std::to_string(layers) +
              " layer and " + std::to_string(models) + " model checks, " + std::to_string(failed) + " failed, " + fmt("%.1f s", secs);
}

// 2 -------------------------------------------------------------------------

std::vector<ModalityScorerParams> random_scorers(std::size_t modalities, std::size_t dim,
                                                 std::size_t hidden, std::mt19937_64& rng,
                                                 bool shared) {
  ParameterSet ps;
  std::uniform_real_distribution<double> gain(0.5, 6.0);
  std::vector<ModalityScorerParams> out;
  for (std::size_t m = 0; m < modalities; ++m) {
    if (shared && m > 0) {
      out.push_back(out.front());
      continue;
    }
    auto p = ModalityScorerParams::create(ps, "m" + std::to_string(m), dim, hidden, rng);
    const double g = gain(rng);
    for (Tensor* t : {&p.lstm.w_ih, &p.lstm.w_hh, &p.w}) {
      for (double& x : t->mutable_values()) x *= g;
    }
    p.b.mutable_values()[0] = std::normal_distribution<double>(0.0, 2.0)(rng);
    out.push_back(p);
  }
  return out;
}

Tensor random_row(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return Tensor({1, dim}, std::move(v));
}

void fusion_invariants(Outcome& o) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> modalities(2, 4), dim(1, 8), hidden(1, 6);
  constexpr std::size_t kSteps = 10000;
  constexpr std::size_t kUtterance = 25;  // steps between scorer resets
  double worst_sum = 0.0, worst_envelope = 0.0, worst_symmetry = 0.0;
  std::size_t done = 0;
  while (done < kSteps) {
    const std::size_t m = modalities(rng), d = dim(rng), h = hidden(rng);
    ModalityScorer free(random_scorers(m, d, h, rng, false));
    ModalityScorer tied(random_scorers(m, d, h, rng, true));
    for (std::size_t s = 0; s < kUtterance && done < kSteps; ++s, ++done) {
      std::vector<ModalityInput> in;
      for (std::size_t k = 0; k < m; ++k) in.push_back({k, random_row(d, rng)});
      const FusionStep step = free.fuse(in);
      double sum = 0.0;
      for (double a : step.alpha) sum += a;
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      for (std::size_t j = 0; j < d; ++j) {
        double lo = in[0].features[j], hi = lo;
        for (const auto& x : in) {
          lo = std::min(lo, x.features[j]);
          hi = std::max(hi, x.features[j]);
        }
        const double f = step.fused[j];
        worst_envelope = std::max({worst_envelope, lo - f, f - hi});
      }
      // Shared weights and identical inputs: every modality scores the same.
      const Tensor same = random_row(d, rng);
      std::vector<ModalityInput> tied_in;
      for (std::size_t k = 0; k < m; ++k) tied_in.push_back({k, same});
      for (double a : tied.fuse(tied_in).alpha) {
        worst_symmetry = std::max(worst_symmetry, std::abs(a - 1.0 / static_cast<double>(m)));
      }
    }
  }
  o.pass = worst_sum <= 1e-12 && worst_envelope <= 1e-12 && worst_symmetry <= 1e-12;
  o.summary = std::to_string(done) + " steps, max |sum-1| " + fmt("%.2g", worst_sum) +
              ", max envelope excess " + fmt("%.2g", worst_envelope) + ", max |a-1/M| " +
              fmt("%.2g", worst_symmetry);
}

// 3 -------------------------------------------------------------------------

void oracle_equivalence(Outcome& o) {
  const auto t0 = Clock::now();
  constexpr std::size_t kVocab = 4, kSteps = 3, kWidth = 3;
  const FusionStrategy strategies[] = {FusionStrategy::kAudioOnly, FusionStrategy::kVideoOnly,
                                       FusionStrategy::kConcat,
                                       FusionStrategy::kModalityAttention};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> gain(1.0, 8.0);
  std::size_t beam_ok = 0, full_ok = 0, pruned = 0;
  for (std::size_t trial = 0; trial < 50; ++trial) {
    ModelConfig cfg = tiny_model_config(strategies[trial % 4]);
    cfg.vocab_size = kVocab;
    Seq2SeqModel model(cfg, 100 + trial);
    // Scale the random weights so the next-token distributions are peaked
    // enough for pruning to matter.
    const double g = gain(rng);
    for (auto& [name, t] : model.params()) {
      for (double& x : t.mutable_values()) x *= g;
    }
    Utterance u = tiny_utterance(200 + trial, 2);
    for (int& s : u.symbols) s = kFirstSymbol;
    const UtteranceSearch search(model, u);

    const DecodeResult beam = beam_search(search, {kWidth, 1.0, kSteps});
    const auto ref = testing::enumerated_beam(search, kVocab, kWidth, kSteps, 1.0);
    if (beam.tokens == ref.tokens && beam.truncated == ref.truncated &&
        std::abs(beam.log_prob - ref.score) <= 1e-12) {
      ++beam_ok;
    } else {
      o.detail << "  trial " << trial << ": width-3 beam disagrees with enumeration\n";
    }
    const DecodeResult full = beam_search(search, {64, 1.0, kSteps});
    const auto best = testing::exhaustive_best(search, kVocab, kSteps, 1.0);
    if (full.tokens == best.tokens && std::abs(full.log_prob - best.score) <= 1e-12) {
      ++full_ok;
    } else {
      o.detail << "  trial " << trial << ": full-width beam misses the global optimum\n";
    }
    if (beam.tokens != full.tokens) ++pruned;
  }

  std::size_t ed_ok = 0;
  std::uniform_int_distribution<std::size_t> len(0, 8);
  std::uniform_int_distribution<int> sym(0, 3);
  for (int pair = 0; pair < 1000; ++pair) {
    std::vector<int> a(len(rng)), b(len(rng));
    for (int& x : a) x = sym(rng);
    for (int& x : b) x = sym(rng);
    const EditOps ops = edit_distance(a, b);
    const bool consistent = ops.substitutions + ops.deletions + ops.insertions == ops.distance;
    if (consistent && ops.distance == testing::recursive_edit_distance(a, b)) ++ed_ok;
  }
  const double secs = seconds_since(t0);
  o.pass = beam_ok == 50 && full_ok == 50 && ed_ok == 1000 && secs < 120.0;
  o.summary = "beam width 3 " + std::to_string(beam_ok) + "/50, full width " +
              std::to_string(full_ok) + "/50 (pruning changed the answer on " +
              std::to_string(pruned) + "), edit distance " + std::to_string(ed_ok) +
              "/1000, " + fmt("%.1f s", secs);
}

// 4 -------------------------------------------------------------------------

const GridResult::Summary* find_row(const std::vector<GridResult::Summary>& rows,
                                    FusionStrategy s, const std::string& condition) {
  for (const auto& r : rows) {
    if (r.strategy == s && r.test_condition == condition) return &r;
  }
  return nullptr;
}

void snr_trend(Outcome& o) {
  GridSpec g;  // defaults: three strategies, 0 dB and clean, seeds 1-3
  g.workers = hardware_workers();
  const auto t0 = Clock::now();
  const GridResult r = run_experiment_grid(g);
  const double secs = seconds_since(t0);
  o.detail << grid_table(r);
  const auto rows = r.summary();
  const auto* ao0 = find_row(rows, FusionStrategy::kAudioOnly, "0");
  const auto* cc0 = find_row(rows, FusionStrategy::kConcat, "0");
  const auto* ma0 = find_row(rows, FusionStrategy::kModalityAttention, "0");
  const auto* aoc = find_row(rows, FusionStrategy::kAudioOnly, "clean");
  const auto* mac = find_row(rows, FusionStrategy::kModalityAttention, "clean");
  if (!r.all_ok() || !ao0 || !cc0 || !ma0 || !aoc || !mac) {
    o.summary = "grid incomplete";
    return;
  }
  const double rel = ao0->cer > 0.0 ? (ao0->cer - ma0->cer) / ao0->cer : 0.0;
  const bool beats_ao = ma0->cer < ao0->cer && rel >= 0.10;
  const bool beats_concat = ma0->cer <= cc0->cer;
  const bool clean_ok = mac->cer <= 1.1 * aoc->cer;
  o.pass = beats_ao && beats_concat && clean_ok && secs < 25.0 * 60.0;
  o.summary = "0 dB CER% AO " + fmt("%.2f", 100 * ao0->cer) + " concat " +
              fmt("%.2f", 100 * cc0->cer) + " MA " + fmt("%.2f", 100 * ma0->cer) +
              " (MA vs AO " + fmt("%+.1f%%", 100 * rel) + "); clean AO " +
              fmt("%.2f", 100 * aoc->cer) + " MA " + fmt("%.2f", 100 * mac->cer) + "; " +
              fmt("%.0f s", secs) + " on " + std::to_string(g.workers) + " worker(s)";
}

// 5 and 6 share three multi-condition modality-attention models ------------

GridSpec multi_condition_grid() {
  GridSpec g;
  g.strategies = {FusionStrategy::kModalityAttention};
  g.conditions = {std::nullopt};
  g.multi_condition = true;
  g.workers = hardware_workers();
  return g;
}

GridResult multi_condition_models(const fs::path& work) {
  GridOptions opt;
  opt.output_dir = work / "multi_condition";
  return run_experiment_grid(multi_condition_grid(), opt);
}

void weight_ladder(Outcome& o, const fs::path& work) {
  const GridResult r = multi_condition_models(work);
  if (!r.all_ok()) {
    o.summary = "multi-condition training failed";
    return;
  }
  // alpha[seed][ladder level], ladder order clean, 10, 5, 0.
  std::map<std::uint64_t, std::vector<double>> alpha;
  for (const CellResult& c : r.cells) alpha[c.seed].push_back(c.alpha_audio.value());
  std::vector<double> mean(snr_ladder().size(), 0.0);
  std::size_t violations = 0;
  for (const auto& [seed, a] : alpha) {
    o.detail << "  seed " << seed << ":";
    for (std::size_t k = 0; k < a.size(); ++k) {
      o.detail << " " << snr_label(snr_ladder()[k]) << " " << fmt("%.4f", a[k]);
      mean[k] += a[k] / static_cast<double>(alpha.size());
      if (k > 0 && !(a[k] < a[k - 1])) ++violations;
    }
    o.detail << "\n";
  }
  const double drop = mean.front() - mean.back();
  o.pass = alpha.size() == 3 && drop >= 0.02 && violations <= 1;
  o.summary = "mean alpha_audio clean " + fmt("%.4f", mean[0]) + " 10 " + fmt("%.4f", mean[1]) +
              " 5 " + fmt("%.4f", mean[2]) + " 0 " + fmt("%.4f", mean[3]) + ", drop " +
              fmt("%.4f", drop) + ", " + std::to_string(violations) +
              " ordering violation(s) over 3 seeds";
}

// Share of the step's audio attention mass on frames inside the burst. Memory
// row u summarises frames [u*r, (u+1)*r) for reduction factor r.
double mass_in_burst(const std::vector<double>& rows, std::size_t reduction,
                     std::pair<std::size_t, std::size_t> frames) {
  double mass = 0.0;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    std::size_t inside = 0;
    for (std::size_t f = u * reduction; f < (u + 1) * reduction; ++f) {
      if (f >= frames.first && f < frames.second) ++inside;
    }
    mass += rows[u] * static_cast<double>(inside) / static_cast<double>(reduction);
  }
  return mass;
}

void burst_adaptation(Outcome& o, const fs::path& work) {
  const GridSpec g = multi_condition_grid();
  const GridResult r = multi_condition_models(work);
  if (!r.all_ok()) {
    o.summary = "multi-condition training failed";
    return;
  }
  CorpusSpec spec = cell_test_corpus(g, std::nullopt);
  spec.audio_burst = {{1.0 / 3.0, 2.0 / 3.0, -5.0}};
  spec.test_size = 200;
  const auto test_set = generate_split(spec, Split::kTest);

  double share_sum = 0.0;
  std::size_t seeds = 0;
  for (std::uint64_t seed : g.seeds) {
    const fs::path ckpt = work / "multi_condition" / "cells" /
                          ("modality_attention-multi-s" + std::to_string(seed)) / "best.ckpt";
    const Seq2SeqModel model = Seq2SeqModel::from_checkpoint(load_checkpoint(ckpt));
    const std::size_t reduction = std::size_t{1} << model.config().audio.reduction_steps();
    std::size_t lower = 0;
    double in_sum = 0.0, out_sum = 0.0;
    std::size_t in_total = 0, out_total = 0;
    for (const Utterance& u : test_set) {
      const DecodeResult d = decode_utterance(model, u, g.decode);
      const auto frames = burst_frames(spec.audio_burst[0], u.audio_frames);
      double in_a = 0.0, out_a = 0.0;
      std::size_t in_n = 0, out_n = 0;
      for (std::size_t s = 0; s < d.modality_weights.size(); ++s) {
        const double a = d.modality_weights[s][kAudio];
        if (mass_in_burst(d.attention[s][kAudio], reduction, frames) > 0.5) {
          in_a += a;
          ++in_n;
        } else {
          out_a += a;
          ++out_n;
        }
      }
      in_sum += in_a;
      out_sum += out_a;
      in_total += in_n;
      out_total += out_n;
      if (in_n > 0 && out_n > 0 &&
          in_a / static_cast<double>(in_n) < out_a / static_cast<double>(out_n)) {
        ++lower;
      }
    }
    const double share = static_cast<double>(lower) / static_cast<double>(test_set.size());
    o.detail << "  seed " << seed << ": lower inside burst on " << lower << "/"
             << test_set.size() << ", mean alpha_audio inside "
             << fmt("%.4f", in_sum / static_cast<double>(std::max<std::size_t>(in_total, 1)))
             << " outside "
             << fmt("%.4f", out_sum / static_cast<double>(std::max<std::size_t>(out_total, 1)))
             << "\n";
    share_sum += share;
    ++seeds;
  }
  const double mean_share = share_sum / static_cast<double>(seeds);
  o.pass = seeds == 3 && mean_share >= 0.70;
  o.summary = "alpha_audio lower inside the -5 dB burst on " + fmt("%.1f%%", 100 * mean_share) +
              " of 200 utterances (3-seed mean)";
}

// 7 -------------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CorpusSpec small_corpus() {
  CorpusSpec c;
  c.train_size = 120;
  c.dev_size = 30;
  c.test_size = 60;
  c.multi_condition = true;
  return c;
}

void determinism(Outcome& o, const fs::path& work) {
  const CorpusSpec corpus = small_corpus();
  const auto train_set = generate_split(corpus, Split::kTrain);
  const auto dev_set = generate_split(corpus, Split::kDev);
  const auto test_set = generate_split(corpus, Split::kTest);
  const TrainSchedule sched = TrainSchedule::scaled(4);
  const DecodeOptions decode{3, 1.0, 16};

  struct Run {
    std::vector<EpochRecord> history;
    std::string records;
    std::string log;
    std::vector<std::string> checkpoints;
  };
  auto run = [&](const std::string& name, std::uint64_t seed) {
    const fs::path dir = work / "determinism" / name;
    fs::remove_all(dir);
    TrainOptions opt;
    opt.output_dir = dir;
    ModelConfig cfg;
    const TrainResult t = train(cfg, sched, train_set, dev_set, seed, opt);
    Run r;
    r.history = t.history;
    r.records = records_jsonl(evaluate(t.model(), test_set, decode).records);
    r.log = file_bytes(dir / "train_log.jsonl");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) r.checkpoints.push_back(f.filename().string() + file_bytes(f));
    return r;
  };
  const Run a = run("a", 7), b = run("b", 7), c = run("c", 8);
  const bool same = a.history == b.history && a.records == b.records && a.log == b.log &&
                    a.checkpoints == b.checkpoints && !a.checkpoints.empty();
  const bool seed_matters = a.history != c.history;
  o.pass = same && seed_matters;
  o.summary = std::string(same ? "two seed-7 runs identical" : "two seed-7 runs differ") +
              " in loss curve, " + std::to_string(a.checkpoints.size()) +
              " checkpoints, log and test records; seed 8 " +
              (seed_matters ? "differs" : "does not differ");
}

// 8 -------------------------------------------------------------------------

void reset_hygiene(Outcome& o) {
  CorpusSpec corpus = small_corpus();
  corpus.train_size = 60;
  const auto train_set = generate_split(corpus, Split::kTrain);
  const auto dev_set = generate_split(corpus, Split::kDev);
  const auto test_set = generate_split(corpus, Split::kTest);
  const DecodeOptions decode{3, 1.0, 16};
  std::size_t checked = 0, identical = 0;
  for (FusionStrategy s : {FusionStrategy::kAudioOnly, FusionStrategy::kConcat,
                           FusionStrategy::kModalityAttention}) {
    ModelConfig cfg;
    cfg.strategy = s;
    const TrainResult t = train(cfg, TrainSchedule::scaled(2), train_set, dev_set, 5);
    const Seq2SeqModel model = t.model();
    for (std::size_t probe = 0; probe < 2; ++probe) {
      const Utterance& u = test_set[probe];
      const DecodeResult before = decode_utterance(model, u, decode);
      for (std::size_t i = 0; i < 100; ++i) {
        decode_utterance(model, train_set[(probe * 7 + i) % train_set.size()], decode);
      }
      const DecodeResult after = decode_utterance(model, u, decode);
      ++checked;
      if (before == after) ++identical;
    }
  }
  o.pass = checked > 0 && identical == checked;
  o.summary = std::to_string(identical) + "/" + std::to_string(checked) +
              " probes identical after 100 intervening decodes";
}

}  // namespace
}  // namespace modatt

int main(int argc, char** argv) {
  using namespace modatt;
  CLI::App app{"modatt acceptance suite"};
  fs::path work = fs::temp_directory_path() / "modatt_acceptance";
  std::vector<int> selected;
  app.add_option("--work", work, "scratch directory for trained models");
  app.add_option("criteria", selected, "criteria to run (default: all)")
      ->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};
  fs::create_directories(work);

  const char* names[] = {"",
                         "gradient integrity",
                         "fusion invariants",
                         "oracle equivalence",
                         "CER trend across strategies",
                         "modality weights across the SNR ladder",
                         "burst-noise adaptation",
                         "determinism",
                         "reset hygiene"};
  bool all = true;
  for (int id : selected) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      switch (id) {
        case 1: gradient_integrity(o); break;
        case 2: fusion_invariants(o); break;
        case 3: oracle_equivalence(o); break;
        case 4: snr_trend(o); break;
        case 5: weight_ladder(o, work); break;
        case 6: burst_adaptation(o, work); break;
        case 7: determinism(o, work); break;
        case 8: reset_hygiene(o); break;
      }
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("error: ") + e.what();
    }
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, names[id],
                o.summary.c_str(), seconds_since(t0));
    std::fputs(o.detail.str().c_str(), stdout);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
