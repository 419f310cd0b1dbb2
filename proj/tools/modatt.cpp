// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.
//
// Command-line front end: gen-corpus, train, evaluate, grid, gradcheck.
// Exit codes: 0 success, 1 a cell or evaluation failed, 2 bad configuration.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "modatt/corpus.hpp"
#include "modatt/errors.hpp"
#include "modatt/evaluation.hpp"
#include "modatt/experiment.hpp"
#include "modatt/gradcheck.hpp"
#include "modatt/kv_config.hpp"
#include "modatt/model.hpp"
#include "modatt/parameters.hpp"
#include "modatt/training.hpp"

namespace fs = std::filesystem;
using namespace modatt;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kBadConfig = 2;

// Config file (optional) with `--set key=value` overrides applied on top.
KeyValues load_config(const std::string& path, const std::vector<std::string>& overrides) {
  KeyValues kv = path.empty() ? KeyValues{} : KeyValues::load(path);
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + item + "'");
    kv.set(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  return kv;
}

// One config file drives every subcommand; each reads the sections it needs
// but all three are parsed so typos anywhere are reported.
struct RunConfig {
  CorpusSpec corpus;
  ModelConfig model;
  TrainSchedule schedule;
};

RunConfig parse_run(const KeyValues& kv) {
  RunConfig rc;
  rc.corpus = CorpusSpec::from_config(kv.section("corpus"));
  const ModelConfig base = ModelConfig::from_config(kv.section("model"));
  rc.model = cell_model_config(base, base.strategy, rc.corpus);
  rc.schedule = TrainSchedule::from_config(kv.section("train"));
  kv.reject_unused();
  return rc;
}

std::string prefixed(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string out, line;
  while (std::getline(in, line)) {
    if (!line.empty()) out += prefix + line + "\n";
  }
  return out;
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return s.str();
}

void print_report(const EvalReport& r) {
  const auto& t = r.cer.totals;
  std::cout << "utterances " << r.cer.utterances << "  symbols " << r.cer.reference_symbols
            << "  CER " << pct(r.cer.cer()) << "  (sub " << t.substitutions << ", ins "
            << t.insertions << ", del " << t.deletions << ")\n";
  if (r.attention) {
    std::cout << std::fixed << std::setprecision(4) << "mean alpha audio "
              << r.attention->overall.audio() << "  video " << r.attention->overall.video()
              << "\n";
    for (const auto& [snr, m] : r.attention->by_audio_snr) {
      std::cout << "  audio " << snr << ": alpha audio " << m.audio() << "  video " << m.video()
                << "\n";
    }
  }
}

struct Common {
  std::string config;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "key = value configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.set, "override one key (key=value); repeatable");
}

int gen_corpus(const Common& common, const std::string& cache_dir) {
  const CorpusSpec spec = parse_run(load_config(common.config, common.set)).corpus;
  for (Split split : {Split::kTrain, Split::kDev, Split::kTest}) {
    const auto utts = load_or_generate_split(cache_dir, spec, split);
    std::size_t frames = 0;
    for (const auto& u : utts) frames += u.audio_frames;
    std::cout << split_name(split) << ": " << utts.size() << " utterances, " << frames
              << " audio frames -> " << split_cache_path(cache_dir, split).string() << "\n";
  }
  std::cout << "spec digest " << std::hex << spec.digest() << std::dec << "\n";
  return kOk;
}

int train_cmd(const Common& common, std::uint64_t seed, const std::string& output,
              const std::string& cache_dir, std::size_t workers) {
  const RunConfig rc = parse_run(load_config(common.config, common.set));
  const CorpusSpec& spec = rc.corpus;
  const ModelConfig& cfg = rc.model;
  const TrainSchedule& sched = rc.schedule;

  auto split = [&](Split s) {
    return cache_dir.empty() ? generate_split(spec, s) : load_or_generate_split(cache_dir, spec, s);
  };
  const auto train_set = split(Split::kTrain);
  const auto dev_set = split(Split::kDev);

  // Written in the same sectioned form `-c` reads, so evaluate can reuse it.
  fs::create_directories(output);
  std::ofstream(fs::path(output) / "config.txt")
      << "# seed " << seed << "\n"
      << prefixed(spec.to_text(), "corpus.") << prefixed(cfg.to_text(), "model.")
      << prefixed(sched.to_text(), "train.");

  TrainOptions opt;
  opt.output_dir = output;
  opt.eval_workers = workers;
  opt.on_epoch = [](const EpochRecord& r) { std::cout << epoch_json(r) << std::endl; };
  const TrainResult result = train(cfg, sched, train_set, dev_set, seed, opt);
  std::cout << "best epoch " << result.best_epoch << "  dev CER "
            << pct(result.history[result.best_epoch - 1].dev_cer) << "  -> "
            << (fs::path(output) / "best.ckpt").string() << "\n";
  return kOk;
}

int evaluate_cmd(const Common& common, const std::string& checkpoint, const std::string& split,
                 DecodeOptions decode, bool max_len_given, const std::string& records,
                 std::size_t workers) {
  // Without -c, fall back to the config train wrote beside the checkpoint.
  std::string config = common.config;
  const fs::path beside = fs::path(checkpoint).parent_path() / "config.txt";
  if (config.empty() && fs::exists(beside)) config = beside.string();
  const CorpusSpec spec = parse_run(load_config(config, common.set)).corpus;
  if (!max_len_given) decode.max_len = 2 * spec.max_length;
  Checkpoint ck;
  try {
    ck = load_checkpoint(checkpoint);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  const Seq2SeqModel model = Seq2SeqModel::from_checkpoint(ck);
  check_compatible(model.config(), spec);
  const auto utts = generate_split(spec, parse_split(split));
  const EvalReport report = evaluate(model, utts, decode, workers);
  print_report(report);
  if (!records.empty()) write_records(records, report.records);
  return kOk;
}

int grid_cmd(const std::string& grid_file, const std::vector<std::string>& set,
             std::optional<std::size_t> workers, const std::string& output,
             const std::string& cache_dir) {
  const KeyValues kv = load_config(grid_file, set);
  GridSpec grid = GridSpec::from_config(kv);
  kv.reject_unused();
  if (workers) grid.workers = *workers;
  GridOptions opt;
  opt.output_dir = output;
  opt.corpus_cache = cache_dir;
  opt.on_cell = [](const CellResult& c) {
    std::cout << strategy_name(c.strategy) << " train=" << c.train_condition
              << " test=" << c.test_condition << " seed=" << c.seed;
    if (c.ok) {
      std::cout << " CER " << pct(c.cer) << (c.cached ? " (cached)" : "");
      if (c.alpha_audio) std::cout << " alpha_audio " << *c.alpha_audio;
    } else {
      std::cout << " FAILED: " << c.error;
    }
    std::cout << std::endl;
  };
  const GridResult result = run_experiment_grid(grid, opt);
  std::cout << "\n" << grid_table(result);
  return result.all_ok() ? kOk : kFailed;
}

int gradcheck_cmd(std::uint64_t seed) {
  bool ok = true;
  for (const GradCheckResult& r : run_gradcheck_suite(seed)) {
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(28) << r.name
              << std::right << " coords " << std::setw(5) << r.coordinates << "  within "
              << std::setw(5) << r.within_tolerance << "  tol " << std::scientific
              << std::setprecision(0) << r.tolerance << "  worst " << std::setprecision(2)
              << r.max_error << "x" << std::defaultfloat << "\n";
  }
  return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-attention sequence-to-sequence recognizer on a synthetic corpus"};
  app.require_subcommand(1);

  Common gen_common;
  std::string gen_cache;
  auto* gen = app.add_subcommand("gen-corpus", "generate and cache the corpus splits");
  add_common(gen, gen_common);
  gen->add_option("--cache-dir", gen_cache, "directory for the split files")->required();

  Common train_common;
  std::uint64_t train_seed = 0;
  std::string train_out, train_cache;
  std::size_t train_workers = 1;
  auto* tr = app.add_subcommand("train", "train one model");
  add_common(tr, train_common);
  tr->add_option("--seed", train_seed, "initialisation and sampling seed")->required();
  tr->add_option("-o,--output", train_out, "output directory")->required();
  tr->add_option("--cache-dir", train_cache, "reuse cached corpus splits");
  tr->add_option("--workers", train_workers, "threads for the per-epoch dev decode")
      ->check(CLI::PositiveNumber);

  Common eval_common;
  std::string eval_ckpt, eval_split = "test", eval_records;
  DecodeOptions decode;
  std::size_t eval_workers = 1;
  auto* ev = app.add_subcommand("evaluate", "decode a split with a checkpoint");
  add_common(ev, eval_common);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(
      CLI::ExistingFile);
  ev->add_option("--split", eval_split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  ev->add_option("--beam", decode.beam_width, "beam width (1 = greedy)")
      ->check(CLI::PositiveNumber);
  ev->add_option("--temperature", decode.temperature, "logit temperature")
      ->check(CLI::PositiveNumber);
  auto* max_len_opt =
      ev->add_option("--max-len", decode.max_len, "hypothesis length cap (default 2 x max_length)")
          ->check(CLI::PositiveNumber);
  ev->add_option("--records", eval_records, "write per-utterance JSON lines here");
  ev->add_option("--workers", eval_workers, "decoding threads")->check(CLI::PositiveNumber);

  std::string grid_file, grid_out, grid_cache;
  std::vector<std::string> grid_set;
  std::optional<std::size_t> grid_workers;
  auto* gr = app.add_subcommand("grid", "run a strategies x conditions x seeds grid");
  gr->add_option("grid_file", grid_file, "grid file")->required()->check(CLI::ExistingFile);
  gr->add_option("--set", grid_set, "override one key (key=value); repeatable");
  gr->add_option("--workers", grid_workers, "cells trained in parallel")
      ->check(CLI::PositiveNumber);
  gr->add_option("-o,--output", grid_out, "results and cell cache directory");
  gr->add_option("--cache-dir", grid_cache, "reuse cached corpus splits");

  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "seed for the random test points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadConfig;
  }

  try {
    if (*gen) return gen_corpus(gen_common, gen_cache);
    if (*tr) return train_cmd(train_common, train_seed, train_out, train_cache, train_workers);
    if (*ev) {
      return evaluate_cmd(eval_common, eval_ckpt, eval_split, decode, max_len_opt->count() > 0,
                          eval_records, eval_workers);
    }
    if (*gr) return grid_cmd(grid_file, grid_set, grid_workers, grid_out, grid_cache);
    if (*gc) return gradcheck_cmd(gc_seed);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kBadConfig;
}
