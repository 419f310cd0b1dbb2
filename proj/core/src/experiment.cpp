// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <mutex>
#include <sstream>

#include "binary_io.hpp"
#include "modatt/errors.hpp"
#include "modatt/parameters.hpp"

namespace modatt {
namespace {

constexpr const char* kMulti = "multi";

std::string cell_name(FusionStrategy s, const std::string& condition, std::uint64_t seed) {
  return std::string(strategy_name(s)) + "-" + condition + "-s" + std::to_string(seed);
}

std::vector<Snr> test_conditions(const GridSpec& grid, const Snr& condition) {
  if (grid.multi_condition) return snr_ladder();
  return {condition};
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json cell_json(const CellResult& c) {
  return {{"strategy", strategy_name(c.strategy)},
          {"train_condition", c.train_condition},
          {"test_condition", c.test_condition},
          {"seed", c.seed},
          {"ok", c.ok},
          {"error", c.error},
          {"cached", c.cached},
          {"best_epoch", c.best_epoch},
          {"dev_cer", c.dev_cer},
          {"cer", c.cer},
          {"alpha_audio", optional_json(c.alpha_audio)},
          {"alpha_video", optional_json(c.alpha_video)},
          {"digest", c.digest}};
}

CellResult cell_from(const nlohmann::json& j) {
  CellResult c;
  c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  c.train_condition = j.at("train_condition").get<std::string>();
  c.test_condition = j.at("test_condition").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ok = j.at("ok").get<bool>();
  c.error = j.at("error").get<std::string>();
  c.best_epoch = j.at("best_epoch").get<std::size_t>();
  c.dev_cer = j.at("dev_cer").get<double>();
  c.cer = j.at("cer").get<double>();
  c.alpha_audio = optional_from(j.at("alpha_audio"));
  c.alpha_video = optional_from(j.at("alpha_video"));
  c.digest = j.at("digest").get<std::uint64_t>();
  return c;
}

std::vector<Utterance> split_for(const GridOptions& options, const CorpusSpec& spec,
                                 Split split) {
  if (options.corpus_cache.empty()) return generate_split(spec, split);
  return load_or_generate_split(options.corpus_cache, spec, split);
}

struct CellJob {
  FusionStrategy strategy;
  Snr condition;
  std::uint64_t seed;
};

std::uint64_t job_digest(const GridSpec& grid, const CellJob& job) {
  std::ostringstream text;
  text << cell_training_corpus(grid, job.condition).to_text()
       << cell_model_config(grid.model, job.strategy, grid.corpus).to_text()
       << grid.schedule.to_text() << "seed = " << job.seed << "\n"
       << "beam = " << grid.decode.beam_width << "\n"
       << "temperature = " << std::setprecision(17) << grid.decode.temperature << "\n"
       << "max_len = " << grid.decode.max_len << "\n";
  for (const Snr& t : test_conditions(grid, job.condition)) {
    text << cell_test_corpus(grid, t).to_text();
  }
  return fnv1a64(text.str());
}

std::vector<CellResult> run_cell(const GridSpec& grid, const CellJob& job,
                                 const GridOptions& options) {
  const std::string train_label = grid.multi_condition ? kMulti : snr_label(job.condition);
  const std::uint64_t digest = job_digest(grid, job);
  const std::vector<Snr> tests = test_conditions(grid, job.condition);

  std::filesystem::path dir;
  if (!options.output_dir.empty()) {
    dir = options.output_dir / "cells" / cell_name(job.strategy, train_label, job.seed);
    const auto cached = dir / "cell.json";
    if (std::filesystem::exists(cached)) {
      try {
        std::ifstream in(cached);
        const nlohmann::json j = nlohmann::json::parse(in);
        if (j.at("digest").get<std::uint64_t>() == digest) {
          std::vector<CellResult> out;
          for (const auto& c : j.at("cells")) {
            out.push_back(cell_from(c));
            out.back().cached = true;
          }
          if (!out.empty() && std::all_of(out.begin(), out.end(),
                                          [](const CellResult& c) { return c.ok; })) {
            return out;
          }
        }
      } catch (const std::exception&) {
        // Unreadable cache: retrain.
      }
    }
    std::filesystem::remove_all(dir);
  }

  auto base = [&](const Snr& test) {
    CellResult c;
    c.strategy = job.strategy;
    c.train_condition = train_label;
    c.test_condition = snr_label(test);
    c.seed = job.seed;
    c.digest = digest;
    return c;
  };

  std::vector<CellResult> out;
  try {
    const CorpusSpec train_corpus = cell_training_corpus(grid, job.condition);
    const ModelConfig cfg = cell_model_config(grid.model, job.strategy, grid.corpus);
    const auto train_set = split_for(options, train_corpus, Split::kTrain);
    const auto dev_set = split_for(options, train_corpus, Split::kDev);
    TrainOptions topt;
    topt.output_dir = dir;
    const TrainResult trained = train(cfg, grid.schedule, train_set, dev_set, job.seed, topt);
    const Seq2SeqModel model = trained.model();
    for (const Snr& t : tests) {
      CellResult c = base(t);
      const auto test_set = split_for(options, cell_test_corpus(grid, t), Split::kTest);
      const EvalReport report = evaluate(model, test_set, grid.decode);
      c.ok = true;
      c.best_epoch = trained.best_epoch;
      c.dev_cer = trained.history[trained.best_epoch - 1].dev_cer;
      c.cer = report.cer.cer();
      if (report.attention) {
        c.alpha_audio = report.attention->overall.audio();
        c.alpha_video = report.attention->overall.video();
      }
      if (!dir.empty()) {
        write_records(dir / ("records_" + c.test_condition + ".jsonl"), report.records);
      }
      out.push_back(std::move(c));
    }
  } catch (const std::exception& e) {
    out.clear();
    for (const Snr& t : tests) {
      CellResult c = base(t);
      c.error = e.what();
      out.push_back(std::move(c));
    }
  }

  if (!dir.empty()) {
    nlohmann::json j;
    j["digest"] = digest;
    j["cells"] = nlohmann::json::array();
    for (const CellResult& c : out) j["cells"].push_back(cell_json(c));
    std::filesystem::create_directories(dir);
    io::write_file(dir / "cell.json", j.dump(2) + "\n");
  }
  return out;
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

}  // namespace

GridSpec GridSpec::from_config(const KeyValues& kv) {
  GridSpec g;
  if (auto v = kv.get("strategies")) {
    g.strategies.clear();
    for (const auto& s : split_list(*v)) g.strategies.push_back(parse_strategy(s));
  }
  if (auto v = kv.get("conditions")) {
    g.conditions.clear();
    for (const auto& s : split_list(*v)) g.conditions.push_back(parse_snr(s));
  }
  if (auto v = kv.get("seeds")) {
    g.seeds.clear();
    for (const auto& s : split_list(*v)) {
      KeyValues one;
      one.set("seed", s);
      g.seeds.push_back(one.get_u64("seed", 0));
    }
  }
  g.multi_condition = kv.get_bool("multi_condition", g.multi_condition);
  g.workers = kv.get_size("workers", g.workers);
  g.corpus = CorpusSpec::from_config(kv.section("corpus"));
  g.model = ModelConfig::from_config(kv.section("model"));
  g.schedule = TrainSchedule::from_config(kv.section("train"));
  const KeyValues decode = kv.section("decode");
  g.decode.beam_width = decode.get_size("beam", g.decode.beam_width);
  g.decode.temperature = decode.get_double("temperature", g.decode.temperature);
  g.decode.max_len = decode.get_size("max_len", 2 * g.corpus.max_length);
  g.validate();
  return g;
}

void GridSpec::validate() const {
  if (strategies.empty()) throw ConfigError("grid: no strategies");
  if (seeds.empty()) throw ConfigError("grid: no seeds");
  if (!multi_condition && conditions.empty()) throw ConfigError("grid: no conditions");
  if (workers == 0) throw ConfigError("grid: workers must be at least 1");
  if (decode.beam_width == 0) throw ConfigError("grid: decode.beam must be at least 1");
  if (!(decode.temperature > 0.0)) throw ConfigError("grid: decode.temperature must be positive");
  if (decode.max_len == 0) throw ConfigError("grid: decode.max_len must be at least 1");
  corpus.validate();
  schedule.validate();
  for (FusionStrategy s : strategies) cell_model_config(model, s, corpus).validate();
}

ModelConfig cell_model_config(const ModelConfig& base, FusionStrategy strategy,
                              const CorpusSpec& corpus) {
  ModelConfig cfg = base;
  cfg.strategy = strategy;
  cfg.vocab_size = corpus.vocab_size();
  cfg.audio.input_dim = corpus.audio_dim;
  cfg.video.input_dim = corpus.video_dim;
  return cfg;
}

CorpusSpec cell_training_corpus(const GridSpec& grid, const Snr& condition) {
  CorpusSpec c = grid.corpus;
  if (grid.multi_condition) {
    c.multi_condition = true;
  } else {
    c.audio_snr = condition;
  }
  return c;
}

CorpusSpec cell_test_corpus(const GridSpec& grid, const Snr& condition) {
  CorpusSpec c = grid.corpus;
  c.multi_condition = false;
  c.audio_snr = condition;
  return c;
}

bool GridResult::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
}

std::vector<GridResult::Summary> GridResult::summary() const {
  std::vector<Summary> rows;
  std::map<std::pair<FusionStrategy, std::string>, std::size_t> index;
  std::vector<double> alpha_sum;
  std::vector<std::size_t> alpha_n;
  for (const CellResult& c : cells) {
    if (!c.ok) continue;
    const auto key = std::make_pair(c.strategy, c.test_condition);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, rows.size()).first;
      Summary fresh;
      fresh.strategy = c.strategy;
      fresh.test_condition = c.test_condition;
      rows.push_back(fresh);
      alpha_sum.push_back(0.0);
      alpha_n.push_back(0);
    }
    Summary& s = rows[it->second];
    s.cer += c.cer;
    ++s.seeds;
    if (c.alpha_audio) {
      alpha_sum[it->second] += *c.alpha_audio;
      ++alpha_n[it->second];
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].cer /= static_cast<double>(rows[i].seeds);
    if (alpha_n[i] > 0) rows[i].alpha_audio = alpha_sum[i] / static_cast<double>(alpha_n[i]);
  }
  auto relative = [&](const Summary& s, FusionStrategy ref) -> std::optional<double> {
    if (s.strategy == ref) return std::nullopt;
    auto it = index.find({ref, s.test_condition});
    if (it == index.end()) return std::nullopt;
    const double r = rows[it->second].cer;
    if (r == 0.0) return std::nullopt;
    return (r - s.cer) / r;
  };
  for (Summary& s : rows) {
    s.rel_vs_audio_only = relative(s, FusionStrategy::kAudioOnly);
    s.rel_vs_concat = relative(s, FusionStrategy::kConcat);
  }
  return rows;
}

GridResult run_experiment_grid(const GridSpec& grid, const GridOptions& options) {
  grid.validate();
  std::vector<CellJob> jobs;
  const std::vector<Snr> conditions =
      grid.multi_condition ? std::vector<Snr>{std::nullopt} : grid.conditions;
  for (const Snr& cond : conditions) {
    for (FusionStrategy s : grid.strategies) {
      for (std::uint64_t seed : grid.seeds) jobs.push_back({s, cond, seed});
    }
  }
  std::vector<std::vector<CellResult>> per_job(jobs.size());
  std::mutex report;
  parallel_for(jobs.size(), grid.workers, [&](std::size_t i) {
    per_job[i] = run_cell(grid, jobs[i], options);
    if (options.on_cell) {
      std::lock_guard lock(report);
      for (const CellResult& c : per_job[i]) options.on_cell(c);
    }
  });
  GridResult result;
  for (auto& cells : per_job) {
    for (auto& c : cells) result.cells.push_back(std::move(c));
  }
  if (!options.output_dir.empty()) write_grid_outputs(options.output_dir, result);
  return result;
}

std::string grid_json(const GridResult& result) {
  nlohmann::json j;
  j["cells"] = nlohmann::json::array();
  for (const CellResult& c : result.cells) j["cells"].push_back(cell_json(c));
  j["summary"] = nlohmann::json::array();
  for (const auto& s : result.summary()) {
    j["summary"].push_back({{"strategy", strategy_name(s.strategy)},
                            {"test_condition", s.test_condition},
                            {"seeds", s.seeds},
                            {"cer", s.cer},
                            {"alpha_audio", optional_json(s.alpha_audio)},
                            {"rel_vs_audio_only", optional_json(s.rel_vs_audio_only)},
                            {"rel_vs_concat", optional_json(s.rel_vs_concat)}});
  }
  return j.dump(2) + "\n";
}

std::string grid_csv(const GridResult& result) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "strategy,train_condition,test_condition,seed,ok,cer,dev_cer,best_epoch,alpha_audio,"
         "alpha_video,error\n";
  for (const CellResult& c : result.cells) {
    std::string error = c.error;
    std::replace(error.begin(), error.end(), '"', '\'');
    out << strategy_name(c.strategy) << ',' << c.train_condition << ',' << c.test_condition << ','
        << c.seed << ',' << (c.ok ? 1 : 0) << ',' << c.cer << ',' << c.dev_cer << ','
        << c.best_epoch << ',';
    if (c.alpha_audio) out << *c.alpha_audio;
    out << ',';
    if (c.alpha_video) out << *c.alpha_video;
    out << ",\"" << error << "\"\n";
  }
  return out.str();
}

std::string grid_table(const GridResult& result) {
  const auto rows = result.summary();
  std::vector<std::string> conditions;
  std::vector<FusionStrategy> strategies;
  for (const CellResult& c : result.cells) {
    if (std::find(conditions.begin(), conditions.end(), c.test_condition) == conditions.end()) {
      conditions.push_back(c.test_condition);
    }
    if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end()) {
      strategies.push_back(c.strategy);
    }
  }
  auto find = [&](FusionStrategy s, const std::string& t) -> const GridResult::Summary* {
    for (const auto& r : rows) {
      if (r.strategy == s && r.test_condition == t) return &r;
    }
    return nullptr;
  };
  auto rel = [](const std::optional<double>& v) {
    return v ? (*v >= 0 ? "+" : "") + percent(*v) + "%" : std::string("-");
  };

  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"strategy"};
  for (const auto& t : conditions) {
    header.push_back("CER% " + t);
    header.push_back("vs AO");
    header.push_back("vs concat");
  }
  for (const auto& t : conditions) header.push_back("a_audio " + t);
  table.push_back(header);
  for (FusionStrategy s : strategies) {
    std::vector<std::string> line{std::string(strategy_name(s))};
    for (const auto& t : conditions) {
      const auto* r = find(s, t);
      line.push_back(r ? percent(r->cer) : "failed");
      line.push_back(r ? rel(r->rel_vs_audio_only) : "-");
      line.push_back(r ? rel(r->rel_vs_concat) : "-");
    }
    for (const auto& t : conditions) {
      const auto* r = find(s, t);
      std::ostringstream a;
      if (r && r->alpha_audio) {
        a << std::fixed << std::setprecision(3) << *r->alpha_audio;
      } else {
        a << "-";
      }
      line.push_back(a.str());
    }
    table.push_back(line);
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t i = 0; i < table[r].size(); ++i) {
      if (i > 0) out << "  ";
      if (i == 0) {
        out << std::left << std::setw(static_cast<int>(width[i])) << table[r][i];
      } else {
        out << std::right << std::setw(static_cast<int>(width[i])) << table[r][i];
      }
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  std::size_t failed = 0;
  for (const CellResult& c : result.cells) failed += c.ok ? 0 : 1;
  if (failed > 0) out << failed << " cell(s) failed\n";
  return out.str();
}

void write_grid_outputs(const std::filesystem::path& dir, const GridResult& result) {
  std::filesystem::create_directories(dir);
  io::write_file(dir / "results.json", grid_json(result));
  io::write_file(dir / "results.csv", grid_csv(result));
  io::write_file(dir / "results.txt", grid_table(result));
}

}  // namespace modatt
