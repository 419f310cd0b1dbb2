// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "modatt/errors.hpp"
#include "modatt/parameters.hpp"

namespace modatt {

namespace {

constexpr std::string_view kCacheMagic = "MODATTCP";
constexpr std::uint32_t kCacheVersion = 1;

// Stream tags keep the prototype, content and noise draws independent so
// that changing an SNR never changes the clean features.
constexpr std::uint64_t kPrototypeStream = 0x70726f746f;
constexpr std::uint64_t kContentStream = 0x636f6e74;
constexpr std::uint64_t kAudioNoiseStream = 0x616e6f6973;
constexpr std::uint64_t kVideoNoiseStream = 0x766e6f6973;

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream, std::uint64_t split = 0,
                       std::uint64_t index = 0) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(split), lo(index), hi(index)};
  return std::mt19937_64(seq);
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void check_schedule(std::span<const BurstWindow> schedule) {
  std::vector<BurstWindow> sorted(schedule.begin(), schedule.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const BurstWindow& a, const BurstWindow& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const BurstWindow& w = sorted[i];
    if (!(w.start >= 0.0 && w.end <= 1.0 && w.start < w.end) || !std::isfinite(w.snr_db)) {
      throw ContractError("burst window must satisfy 0 <= start < end <= 1 with finite SNR");
    }
    if (i > 0 && w.start < sorted[i - 1].end) throw ContractError("burst windows overlap");
  }
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::string snr_label(const Snr& snr) {
  if (!snr) return "clean";
  return format_double(*snr);
}

Snr parse_snr(std::string_view text) {
  const std::string t = trim(text);
  if (t == "clean") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used == t.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid SNR '" + t + "' (expected 'clean' or a number of dB)");
}

std::string burst_text(const std::vector<BurstWindow>& windows) {
  std::string out;
  for (const BurstWindow& w : windows) {
    if (!out.empty()) out += ",";
    out += format_double(w.start) + ":" + format_double(w.end) + ":" + format_double(w.snr_db);
  }
  return out;
}

std::vector<BurstWindow> parse_burst(std::string_view text) {
  std::vector<BurstWindow> out;
  for (const std::string& item : split_list(text)) {
    const auto parts = split_list(item, ':');
    if (parts.size() != 3) throw ConfigError("burst window '" + item + "' is not start:end:snr");
    try {
      out.push_back({std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])});
    } catch (const std::exception&) {
      throw ConfigError("burst window '" + item + "' is not numeric");
    }
  }
  return out;
}

std::size_t CorpusSpec::split_size(Split split) const {
  switch (split) {
    case Split::kTrain: return train_size;
    case Split::kDev: return dev_size;
    case Split::kTest: return test_size;
  }
  return 0;
}

void CorpusSpec::validate() const {
  if (symbols == 0) throw ConfigError("corpus: symbols must be positive");
  if (min_length == 0 || min_length > max_length) {
    throw ConfigError("corpus: need 1 <= min_length <= max_length");
  }
  if (video_frames_per_symbol == 0 || audio_frames_per_symbol != 4 * video_frames_per_symbol) {
    throw ConfigError("corpus: audio frames per symbol must be 4x the video frames per symbol");
  }
  if (audio_dim == 0 || video_dim == 0) throw ConfigError("corpus: feature dims must be positive");
  if (!(jitter >= 0.0)) throw ConfigError("corpus: jitter must be non-negative");
  if (!(offset_scale >= 0.0)) throw ConfigError("corpus: offset_scale must be non-negative");
  for (const Snr& s : {audio_snr, video_snr}) {
    if (s && !std::isfinite(*s)) throw ContractError("corpus: SNR must be finite");
  }
  try {
    check_schedule(audio_burst);
    check_schedule(video_burst);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("corpus: ") + e.what());
  }
}

CorpusSpec CorpusSpec::from_config(const KeyValues& kv) {
  CorpusSpec s;
  s.symbols = kv.get_size("symbols", s.symbols);
  s.min_length = kv.get_size("min_length", s.min_length);
  s.max_length = kv.get_size("max_length", s.max_length);
  s.audio_frames_per_symbol = kv.get_size("audio_frames_per_symbol", s.audio_frames_per_symbol);
  s.video_frames_per_symbol = kv.get_size("video_frames_per_symbol", s.video_frames_per_symbol);
  s.audio_dim = kv.get_size("audio_dim", s.audio_dim);
  s.video_dim = kv.get_size("video_dim", s.video_dim);
  s.seed = kv.get_u64("seed", s.seed);
  s.jitter = kv.get_double("jitter", s.jitter);
  s.offset_scale = kv.get_double("offset_scale", s.offset_scale);
  s.video_classes = kv.get_size("video_classes", s.video_classes);
  if (auto v = kv.get("audio_snr")) s.audio_snr = parse_snr(*v);
  if (auto v = kv.get("video_snr")) s.video_snr = parse_snr(*v);
  s.multi_condition = kv.get_bool("multi_condition", s.multi_condition);
  if (auto v = kv.get("audio_burst")) s.audio_burst = parse_burst(*v);
  if (auto v = kv.get("video_burst")) s.video_burst = parse_burst(*v);
  s.train_size = kv.get_size("train_size", s.train_size);
  s.dev_size = kv.get_size("dev_size", s.dev_size);
  s.test_size = kv.get_size("test_size", s.test_size);
  s.validate();
  return s;
}

std::string CorpusSpec::to_text() const {
  std::ostringstream out;
  out << "symbols = " << symbols << "\n"
      << "min_length = " << min_length << "\n"
      << "max_length = " << max_length << "\n"
      << "audio_frames_per_symbol = " << audio_frames_per_symbol << "\n"
      << "video_frames_per_symbol = " << video_frames_per_symbol << "\n"
      << "audio_dim = " << audio_dim << "\n"
      << "video_dim = " << video_dim << "\n"
      << "seed = " << seed << "\n"
      << "jitter = " << format_double(jitter) << "\n"
      << "offset_scale = " << format_double(offset_scale) << "\n"
      << "video_classes = " << video_classes << "\n"
      << "audio_snr = " << snr_label(audio_snr) << "\n"
      << "video_snr = " << snr_label(video_snr) << "\n"
      << "multi_condition = " << (multi_condition ? "true" : "false") << "\n"
      << "audio_burst = " << burst_text(audio_burst) << "\n"
      << "video_burst = " << burst_text(video_burst) << "\n"
      << "train_size = " << train_size << "\n"
      << "dev_size = " << dev_size << "\n"
      << "test_size = " << test_size << "\n";
  return out.str();
}

std::uint64_t CorpusSpec::digest() const { return fnv1a64(to_text()); }

Prototypes make_prototypes(const CorpusSpec& spec) {
  auto rng = seeded(spec.seed, kPrototypeStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t rows, std::size_t dim) {
    std::vector<double> v(rows * dim);
    for (double& x : v) x = normal(rng);
    return Tensor({rows, dim}, std::move(v));
  };
  Prototypes p;
  p.audio = draw(spec.symbols, spec.audio_dim);
  p.video = draw(spec.visual_classes(), spec.video_dim);
  // Drawn after the prototypes so changing offset_scale leaves them alone.
  p.audio_offset = draw(1, spec.audio_dim);
  p.video_offset = draw(1, spec.video_dim);
  for (Tensor* t : {&p.audio_offset, &p.video_offset}) {
    for (double& x : t->mutable_values()) x *= spec.offset_scale;
  }
  return p;
}

double signal_power(const Tensor& stream) {
  double total = 0.0;
  for (double v : stream.values()) total += v * v;
  return total / static_cast<double>(stream.size());
}

Tensor apply_noise(const Tensor& stream, const Snr& snr_db, std::mt19937_64& rng,
                   std::optional<double> reference_power) {
  if (!snr_db) return stream;
  if (!std::isfinite(*snr_db)) throw ContractError("apply_noise: SNR must be finite");
  const double power = reference_power.value_or(signal_power(stream));
  const double sigma = std::sqrt(power / std::pow(10.0, *snr_db / 10.0));
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> out(stream.values().begin(), stream.values().end());
  for (double& v : out) v += normal(rng);
  return Tensor(stream.shape(), std::move(out));
}

std::pair<std::size_t, std::size_t> burst_frames(const BurstWindow& w, std::size_t frames) {
  const double n = static_cast<double>(frames);
  return {static_cast<std::size_t>(std::lround(w.start * n)),
          static_cast<std::size_t>(std::lround(w.end * n))};
}

Tensor apply_burst(const Tensor& stream, std::span<const BurstWindow> schedule,
                   std::mt19937_64& rng, std::optional<double> reference_power) {
  check_schedule(schedule);
  if (schedule.empty()) return stream;
  if (stream.rank() != 2) throw DimensionError("apply_burst: expected a [T x D] stream");
  std::vector<BurstWindow> ordered(schedule.begin(), schedule.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const BurstWindow& a, const BurstWindow& b) { return a.start < b.start; });
  const double power = reference_power.value_or(signal_power(stream));
  const std::size_t frames = stream.shape()[0], dim = stream.shape()[1];
  std::vector<double> out(stream.values().begin(), stream.values().end());
  for (const BurstWindow& w : ordered) {
    const double sigma = std::sqrt(power / std::pow(10.0, w.snr_db / 10.0));
    std::normal_distribution<double> normal(0.0, sigma);
    const auto [first, last] = burst_frames(w, frames);
    for (std::size_t i = first * dim; i < last * dim; ++i) out[i] += normal(rng);
  }
  return Tensor(stream.shape(), std::move(out));
}

Utterance generate(const CorpusSpec& spec, Split split, std::size_t index) {
  if (index >= spec.split_size(split)) {
    throw std::out_of_range("generate: index " + std::to_string(index) + " outside " +
                            std::string(split_name(split)) + " split of " +
                            std::to_string(spec.split_size(split)));
  }
  // Prototypes are cheap at desk scale; regenerating keeps generate() pure.
  const Prototypes protos = make_prototypes(spec);
  const auto split_id = static_cast<std::uint64_t>(split);
  auto rng = seeded(spec.seed, kContentStream, split_id, index);

  Utterance u;
  u.id = std::string(split_name(split)) + "-" + std::to_string(index);
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> symbol_dist(0, spec.symbols - 1);
  const std::size_t length = length_dist(rng);
  std::vector<std::size_t> ids(length);
  for (auto& id : ids) id = symbol_dist(rng);

  std::normal_distribution<double> jitter(0.0, spec.jitter);
  auto render = [&](const Tensor& table, const Tensor& offset, std::size_t per_symbol,
                    bool visual) {
    const std::size_t dim = table.shape()[1];
    std::vector<double> frames;
    frames.reserve(length * per_symbol * dim);
    for (std::size_t id : ids) {
      const std::size_t row = visual ? id % spec.visual_classes() : id;
      for (std::size_t f = 0; f < per_symbol; ++f) {
        for (std::size_t d = 0; d < dim; ++d) {
          frames.push_back(offset[d] + table.at(row, d) + jitter(rng));
        }
      }
    }
    return Tensor({length * per_symbol, dim}, std::move(frames));
  };
  Tensor audio = render(protos.audio, protos.audio_offset, spec.audio_frames_per_symbol, false);
  Tensor video = render(protos.video, protos.video_offset, spec.video_frames_per_symbol, true);
  for (std::size_t id : ids) u.symbols.push_back(static_cast<int>(id) + kFirstSymbol);

  auto audio_rng = seeded(spec.seed, kAudioNoiseStream, split_id, index);
  auto video_rng = seeded(spec.seed, kVideoNoiseStream, split_id, index);
  u.audio_snr = spec.audio_snr;
  if (spec.multi_condition) {
    std::uniform_int_distribution<std::size_t> pick(0, snr_ladder().size() - 1);
    u.audio_snr = snr_ladder()[pick(audio_rng)];
  }
  u.video_snr = spec.video_snr;
  const double audio_power = signal_power(audio);
  const double video_power = signal_power(video);
  u.audio = apply_burst(apply_noise(audio, u.audio_snr, audio_rng, audio_power), spec.audio_burst,
                        audio_rng, audio_power);
  u.video = apply_burst(apply_noise(video, u.video_snr, video_rng, video_power), spec.video_burst,
                        video_rng, video_power);
  u.audio_burst = spec.audio_burst;
  u.audio_frames = u.audio.shape()[0];
  u.video_frames = u.video.shape()[0];
  return u;
}

std::vector<Utterance> generate_split(const CorpusSpec& spec, Split split) {
  spec.validate();
  std::vector<Utterance> out;
  out.reserve(spec.split_size(split));
  for (std::size_t i = 0; i < spec.split_size(split); ++i) out.push_back(generate(spec, split, i));
  return out;
}

// Cache --------------------------------------------------------------------

namespace {

void write_snr(io::Writer& w, const Snr& snr) {
  w.u32(snr ? 1 : 0);
  w.f64(snr.value_or(0.0));
}

Snr read_snr(io::Reader& r) {
  const bool has = r.u32() != 0;
  const double v = r.f64();
  return has ? Snr(v) : std::nullopt;
}

void write_stream(io::Writer& w, const Tensor& t) {
  w.u64(t.shape()[0]);
  w.u64(t.shape()[1]);
  for (double v : t.values()) w.f64(v);
}

Tensor read_stream(io::Reader& r) {
  const std::size_t rows = r.u64(), cols = r.u64();
  std::vector<double> v(rows * cols);
  for (double& x : v) x = r.f64();
  return Tensor({rows, cols}, std::move(v));
}

}  // namespace

std::filesystem::path split_cache_path(const std::filesystem::path& dir, Split split) {
  return dir / (std::string(split_name(split)) + ".corpus");
}

void save_split(const std::filesystem::path& path, const CorpusSpec& spec, Split split,
                const std::vector<Utterance>& utterances) {
  io::Writer w;
  w.bytes(kCacheMagic);
  w.u32(kCacheVersion);
  w.u64(spec.digest());
  w.u32(static_cast<std::uint32_t>(split));
  w.u32(static_cast<std::uint32_t>(utterances.size()));
  for (const Utterance& u : utterances) {
    w.str(u.id);
    w.u32(static_cast<std::uint32_t>(u.symbols.size()));
    for (int s : u.symbols) w.u32(static_cast<std::uint32_t>(s));
    write_snr(w, u.audio_snr);
    write_snr(w, u.video_snr);
    w.u32(static_cast<std::uint32_t>(u.audio_burst.size()));
    for (const BurstWindow& b : u.audio_burst) {
      w.f64(b.start);
      w.f64(b.end);
      w.f64(b.snr_db);
    }
    w.u64(u.audio_frames);
    w.u64(u.video_frames);
    write_stream(w, u.audio);
    write_stream(w, u.video);
  }
  io::write_file(path, w.buffer());
}

std::optional<std::vector<Utterance>> load_split(const std::filesystem::path& path,
                                                 const CorpusSpec& spec, Split split) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto bytes = io::read_file(path);
  io::Reader r(bytes);
  if (r.bytes(kCacheMagic.size()) != kCacheMagic) throw FormatError("not a modatt corpus cache");
  if (r.u32() != kCacheVersion) return std::nullopt;
  if (r.u64() != spec.digest()) return std::nullopt;
  if (r.u32() != static_cast<std::uint32_t>(split)) return std::nullopt;
  const std::uint32_t count = r.u32();
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Utterance u;
    u.id = r.str();
    u.symbols.resize(r.u32());
    for (int& s : u.symbols) s = static_cast<int>(r.u32());
    u.audio_snr = read_snr(r);
    u.video_snr = read_snr(r);
    u.audio_burst.resize(r.u32());
    for (BurstWindow& b : u.audio_burst) {
      b.start = r.f64();
      b.end = r.f64();
      b.snr_db = r.f64();
    }
    u.audio_frames = r.u64();
    u.video_frames = r.u64();
    u.audio = read_stream(r);
    u.video = read_stream(r);
    out.push_back(std::move(u));
  }
  if (!r.done()) throw FormatError("trailing bytes in corpus cache " + path.string());
  return out;
}

std::vector<Utterance> load_or_generate_split(const std::filesystem::path& cache_dir,
                                              const CorpusSpec& spec, Split split) {
  const auto path = split_cache_path(cache_dir, split);
  if (auto cached = load_split(path, spec, split)) return std::move(*cached);
  auto utterances = generate_split(spec, split);
  save_split(path, spec, split, utterances);
  return utterances;
}

}  // namespace modatt
