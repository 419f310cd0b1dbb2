// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/metrics.hpp"

#include <algorithm>

#include "modatt/errors.hpp"

namespace modatt {

EditOps edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({at(i - 1, j) + 1, at(i, j - 1) + 1, diag});
    }
  }
  EditOps ops;
  ops.distance = at(n, m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++ops.deletions;
      --i;
    } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++ops.insertions;
      --j;
    } else {
      if (ref[i - 1] != hyp[j - 1]) ++ops.substitutions;
      --i;
      --j;
    }
  }
  return ops;
}

void CerReport::add(const EditOps& ops, std::size_t ref_len) {
  ++utterances;
  reference_symbols += ref_len;
  totals.distance += ops.distance;
  totals.substitutions += ops.substitutions;
  totals.insertions += ops.insertions;
  totals.deletions += ops.deletions;
}

double CerReport::cer() const {
  if (reference_symbols == 0) return totals.distance == 0 ? 0.0 : 1.0;
  return static_cast<double>(totals.distance) / static_cast<double>(reference_symbols);
}

void AttentionReport::add(const std::vector<std::vector<double>>& weights, const Snr& audio_snr) {
  Mean& bucket = by_audio_snr[snr_label(audio_snr)];
  for (const auto& w : weights) {
    if (w.size() != 2) throw ContractError("attention report expects two modality weights");
    for (Mean* m : {&overall, &bucket}) {
      m->audio_sum += w[0];
      m->video_sum += w[1];
      ++m->steps;
    }
  }
}

}  // namespace modatt
