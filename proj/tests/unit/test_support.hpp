// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "modatt/tensor.hpp"

namespace modatt::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                            bool trainable = false) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = n(rng);
  return trainable ? Tensor::parameter(std::move(shape), std::move(v))
                   : Tensor(std::move(shape), std::move(v));
}

inline Tensor random_parameter(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return random_tensor(std::move(shape), rng, scale, true);
}

// Central-difference oracle, written independently of the library's
// gradient checker. For every coordinate of every input it compares the
// reverse-mode gradient with (f(x+h) - f(x-h)) / 2h and returns the largest
// |a - n| / max(|a|, |n|, floor / tol), i.e. the error in units of `tol`.
inline double worst_fd_ratio(std::vector<Tensor> inputs, const std::function<Tensor()>& f,
                             double tol, double h = 1e-4, double floor = 1e-8) {
  for (Tensor& t : inputs) t.zero_grad();
  {
    Graph g;
    g.backward(f());
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  double worst = 0.0;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double scale = std::max({std::abs(a), std::abs(numeric), floor / tol});
      worst = std::max(worst, std::abs(a - numeric) / (scale * tol));
    }
  }
  return worst;
}

inline std::vector<double> to_vector(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace modatt::testing
