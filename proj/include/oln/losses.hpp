/*
 * Copyright 2026 The OLN Proposals Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Loss functions with analytic gradients with respect to the predictions.
// All of them normalize by the number of valid samples; with no valid sample
// the loss and its gradient are zero.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "oln/error.hpp"

namespace oln::loss {

template <std::floating_point T>
struct LossResult {
  double value = 0.0;  // accumulated in double whatever T is
  std::vector<T> grad;
};

namespace detail {

template <std::floating_point T>
std::size_t count_valid(std::span<const std::uint8_t> valid, std::size_t n) {
  if (valid.empty()) return n;
  if (valid.size() != n) throw InputError("loss: validity mask size mismatch");
  std::size_t c = 0;
  for (auto v : valid) c += v ? 1 : 0;
  return c;
}

template <std::floating_point T>
void check_sizes(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw InputError("loss: prediction/target size mismatch");
}

inline bool is_valid(std::span<const std::uint8_t> valid, std::size_t i, std::size_t width) {
  return valid.empty() || valid[i / width] != 0;
}

}  // namespace detail

/// sum |p - t| / n_valid. `width` groups consecutive entries into one sample
/// (4 for box regression), `valid` has one flag per sample.
template <std::floating_point T>
LossResult<T> l1(std::span<const T> pred, std::span<const T> target,
                 std::span<const std::uint8_t> valid = {}, std::size_t width = 1) {
  detail::check_sizes(pred, target);
  LossResult<T> out;
  out.grad.assign(pred.size(), T(0));
  const std::size_t n = detail::count_valid<T>(valid, pred.size() / width);
  if (n == 0) return out;
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!detail::is_valid(valid, i, width)) continue;
    const T d = pred[i] - target[i];
    out.value += std::abs(static_cast<double>(d));
    out.grad[i] = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
  }
  out.value /= static_cast<double>(n);
  return out;
}

template <std::floating_point T>
LossResult<T> smooth_l1(std::span<const T> pred, std::span<const T> target, T beta,
                        std::span<const std::uint8_t> valid = {}, std::size_t width = 1) {
  detail::check_sizes(pred, target);
  LossResult<T> out;
  out.grad.assign(pred.size(), T(0));
  const std::size_t n = detail::count_valid<T>(valid, pred.size() / width);
  if (n == 0) return out;
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!detail::is_valid(valid, i, width)) continue;
    const T d = pred[i] - target[i];
    if (std::abs(d) < beta) {
      out.value += 0.5 * static_cast<double>(d) * d / beta;
      out.grad[i] = d / beta * inv;
    } else {
      out.value += std::abs(static_cast<double>(d)) - 0.5 * beta;
      out.grad[i] = (d > T(0) ? inv : -inv);
    }
  }
  out.value /= static_cast<double>(n);
  return out;
}

/// Binary cross-entropy on logits, labels in {0, 1}.
template <std::floating_point T>
LossResult<T> bce_with_logits(std::span<const T> logits, std::span<const T> labels,
                              std::span<const std::uint8_t> valid = {}, std::size_t width = 1) {
  detail::check_sizes(logits, labels);
  LossResult<T> out;
  out.grad.assign(logits.size(), T(0));
  const std::size_t n = detail::count_valid<T>(valid, logits.size() / width);
  if (n == 0) return out;
  const T inv = T(1) / static_cast<T>(n * width);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!detail::is_valid(valid, i, width)) continue;
    const T z = logits[i];
    const T y = labels[i];
    const double zd = z;
    out.value += std::max(zd, 0.0) - zd * y + std::log1p(std::exp(-std::abs(zd)));
    const T sigma = T(1) / (T(1) + std::exp(-z));
    out.grad[i] = (sigma - y) * inv;
  }
  out.value /= static_cast<double>(n * width);
  return out;
}

template <std::floating_point T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

}  // namespace oln::loss
