// Copyright 2026 The MSRS Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "msrs/model.hpp"
#include "msrs/rng.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

enum class TargetKind { kRegression, kClassification };

struct Dataset {
  Tensor inputs;                    // N x d_in
  Tensor targets;                   // N x d_out, regression only
  std::vector<std::size_t> labels;  // N, classification only
  TargetKind kind = TargetKind::kRegression;
  std::uint64_t seed = 0;

  std::size_t size() const { return inputs.rows(); }
  std::size_t num_classes() const {
    std::size_t c = 0;
    for (auto l : labels) c = std::max(c, l + 1);
    return c;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.inputs == b.inputs && a.targets == b.targets && a.labels == b.labels &&
           a.kind == b.kind;
  }
};

/// Rows `idx` of a dataset, used for minibatches.
inline Dataset take_rows(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.kind = d.kind;
  out.seed = d.seed;
  const std::size_t din = d.inputs.cols();
  out.inputs = Tensor({idx.size(), din});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < din; ++c) out.inputs.at(r, c) = d.inputs.at(idx[r], c);
  if (d.kind == TargetKind::kRegression) {
    const std::size_t dout = d.targets.cols();
    out.targets = Tensor({idx.size(), dout});
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < dout; ++c) out.targets.at(r, c) = d.targets.at(idx[r], c);
  } else {
    for (auto i : idx) out.labels.push_back(d.labels[i]);
  }
  return out;
}

/// Frozen random network generating regression targets.
struct TeacherSpec {
  ModelSpec model{.depth = 2,
                  .width = 32,
                  .activation = Activation::kTanh,
                  .residual = false,
                  .d_in = 16,
                  .d_out = 1,
                  .gain = 2.0};
  bool standardize_targets = true;
};

/// Standard-normal inputs, targets from an untrained teacher network.
/// Targets are shifted/scaled to zero mean and unit variance per column
/// unless a column is constant.
inline Dataset gen_teacher_regression(std::uint64_t seed, std::size_t n, std::size_t d_in,
                                      TeacherSpec teacher = {}) {
  if (n < 1) throw std::invalid_argument("gen_teacher_regression: N must be >= 1");
  teacher.model.d_in = int(d_in);
  Rng rng(Rng::derive(seed, 1));
  Dataset d;
  d.seed = seed;
  d.inputs = Tensor({n, d_in});
  for (double& v : d.inputs.data()) v = rng.normal();
  Model t = build_model(teacher.model, Rng::derive(seed, 2));
  d.targets = predict(t, d.inputs);
  if (teacher.standardize_targets) {
    for (std::size_t c = 0; c < d.targets.cols(); ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += d.targets.at(r, c);
      mean /= double(n);
      for (std::size_t r = 0; r < n; ++r) var += std::pow(d.targets.at(r, c) - mean, 2);
      const double sd = std::sqrt(var / double(n));
      if (sd == 0.0) continue;
      for (std::size_t r = 0; r < n; ++r) d.targets.at(r, c) = (d.targets.at(r, c) - mean) / sd;
    }
  }
  return d;
}

/// Two interleaved spirals, labels alternate 0/1. Features are scaled to unit
/// variance; the two classes are point reflections of each other.
inline Dataset gen_two_spirals(std::uint64_t seed, std::size_t n, double noise) {
  if (n == 0 || n % 2 != 0) throw std::invalid_argument("gen_two_spirals: N must be even and > 0");
  Rng rng(Rng::derive(seed, 3));
  const std::size_t half = n / 2;
  Dataset d;
  d.kind = TargetKind::kClassification;
  d.seed = seed;
  d.inputs = Tensor({n, 2});
  for (std::size_t i = 0; i < half; ++i) {
    const double t = 0.5 * std::numbers::pi + 3.0 * std::numbers::pi * double(i) / double(half);
    const double r = t / (3.5 * std::numbers::pi);
    const double x = r * std::cos(t), y = r * std::sin(t);
    d.inputs.at(2 * i, 0) = x + noise * rng.normal();
    d.inputs.at(2 * i, 1) = y + noise * rng.normal();
    d.inputs.at(2 * i + 1, 0) = -x + noise * rng.normal();
    d.inputs.at(2 * i + 1, 1) = -y + noise * rng.normal();
    d.labels.push_back(0);
    d.labels.push_back(1);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += d.inputs.at(r, c);
    mean /= double(n);
    for (std::size_t r = 0; r < n; ++r) var += std::pow(d.inputs.at(r, c) - mean, 2);
    const double sd = std::sqrt(var / double(n));
    for (std::size_t r = 0; r < n; ++r) d.inputs.at(r, c) = (d.inputs.at(r, c) - mean) / sd;
  }
  return d;
}

/// Canonical vanishing-gradient fixture: 16 plain tanh layers of width 32.
inline ModelSpec pathological_model_spec() {
  return ModelSpec{.depth = 16,
                   .width = 32,
                   .activation = Activation::kTanh,
                   .residual = false,
                   .layerscale = false,
                   .normalization = false,
                   .d_in = 16,
                   .d_out = 1,
                   .init = InitScheme::kUniform,
                   .gain = 1.0};
}

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

/// Comma-separated rows, final column is the target. Regression targets are
/// one column; classification targets are non-negative integer labels.
inline Dataset load_csv(const std::string& path, std::size_t d_in, TargetKind kind,
                        bool skip_header = false) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path);
  Dataset d;
  d.kind = kind;
  std::vector<double> xs, ys;
  std::string line;
  std::size_t row = 0, lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_header && lineno == 1) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split(line, ',');
    if (cells.size() != d_in + 1)
      throw CsvError(path + ": row " + std::to_string(lineno) + " has " +
                     std::to_string(cells.size()) + " columns, expected " +
                     std::to_string(d_in + 1));
    for (std::size_t c = 0; c <= d_in; ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v) || !std::isfinite(v))
        throw CsvError(path + ": row " + std::to_string(lineno) + " column " +
                       std::to_string(c + 1) + " is not a number: '" + std::string(cells[c]) + "'");
      if (c < d_in) {
        xs.push_back(v);
      } else if (kind == TargetKind::kClassification) {
        if (v < 0 || v != std::floor(v))
          throw CsvError(path + ": row " + std::to_string(lineno) + " label is not a class index");
        d.labels.push_back(std::size_t(v));
      } else {
        ys.push_back(v);
      }
    }
    ++row;
  }
  if (row == 0) throw CsvError(path + ": no rows");
  d.inputs = Tensor({row, d_in}, std::move(xs));
  if (kind == TargetKind::kRegression) d.targets = Tensor({row, 1}, std::move(ys));
  return d;
}

/// Writes shortest round-trip decimal text, so load_csv(write_csv(d)) == d.
inline void write_csv(const Dataset& d, const std::string& path) {
  if (d.kind == TargetKind::kRegression && d.targets.cols() != 1)
    throw CsvError("write_csv: only single-column regression targets are representable");
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path);
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t c = 0; c < d.inputs.cols(); ++c)
      out << detail::format_double(d.inputs.at(r, c)) << ',';
    if (d.kind == TargetKind::kRegression)
      out << detail::format_double(d.targets.at(r, 0));
    else
      out << d.labels[r];
    out << '\n';
  }
}

}  // namespace msrs
