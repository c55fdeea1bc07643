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

#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace msrs {

/// One telemetry row. Optional fields serialize as explicit null.
struct MetricRecord {
  std::string run_id;
  std::string phase;  // "joint", "continue" or "train"
  int epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  double global_sparsity = 0.0;
  std::map<std::string, double> per_layer_sparsity;
  std::optional<double> mask_sparsity_diff;
  std::optional<std::uint64_t> mask_hamming_delta;
  std::map<std::string, double> per_layer_grad_l2;
  double lr_theta = 0.0;
  std::optional<double> lr_phi;
  std::optional<double> lambda;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

namespace detail {

template <class T>
nlohmann::ordered_json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

template <class T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<T>();
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["run_id"] = r.run_id;
  j["phase"] = r.phase;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["global_sparsity"] = r.global_sparsity;
  j["per_layer_sparsity"] = r.per_layer_sparsity;
  j["mask_sparsity_diff"] = detail::opt_json(r.mask_sparsity_diff);
  j["mask_hamming_delta"] = detail::opt_json(r.mask_hamming_delta);
  j["per_layer_grad_l2"] = r.per_layer_grad_l2;
  j["lr_theta"] = r.lr_theta;
  j["lr_phi"] = detail::opt_json(r.lr_phi);
  j["lambda"] = detail::opt_json(r.lambda);
  return j;
}

inline MetricRecord record_from_json(const nlohmann::json& j) {
  MetricRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.phase = j.at("phase").get<std::string>();
  r.epoch = j.at("epoch").get<int>();
  r.step = j.at("step").get<std::uint64_t>();
  r.loss = j.at("loss").get<double>();
  r.global_sparsity = j.at("global_sparsity").get<double>();
  r.per_layer_sparsity = j.at("per_layer_sparsity").get<std::map<std::string, double>>();
  r.mask_sparsity_diff = detail::opt_from<double>(j, "mask_sparsity_diff");
  r.mask_hamming_delta = detail::opt_from<std::uint64_t>(j, "mask_hamming_delta");
  r.per_layer_grad_l2 = j.at("per_layer_grad_l2").get<std::map<std::string, double>>();
  r.lr_theta = j.at("lr_theta").get<double>();
  r.lr_phi = detail::opt_from<double>(j, "lr_phi");
  r.lambda = detail::opt_from<double>(j, "lambda");
  return r;
}

class MetricsError : public std::runtime_error {
 public:
  MetricsError(const std::string& msg, std::size_t line)
      : std::runtime_error(msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline void write_metrics(const std::vector<MetricRecord>& recs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : recs) out << to_json(r).dump() << '\n';
}

inline std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MetricsError("cannot open " + path, 0);
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw MetricsError(path + ":" + std::to_string(n) + ": " + e.what(), n);
    }
  }
  if (out.empty()) throw MetricsError(path + ": no metric records", n);
  return out;
}

}  // namespace msrs
