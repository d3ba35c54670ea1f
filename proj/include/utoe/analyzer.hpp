/* Copyright 2026 The utoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef UTOE_ANALYZER_HPP_
#define UTOE_ANALYZER_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "utoe/graph_compiler.hpp"
#include "utoe/rpc.hpp"

namespace utoe {

class EmptyRecords : public std::runtime_error {
 public:
  EmptyRecords() : std::runtime_error("cannot summarize an empty record list") {}
};

class MissingKernelResult : public std::runtime_error {
 public:
  explicit MissingKernelResult(size_t index);
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PerModelReport {
  uint32_t num_trials = 0;
  double ci95_low_ms = 0;
  double ci95_high_ms = 0;
  double median_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  double memory_kb = 0;   // bytes/1024 rounded to 3 decimals
  double storage_kb = 0;

  bool operator==(const PerModelReport&) const = default;
};

struct PerOpRow {
  std::string op_name;
  double time_us = 0;
  double time_pct = 0;
  std::vector<std::string> assoc_params;
  double memory_kb = 0;
  double storage_kb = 0;

  bool operator==(const PerOpRow&) const = default;
};

struct PerOpReport {
  std::vector<PerOpRow> rows;  // kernel execution order

  bool operator==(const PerOpReport&) const = default;
};

// Two-sided 97.5% Student-t quantile (the multiplier of a 95% CI on the
// mean). df >= 1.
double student_t_975(int df);

// Median by the midpoint-of-middle-two convention; 95% CI as
// mean +- t(0.975, n-1) * s / sqrt(n) with the n-1 sample deviation.
// A single record degenerates to CI = [x, x]. For very small n the CI can
// legitimately extend past [min, max].
PerModelReport summarize_trials(std::span<const rpc::TrialRecord> records, int64_t memory_bytes,
                                int64_t storage_bytes);

// Joins per-kernel timing with the compile-stage annotations. Results may
// arrive in any order but every kernel needs exactly one.
PerOpReport summarize_ops(std::span<const rpc::OpResult> results,
                          std::span<const FusedKernel> kernels);

std::string render_table(const PerModelReport& report);
std::string render_table(const PerOpReport& report);

// Machine-readable form of a report, same interchange syntax as the model
// file.
std::string report_to_json(const PerModelReport& report);
std::string report_to_json(const PerOpReport& report);

// Raw-metric log: CSV with header
// run_id,board,model,mode,trial_or_kernel,latency_ns,seed,timestamp
struct LogRow {
  std::string run_id;
  std::string board;
  std::string model;
  std::string mode;
  std::string trial_or_kernel;
  uint64_t latency_ns = 0;
  uint64_t seed = 0;
  std::string timestamp;

  bool operator==(const LogRow&) const = default;
};

// Appends; writes the header only when the file is new/empty.
void export_log(const std::string& path, std::span<const LogRow> rows);
std::vector<LogRow> parse_log(const std::string& path);

}  // namespace utoe

#endif  // UTOE_ANALYZER_HPP_
