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
#ifndef UTOE_BOARD_REGISTRY_HPP_
#define UTOE_BOARD_REGISTRY_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "utoe/graph_compiler.hpp"

namespace utoe {

enum class CoreFamily {
  kCortexM0Plus,
  kCortexM3,
  kCortexM4,
  kCortexM7,
  kRiscvRv32,
  kXtensa,
};

const char* core_family_name(CoreFamily family);
CoreFamily core_family_from_name(const std::string& name);

struct CostCoeffs {
  double cycles_per_mac = 1.0;
  double cycles_per_element = 1.0;
  double external_flash_penalty = 1.0;  // applied when external flash runs uncached

  bool operator==(const CostCoeffs&) const = default;
};

struct BoardSpec {
  std::string name;
  std::string mcu;
  CoreFamily core_family = CoreFamily::kCortexM0Plus;
  std::set<std::string> features;  // subset of {"dsp", "thumb2"}
  double freq_hz = 0;
  int64_t ram_bytes = 0;
  int64_t flash_bytes = 0;
  bool external_flash = false;
  bool cache_enabled = false;
  std::optional<double> price_usd;
  CostCoeffs coeffs;

  bool flash_penalty_applies() const { return external_flash && !cache_enabled; }
  bool operator==(const BoardSpec&) const = default;
};

class UnknownBoard : public std::runtime_error {
 public:
  UnknownBoard(const std::string& name, const std::vector<std::string>& near_matches);
};

// Per-family default cost coefficients. Calibration constants chosen so the
// reference board table reproduces the measured cross-family ratios; not
// datasheet values.
CostCoeffs default_coeffs(CoreFamily family);

class BoardRegistry {
 public:
  // The 17-board reference roster with cores and clocks as measured.
  // Immutable shared instance.
  static const BoardRegistry& builtin();
  static BoardRegistry from_json(const std::string& text);
  static BoardRegistry from_file(const std::string& path);

  std::string to_json() const;

  const BoardSpec& lookup(const std::string& name) const;  // throws UnknownBoard
  const std::vector<BoardSpec>& boards() const { return boards_; }
  std::vector<std::string> names() const;

  void add(BoardSpec spec);  // throws ValidationError on duplicates/bad fields

  bool operator==(const BoardRegistry&) const = default;

 private:
  std::vector<BoardSpec> boards_;
};

// Analytic latency model: cycles scale linearly in MACs and element ops, with
// a multiplicative penalty for uncached external flash.
double cycles_for(const FusedKernel& kernel, const BoardSpec& board);
double cycles_for_model(const std::vector<FusedKernel>& kernels, const BoardSpec& board);

inline double latency_seconds(double cycles, const BoardSpec& board) {
  return cycles / board.freq_hz;
}

// Integer-nanosecond form used on the wire; per-model latency is the sum of
// the per-kernel integers, so the two granularities agree exactly.
uint64_t latency_ns_for(const FusedKernel& kernel, const BoardSpec& board);
uint64_t latency_ns_for_model(const std::vector<FusedKernel>& kernels, const BoardSpec& board);

struct Measurement {
  std::string board;
  int64_t macs = 0;
  int64_t elements = 0;
  double latency_s = 0;
};

class Underdetermined : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CalibrationOptions {
  // Fit cycles_per_element jointly with cycles_per_mac. Requires at least two
  // measurements with distinct MAC:element mixes per family; by default only
  // cycles_per_mac is fitted and cycles_per_element stays at its prior.
  bool fit_elements = false;
};

// Least-squares fit of log-latency residuals per core family. Deterministic
// given input order. Throws Underdetermined when a family has fewer
// measurements than fitted coefficients.
std::map<CoreFamily, CostCoeffs> calibrate(const BoardRegistry& registry,
                                           const std::vector<Measurement>& measurements,
                                           const CalibrationOptions& options = {});

}  // namespace utoe

#endif  // UTOE_BOARD_REGISTRY_HPP_
