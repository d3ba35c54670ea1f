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
#include "utoe/board_registry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace utoe {

using nlohmann::json;

const char* core_family_name(CoreFamily family) {
  switch (family) {
    case CoreFamily::kCortexM0Plus:
      return "cortex-m0plus";
    case CoreFamily::kCortexM3:
      return "cortex-m3";
    case CoreFamily::kCortexM4:
      return "cortex-m4";
    case CoreFamily::kCortexM7:
      return "cortex-m7";
    case CoreFamily::kRiscvRv32:
      return "riscv-rv32";
    case CoreFamily::kXtensa:
      return "xtensa";
  }
  return "?";
}

CoreFamily core_family_from_name(const std::string& name) {
  if (name == "cortex-m0plus") return CoreFamily::kCortexM0Plus;
  if (name == "cortex-m3") return CoreFamily::kCortexM3;
  if (name == "cortex-m4") return CoreFamily::kCortexM4;
  if (name == "cortex-m7") return CoreFamily::kCortexM7;
  if (name == "riscv-rv32") return CoreFamily::kRiscvRv32;
  if (name == "xtensa") return CoreFamily::kXtensa;
  throw ParseError("unknown core family '" + name + "'");
}

CostCoeffs default_coeffs(CoreFamily family) {
  CostCoeffs c;
  c.cycles_per_element = 4.0;
  c.external_flash_penalty = 12.0;
  switch (family) {
    case CoreFamily::kCortexM0Plus:
      c.cycles_per_mac = 24.0;
      break;
    case CoreFamily::kCortexM3:
      c.cycles_per_mac = 17.0;
      break;
    case CoreFamily::kCortexM4:
      c.cycles_per_mac = 13.0;
      break;
    case CoreFamily::kCortexM7:
      c.cycles_per_mac = 8.0;
      break;
    case CoreFamily::kRiscvRv32:
      c.cycles_per_mac = 10.0;
      break;
    case CoreFamily::kXtensa:
      c.cycles_per_mac = 13.0;
      break;
  }
  return c;
}

namespace {

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ", ";
    out += parts[i];
  }
  return out;
}

BoardSpec make_board(const char* name, const char* mcu, CoreFamily family,
                     std::set<std::string> features, double freq_mhz, int64_t ram_kb,
                     int64_t flash_kb, bool external_flash, bool cache_enabled) {
  BoardSpec b;
  b.name = name;
  b.mcu = mcu;
  b.core_family = family;
  b.features = std::move(features);
  b.freq_hz = freq_mhz * 1e6;
  b.ram_bytes = ram_kb * 1024;
  b.flash_bytes = flash_kb * 1024;
  b.external_flash = external_flash;
  b.cache_enabled = cache_enabled;
  b.coeffs = default_coeffs(family);
  return b;
}

}  // namespace

UnknownBoard::UnknownBoard(const std::string& name, const std::vector<std::string>& near_matches)
    : std::runtime_error("unknown board '" + name + "'" +
                         (near_matches.empty() ? std::string()
                                               : " (did you mean: " + join(near_matches) + "?)")) {}

const BoardRegistry& BoardRegistry::builtin() {
  static const BoardRegistry instance = [] {
    using CF = CoreFamily;
    const std::set<std::string> m3{"thumb2"};
    const std::set<std::string> m4{"dsp", "thumb2"};
    BoardRegistry r;
    // Cores and clock frequencies follow the reference measurement roster;
    // RAM/flash capacities are the MCU datasheet values.
    r.add(make_board("b-l072z-lrwan1", "STM32L072CZ", CF::kCortexM0Plus, {}, 32, 20, 192, false, false));
    r.add(make_board("samr21-xpro", "ATSAMR21G18A", CF::kCortexM0Plus, {}, 48, 32, 256, false, false));
    r.add(make_board("samr30-xpro", "ATSAMR30G18A", CF::kCortexM0Plus, {}, 48, 32, 256, false, false));
    r.add(make_board("samr34-xpro", "ATSAMR34J18", CF::kCortexM0Plus, {}, 48, 32, 256, false, false));
    r.add(make_board("arduino-zero", "ATSAMD21G18", CF::kCortexM0Plus, {}, 48, 32, 256, false, false));
    // The RP2040 runs from external QSPI flash behind an always-on XIP cache.
    r.add(make_board("rpi-pico", "RP2040", CF::kCortexM0Plus, {}, 125, 264, 2048, true, true));
    r.add(make_board("openmote-b", "CC2538SF53", CF::kCortexM3, m3, 32, 32, 512, false, false));
    r.add(make_board("iotlab-m3", "STM32F103REY", CF::kCortexM3, m3, 72, 64, 512, false, false));
    r.add(make_board("nucleo-wl55jc", "STM32WL55JC", CF::kCortexM4, m4, 48, 64, 256, false, false));
    r.add(make_board("nrf52dk", "nRF52832", CF::kCortexM4, m4, 64, 64, 512, false, false));
    r.add(make_board("nrf52840dk", "nRF52840", CF::kCortexM4, m4, 64, 256, 1024, false, false));
    r.add(make_board("b-l475e-iot01a", "STM32L475VG", CF::kCortexM4, m4, 80, 128, 1024, false, false));
    r.add(make_board("stm32f746g-disco", "STM32F746NG", CF::kCortexM7, m4, 216, 320, 1024, false, false));
    r.add(make_board("esp32-wroom-32", "ESP32-D0WDQ6", CF::kXtensa, {}, 80, 520, 4096, true, true));
    r.add(make_board("esp32c3-devkit", "ESP32-C3FN4", CF::kRiscvRv32, {}, 80, 400, 4096, false, false));
    r.add(make_board("sipeed-longan-nano", "GD32VF103CBT6", CF::kRiscvRv32, {}, 108, 32, 128, false, false));
    // External SPI NOR flash with caches off: the measured outlier.
    r.add(make_board("hifive1b", "SiFive FE310-G002", CF::kRiscvRv32, {}, 320, 16, 4096, true, false));
    return r;
  }();
  return instance;
}

void BoardRegistry::add(BoardSpec spec) {
  if (spec.name.empty()) throw ValidationError("board name must not be empty");
  if (!(spec.freq_hz > 0)) throw ValidationError("board '" + spec.name + "': freq_hz must be > 0");
  if (!(spec.coeffs.cycles_per_mac > 0) || !(spec.coeffs.cycles_per_element > 0) ||
      !(spec.coeffs.external_flash_penalty >= 1.0)) {
    throw ValidationError("board '" + spec.name + "': invalid cost coefficients");
  }
  for (const auto& f : spec.features) {
    if (f != "dsp" && f != "thumb2") {
      throw ValidationError("board '" + spec.name + "': unknown feature '" + f + "'");
    }
  }
  for (const auto& b : boards_) {
    if (b.name == spec.name) throw ValidationError("duplicate board name '" + spec.name + "'");
  }
  boards_.push_back(std::move(spec));
}

const BoardSpec& BoardRegistry::lookup(const std::string& name) const {
  for (const auto& b : boards_) {
    if (b.name == name) return b;
  }
  std::vector<std::pair<size_t, std::string>> scored;
  for (const auto& b : boards_) {
    size_t d = edit_distance(name, b.name);
    if (d <= 3 || b.name.find(name) != std::string::npos) scored.emplace_back(d, b.name);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> near;
  for (size_t i = 0; i < scored.size() && i < 3; ++i) near.push_back(scored[i].second);
  throw UnknownBoard(name, near);
}

std::vector<std::string> BoardRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& b : boards_) out.push_back(b.name);
  return out;
}

BoardRegistry BoardRegistry::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("boards file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("boards file must be a JSON array");
  BoardRegistry registry;
  try {
    for (const auto& jb : doc) {
      BoardSpec b;
      b.name = jb.at("name").get<std::string>();
      b.mcu = jb.value("mcu", std::string());
      b.core_family = core_family_from_name(jb.at("core_family").get<std::string>());
      if (jb.contains("features")) {
        for (const auto& f : jb.at("features")) b.features.insert(f.get<std::string>());
      }
      b.freq_hz = jb.at("freq_hz").get<double>();
      b.ram_bytes = jb.at("ram_bytes").get<int64_t>();
      b.flash_bytes = jb.at("flash_bytes").get<int64_t>();
      b.external_flash = jb.value("external_flash", false);
      b.cache_enabled = jb.value("cache_enabled", false);
      if (jb.contains("price_usd")) b.price_usd = jb.at("price_usd").get<double>();
      b.coeffs = default_coeffs(b.core_family);
      if (jb.contains("coeffs")) {
        const auto& jc = jb.at("coeffs");
        b.coeffs.cycles_per_mac = jc.value("cycles_per_mac", b.coeffs.cycles_per_mac);
        b.coeffs.cycles_per_element = jc.value("cycles_per_element", b.coeffs.cycles_per_element);
        b.coeffs.external_flash_penalty =
            jc.value("external_flash_penalty", b.coeffs.external_flash_penalty);
      }
      registry.add(std::move(b));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed boards file: ") + e.what());
  }
  return registry;
}

BoardRegistry BoardRegistry::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open boards file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

std::string BoardRegistry::to_json() const {
  json doc = json::array();
  for (const auto& b : boards_) {
    json jb;
    jb["name"] = b.name;
    jb["mcu"] = b.mcu;
    jb["core_family"] = core_family_name(b.core_family);
    jb["features"] = b.features;
    jb["freq_hz"] = b.freq_hz;
    jb["ram_bytes"] = b.ram_bytes;
    jb["flash_bytes"] = b.flash_bytes;
    jb["external_flash"] = b.external_flash;
    jb["cache_enabled"] = b.cache_enabled;
    if (b.price_usd) jb["price_usd"] = *b.price_usd;
    jb["coeffs"] = {{"cycles_per_mac", b.coeffs.cycles_per_mac},
                    {"cycles_per_element", b.coeffs.cycles_per_element},
                    {"external_flash_penalty", b.coeffs.external_flash_penalty}};
    doc.push_back(std::move(jb));
  }
  return doc.dump(2);
}

double cycles_for(const FusedKernel& kernel, const BoardSpec& board) {
  double cycles = static_cast<double>(kernel.macs) * board.coeffs.cycles_per_mac +
                  static_cast<double>(kernel.elements) * board.coeffs.cycles_per_element;
  if (board.flash_penalty_applies()) cycles *= board.coeffs.external_flash_penalty;
  return cycles;
}

double cycles_for_model(const std::vector<FusedKernel>& kernels, const BoardSpec& board) {
  double total = 0;
  for (const auto& k : kernels) total += cycles_for(k, board);
  return total;
}

uint64_t latency_ns_for(const FusedKernel& kernel, const BoardSpec& board) {
  double ns = cycles_for(kernel, board) * 1e9 / board.freq_hz;
  return static_cast<uint64_t>(std::llround(ns));
}

uint64_t latency_ns_for_model(const std::vector<FusedKernel>& kernels, const BoardSpec& board) {
  uint64_t total = 0;
  for (const auto& k : kernels) total += latency_ns_for(k, board);
  return total;
}

namespace {

struct FamilyData {
  std::vector<double> macs;
  std::vector<double> elements;
  std::vector<double> log_measured_cycles;  // log(latency * freq / penalty)
};

// Gauss-Newton with Levenberg damping on log-parameters; fixed iteration
// budget keeps the result deterministic.
CostCoeffs fit_family(const FamilyData& d, CostCoeffs prior, bool fit_elements) {
  double log_cpm = std::log(prior.cycles_per_mac);
  double log_cpe = std::log(prior.cycles_per_element);
  double lambda = 1e-3;

  auto objective = [&](double lm, double le) {
    double cpm = std::exp(lm), cpe = std::exp(le);
    double sum = 0;
    for (size_t i = 0; i < d.macs.size(); ++i) {
      double pred = d.macs[i] * cpm + d.elements[i] * cpe;
      if (pred <= 0) return 1e300;
      double r = std::log(pred) - d.log_measured_cycles[i];
      sum += r * r;
    }
    return sum;
  };

  double best = objective(log_cpm, log_cpe);
  for (int iter = 0; iter < 300; ++iter) {
    double cpm = std::exp(log_cpm), cpe = std::exp(log_cpe);
    // Accumulate J^T J and J^T r for the (1 or 2)-parameter system.
    double a11 = 0, a12 = 0, a22 = 0, g1 = 0, g2 = 0;
    for (size_t i = 0; i < d.macs.size(); ++i) {
      double pred = d.macs[i] * cpm + d.elements[i] * cpe;
      double r = std::log(pred) - d.log_measured_cycles[i];
      double j1 = d.macs[i] * cpm / pred;
      double j2 = d.elements[i] * cpe / pred;
      a11 += j1 * j1;
      a12 += j1 * j2;
      a22 += j2 * j2;
      g1 += j1 * r;
      g2 += j2 * r;
    }
    double step1 = 0, step2 = 0;
    if (fit_elements) {
      double m11 = a11 + lambda, m22 = a22 + lambda;
      double det = m11 * m22 - a12 * a12;
      if (std::abs(det) < 1e-30) break;
      step1 = (m22 * g1 - a12 * g2) / det;
      step2 = (m11 * g2 - a12 * g1) / det;
    } else {
      if (a11 + lambda < 1e-30) break;
      step1 = g1 / (a11 + lambda);
    }
    double next = objective(log_cpm - step1, log_cpe - step2);
    if (next < best) {
      log_cpm -= step1;
      log_cpe -= step2;
      best = next;
      lambda = std::max(lambda * 0.5, 1e-12);
    } else {
      lambda *= 4.0;
      if (lambda > 1e12) break;
    }
  }

  CostCoeffs out = prior;
  out.cycles_per_mac = std::exp(log_cpm);
  if (fit_elements) out.cycles_per_element = std::exp(log_cpe);
  return out;
}

}  // namespace

std::map<CoreFamily, CostCoeffs> calibrate(const BoardRegistry& registry,
                                           const std::vector<Measurement>& measurements,
                                           const CalibrationOptions& options) {
  std::map<CoreFamily, FamilyData> grouped;
  for (const auto& m : measurements) {
    const BoardSpec& board = registry.lookup(m.board);
    if (!(m.latency_s > 0)) {
      throw ValidationError("measurement on '" + m.board + "': latency must be positive");
    }
    double penalty = board.flash_penalty_applies() ? board.coeffs.external_flash_penalty : 1.0;
    auto& d = grouped[board.core_family];
    d.macs.push_back(static_cast<double>(m.macs));
    d.elements.push_back(static_cast<double>(m.elements));
    d.log_measured_cycles.push_back(std::log(m.latency_s * board.freq_hz / penalty));
  }

  const size_t coeff_count = options.fit_elements ? 2 : 1;
  std::map<CoreFamily, CostCoeffs> fitted;
  for (auto& [family, data] : grouped) {
    if (data.macs.size() < coeff_count) {
      throw Underdetermined("core family " + std::string(core_family_name(family)) + " has " +
                            std::to_string(data.macs.size()) + " measurement(s) for " +
                            std::to_string(coeff_count) + " coefficient(s)");
    }
    fitted[family] = fit_family(data, default_coeffs(family), options.fit_elements);
  }
  return fitted;
}

}  // namespace utoe
