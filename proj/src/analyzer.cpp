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
#include "utoe/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace utoe {

MissingKernelResult::MissingKernelResult(size_t index)
    : std::runtime_error("no benchmark result for kernel index " + std::to_string(index)) {}

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                 b * std::log(1.0 - x);
  double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * betacf(a, b, x) / a;
  }
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  double x = df / (df + t * t);
  double tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, x);
  return t >= 0 ? 1.0 - tail : tail;
}

}  // namespace

double student_t_975(int df) {
  if (df < 1) throw ValidationError("student_t_975 requires df >= 1");
  constexpr double kP = 0.975;
  double lo = 0.0, hi = 2.0;
  while (student_t_cdf(hi, df) < kP) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, df) < kP) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

PerModelReport summarize_trials(std::span<const rpc::TrialRecord> records, int64_t memory_bytes,
                                int64_t storage_bytes) {
  if (records.empty()) throw EmptyRecords();

  std::vector<double> ms;
  ms.reserve(records.size());
  for (const auto& r : records) ms.push_back(static_cast<double>(r.latency_ns) / 1e6);
  std::sort(ms.begin(), ms.end());

  const size_t n = ms.size();
  PerModelReport report;
  report.num_trials = static_cast<uint32_t>(n);
  report.min_ms = ms.front();
  report.max_ms = ms.back();
  report.median_ms = n % 2 == 1 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);

  double mean = 0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(n);
  if (n == 1) {
    report.ci95_low_ms = report.ci95_high_ms = ms[0];
  } else {
    double ss = 0;
    for (double v : ms) ss += (v - mean) * (v - mean);
    double s = std::sqrt(ss / static_cast<double>(n - 1));
    double half = student_t_975(static_cast<int>(n) - 1) * s / std::sqrt(static_cast<double>(n));
    report.ci95_low_ms = mean - half;
    report.ci95_high_ms = mean + half;
  }

  auto kb3 = [](int64_t bytes) { return std::round(bytes / 1024.0 * 1000.0) / 1000.0; };
  report.memory_kb = kb3(memory_bytes);
  report.storage_kb = kb3(storage_bytes);
  return report;
}

PerOpReport summarize_ops(std::span<const rpc::OpResult> results,
                          std::span<const FusedKernel> kernels) {
  std::vector<const rpc::OpResult*> by_kernel(kernels.size(), nullptr);
  for (const auto& r : results) {
    if (r.kernel_index < kernels.size()) by_kernel[r.kernel_index] = &r;
  }
  double total_us = 0;
  for (size_t i = 0; i < kernels.size(); ++i) {
    if (!by_kernel[i]) throw MissingKernelResult(i);
    total_us += static_cast<double>(by_kernel[i]->mean_ns) / 1e3;
  }

  auto kb3 = [](int64_t bytes) { return std::round(bytes / 1024.0 * 1000.0) / 1000.0; };
  constexpr const char* kGeneratedPrefix = "tvmgen_default_";

  PerOpReport report;
  for (size_t i = 0; i < kernels.size(); ++i) {
    PerOpRow row;
    row.op_name = kernels[i].name;
    if (row.op_name.rfind(kGeneratedPrefix, 0) == 0) {
      row.op_name.erase(0, std::string(kGeneratedPrefix).size());
    }
    row.time_us = static_cast<double>(by_kernel[i]->mean_ns) / 1e3;
    row.time_pct = total_us > 0 ? 100.0 * row.time_us / total_us
                                : 100.0 / static_cast<double>(kernels.size());
    row.assoc_params = kernels[i].assoc_params;
    row.memory_kb = kb3(kernels[i].memory_bytes);
    row.storage_kb = kb3(kernels[i].storage_bytes);
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

// 3-decimal fixed formatting with trailing zeros trimmed, matching the
// reference tables (39.601, 39.6, 64.34, 70).
std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  std::string s(buf);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

std::string fmt_pct(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f%%", v);
  return buf;
}

std::string join_params(const std::vector<std::string>& params) {
  std::string out;
  for (size_t i = 0; i < params.size(); ++i) {
    if (i) out += ", ";
    out += params[i];
  }
  return out;
}

std::string layout(const std::vector<std::string>& headers,
                   const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) widths[c] = headers[c].size();
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      out << cells[c];
      if (c + 1 < cells.size()) {
        out << std::string(widths[c] - cells[c].size() + 2, ' ');
      }
    }
    out << '\n';
  };
  emit(headers);
  size_t total = 0;
  for (size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c + 1 < widths.size() ? 2 : 0);
  out << std::string(total, '-') << '\n';
  for (const auto& row : rows) emit(row);
  return out.str();
}

}  // namespace

std::string render_table(const PerModelReport& report) {
  std::vector<std::string> headers = {"# Trials",       "95%-CI Time (ms)", "Mdn. Time (ms)",
                                      "Max. Time (ms)", "Min. Time (ms)",   "Memory (KB)",
                                      "Storage (KB)"};
  std::vector<std::vector<std::string>> rows = {
      {std::to_string(report.num_trials),
       "[" + fmt3(report.ci95_low_ms) + ", " + fmt3(report.ci95_high_ms) + "]",
       fmt3(report.median_ms), fmt3(report.max_ms), fmt3(report.min_ms), fmt3(report.memory_kb),
       fmt3(report.storage_kb)}};
  return layout(headers, rows);
}

std::string render_table(const PerOpReport& report) {
  std::vector<std::string> headers = {"Ops",          "Time (us)",   "Time (%)",
                                      "Asso. Params", "Memory (KB)", "Storage (KB)"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : report.rows) {
    rows.push_back({row.op_name, fmt3(row.time_us), fmt_pct(row.time_pct),
                    join_params(row.assoc_params), fmt3(row.memory_kb), fmt3(row.storage_kb)});
  }
  return layout(headers, rows);
}

std::string report_to_json(const PerModelReport& report) {
  nlohmann::json doc;
  doc["num_trials"] = report.num_trials;
  doc["ci95_low_ms"] = report.ci95_low_ms;
  doc["ci95_high_ms"] = report.ci95_high_ms;
  doc["median_ms"] = report.median_ms;
  doc["min_ms"] = report.min_ms;
  doc["max_ms"] = report.max_ms;
  doc["memory_kb"] = report.memory_kb;
  doc["storage_kb"] = report.storage_kb;
  return doc.dump(2);
}

std::string report_to_json(const PerOpReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json jr;
    jr["op_name"] = row.op_name;
    jr["time_us"] = row.time_us;
    jr["time_pct"] = row.time_pct;
    jr["assoc_params"] = row.assoc_params;
    jr["memory_kb"] = row.memory_kb;
    jr["storage_kb"] = row.storage_kb;
    rows.push_back(std::move(jr));
  }
  nlohmann::json doc;
  doc["rows"] = std::move(rows);
  return doc.dump(2);
}

namespace {

constexpr const char* kLogHeader = "run_id,board,model,mode,trial_or_kernel,latency_ns,seed,timestamp";

}  // namespace

void export_log(const std::string& path, std::span<const LogRow> rows) {
  namespace fs = std::filesystem;
  bool need_header = true;
  std::error_code ec;
  if (fs::exists(path, ec) && fs::file_size(path, ec) > 0) need_header = false;

  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open log file '" + path + "' for writing");
  if (need_header) out << kLogHeader << '\n';
  for (const auto& row : rows) {
    out << row.run_id << ',' << row.board << ',' << row.model << ',' << row.mode << ','
        << row.trial_or_kernel << ',' << row.latency_ns << ',' << row.seed << ','
        << row.timestamp << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing log file '" + path + "'");
}

std::vector<LogRow> parse_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open log file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) return {};
  if (line != kLogHeader) throw IoError("log file '" + path + "' has an unexpected header");

  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8) throw IoError("malformed log row: " + line);
    LogRow row;
    row.run_id = fields[0];
    row.board = fields[1];
    row.model = fields[2];
    row.mode = fields[3];
    row.trial_or_kernel = fields[4];
    row.latency_ns = std::stoull(fields[5]);
    row.seed = std::stoull(fields[6]);
    row.timestamp = fields[7];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace utoe
