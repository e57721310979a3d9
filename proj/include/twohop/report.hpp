#pragma once

// Report files: CSV tables, a JSON mirror with per-type breakdowns, and a
// long-format plot CSV (layer, series, value). Doubles are printed in their
// shortest round-trip form so identical tables produce identical bytes.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "twohop/dataset.hpp"
#include "twohop/errors.hpp"
#include "twohop/experiments.hpp"

namespace twohop {

inline constexpr std::string_view kVersionString = "twohop 0.1.0";

using Json = nlohmann::ordered_json;

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  ensure(res.ec == std::errc(), "format_double: conversion failed");
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kFrequencyHeader = "layer,n,k,frequency,p_value,ci_low,ci_high,synthetic_flag";
inline constexpr std::string_view kOutcomeHeader = "layer,n,ss,fs,sf,ff,synthetic_flag";
inline constexpr std::string_view kPlotHeader = "layer,series,value";

inline std::string frequency_csv(const LayerFrequencyTable& t) {
  std::string out(kFrequencyHeader);
  out += '\n';
  for (const auto& r : t.rows) {
    out += std::to_string(r.layer) + ',' + std::to_string(r.n) + ',' + std::to_string(r.k) + ',' +
           format_double(r.frequency) + ',' + format_double(r.p_value) + ',' + format_double(r.ci_low) + ',' +
           format_double(r.ci_high) + ',' + (r.synthetic ? "1" : "0") + '\n';
  }
  return out;
}

inline std::string outcome_csv(const OutcomeTable& t) {
  std::string out(kOutcomeHeader);
  out += '\n';
  for (const auto& r : t.rows) {
    out += std::to_string(r.layer) + ',' + std::to_string(r.n) + ',' + format_double(r.ss) + ',' + format_double(r.fs) +
           ',' + format_double(r.sf) + ',' + format_double(r.ff) + ',' + (r.synthetic ? "1" : "0") + '\n';
  }
  return out;
}

inline std::string plot_rows(const LayerFrequencyTable& t, const std::string& series) {
  std::string out;
  for (const auto& r : t.rows) out += std::to_string(r.layer) + ',' + series + ',' + format_double(r.frequency) + '\n';
  return out;
}

inline std::string plot_rows(const OutcomeTable& t) {
  std::string out;
  for (const auto& r : t.rows) {
    out += std::to_string(r.layer) + ",ss," + format_double(r.ss) + '\n';
    out += std::to_string(r.layer) + ",fs," + format_double(r.fs) + '\n';
    out += std::to_string(r.layer) + ",sf," + format_double(r.sf) + '\n';
    out += std::to_string(r.layer) + ",ff," + format_double(r.ff) + '\n';
  }
  return out;
}

inline std::string summary_csv(const std::vector<ScoreSummary>& summaries) {
  std::string out = "label,n,mean,median,q1,q3,min,max\n";
  for (const auto& s : summaries) {
    out += s.label + ',' + std::to_string(s.n) + ',' + format_double(s.mean) + ',' + format_double(s.median) + ',' +
           format_double(s.q1) + ',' + format_double(s.q3) + ',' + format_double(s.min) + ',' + format_double(s.max) +
           '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const LayerFrequencyTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"layer", r.layer},
                    {"n", r.n},
                    {"k", r.k},
                    {"frequency", r.frequency},
                    {"p_value", r.p_value},
                    {"ci_low", r.ci_low},
                    {"ci_high", r.ci_high},
                    {"synthetic", r.synthetic}});
  }
  return rows;
}

inline Json to_json(const OutcomeTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"layer", r.layer},
                    {"n", r.n},
                    {"ss", r.ss},
                    {"fs", r.fs},
                    {"sf", r.sf},
                    {"ff", r.ff},
                    {"synthetic", r.synthetic}});
  }
  return rows;
}

inline LayerFrequencyTable frequency_table_from_json(const nlohmann::json& j) {
  LayerFrequencyTable t;
  try {
    for (const auto& r : j) {
      LayerRow row;
      row.layer = r.at("layer").get<std::size_t>();
      row.n = r.at("n").get<std::size_t>();
      row.k = r.at("k").get<std::size_t>();
      row.frequency = r.at("frequency").get<double>();
      row.p_value = r.at("p_value").get<double>();
      row.ci_low = r.at("ci_low").get<double>();
      row.ci_high = r.at("ci_high").get<double>();
      row.synthetic = r.at("synthetic").get<bool>();
      t.rows.push_back(row);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("frequency table: ") + e.what());
  }
  return t;
}

inline OutcomeTable outcome_table_from_json(const nlohmann::json& j) {
  OutcomeTable t;
  try {
    for (const auto& r : j) {
      OutcomeRow row;
      row.layer = r.at("layer").get<std::size_t>();
      row.n = r.at("n").get<std::size_t>();
      row.ss = r.at("ss").get<double>();
      row.fs = r.at("fs").get<double>();
      row.sf = r.at("sf").get<double>();
      row.ff = r.at("ff").get<double>();
      row.synthetic = r.at("synthetic").get<bool>();
      t.rows.push_back(row);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("outcome table: ") + e.what());
  }
  return t;
}

template <typename Table>
Json to_json(const TypeBreakdown<Table>& b) {
  Json types = Json::array();
  for (const auto& e : b.types) {
    types.push_back({{"type", e.type},
                     {"instances", e.instances},
                     {"max_frequency", e.max_frequency},
                     {"strong_evidence", e.strong_evidence},
                     {"rows", to_json(e.table)}});
  }
  return {{"threshold", b.threshold}, {"types", types}};
}

inline Json to_json(const ScoreSummary& s) {
  return {{"label", s.label}, {"n", s.n},   {"mean", s.mean}, {"median", s.median},
          {"q1", s.q1},       {"q3", s.q3}, {"min", s.min},   {"max", s.max}};
}

// ---------------------------------------------------------------------------
// Bundles written to a run directory

struct ReportFile {
  std::string name;
  std::string contents;
};

struct ReportBundle {
  std::vector<ReportFile> files;
  void add(std::string name, std::string contents) { files.push_back({std::move(name), std::move(contents)}); }
};

inline std::string log_text(const std::vector<std::string>& log) {
  std::string out;
  for (const auto& line : log) out += line + '\n';
  return out;
}

inline ReportBundle frequency_report(const std::string& experiment, const FrequencyResult& r, const Json& header) {
  ReportBundle b;
  b.add("report.csv", frequency_csv(r.table));
  Json j = header;
  j["experiment"] = experiment;
  j["rows"] = to_json(r.table);
  j["breakdown"] = to_json(r.breakdown);
  j["log_entries"] = r.log.size();
  b.add("report.json", j.dump(2) + "\n");
  b.add("plot.csv", std::string(kPlotHeader) + "\n" + plot_rows(r.table, experiment));
  b.add("log.txt", log_text(r.log));
  return b;
}

inline ReportBundle outcome_report(const OutcomeResult& r, const Json& header) {
  ReportBundle b;
  b.add("report.csv", outcome_csv(r.table));
  Json j = header;
  j["experiment"] = "rq12";
  j["rows"] = to_json(r.table);
  j["breakdown"] = to_json(r.breakdown);
  j["log_entries"] = r.log.size();
  b.add("report.json", j.dump(2) + "\n");
  b.add("plot.csv", std::string(kPlotHeader) + "\n" + plot_rows(r.table));
  b.add("log.txt", log_text(r.log));
  return b;
}

inline ReportBundle cot_report(const CotComparison& c, const Json& header) {
  ReportBundle b;
  b.add("report.csv", summary_csv(c.summaries));
  Json j = header;
  j["experiment"] = "cot";
  j["summaries"] = Json::array();
  for (const auto& s : c.summaries) j["summaries"].push_back(to_json(s));
  j["instances"] = c.instance_indices;
  Json scores = Json::object();
  for (std::size_t v = 0; v < c.labels.size(); ++v) scores[c.labels[v]] = c.scores[v];
  j["scores"] = scores;
  b.add("report.json", j.dump(2) + "\n");
  std::string plot(kPlotHeader);
  plot += '\n';
  for (const auto& s : c.summaries) plot += "0," + s.label + "," + format_double(s.mean) + '\n';
  b.add("plot.csv", plot);
  b.add("log.txt", log_text(c.log));
  return b;
}

inline ReportBundle accuracy_report(const AccuracyVariants& a, const Json& header) {
  ReportBundle b;
  b.add("report_correct.csv", frequency_csv(a.correct.table));
  b.add("report_incorrect.csv", frequency_csv(a.incorrect.table));
  Json j = header;
  j["experiment"] = "accuracy";
  j["correct"] = {{"instances", a.correct_indices},
                  {"rows", to_json(a.correct.table)},
                  {"breakdown", to_json(a.correct.breakdown)}};
  j["incorrect"] = {{"instances", a.incorrect_indices},
                    {"rows", to_json(a.incorrect.table)},
                    {"breakdown", to_json(a.incorrect.breakdown)}};
  b.add("report.json", j.dump(2) + "\n");
  b.add("plot.csv", std::string(kPlotHeader) + "\n" + plot_rows(a.correct.table, "one_hop_correct") +
                        plot_rows(a.incorrect.table, "one_hop_incorrect"));
  std::vector<std::string> log = a.log;
  log.insert(log.end(), a.correct.log.begin(), a.correct.log.end());
  log.insert(log.end(), a.incorrect.log.begin(), a.incorrect.log.end());
  b.add("log.txt", log_text(log));
  return b;
}

inline ReportBundle stats_report(const DatasetStats& s, const Json& header) {
  ReportBundle b;
  std::string csv = "type,count,share_percent,majority_bridge_percent,majority_answer_percent\n";
  for (const auto& t : s.types) {
    csv += t.type + ',' + std::to_string(t.count) + ',' + format_double(t.share_percent) + ',' +
           format_double(t.majority_bridge_percent) + ',' + format_double(t.majority_answer_percent) + '\n';
  }
  b.add("report.csv", csv);
  Json j = header;
  j["experiment"] = "stats";
  j["stats"] = to_json(s);
  b.add("report.json", j.dump(2) + "\n");
  return b;
}

// Writes every file of the bundle into `dir` (created if missing).
inline void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), "emit_report: cannot create " + dir.string());
  for (const auto& f : bundle.files) {
    std::ofstream out(dir / f.name, std::ios::binary);
    require(static_cast<bool>(out), "emit_report: cannot write " + (dir / f.name).string());
    out << f.contents;
    require(static_cast<bool>(out), "emit_report: write failed for " + (dir / f.name).string());
  }
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string run_id(const std::string& command, const Json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(command + "\n" + config.dump())));
  return command + "-" + buf;
}

}  // namespace twohop
