// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Machine-readable reports. Every report type converts to and from JSON
// without loss; keys are emitted in a fixed order so identical runs give
// identical bytes.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "carmen/engine.hpp"
#include "carmen/error.hpp"
#include "carmen/fxp.hpp"

namespace carmen {

using Json = nlohmann::ordered_json;

inline FxPFormat parse_format(const std::string& s) {
  int w = 0;
  int f = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "Q%d.%d%c", &w, &f, &tail) != 2) {
    throw ContractViolation("bad format string '" + s + "'");
  }
  FxPFormat fmt{w, f};
  require_valid(fmt);
  return fmt;
}

/// Everything needed to re-run a command; echoed into its report. The
/// worker count is deliberately absent (it never changes results).
struct RunConfig {
  std::string model;
  std::string weights;
  std::string input;
  std::string labels;  // empty: accuracy is scored against the oracle's top-1
  std::string calib;   // empty: the input batch calibrates itself
  int precision = 16;
  std::string mode = "accurate";
  std::optional<double> tau;
  int iters_accurate = 16;
  int iters_approx = 11;
  int iters_af = 16;
  int num_pes = 64;
  int bank_depth = 32;
  int bank_refill_cycles = 1;
  std::string metric = "relative-l1";
  std::optional<std::size_t> limit;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct PolicyReport {
  std::string source;  // manual | auto
  std::optional<double> tau;
  std::vector<std::string> layer_ids;
  std::vector<std::string> modes;
  std::vector<double> sensitivities;  // empty for manual policies

  friend bool operator==(const PolicyReport&, const PolicyReport&) = default;
};

struct AccuracyReport {
  std::string reference;  // labels | oracle
  double top1_fxp = 0.0;
  double top1_oracle = 0.0;
  double delta = 0.0;  // top1_oracle - top1_fxp

  friend bool operator==(const AccuracyReport&, const AccuracyReport&) = default;
};

/// MAC cycles of one inference under each policy; `total` is the engine's
/// total over the whole batch.
struct CycleReport {
  std::int64_t accurate = 0;
  std::int64_t approximate = 0;
  std::int64_t policy = 0;
  double reduction_pct = 0.0;         // approximate vs accurate
  double policy_reduction_pct = 0.0;  // policy vs accurate
  std::int64_t total = 0;

  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

struct StatsReport {
  std::int64_t samples = 0;
  std::int64_t total_cycles = 0;
  std::int64_t mac_cycles = 0;
  std::int64_t af_cycles = 0;
  double af_op_fraction = 0.0;
  double af_cycle_fraction = 0.0;
  double pe_utilization = 0.0;
  std::int64_t saturation_count = 0;
  int peak_bank_occupancy = 0;
  std::vector<LayerStats> layers;

  friend bool operator==(const StatsReport&, const StatsReport&) = default;
};

struct LayerFormatReport {
  std::string id;
  LayerFormats formats;

  friend bool operator==(const LayerFormatReport& a, const LayerFormatReport& b) {
    const auto& x = a.formats;
    const auto& y = b.formats;
    return a.id == b.id && x.weight == y.weight && x.bias == y.bias &&
           x.preact == y.preact && x.act == y.act &&
           x.norm_scale == y.norm_scale && x.norm_shift == y.norm_shift &&
           x.out == y.out;
  }
};

struct RunReport {
  std::string command = "run";
  RunConfig config;
  std::string model_name;
  std::vector<std::size_t> layer_widths;
  FxPFormat input_format;
  std::vector<LayerFormatReport> formats;
  PolicyReport policy;
  AccuracyReport accuracy;
  CycleReport cycles;
  StatsReport stats;
  std::vector<std::pair<std::string, double>> max_af_error;
  double max_output_error = 0.0;
  double mean_output_error = 0.0;
  std::vector<double> sample_max_error;
  std::string output_digest;
  std::vector<std::vector<std::int64_t>> outputs_raw;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

struct SweepCell {
  int precision = 16;
  int depth = 16;
  AccuracyReport accuracy;
  std::int64_t mac_cycles = 0;  // one inference
  std::int64_t total_cycles = 0;
  double max_output_error = 0.0;
  double mean_output_error = 0.0;
  std::string output_digest;
  std::vector<double> sample_max_error;

  friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

/// Share of samples whose max output error never grows with depth.
struct MonotoneReport {
  int precision = 16;
  std::vector<int> depths;
  std::size_t samples = 0;
  std::size_t monotone = 0;
  double fraction = 0.0;
  std::size_t accuracy_drops = 0;  // adjacent depths where top-1 fell

  friend bool operator==(const MonotoneReport&, const MonotoneReport&) = default;
};

struct SweepReport {
  std::string command = "sweep";
  RunConfig config;
  std::vector<int> precisions;
  std::vector<int> depths;
  std::vector<SweepCell> cells;
  std::vector<MonotoneReport> monotone;

  friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

struct RankedLayer {
  std::string id;
  std::size_t index = 0;
  double sensitivity = 0.0;

  friend bool operator==(const RankedLayer&, const RankedLayer&) = default;
};

struct TauStep {
  double tau = 0.0;
  std::vector<std::string> approximate;

  friend bool operator==(const TauStep&, const TauStep&) = default;
};

struct ProfileReport {
  std::string command = "profile";
  RunConfig config;
  std::size_t calib_samples = 0;
  std::vector<RankedLayer> ranked;  // descending sensitivity
  std::optional<PolicyReport> policy;
  std::vector<TauStep> tau_sweep;

  friend bool operator==(const ProfileReport&, const ProfileReport&) = default;
};

// ---------------------------------------------------------------------------
// JSON conversion.

namespace detail {

template <class T>
void get_opt(const Json& j, const char* key, std::optional<T>& v) {
  if (j.contains(key) && !j.at(key).is_null()) {
    v = j.at(key).get<T>();
  } else {
    v.reset();
  }
}

template <class T>
void put_opt(Json& j, const char* key, const std::optional<T>& v) {
  if (v) {
    j[key] = *v;
  } else {
    j[key] = nullptr;
  }
}

// JSON has no infinity; tau = +inf is written as the string "inf".
inline void put_tau(Json& j, const std::optional<double>& tau) {
  if (tau && std::isinf(*tau)) {
    j["tau"] = "inf";
  } else {
    put_opt(j, "tau", tau);
  }
}

inline void get_tau(const Json& j, std::optional<double>& tau) {
  if (j.contains("tau") && j.at("tau").is_string()) {
    if (j.at("tau").get<std::string>() != "inf") {
      throw ContractViolation("tau must be a number or \"inf\"");
    }
    tau = std::numeric_limits<double>::infinity();
  } else {
    get_opt(j, "tau", tau);
  }
}

}  // namespace detail

inline void to_json(Json& j, const FxPFormat& f) { j = f.to_string(); }
inline void from_json(const Json& j, FxPFormat& f) { f = parse_format(j.get<std::string>()); }

inline void to_json(Json& j, const RunConfig& c) {
  j = Json::object();
  j["model"] = c.model;
  j["weights"] = c.weights;
  j["input"] = c.input;
  j["labels"] = c.labels;
  j["calib"] = c.calib;
  j["precision"] = c.precision;
  j["mode"] = c.mode;
  detail::put_tau(j, c.tau);
  j["iters_accurate"] = c.iters_accurate;
  j["iters_approx"] = c.iters_approx;
  j["iters_af"] = c.iters_af;
  j["num_pes"] = c.num_pes;
  j["bank_depth"] = c.bank_depth;
  j["bank_refill_cycles"] = c.bank_refill_cycles;
  j["metric"] = c.metric;
  detail::put_opt(j, "limit", c.limit);
}

inline void from_json(const Json& j, RunConfig& c) {
  j.at("model").get_to(c.model);
  j.at("weights").get_to(c.weights);
  j.at("input").get_to(c.input);
  j.at("labels").get_to(c.labels);
  j.at("calib").get_to(c.calib);
  j.at("precision").get_to(c.precision);
  j.at("mode").get_to(c.mode);
  detail::get_tau(j, c.tau);
  j.at("iters_accurate").get_to(c.iters_accurate);
  j.at("iters_approx").get_to(c.iters_approx);
  j.at("iters_af").get_to(c.iters_af);
  j.at("num_pes").get_to(c.num_pes);
  j.at("bank_depth").get_to(c.bank_depth);
  j.at("bank_refill_cycles").get_to(c.bank_refill_cycles);
  j.at("metric").get_to(c.metric);
  detail::get_opt(j, "limit", c.limit);
}

inline void to_json(Json& j, const PolicyReport& p) {
  j = Json::object();
  j["source"] = p.source;
  detail::put_tau(j, p.tau);
  j["layer_ids"] = p.layer_ids;
  j["modes"] = p.modes;
  j["sensitivities"] = p.sensitivities;
}

inline void from_json(const Json& j, PolicyReport& p) {
  j.at("source").get_to(p.source);
  detail::get_tau(j, p.tau);
  j.at("layer_ids").get_to(p.layer_ids);
  j.at("modes").get_to(p.modes);
  j.at("sensitivities").get_to(p.sensitivities);
}

inline void to_json(Json& j, const AccuracyReport& a) {
  j = Json::object();
  j["reference"] = a.reference;
  j["top1_fxp"] = a.top1_fxp;
  j["top1_oracle"] = a.top1_oracle;
  j["delta"] = a.delta;
}

inline void from_json(const Json& j, AccuracyReport& a) {
  j.at("reference").get_to(a.reference);
  j.at("top1_fxp").get_to(a.top1_fxp);
  j.at("top1_oracle").get_to(a.top1_oracle);
  j.at("delta").get_to(a.delta);
}

inline void to_json(Json& j, const CycleReport& c) {
  j = Json::object();
  j["accurate"] = c.accurate;
  j["approximate"] = c.approximate;
  j["policy"] = c.policy;
  j["reduction_pct"] = c.reduction_pct;
  j["policy_reduction_pct"] = c.policy_reduction_pct;
  j["total"] = c.total;
}

inline void from_json(const Json& j, CycleReport& c) {
  j.at("accurate").get_to(c.accurate);
  j.at("approximate").get_to(c.approximate);
  j.at("policy").get_to(c.policy);
  j.at("reduction_pct").get_to(c.reduction_pct);
  j.at("policy_reduction_pct").get_to(c.policy_reduction_pct);
  j.at("total").get_to(c.total);
}

inline void to_json(Json& j, const LayerStats& s) {
  j = Json::object();
  j["id"] = s.layer_id;
  j["mode"] = std::string(to_string(s.mode));
  j["depth"] = s.depth;
  j["mac_cycles"] = s.mac_cycles;
  j["bank_cycles"] = s.bank_cycles;
  j["af_cycles"] = s.af_cycles;
  j["pool_cycles"] = s.pool_cycles;
  j["norm_cycles"] = s.norm_cycles;
  j["total_cycles"] = s.total_cycles;
  j["busy_pe_cycles"] = s.busy_pe_cycles;
  j["mac_ops"] = s.mac_ops;
  j["af_ops"] = s.af_ops;
  j["saturations"] = s.saturations;
}

inline void from_json(const Json& j, LayerStats& s) {
  j.at("id").get_to(s.layer_id);
  s.mode = parse_mac_kind(j.at("mode").get<std::string>());
  j.at("depth").get_to(s.depth);
  j.at("mac_cycles").get_to(s.mac_cycles);
  j.at("bank_cycles").get_to(s.bank_cycles);
  j.at("af_cycles").get_to(s.af_cycles);
  j.at("pool_cycles").get_to(s.pool_cycles);
  j.at("norm_cycles").get_to(s.norm_cycles);
  j.at("total_cycles").get_to(s.total_cycles);
  j.at("busy_pe_cycles").get_to(s.busy_pe_cycles);
  j.at("mac_ops").get_to(s.mac_ops);
  j.at("af_ops").get_to(s.af_ops);
  j.at("saturations").get_to(s.saturations);
}

inline void to_json(Json& j, const StatsReport& s) {
  j = Json::object();
  j["samples"] = s.samples;
  j["total_cycles"] = s.total_cycles;
  j["mac_cycles"] = s.mac_cycles;
  j["af_cycles"] = s.af_cycles;
  j["af_op_fraction"] = s.af_op_fraction;
  j["af_cycle_fraction"] = s.af_cycle_fraction;
  j["pe_utilization"] = s.pe_utilization;
  j["saturation_count"] = s.saturation_count;
  j["peak_bank_occupancy"] = s.peak_bank_occupancy;
  j["layers"] = s.layers;
}

inline void from_json(const Json& j, StatsReport& s) {
  j.at("samples").get_to(s.samples);
  j.at("total_cycles").get_to(s.total_cycles);
  j.at("mac_cycles").get_to(s.mac_cycles);
  j.at("af_cycles").get_to(s.af_cycles);
  j.at("af_op_fraction").get_to(s.af_op_fraction);
  j.at("af_cycle_fraction").get_to(s.af_cycle_fraction);
  j.at("pe_utilization").get_to(s.pe_utilization);
  j.at("saturation_count").get_to(s.saturation_count);
  j.at("peak_bank_occupancy").get_to(s.peak_bank_occupancy);
  j.at("layers").get_to(s.layers);
}

inline StatsReport stats_report(const RunStats& st) {
  StatsReport r;
  r.samples = st.samples;
  r.total_cycles = st.total_cycles;
  r.mac_cycles = st.mac_cycles;
  r.af_cycles = st.af_cycles;
  r.af_op_fraction = st.af_op_fraction();
  r.af_cycle_fraction = st.af_cycle_fraction();
  r.pe_utilization = st.pe_utilization();
  r.saturation_count = st.saturation_count;
  r.peak_bank_occupancy = st.peak_bank_occupancy;
  r.layers = st.layers;
  return r;
}

inline void to_json(Json& j, const LayerFormatReport& l) {
  j = Json::object();
  j["id"] = l.id;
  j["weight"] = l.formats.weight;
  j["bias"] = l.formats.bias;
  j["preact"] = l.formats.preact;
  j["act"] = l.formats.act;
  j["norm_scale"] = l.formats.norm_scale;
  j["norm_shift"] = l.formats.norm_shift;
  j["out"] = l.formats.out;
}

inline void from_json(const Json& j, LayerFormatReport& l) {
  j.at("id").get_to(l.id);
  j.at("weight").get_to(l.formats.weight);
  j.at("bias").get_to(l.formats.bias);
  j.at("preact").get_to(l.formats.preact);
  j.at("act").get_to(l.formats.act);
  j.at("norm_scale").get_to(l.formats.norm_scale);
  j.at("norm_shift").get_to(l.formats.norm_shift);
  j.at("out").get_to(l.formats.out);
}

inline void to_json(Json& j, const RunReport& r) {
  j = Json::object();
  j["command"] = r.command;
  j["config"] = r.config;
  j["model"] = {{"name", r.model_name},
                {"layer_widths", r.layer_widths},
                {"input_format", r.input_format},
                {"formats", r.formats}};
  j["policy"] = r.policy;
  j["accuracy"] = r.accuracy;
  j["cycles"] = r.cycles;
  j["stats"] = r.stats;
  Json af = Json::object();
  for (const auto& [k, v] : r.max_af_error) af[k] = v;
  j["max_af_error"] = af;
  j["output_error"] = {{"max", r.max_output_error},
                       {"mean", r.mean_output_error},
                       {"per_sample", r.sample_max_error}};
  j["outputs"] = {{"digest", r.output_digest}, {"raw", r.outputs_raw}};
}

inline void from_json(const Json& j, RunReport& r) {
  j.at("command").get_to(r.command);
  j.at("config").get_to(r.config);
  const Json& m = j.at("model");
  m.at("name").get_to(r.model_name);
  m.at("layer_widths").get_to(r.layer_widths);
  m.at("input_format").get_to(r.input_format);
  m.at("formats").get_to(r.formats);
  j.at("policy").get_to(r.policy);
  j.at("accuracy").get_to(r.accuracy);
  j.at("cycles").get_to(r.cycles);
  j.at("stats").get_to(r.stats);
  r.max_af_error.clear();
  for (const auto& [k, v] : j.at("max_af_error").items()) {
    r.max_af_error.emplace_back(k, v.get<double>());
  }
  const Json& e = j.at("output_error");
  e.at("max").get_to(r.max_output_error);
  e.at("mean").get_to(r.mean_output_error);
  e.at("per_sample").get_to(r.sample_max_error);
  j.at("outputs").at("digest").get_to(r.output_digest);
  j.at("outputs").at("raw").get_to(r.outputs_raw);
}

inline void to_json(Json& j, const SweepCell& c) {
  j = Json::object();
  j["precision"] = c.precision;
  j["depth"] = c.depth;
  j["accuracy"] = c.accuracy;
  j["mac_cycles"] = c.mac_cycles;
  j["total_cycles"] = c.total_cycles;
  j["max_output_error"] = c.max_output_error;
  j["mean_output_error"] = c.mean_output_error;
  j["output_digest"] = c.output_digest;
  j["sample_max_error"] = c.sample_max_error;
}

inline void from_json(const Json& j, SweepCell& c) {
  j.at("precision").get_to(c.precision);
  j.at("depth").get_to(c.depth);
  j.at("accuracy").get_to(c.accuracy);
  j.at("mac_cycles").get_to(c.mac_cycles);
  j.at("total_cycles").get_to(c.total_cycles);
  j.at("max_output_error").get_to(c.max_output_error);
  j.at("mean_output_error").get_to(c.mean_output_error);
  j.at("output_digest").get_to(c.output_digest);
  j.at("sample_max_error").get_to(c.sample_max_error);
}

inline void to_json(Json& j, const MonotoneReport& m) {
  j = Json::object();
  j["precision"] = m.precision;
  j["depths"] = m.depths;
  j["samples"] = m.samples;
  j["monotone"] = m.monotone;
  j["fraction"] = m.fraction;
  j["accuracy_drops"] = m.accuracy_drops;
}

inline void from_json(const Json& j, MonotoneReport& m) {
  j.at("precision").get_to(m.precision);
  j.at("depths").get_to(m.depths);
  j.at("samples").get_to(m.samples);
  j.at("monotone").get_to(m.monotone);
  j.at("fraction").get_to(m.fraction);
  j.at("accuracy_drops").get_to(m.accuracy_drops);
}

inline void to_json(Json& j, const SweepReport& r) {
  j = Json::object();
  j["command"] = r.command;
  j["config"] = r.config;
  j["precisions"] = r.precisions;
  j["depths"] = r.depths;
  j["monotone"] = r.monotone;
  j["cells"] = r.cells;
}

inline void from_json(const Json& j, SweepReport& r) {
  j.at("command").get_to(r.command);
  j.at("config").get_to(r.config);
  j.at("precisions").get_to(r.precisions);
  j.at("depths").get_to(r.depths);
  j.at("monotone").get_to(r.monotone);
  j.at("cells").get_to(r.cells);
}

inline void to_json(Json& j, const RankedLayer& l) {
  j = Json::object();
  j["id"] = l.id;
  j["index"] = l.index;
  j["sensitivity"] = l.sensitivity;
}

inline void from_json(const Json& j, RankedLayer& l) {
  j.at("id").get_to(l.id);
  j.at("index").get_to(l.index);
  j.at("sensitivity").get_to(l.sensitivity);
}

inline void to_json(Json& j, const TauStep& t) {
  j = Json::object();
  j["tau"] = t.tau;
  j["approximate"] = t.approximate;
}

inline void from_json(const Json& j, TauStep& t) {
  j.at("tau").get_to(t.tau);
  j.at("approximate").get_to(t.approximate);
}

inline void to_json(Json& j, const ProfileReport& r) {
  j = Json::object();
  j["command"] = r.command;
  j["config"] = r.config;
  j["calib_samples"] = r.calib_samples;
  j["ranked"] = r.ranked;
  detail::put_opt(j, "policy", r.policy);
  j["tau_sweep"] = r.tau_sweep;
}

inline void from_json(const Json& j, ProfileReport& r) {
  j.at("command").get_to(r.command);
  j.at("config").get_to(r.config);
  j.at("calib_samples").get_to(r.calib_samples);
  j.at("ranked").get_to(r.ranked);
  detail::get_opt(j, "policy", r.policy);
  j.at("tau_sweep").get_to(r.tau_sweep);
}

/// 64-bit FNV-1a over the little-endian bytes of every row length and raw
/// output word.
inline std::string output_digest(const std::vector<std::vector<std::int64_t>>& raw) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t u) {
    for (int b = 0; b < 8; ++b) {
      h ^= (u >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& row : raw) {
    mix(row.size());
    for (std::int64_t v : row) mix(static_cast<std::uint64_t>(v));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Writes `j` to `path` via a temporary file and a rename, so a report on
/// disk is always complete.
inline void write_json_file(const std::string& path, const Json& j) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write report '" + tmp.string() + "'");
    f << j.dump(2) << '\n';
    f.flush();
    if (!f) throw IoError("short write on '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot write report '" + path + "'");
  }
}

inline Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace carmen
