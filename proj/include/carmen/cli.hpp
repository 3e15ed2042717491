// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The run / sweep / profile commands behind tools/carmen. Flag parsing lives
// in the tool; everything here takes a resolved RunConfig so tests can drive
// the commands directly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "carmen/engine.hpp"
#include "carmen/error.hpp"
#include "carmen/model_io.hpp"
#include "carmen/report.hpp"

namespace carmen {

/// Bad flag combination or missing input; the tool prints usage and exits 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kDefaultCalibSamples = 64;

/// `--report` if given, else $CARMEN_REPORT_DIR/carmen-<command>.json, else
/// carmen-<command>.json in the working directory.
inline std::string default_report_path(const std::string& command,
                                       const std::string& flag_value = {}) {
  if (!flag_value.empty()) return flag_value;
  const std::string name = "carmen-" + command + ".json";
  if (const char* dir = std::getenv("CARMEN_REPORT_DIR"); dir && *dir) {
    return (std::filesystem::path(dir) / name).string();
  }
  return name;
}

/// Fills unset iteration depths from the precision: accurate = width,
/// approximate = ceil(2 * width / 3), AF = width.
inline void resolve_depths(RunConfig& c, std::optional<int> acc,
                           std::optional<int> approx, std::optional<int> af) {
  const FxPFormat f{c.precision, 0};
  c.iters_accurate = acc.value_or(iterations_for(MacKind::accurate, f));
  c.iters_approx = approx.value_or(iterations_for(MacKind::approximate, f));
  c.iters_af = af.value_or(c.precision);
}

inline int parse_precision(const std::string& s) {
  if (s == "fxp8" || s == "8") return 8;
  if (s == "fxp16" || s == "16") return 16;
  throw UsageError("--precision must be fxp8 or fxp16, got '" + s + "'");
}

inline EngineConfig engine_config(const RunConfig& c, int threads) {
  EngineConfig e;
  e.num_pes = c.num_pes;
  e.bank_depth = c.bank_depth;
  e.width = c.precision;
  e.mac = MacMode{MacKind::accurate, c.iters_accurate, c.iters_approx};
  e.af_depth = c.iters_af;
  e.bank_refill_cycles = c.bank_refill_cycles;
  e.threads = threads;
  try {
    e.metric = parse_sensitivity_metric(c.metric);
    e.validate();
  } catch (const ContractViolation& ex) {
    throw UsageError(ex.what());
  }
  return e;
}

/// Model plus data sets named by a RunConfig.
struct Workspace {
  Model model;
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;  // empty when no label file was given
  std::vector<std::vector<double>> calib;
};

namespace detail {

template <class Fn>
auto with_flag(const char* flag, const std::string& path, Fn&& fn) -> decltype(fn()) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  try {
    return fn();
  } catch (const IoError& e) {
    throw IoError(std::string(flag) + ": " + e.what());
  }
}

inline std::vector<std::vector<double>> load_samples(const char* flag,
                                                     const std::string& path,
                                                     const Model& m) {
  return with_flag(flag, path, [&] {
    const TensorFile t = read_tensor_file(path);
    if (t.sample_size() != m.input_shape.size()) {
      throw IoError(path + ": samples hold " + std::to_string(t.sample_size()) +
                    " values, model '" + m.name + "' expects " +
                    std::to_string(m.input_shape.size()));
    }
    return t.all_samples();
  });
}

}  // namespace detail

inline Workspace load_workspace(const RunConfig& c, bool need_input, bool need_calib) {
  Workspace ws;
  detail::with_flag("--model", c.model, [&] {
    if (c.weights.empty()) throw UsageError("--weights is required");
    ws.model = detail::with_flag("--weights", c.weights,
                                 [&] { return load_model_files(c.model, c.weights); });
    return 0;
  });
  if (need_input) {
    ws.inputs = detail::load_samples("--input", c.input, ws.model);
    if (c.limit && *c.limit < ws.inputs.size()) ws.inputs.resize(*c.limit);
    if (!c.labels.empty()) {
      ws.labels = detail::with_flag("--labels", c.labels,
                                    [&] { return read_labels(c.labels); });
      if (ws.labels.size() < ws.inputs.size()) {
        throw IoError("--labels: " + std::to_string(ws.labels.size()) +
                      " labels for " + std::to_string(ws.inputs.size()) + " inputs");
      }
      ws.labels.resize(ws.inputs.size());
    }
  }
  if (!c.calib.empty()) {
    ws.calib = detail::load_samples("--calib", c.calib, ws.model);
  } else if (need_calib) {
    throw UsageError("--calib is required");
  } else {
    const std::size_t n = std::min(ws.inputs.size(), kDefaultCalibSamples);
    ws.calib.assign(ws.inputs.begin(), ws.inputs.begin() + static_cast<long>(n));
  }
  if (ws.calib.empty()) throw UsageError("calibration set is empty");
  return ws;
}

inline PolicyReport policy_report(const ModePolicy& p,
                                  const std::vector<double>& sens = {}) {
  PolicyReport r;
  r.source = p.source == PolicySource::automatic ? "auto" : "manual";
  if (p.source == PolicySource::automatic) r.tau = p.tau;
  r.layer_ids = p.layer_ids;
  for (MacKind k : p.modes) r.modes.emplace_back(to_string(k));
  r.sensitivities = sens;
  return r;
}

/// The policy a config asks for; auto mode profiles the calibration set.
inline ModePolicy resolve_policy(const RunConfig& c, const Model& q,
                                 std::span<const std::vector<double>> calib,
                                 const EngineConfig& cfg,
                                 std::vector<double>* sens_out = nullptr) {
  if (c.mode == "accurate") return ModePolicy::uniform(q, MacKind::accurate);
  if (c.mode == "approx" || c.mode == "approximate") {
    return ModePolicy::uniform(q, MacKind::approximate);
  }
  if (c.mode == "auto") {
    if (!c.tau) throw UsageError("--mode auto needs --tau");
    const std::vector<double> s = sensitivity_profile(q, calib, cfg);
    if (sens_out) *sens_out = s;
    const std::vector<std::string> ids = layer_ids(q);
    return select_modes(s, *c.tau, ids);
  }
  throw UsageError("--mode must be accurate, approx or auto, got '" + c.mode + "'");
}

/// Scored outputs of one batch against the oracle.
struct BatchScore {
  AccuracyReport accuracy;
  std::vector<double> sample_max_error;
  double max_error = 0.0;
  double mean_error = 0.0;
  std::vector<std::vector<std::int64_t>> raw;
  std::string digest;
  std::size_t correct = 0;
};

inline BatchScore score_batch(const BatchResult& b,
                              const std::vector<std::vector<double>>& oracle,
                              const std::vector<int>& labels) {
  BatchScore s;
  const std::size_t n = b.runs.size();
  std::size_t oracle_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> y = b.runs[i].values();
    double e = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      e = std::max(e, std::fabs(y[k] - oracle[i][k]));
    }
    s.sample_max_error.push_back(e);
    s.max_error = std::max(s.max_error, e);
    s.mean_error += e;
    std::vector<std::int64_t> row;
    for (const FxPWord& w : b.runs[i].output) row.push_back(w.raw());
    s.raw.push_back(std::move(row));
    const std::size_t top = argmax(y);
    const std::size_t otop = argmax(oracle[i]);
    if (labels.empty()) {
      s.correct += top == otop;
      ++oracle_ok;
    } else {
      s.correct += static_cast<int>(top) == labels[i];
      oracle_ok += static_cast<int>(otop) == labels[i];
    }
  }
  const double dn = n == 0 ? 1.0 : static_cast<double>(n);
  s.mean_error /= dn;
  s.accuracy.reference = labels.empty() ? "oracle" : "labels";
  s.accuracy.top1_fxp = static_cast<double>(s.correct) / dn;
  s.accuracy.top1_oracle = static_cast<double>(oracle_ok) / dn;
  s.accuracy.delta = s.accuracy.top1_oracle - s.accuracy.top1_fxp;
  s.digest = output_digest(s.raw);
  return s;
}

inline std::vector<std::vector<double>> oracle_batch(
    const Model& m, const std::vector<std::vector<double>>& inputs) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(oracle_infer(m, x));
  return out;
}

inline double reduction_pct(std::int64_t base, std::int64_t reduced) {
  return base == 0 ? 0.0
                   : 100.0 * static_cast<double>(base - reduced) /
                         static_cast<double>(base);
}

inline RunReport execute_run(const RunConfig& c, int threads = 1) {
  const EngineConfig cfg = engine_config(c, threads);
  const Workspace ws = load_workspace(c, true, false);
  const Model q = calibrate_formats(ws.model, ws.calib, c.precision);
  std::vector<double> sens;
  const ModePolicy policy = resolve_policy(c, q, ws.calib, cfg, &sens);
  const BatchResult b = run_batch(q, ws.inputs, policy, cfg);
  const BatchScore s = score_batch(b, oracle_batch(ws.model, ws.inputs), ws.labels);

  RunReport r;
  r.config = c;
  r.model_name = q.name;
  r.layer_widths = q.layer_widths();
  r.input_format = q.input_format;
  for (std::size_t i = 0; i < q.layers.size(); ++i) {
    r.formats.push_back({q.layers[i].id, q.formats[i]});
  }
  r.policy = policy_report(policy, sens);
  r.accuracy = s.accuracy;
  r.cycles.accurate = planned_mac_cycles(q, ModePolicy::uniform(q, MacKind::accurate), cfg);
  r.cycles.approximate =
      planned_mac_cycles(q, ModePolicy::uniform(q, MacKind::approximate), cfg);
  r.cycles.policy = planned_mac_cycles(q, policy, cfg);
  r.cycles.reduction_pct = reduction_pct(r.cycles.accurate, r.cycles.approximate);
  r.cycles.policy_reduction_pct = reduction_pct(r.cycles.accurate, r.cycles.policy);
  r.cycles.total = b.stats.total_cycles;
  r.stats = stats_report(b.stats);
  for (std::size_t k = 0; k < kAfKindCount; ++k) {
    if (b.stats.max_af_error[k]) {
      r.max_af_error.emplace_back(std::string(to_string(kAllAfKinds[k])),
                                  *b.stats.max_af_error[k]);
    }
  }
  r.max_output_error = s.max_error;
  r.mean_output_error = s.mean_error;
  r.sample_max_error = s.sample_max_error;
  r.output_digest = s.digest;
  r.outputs_raw = s.raw;
  return r;
}

/// Depths for one sweep cell: accurate and AF loops both run `depth`
/// iterations; the approximate depth follows the usual 2/3 rule below it.
inline RunConfig sweep_cell_config(const RunConfig& base, int precision, int depth) {
  if (depth < 2 || depth > kMaxDepth) {
    throw UsageError("--depths entries must be in [2, " + std::to_string(kMaxDepth) +
                     "], got " + std::to_string(depth));
  }
  RunConfig c = base;
  c.precision = precision;
  c.iters_accurate = depth;
  c.iters_approx = std::min((2 * depth + 2) / 3, depth - 1);
  c.iters_af = depth;
  return c;
}

inline MonotoneReport monotone_report(int precision, const std::vector<const SweepCell*>& cells) {
  MonotoneReport m;
  m.precision = precision;
  if (cells.empty()) return m;
  m.samples = cells.front()->sample_max_error.size();
  for (const SweepCell* c : cells) m.depths.push_back(c->depth);
  for (std::size_t i = 0; i < m.samples; ++i) {
    bool ok = true;
    for (std::size_t d = 1; d < cells.size(); ++d) {
      ok = ok && cells[d]->sample_max_error[i] <= cells[d - 1]->sample_max_error[i];
    }
    m.monotone += ok;
  }
  m.fraction = m.samples == 0 ? 1.0 : static_cast<double>(m.monotone) /
                                          static_cast<double>(m.samples);
  const double one = m.samples == 0 ? 0.0 : 1.0 / static_cast<double>(m.samples);
  for (std::size_t d = 1; d < cells.size(); ++d) {
    // One flipped sample is within quantization noise.
    if (cells[d - 1]->accuracy.top1_fxp - cells[d]->accuracy.top1_fxp > one * 1.5) {
      ++m.accuracy_drops;
    }
  }
  return m;
}

inline SweepReport execute_sweep(const RunConfig& c, std::vector<int> precisions,
                                 std::vector<int> depths, int threads = 1) {
  if (precisions.empty() || depths.empty()) {
    throw UsageError("sweep grid is empty: give --depths and --precisions");
  }
  if (c.mode == "auto") throw UsageError("sweep runs --mode accurate or approx");
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
  for (int p : precisions) {
    if (p != 8 && p != 16) throw UsageError("--precisions entries must be fxp8 or fxp16");
  }
  for (int d : depths) sweep_cell_config(c, 16, d);

  const Workspace ws = load_workspace(c, true, false);
  const std::vector<std::vector<double>> oracle = oracle_batch(ws.model, ws.inputs);
  SweepReport r;
  r.config = c;
  r.precisions = precisions;
  r.depths = depths;
  for (int p : precisions) {
    const Model q = calibrate_formats(ws.model, ws.calib, p);
    for (int d : depths) {
      const RunConfig cc = sweep_cell_config(c, p, d);
      const EngineConfig cfg = engine_config(cc, threads);
      const ModePolicy policy = resolve_policy(cc, q, ws.calib, cfg);
      const BatchResult b = run_batch(q, ws.inputs, policy, cfg);
      const BatchScore s = score_batch(b, oracle, ws.labels);
      SweepCell cell;
      cell.precision = p;
      cell.depth = d;
      cell.accuracy = s.accuracy;
      cell.mac_cycles = planned_mac_cycles(q, policy, cfg);
      cell.total_cycles = b.stats.total_cycles;
      cell.max_output_error = s.max_error;
      cell.mean_output_error = s.mean_error;
      cell.output_digest = s.digest;
      cell.sample_max_error = s.sample_max_error;
      r.cells.push_back(std::move(cell));
    }
  }
  for (int p : precisions) {
    std::vector<const SweepCell*> row;
    for (const SweepCell& cell : r.cells) {
      if (cell.precision == p) row.push_back(&cell);
    }
    r.monotone.push_back(monotone_report(p, row));
  }
  return r;
}

inline ProfileReport execute_profile(const RunConfig& c, int threads = 1) {
  const EngineConfig cfg = engine_config(c, threads);
  const Workspace ws = load_workspace(c, false, true);
  const Model q = calibrate_formats(ws.model, ws.calib, c.precision);
  const std::vector<double> s = sensitivity_profile(q, ws.calib, cfg);
  const std::vector<std::string> ids = layer_ids(q);

  ProfileReport r;
  r.config = c;
  r.calib_samples = ws.calib.size();
  for (std::size_t i = 0; i < s.size(); ++i) r.ranked.push_back({ids[i], i, s[i]});
  std::stable_sort(r.ranked.begin(), r.ranked.end(),
                   [](const RankedLayer& a, const RankedLayer& b) {
                     return a.sensitivity > b.sensitivity;
                   });
  if (c.tau) r.policy = policy_report(select_modes(s, *c.tau, ids), s);
  std::set<double> taus(s.begin(), s.end());
  taus.insert(0.0);
  for (double t : taus) {
    TauStep step;
    step.tau = t;
    const ModePolicy p = select_modes(s, t, ids);
    for (std::size_t i = 0; i < p.modes.size(); ++i) {
      if (p.modes[i] == MacKind::approximate) step.approximate.push_back(ids[i]);
    }
    r.tau_sweep.push_back(std::move(step));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Text tables.

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

inline std::string lpad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace detail

inline void print_run(std::ostream& os, const RunReport& r) {
  using detail::fmt;
  using detail::lpad;
  using detail::pad;
  os << "model " << r.model_name << "  fxp" << r.config.precision << "  mode "
     << r.config.mode << "  samples " << r.stats.samples << "\n";
  os << lpad("layer", 12) << pad("mode", 12) << pad("depth", 6) << pad("mac", 10)
     << pad("bank", 8) << pad("af", 9) << pad("pool", 8) << pad("norm", 8)
     << pad("total", 11) << pad("sat", 6) << "\n";
  for (const LayerStats& l : r.stats.layers) {
    os << lpad(l.layer_id, 12) << pad(std::string(to_string(l.mode)), 12)
       << pad(std::to_string(l.depth), 6) << pad(std::to_string(l.mac_cycles), 10)
       << pad(std::to_string(l.bank_cycles), 8) << pad(std::to_string(l.af_cycles), 9)
       << pad(std::to_string(l.pool_cycles), 8) << pad(std::to_string(l.norm_cycles), 8)
       << pad(std::to_string(l.total_cycles), 11) << pad(std::to_string(l.saturations), 6)
       << "\n";
  }
  os << "top-1 fxp " << fmt("%.4f", r.accuracy.top1_fxp) << "  oracle "
     << fmt("%.4f", r.accuracy.top1_oracle) << "  delta "
     << fmt("%+.4f", r.accuracy.delta) << "  (vs " << r.accuracy.reference << ")\n";
  os << "mac cycles/inference: accurate " << r.cycles.accurate << ", approximate "
     << r.cycles.approximate << " (" << fmt("%.2f", r.cycles.reduction_pct)
     << "% fewer), policy " << r.cycles.policy << "\n";
  os << "af op share " << fmt("%.4f", r.stats.af_op_fraction) << ", af cycle share "
     << fmt("%.4f", r.stats.af_cycle_fraction) << ", pe utilization "
     << fmt("%.3f", r.stats.pe_utilization) << ", saturations "
     << r.stats.saturation_count << "\n";
  os << "max output error " << fmt("%.3g", r.max_output_error) << ", digest "
     << r.output_digest << "\n";
}

inline void print_sweep(std::ostream& os, const SweepReport& r) {
  using detail::fmt;
  using detail::pad;
  os << pad("prec", 6) << pad("depth", 7) << pad("top1", 9) << pad("delta", 9)
     << pad("mac cyc", 10) << pad("max err", 11) << pad("mean err", 11) << "\n";
  for (const SweepCell& c : r.cells) {
    os << pad("fxp" + std::to_string(c.precision), 6) << pad(std::to_string(c.depth), 7)
       << pad(fmt("%.4f", c.accuracy.top1_fxp), 9)
       << pad(fmt("%+.4f", c.accuracy.delta), 9) << pad(std::to_string(c.mac_cycles), 10)
       << pad(fmt("%.3g", c.max_output_error), 11)
       << pad(fmt("%.3g", c.mean_output_error), 11) << "\n";
  }
  for (const MonotoneReport& m : r.monotone) {
    os << "fxp" << m.precision << ": error non-increasing in depth for " << m.monotone
       << "/" << m.samples << " samples (" << fmt("%.2f", 100.0 * m.fraction)
       << "%), accuracy drops beyond one flip: " << m.accuracy_drops << "\n";
  }
}

inline void print_profile(std::ostream& os, const ProfileReport& r) {
  using detail::fmt;
  using detail::lpad;
  using detail::pad;
  os << "sensitivities over " << r.calib_samples << " calibration samples ("
     << r.config.metric << ")\n";
  for (const RankedLayer& l : r.ranked) {
    os << lpad(l.id, 12) << pad(fmt("%.6g", l.sensitivity), 14);
    if (r.policy) os << pad(r.policy->modes[l.index], 13);
    os << "\n";
  }
  if (r.policy) os << "tau " << fmt("%g", *r.policy->tau) << "\n";
}

}  // namespace carmen
