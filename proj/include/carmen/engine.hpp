// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Vector-engine simulator. Dot products spread round-robin over the PE
// array; each PE streams its operands through a 32-deep kernel bank. The
// single AFU and the pooling/normalization units are time-multiplexed, so
// their cycles add up serially.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "carmen/afu.hpp"
#include "carmen/error.hpp"
#include "carmen/fxp.hpp"
#include "carmen/mac.hpp"
#include "carmen/model_io.hpp"
#include "carmen/peripherals.hpp"

namespace carmen {

enum class SensitivityMetric { relative_l1, top1_flip };

inline std::string_view to_string(SensitivityMetric m) {
  return m == SensitivityMetric::relative_l1 ? "relative-l1" : "top1-flip";
}

inline SensitivityMetric parse_sensitivity_metric(std::string_view s) {
  if (s == "relative-l1" || s == "l1") return SensitivityMetric::relative_l1;
  if (s == "top1-flip" || s == "flip") return SensitivityMetric::top1_flip;
  throw ContractViolation("unknown sensitivity metric '" + std::string(s) + "'");
}

struct EngineConfig {
  int num_pes = 64;
  int bank_depth = 32;
  int width = 16;
  MacMode mac = MacMode::defaults({16, 8});
  int af_depth = 16;
  int bank_refill_cycles = 1;
  SensitivityMetric metric = SensitivityMetric::relative_l1;
  int threads = 1;

  /// Default depths for an engine of the given width.
  static EngineConfig for_width(int width) {
    EngineConfig c;
    c.width = width;
    c.mac = MacMode::defaults({width, 0});
    c.af_depth = width;
    return c;
  }

  void validate() const {
    if (num_pes < 1) throw ContractViolation("num_pes must be at least 1");
    if (bank_depth < 1) throw ContractViolation("bank_depth must be at least 1");
    if (width != 8 && width != 16) {
      throw ContractViolation("engine width must be 8 or 16, got " +
                              std::to_string(width));
    }
    if (af_depth < 1 || af_depth > kMaxDepth) {
      throw ContractViolation("AF depth must be in [1, " +
                              std::to_string(kMaxDepth) + "]");
    }
    if (bank_refill_cycles < 0) {
      throw ContractViolation("bank refill cost must be non-negative");
    }
    if (threads < 1) throw ContractViolation("threads must be at least 1");
    mac.validate();
  }
};

enum class PolicySource { manual, automatic };

struct ModePolicy {
  std::vector<std::string> layer_ids;
  std::vector<MacKind> modes;
  PolicySource source = PolicySource::manual;
  double tau = 0.0;

  static ModePolicy uniform(const Model& model, MacKind kind) {
    ModePolicy p;
    for (const LayerSpec& l : model.layers) {
      p.layer_ids.push_back(l.id);
      p.modes.push_back(kind);
    }
    return p;
  }

  /// Manifest hints where present, `fallback` elsewhere.
  static ModePolicy from_hints(const Model& model, MacKind fallback) {
    ModePolicy p;
    for (const LayerSpec& l : model.layers) {
      p.layer_ids.push_back(l.id);
      p.modes.push_back(l.mode_hint.value_or(fallback));
    }
    return p;
  }

  std::size_t approximate_count() const {
    return static_cast<std::size_t>(
        std::count(modes.begin(), modes.end(), MacKind::approximate));
  }
};

struct LayerPlan {
  std::string layer_id;
  MacKind mode = MacKind::accurate;
  int depth = 0;
  std::int64_t dots = 0;        // output neurons or output pixels
  std::int64_t dot_length = 0;  // weight/activation pairs per dot
  std::int64_t waves = 0;       // ceil(dots / num_pes)
  std::int64_t tiles = 0;       // bank fills per dot, ceil(dot_length / bank_depth)
  std::int64_t bank_fills = 0;  // total over all PEs
  std::int64_t mac_cycles = 0;
  std::int64_t bank_cycles = 0;
  std::int64_t busy_pe_cycles = 0;
  int bank_occupancy = 0;       // peak entries resident in one bank

  /// PE that computes dot i.
  int pe_of(std::int64_t i, int num_pes) const {
    return static_cast<int>(i % num_pes);
  }
};

/// Static schedule for one layer. MAC time is one wave of parallel dots per
/// ceil(dots / num_pes), each dot taking dot_length * depth cycles.
inline LayerPlan schedule_layer(const LayerSpec& layer, const EngineConfig& cfg,
                                MacKind mode) {
  if (cfg.num_pes < 1 || cfg.bank_depth < 1) {
    throw ContractViolation("schedule_layer: num_pes and bank_depth must be positive");
  }
  LayerPlan p;
  p.layer_id = layer.id;
  p.mode = mode;
  p.depth = cfg.mac.with_kind(mode).depth();
  p.dots = static_cast<std::int64_t>(layer.dot_count());
  p.dot_length = static_cast<std::int64_t>(layer.dot_length());
  if (p.dots < 1 || p.dot_length < 1) {
    throw ContractViolation("schedule_layer: layer '" + layer.id +
                            "' has non-positive dimensions");
  }
  p.waves = (p.dots + cfg.num_pes - 1) / cfg.num_pes;
  p.tiles = (p.dot_length + cfg.bank_depth - 1) / cfg.bank_depth;
  p.bank_fills = p.dots * p.tiles;
  p.mac_cycles = p.waves * p.dot_length * p.depth;
  p.bank_cycles = p.waves * p.tiles * cfg.bank_refill_cycles;
  p.busy_pe_cycles = p.dots * p.dot_length * p.depth;
  p.bank_occupancy =
      static_cast<int>(std::min<std::int64_t>(p.dot_length, cfg.bank_depth));
  return p;
}

inline constexpr std::size_t kAfKindCount = kAllAfKinds.size();

struct LayerStats {
  std::string layer_id;
  MacKind mode = MacKind::accurate;
  int depth = 0;
  std::int64_t mac_cycles = 0;
  std::int64_t bank_cycles = 0;
  std::int64_t af_cycles = 0;
  std::int64_t pool_cycles = 0;
  std::int64_t norm_cycles = 0;
  std::int64_t total_cycles = 0;
  std::int64_t busy_pe_cycles = 0;
  std::int64_t mac_ops = 0;
  std::int64_t af_ops = 0;
  std::int64_t saturations = 0;

  void add(const LayerStats& o) {
    mac_cycles += o.mac_cycles;
    bank_cycles += o.bank_cycles;
    af_cycles += o.af_cycles;
    pool_cycles += o.pool_cycles;
    norm_cycles += o.norm_cycles;
    total_cycles += o.total_cycles;
    busy_pe_cycles += o.busy_pe_cycles;
    mac_ops += o.mac_ops;
    af_ops += o.af_ops;
    saturations += o.saturations;
  }
  friend bool operator==(const LayerStats&, const LayerStats&) = default;
};

/// Counters for one inference or, summed, for a batch.
struct RunStats {
  std::int64_t samples = 0;
  int num_pes = 1;
  std::vector<LayerStats> layers;
  std::int64_t total_cycles = 0;
  std::int64_t mac_cycles = 0;
  std::int64_t af_cycles = 0;
  std::int64_t mac_ops = 0;
  std::int64_t af_ops = 0;
  std::int64_t busy_pe_cycles = 0;
  std::int64_t saturation_count = 0;
  int peak_bank_occupancy = 0;
  // Largest |AFU output - exact AF of the dequantized AFU input| per kind.
  std::array<std::optional<double>, kAfKindCount> max_af_error{};

  double af_op_fraction() const {
    const std::int64_t ops = mac_ops + af_ops;
    return ops == 0 ? 0.0 : static_cast<double>(af_ops) / static_cast<double>(ops);
  }
  double af_cycle_fraction() const {
    return total_cycles == 0
               ? 0.0
               : static_cast<double>(af_cycles) / static_cast<double>(total_cycles);
  }
  double pe_utilization() const {
    return total_cycles == 0
               ? 0.0
               : static_cast<double>(busy_pe_cycles) /
                     (static_cast<double>(num_pes) * static_cast<double>(total_cycles));
  }

  void note_af_error(AfKind k, double e) {
    auto& slot = max_af_error[static_cast<std::size_t>(k)];
    slot = std::max(slot.value_or(0.0), e);
  }

  void add(const RunStats& o) {
    if (layers.empty()) {
      layers = o.layers;
    } else {
      for (std::size_t i = 0; i < layers.size(); ++i) layers[i].add(o.layers[i]);
    }
    samples += o.samples;
    num_pes = o.num_pes;
    total_cycles += o.total_cycles;
    mac_cycles += o.mac_cycles;
    af_cycles += o.af_cycles;
    mac_ops += o.mac_ops;
    af_ops += o.af_ops;
    busy_pe_cycles += o.busy_pe_cycles;
    saturation_count += o.saturation_count;
    peak_bank_occupancy = std::max(peak_bank_occupancy, o.peak_bank_occupancy);
    for (std::size_t k = 0; k < kAfKindCount; ++k) {
      if (o.max_af_error[k]) note_af_error(kAllAfKinds[k], *o.max_af_error[k]);
    }
  }
};

struct RunResult {
  std::vector<FxPWord> output;
  RunStats stats;

  std::vector<double> values() const {
    std::vector<double> v;
    v.reserve(output.size());
    for (const FxPWord& w : output) v.push_back(w.value());
    return v;
  }
};

namespace detail {

inline void require_runnable(const Model& model, const ModePolicy& policy,
                             const EngineConfig& cfg) {
  if (!model.is_quantized()) {
    throw ContractViolation("model must be calibrated before it can run");
  }
  if (model.width != cfg.width) {
    throw ContractViolation("model calibrated for width " +
                            std::to_string(model.width) + ", engine runs " +
                            std::to_string(cfg.width));
  }
  if (policy.modes.size() != model.layers.size()) {
    throw ContractViolation("policy covers " + std::to_string(policy.modes.size()) +
                            " layers, model has " +
                            std::to_string(model.layers.size()));
  }
  cfg.validate();
}

// im2col patch for output pixel (oy, ox); padding taps read zero.
inline void gather_patch(std::span<const FxPWord> in, const Shape& s,
                         const ConvGeometry& g, int oy, int ox,
                         const FxPFormat& fmt, std::vector<FxPWord>& patch) {
  patch.clear();
  const FxPWord zero = FxPWord::zero(fmt);
  for (int ic = 0; ic < g.in_channels; ++ic) {
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        const int iy = oy * g.stride_h + ky - g.pad_h;
        const int ix = ox * g.stride_w + kx - g.pad_w;
        if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w) {
          patch.push_back(zero);
        } else {
          patch.push_back(in[(static_cast<std::size_t>(ic) * s.h + iy) * s.w + ix]);
        }
      }
    }
  }
}

inline double af_error(AfKind kind, std::span<const FxPWord> in,
                       std::span<const FxPWord> out) {
  std::vector<double> x;
  x.reserve(in.size());
  for (const FxPWord& w : in) x.push_back(w.value());
  const std::vector<double> ref = exact::apply(kind, x);
  double e = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    e = std::max(e, std::fabs(out[i].value() - ref[i]));
  }
  return e;
}

}  // namespace detail

/// One inference through MAC -> AF -> pool -> norm for every layer.
/// The returned output is the last layer's result in its calibrated format.
inline RunResult run_network(const Model& model, std::span<const double> input,
                             const ModePolicy& policy, const EngineConfig& cfg) {
  detail::require_runnable(model, policy, cfg);
  if (input.size() != model.input_shape.size()) {
    throw ModelError(ModelErrorCode::shape_mismatch,
                     "input has " + std::to_string(input.size()) +
                         " values, model expects " +
                         std::to_string(model.input_shape.size()),
                     0, model.layers.front().id);
  }

  RunResult res;
  RunStats& st = res.stats;
  st.samples = 1;
  st.num_pes = cfg.num_pes;

  std::vector<FxPWord> cur;
  cur.reserve(input.size());
  for (double v : input) {
    const Narrowed q = quantize_checked(v, model.input_format);
    if (q.saturated) ++st.saturation_count;
    cur.push_back(q.word);
  }

  std::vector<FxPWord> patch;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    const LayerFormats& f = model.formats[li];
    const QuantizedLayer& q = model.quantized[li];
    const MacKind kind = policy.modes[li];
    const MacMode mode = cfg.mac.with_kind(kind);
    const LayerPlan plan = schedule_layer(l, cfg, kind);

    LayerStats ls;
    ls.layer_id = l.id;
    ls.mode = kind;
    ls.depth = plan.depth;
    ls.mac_cycles = plan.mac_cycles;
    ls.bank_cycles = plan.bank_cycles;
    ls.mac_ops = plan.dots * plan.dot_length;

    // MAC stage.
    std::vector<FxPWord> pre;
    pre.reserve(static_cast<std::size_t>(plan.dots));
    const auto len = static_cast<std::size_t>(plan.dot_length);
    auto init_for = [&](std::size_t unit) {
      return q.bias.empty() ? FxPWord::zero(f.preact) : q.bias[unit];
    };
    std::int64_t busy = 0;
    if (l.kind == LayerKind::dense) {
      for (int o = 0; o < l.out_features; ++o) {
        const auto uo = static_cast<std::size_t>(o);
        const DotResult d =
            dot(std::span(q.weights).subspan(uo * len, len), cur, mode,
                f.preact, init_for(uo));
        pre.push_back(d.y);
        busy += d.cycles;
        ls.saturations += d.saturations;
      }
    } else {
      const Shape& os = l.mac_shape;
      for (int oc = 0; oc < os.c; ++oc) {
        const auto uc = static_cast<std::size_t>(oc);
        const auto wrow = std::span(q.weights).subspan(uc * len, len);
        for (int oy = 0; oy < os.h; ++oy) {
          for (int ox = 0; ox < os.w; ++ox) {
            detail::gather_patch(cur, l.in_shape, l.conv, oy, ox,
                                 cur.front().format(), patch);
            const DotResult d = dot(wrow, patch, mode, f.preact, init_for(uc));
            pre.push_back(d.y);
            busy += d.cycles;
            ls.saturations += d.saturations;
          }
        }
      }
    }
    if (busy != plan.busy_pe_cycles) {
      throw Error("internal: PE cycles " + std::to_string(busy) +
                  " disagree with the schedule (" +
                  std::to_string(plan.busy_pe_cycles) + ")");
    }
    ls.busy_pe_cycles = busy;

    // AF stage.
    const AfVectorResult a = apply(l.activation, pre, cfg.af_depth, f.act);
    ls.af_cycles = a.cycles;
    ls.af_ops = static_cast<std::int64_t>(pre.size());
    ls.saturations += a.saturations;
    st.note_af_error(l.activation, detail::af_error(l.activation, pre, a.y));
    cur = a.y;

    // Pooling.
    if (l.pool) {
      const PoolSpec& p = *l.pool;
      const Shape& s = l.mac_shape;
      const Shape& o = l.out_shape;
      std::vector<FxPWord> pooled;
      pooled.reserve(o.size());
      std::vector<FxPWord> win;
      for (int c = 0; c < o.c; ++c) {
        for (int y = 0; y < o.h; ++y) {
          for (int x = 0; x < o.w; ++x) {
            win.clear();
            for (int dy = 0; dy < p.window_h; ++dy) {
              for (int dx = 0; dx < p.window_w; ++dx) {
                win.push_back(cur[(static_cast<std::size_t>(c) * s.h +
                                   y * p.stride_h + dy) * s.w +
                                  x * p.stride_w + dx]);
              }
            }
            const PoolResult r = pool(win, p.kind);
            pooled.push_back(r.y);
            ls.pool_cycles += r.cycles;
            if (r.saturated) ++ls.saturations;
          }
        }
      }
      cur = std::move(pooled);
    }

    // Normalization, per channel.
    if (l.norm) {
      const std::size_t plane =
          static_cast<std::size_t>(l.out_shape.h) * l.out_shape.w;
      NormSpec spec;
      spec.scale.reserve(cur.size());
      spec.shift.reserve(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i) {
        spec.scale.push_back(q.norm.scale[i / plane]);
        spec.shift.push_back(q.norm.shift[i / plane]);
      }
      const NormResult r = normalize(cur, spec, mode, f.out);
      ls.norm_cycles = r.cycles;
      ls.saturations += r.saturations;
      cur = r.y;
    }

    ls.total_cycles = ls.mac_cycles + ls.bank_cycles + ls.af_cycles +
                      ls.pool_cycles + ls.norm_cycles;
    st.total_cycles += ls.total_cycles;
    st.mac_cycles += ls.mac_cycles;
    st.af_cycles += ls.af_cycles;
    st.mac_ops += ls.mac_ops;
    st.af_ops += ls.af_ops;
    st.busy_pe_cycles += ls.busy_pe_cycles;
    st.saturation_count += ls.saturations;
    st.peak_bank_occupancy = std::max(st.peak_bank_occupancy, plan.bank_occupancy);
    st.layers.push_back(std::move(ls));
  }
  res.output = std::move(cur);
  return res;
}

/// MAC cycles of one inference under `policy`; data independent.
inline std::int64_t planned_mac_cycles(const Model& model, const ModePolicy& policy,
                                       const EngineConfig& cfg) {
  if (policy.modes.size() != model.layers.size()) {
    throw ContractViolation("policy does not cover every layer");
  }
  std::int64_t total = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    total += schedule_layer(model.layers[i], cfg, policy.modes[i]).mac_cycles;
  }
  return total;
}

struct BatchResult {
  std::vector<RunResult> runs;
  RunStats stats;  // summed over samples in index order
};

/// Runs every sample; cfg.threads workers take contiguous slices. Results are
/// stored by index and summed afterwards, so they do not depend on the thread
/// count.
inline BatchResult run_batch(const Model& model,
                             std::span<const std::vector<double>> inputs,
                             const ModePolicy& policy, const EngineConfig& cfg) {
  detail::require_runnable(model, policy, cfg);
  BatchResult out;
  out.runs.resize(inputs.size());
  const std::size_t n = inputs.size();
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t t) {
    const std::size_t lo = n * t / workers;
    const std::size_t hi = n * (t + 1) / workers;
    try {
      for (std::size_t i = lo; i < hi; ++i) {
        out.runs[i] = run_network(model, inputs[i], policy, cfg);
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t);
    for (std::thread& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (const RunResult& r : out.runs) out.stats.add(r.stats);
  out.stats.num_pes = cfg.num_pes;
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

/// Per-layer sensitivity: the network runs with only layer l approximate and
/// its outputs are compared with the all-accurate run.
///
/// relative-l1: mean over inputs of |y_l - y_acc|_1 / (|y_acc|_1 + 1e-12).
/// top1-flip:   fraction of inputs whose arg-max changes.
inline std::vector<double> sensitivity_profile(
    const Model& model, std::span<const std::vector<double>> calib_inputs,
    const EngineConfig& cfg) {
  if (calib_inputs.empty()) {
    throw ContractViolation("sensitivity_profile needs at least one calibration input");
  }
  constexpr double kEps = 1e-12;
  const ModePolicy accurate = ModePolicy::uniform(model, MacKind::accurate);
  const BatchResult base = run_batch(model, calib_inputs, accurate, cfg);
  std::vector<std::vector<double>> ref;
  ref.reserve(base.runs.size());
  for (const RunResult& r : base.runs) ref.push_back(r.values());

  std::vector<double> sens;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    ModePolicy p = accurate;
    p.modes[l] = MacKind::approximate;
    const BatchResult b = run_batch(model, calib_inputs, p, cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < b.runs.size(); ++i) {
      const std::vector<double> y = b.runs[i].values();
      if (cfg.metric == SensitivityMetric::top1_flip) {
        s += argmax(y) != argmax(ref[i]) ? 1.0 : 0.0;
        continue;
      }
      double num = 0.0;
      double den = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        num += std::fabs(y[k] - ref[i][k]);
        den += std::fabs(ref[i][k]);
      }
      s += num / (den + kEps);
    }
    sens.push_back(s / static_cast<double>(b.runs.size()));
  }
  return sens;
}

/// s_l <= tau -> approximate, otherwise accurate. tau = +inf selects all.
inline ModePolicy select_modes(std::span<const double> sensitivities, double tau,
                               std::span<const std::string> layer_ids = {}) {
  if (std::isnan(tau) || tau < 0.0) {
    throw ContractViolation("select_modes: tau must be non-negative");
  }
  ModePolicy p;
  p.source = PolicySource::automatic;
  p.tau = tau;
  for (std::size_t i = 0; i < sensitivities.size(); ++i) {
    p.layer_ids.push_back(i < layer_ids.size() ? layer_ids[i]
                                               : "layer" + std::to_string(i));
    p.modes.push_back(sensitivities[i] <= tau ? MacKind::approximate
                                              : MacKind::accurate);
  }
  return p;
}

inline std::vector<std::string> layer_ids(const Model& model) {
  std::vector<std::string> ids;
  for (const LayerSpec& l : model.layers) ids.push_back(l.id);
  return ids;
}

}  // namespace carmen
