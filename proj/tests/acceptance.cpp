// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. One PASS/FAIL line per criterion; exits nonzero if any
// criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "carmen/carmen.hpp"

using namespace carmen;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string data(const std::string& rel) { return std::string(CARMEN_DATA_DIR) + "/" + rel; }

int worker_count() {
  return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1U, 16U));
}

struct Mnist {
  Model raw;
  std::vector<std::vector<double>> test;
  std::vector<std::vector<double>> calib;
  std::vector<int> labels;
  std::vector<std::vector<double>> oracle;
  double oracle_acc = 0.0;
};

const Mnist& mnist() {
  static const Mnist m = [] {
    Mnist x;
    x.raw = load_model_files(data("mnist196/model.json"), data("mnist196/weights.bin"));
    x.test = read_tensor_file(data("mnist196/test_inputs.bin")).all_samples();
    x.calib = read_tensor_file(data("mnist196/calib_inputs.bin")).all_samples();
    x.labels = read_labels(data("mnist196/test_labels.txt"));
    std::size_t ok = 0;
    for (std::size_t i = 0; i < x.test.size(); ++i) {
      x.oracle.push_back(oracle_infer(x.raw, x.test[i]));
      ok += static_cast<int>(argmax(x.oracle.back())) == x.labels[i];
    }
    x.oracle_acc = static_cast<double>(ok) / static_cast<double>(x.test.size());
    return x;
  }();
  return m;
}

double accuracy(const BatchResult& b, const std::vector<int>& labels) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < b.runs.size(); ++i) {
    ok += static_cast<int>(argmax(b.runs[i].values())) == labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(b.runs.size());
}

// Exhaustive 8-bit multiply against the correctly rounded product.
Verdict criterion1() {
  const auto t0 = Clock::now();
  std::int64_t worst = 0;
  std::string where;
  long cases = 0;
  for (int fw = 0; fw < 8; ++fw) {
    for (int fx = 0; fx < 8; ++fx) {
      for (int fo : {fw, fx}) {
        const FxPFormat W{8, fw};
        const FxPFormat X{8, fx};
        const FxPFormat O{8, fo};
        const MacMode mode = MacMode::defaults(O);
        for (std::int64_t a = W.min_raw(); a <= W.max_raw(); ++a) {
          for (std::int64_t b = X.min_raw(); b <= X.max_raw(); ++b) {
            const FxPWord w = FxPWord::from_raw(a, W);
            const FxPWord x = FxPWord::from_raw(b, X);
            const MacResult r = mac(FxPWord::zero(O), w, x, mode);
            const double ref = std::clamp(
                std::nearbyint(std::ldexp(w.value() * x.value(), fo)),
                static_cast<double>(O.min_raw()), static_cast<double>(O.max_raw()));
            const auto e = std::llabs(r.acc.raw() - static_cast<std::int64_t>(ref));
            if (e > worst) {
              worst = e;
              where = W.to_string() + " x " + X.to_string() + " -> " + O.to_string();
            }
            ++cases;
          }
        }
      }
    }
  }
  const double dt = seconds_since(t0);
  return {worst <= 2 && dt < 10.0,
          fmt("%ld products over 128 format combinations, worst %lld ULP%s%s, %.2f s", cases,
              static_cast<long long>(worst), where.empty() ? "" : " at ", where.c_str(), dt)};
}

// tanh and sigmoid over every Q16 input code, softmax sums.
Verdict criterion2() {
  const FxPFormat tanh_out{16, 14};
  const FxPFormat sig_out{16, 15};
  double worst_t = 0.0;
  double worst_s = 0.0;
  for (int fi : {8, 10, 12, 14}) {
    const FxPFormat in{16, fi};
    for (std::int64_t r = in.min_raw(); r <= in.max_raw(); ++r) {
      const FxPWord x = FxPWord::from_raw(r, in);
      const double t_ref =
          std::clamp(std::tanh(x.value()), -tanh_out.max_value(), tanh_out.max_value());
      const double s_ref =
          std::clamp(1.0 / (1.0 + std::exp(-x.value())), 0.0, sig_out.max_value());
      worst_t = std::max(worst_t, std::fabs(tanh_af(x, 16, tanh_out).y.value() - t_ref) /
                                      tanh_out.ulp());
      worst_s = std::max(worst_s, std::fabs(sigmoid_af(x, 16, sig_out).y.value() - s_ref) /
                                      sig_out.ulp());
    }
  }
  std::mt19937 rng(2026);
  const FxPFormat in{16, 12};
  const FxPFormat out{16, 14};
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_int_distribution<std::int64_t> code(in.min_raw(), in.max_raw());
  double worst_sum = 0.0;  // in units of the per-vector bound
  for (int t = 0; t < 1000; ++t) {
    std::vector<FxPWord> v(static_cast<std::size_t>(len(rng)));
    for (FxPWord& e : v) e = FxPWord::from_raw(code(rng), in);
    const AfVectorResult r = softmax_af(v, 16, out);
    double sum = 0.0;
    for (const FxPWord& y : r.y) sum += y.value();
    worst_sum = std::max(worst_sum, std::fabs(sum - 1.0) /
                                        (static_cast<double>(v.size()) * out.ulp()));
  }
  return {worst_t <= 4.0 && worst_s <= 4.0 && worst_sum <= 1.0,
          fmt("tanh %.2f ULP, sigmoid %.2f ULP (inputs Q16.8/10/12/14), "
              "softmax |sum-1| at %.2f of n*ulp over 1000 vectors",
              worst_t, worst_s, worst_sum)};
}

Verdict criterion3() {
  const Model q = calibrate_formats(mnist().raw, mnist().calib, 16);
  const EngineConfig cfg = EngineConfig::for_width(16);
  const std::int64_t acc = planned_mac_cycles(q, ModePolicy::uniform(q, MacKind::accurate), cfg);
  const std::int64_t apx =
      planned_mac_cycles(q, ModePolicy::uniform(q, MacKind::approximate), cfg);
  EngineConfig c12 = cfg;
  c12.mac.depth_accurate = 12;
  c12.mac.depth_approx = 8;
  const std::int64_t acc12 =
      planned_mac_cycles(q, ModePolicy::uniform(q, MacKind::accurate), c12);
  const std::int64_t apx12 =
      planned_mac_cycles(q, ModePolicy::uniform(q, MacKind::approximate), c12);
  const bool ok = apx * 16 == acc * 11 && apx12 * 3 == acc12 * 2;
  return {ok, fmt("w16 %lld vs %lld cycles (%.2f%% fewer); 12->8 %lld vs %lld (%.2f%% fewer)",
                  static_cast<long long>(apx), static_cast<long long>(acc),
                  100.0 * static_cast<double>(acc - apx) / static_cast<double>(acc),
                  static_cast<long long>(apx12), static_cast<long long>(acc12),
                  100.0 * static_cast<double>(acc12 - apx12) / static_cast<double>(acc12))};
}

Verdict criterion4() {
  const Mnist& d = mnist();
  const auto t0 = Clock::now();
  double acc[2] = {0, 0};
  int k = 0;
  for (int w : {8, 16}) {
    const Model q = calibrate_formats(d.raw, d.calib, w);
    EngineConfig cfg = EngineConfig::for_width(w);
    cfg.threads = worker_count();
    acc[k++] = accuracy(run_batch(q, d.test, ModePolicy::uniform(q, MacKind::accurate), cfg),
                        d.labels);
  }
  const double dt = seconds_since(t0);
  const double d8 = 100.0 * (d.oracle_acc - acc[0]);
  const double d16 = 100.0 * (d.oracle_acc - acc[1]);
  return {d.test.size() >= 1000 && d.oracle_acc >= 0.90 && d8 <= 2.0 && d16 <= 0.5 && dt < 120.0,
          fmt("%zu samples, oracle %.2f%%, fxp8 %.2f%% (-%.2f pts), fxp16 %.2f%% (-%.2f pts), "
              "%.1f s",
              d.test.size(), 100.0 * d.oracle_acc, 100.0 * acc[0], d8, 100.0 * acc[1], d16, dt)};
}

RunConfig mnist_config() {
  RunConfig c;
  c.model = data("mnist196/model.json");
  c.weights = data("mnist196/weights.bin");
  c.input = data("mnist196/test_inputs.bin");
  c.labels = data("mnist196/test_labels.txt");
  c.calib = data("mnist196/calib_inputs.bin");
  return c;
}

Verdict criterion5() {
  const SweepReport r = execute_sweep(mnist_config(), {16}, {4, 6, 8, 12, 16}, worker_count());
  const MonotoneReport& m = r.monotone.front();
  std::string pairs;
  for (std::size_t d = 1; d < r.cells.size(); ++d) {
    std::size_t up = 0;
    for (std::size_t i = 0; i < m.samples; ++i) {
      up += r.cells[d].sample_max_error[i] > r.cells[d - 1].sample_max_error[i];
    }
    pairs += fmt(" %d->%d:%zu", r.cells[d - 1].depth, r.cells[d].depth, up);
  }
  return {m.fraction >= 0.99,
          fmt("%zu/%zu samples monotone (%.2f%%, need 99%%); error grew at%s", m.monotone,
              m.samples, 100.0 * m.fraction, pairs.c_str())};
}

Verdict criterion6() {
  const Mnist& d = mnist();
  const Model q = calibrate_formats(d.raw, d.calib, 16);
  EngineConfig cfg = EngineConfig::for_width(16);
  cfg.threads = worker_count();
  const std::vector<double> s = sensitivity_profile(q, d.calib, cfg);
  const ModePolicy all_acc = ModePolicy::uniform(q, MacKind::accurate);
  const ModePolicy all_apx = ModePolicy::uniform(q, MacKind::approximate);
  const double a_apx = accuracy(run_batch(q, d.test, all_apx, cfg), d.labels);
  const BatchResult acc_run = run_batch(q, d.test, all_acc, cfg);
  bool ok = true;
  std::string detail = fmt("all-approx %.2f%%;", 100.0 * a_apx);
  // Every threshold that puts at least one layer on the approximate path.
  for (double tau : std::set<double>(s.begin(), s.end())) {
    const ModePolicy p = select_modes(s, tau, layer_ids(q));
    const BatchResult b = run_batch(q, d.test, p, cfg);
    const double a = accuracy(b, d.labels);
    const bool pass = a >= a_apx && b.stats.total_cycles <= acc_run.stats.total_cycles;
    ok = ok && pass && p.approximate_count() >= 1;
    detail += fmt(" tau=%.3g: %zu approx, %.2f%%, cycles %.4f of accurate%s;", tau,
                  p.approximate_count(), 100.0 * a,
                  static_cast<double>(b.stats.total_cycles) /
                      static_cast<double>(acc_run.stats.total_cycles),
                  pass ? "" : " FAILED");
  }
  detail += fmt(" %zu samples", d.test.size());
  return {ok && d.test.size() >= 1000, detail};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CARMEN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Verdict criterion7() {
  const fs::path dir = fs::temp_directory_path() / "carmen_acceptance_c7";
  fs::create_directories(dir);
  const RunConfig c = mnist_config();
  const std::string base = "run --model " + c.model + " --weights " + c.weights + " --input " +
                           c.input + " --labels " + c.labels + " --calib " + c.calib +
                           " --mode auto --tau 1e-5 --quiet";
  const int e1 = run_cli(base + " --threads 1 --report " + (dir / "t1.json").string());
  const int e2 = run_cli(base + " --threads 7 --report " + (dir / "t7.json").string());
  const std::string a = slurp(dir / "t1.json");
  const std::string b = slurp(dir / "t7.json");
  fs::remove_all(dir);
  return {e1 == 0 && e2 == 0 && !a.empty() && a == b,
          fmt("--threads 1 vs 7 on %zu samples: exit %d/%d, reports %zu/%zu bytes, %s",
              mnist().test.size(), e1, e2, a.size(), b.size(),
              a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  struct Entry {
    int id;
    std::function<Verdict()> check;
  };
  const std::vector<Entry> entries{{1, criterion1}, {2, criterion2}, {3, criterion3},
                                   {4, criterion4}, {5, criterion5}, {6, criterion6},
                                   {7, criterion7}};
  int failed = 0;
  for (const Entry& e : entries) {
    Verdict v;
    try {
      v = e.check();
    } catch (const std::exception& ex) {
      v = {false, std::string("error: ") + ex.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", e.id, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("N/A  criterion 8: silicon area, power, energy-delay and board latency have no "
              "software analog; not measured\n");
  std::printf("%d of 7 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
