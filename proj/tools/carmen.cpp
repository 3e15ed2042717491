// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

// carmen: run, sweep and profile quantized networks on the emulated engine.

#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "carmen/cli.hpp"

namespace {

struct Flags {
  carmen::RunConfig cfg;
  std::string precision = "fxp16";
  std::string tau;
  std::optional<int> iters_accurate;
  std::optional<int> iters_approx;
  std::optional<int> iters_af;
  std::optional<std::size_t> limit;
  std::string report;
  int threads = 1;
  bool quiet = false;
  std::string depths = "4,6,8,12,16";
  std::string precisions = "fxp16";
};

double parse_tau(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || std::isnan(v) || v < 0.0) {
    throw carmen::UsageError("--tau must be a non-negative number or 'inf', got '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

carmen::RunConfig resolve(Flags& f) {
  carmen::RunConfig c = f.cfg;
  c.precision = carmen::parse_precision(f.precision);
  if (!f.tau.empty()) c.tau = parse_tau(f.tau);
  c.limit = f.limit;
  carmen::resolve_depths(c, f.iters_accurate, f.iters_approx, f.iters_af);
  return c;
}

void add_model_flags(CLI::App* cmd, Flags& f, bool input) {
  cmd->add_option("--model", f.cfg.model, "model manifest (JSON)")->required();
  cmd->add_option("--weights", f.cfg.weights, "float32 weight blob")->required();
  if (input) {
    cmd->add_option("--input", f.cfg.input, "input tensor file")->required();
    cmd->add_option("--labels", f.cfg.labels, "one integer label per line");
    cmd->add_option("--limit", f.limit, "use only the first N inputs");
  }
  cmd->add_option("--precision", f.precision, "fxp8 or fxp16")->capture_default_str();
  cmd->add_option("--mode", f.cfg.mode, "accurate, approx or auto")->capture_default_str();
  cmd->add_option("--tau", f.tau, "sensitivity threshold for auto mode (or 'inf')");
  cmd->add_option("--iters-accurate", f.iters_accurate, "accurate MAC depth (default: width)");
  cmd->add_option("--iters-approx", f.iters_approx,
                  "approximate MAC depth (default: ceil(2*width/3))");
  cmd->add_option("--iters-af", f.iters_af, "AF depth (default: width)");
  cmd->add_option("--pes", f.cfg.num_pes, "processing elements")->capture_default_str();
  cmd->add_option("--bank-refill", f.cfg.bank_refill_cycles,
                  "cycles per kernel-bank fill")->capture_default_str();
  cmd->add_option("--metric", f.cfg.metric, "relative-l1 or top1-flip")->capture_default_str();
  cmd->add_option("--report", f.report, "report path (default: $CARMEN_REPORT_DIR)");
  cmd->add_option("--threads", f.threads, "batch worker threads")->capture_default_str();
  cmd->add_flag("--quiet", f.quiet, "no table on stdout");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CORDIC inference-engine emulator"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);

  Flags f;
  CLI::App* run = app.add_subcommand("run", "run a batch and write a report");
  add_model_flags(run, f, true);
  CLI::App* sweep = app.add_subcommand("sweep", "accuracy and cycles over precisions x depths");
  add_model_flags(sweep, f, true);
  sweep->add_option("--depths", f.depths, "comma-separated CORDIC depths")->capture_default_str();
  sweep->add_option("--precisions", f.precisions, "comma-separated fxp8/fxp16")
      ->capture_default_str();
  CLI::App* profile = app.add_subcommand("profile", "per-layer sensitivities");
  add_model_flags(profile, f, false);
  profile->add_option("--calib", f.cfg.calib, "calibration tensor file")->required();
  run->add_option("--calib", f.cfg.calib, "calibration tensor file (default: the inputs)");
  sweep->add_option("--calib", f.cfg.calib, "calibration tensor file (default: the inputs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (f.threads < 1) throw carmen::UsageError("--threads must be at least 1");
    const carmen::RunConfig c = resolve(f);
    std::string path;
    if (run->parsed()) {
      const carmen::RunReport r = carmen::execute_run(c, f.threads);
      path = carmen::default_report_path("run", f.report);
      carmen::write_json_file(path, carmen::Json(r));
      if (!f.quiet) carmen::print_run(std::cout, r);
    } else if (sweep->parsed()) {
      std::vector<int> precisions;
      for (const std::string& p : split(f.precisions)) {
        precisions.push_back(carmen::parse_precision(p));
      }
      std::vector<int> depths;
      for (const std::string& d : split(f.depths)) {
        try {
          depths.push_back(std::stoi(d));
        } catch (const std::exception&) {
          throw carmen::UsageError("--depths: '" + d + "' is not an integer");
        }
      }
      const carmen::SweepReport r = carmen::execute_sweep(c, precisions, depths, f.threads);
      path = carmen::default_report_path("sweep", f.report);
      carmen::write_json_file(path, carmen::Json(r));
      if (!f.quiet) carmen::print_sweep(std::cout, r);
    } else {
      const carmen::ProfileReport r = carmen::execute_profile(c, f.threads);
      path = carmen::default_report_path("profile", f.report);
      carmen::write_json_file(path, carmen::Json(r));
      if (!f.quiet) carmen::print_profile(std::cout, r);
    }
    if (!f.quiet) std::cout << "report: " << path << "\n";
    return 0;
  } catch (const carmen::UsageError& e) {
    std::cerr << "carmen: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "carmen: " << e.what() << "\n";
    return 1;
  }
}
