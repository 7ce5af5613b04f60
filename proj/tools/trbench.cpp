// Benchmark driver: generates a workload, runs it through the repair engine
// and/or the baselines, and prints CSV rows.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "trepair/bench.hpp"

using namespace trepair;
using namespace trepair::bench;

namespace {

std::string first_divergence(const DbVersion& got, const DbVersion& want) {
  std::istringstream a(got.snapshot_text()), b(want.snapshot_text());
  std::string la, lb;
  for (std::size_t line = 1;; ++line) {
    const bool ha = static_cast<bool>(std::getline(a, la));
    const bool hb = static_cast<bool>(std::getline(b, lb));
    if (!ha && !hb) return "states differ only in hash";
    if (!ha || !hb || la != lb) {
      return "line " + std::to_string(line) + ": got '" + (ha ? la : "<end>") + "', expected '" +
             (hb ? lb : "<end>") + "'";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transaction repair benchmark"};
  std::string workload = "sku", executor = "repair", commit = "simple", csv_path, metrics_path, script;
  WorkloadConfig cfg;
  std::vector<std::size_t> workers{1};
  RepairOptions opt;
  bool verify = false;
  app.add_option("--workload", workload, "sku | counter_chain | counter | random_rules | script")
      ->check(CLI::IsMember({"sku", "counter_chain", "chain", "counter", "random_rules", "random", "script"}));
  app.add_option("--n", cfg.n, "sku count, chain length, or keys per relation");
  app.add_option("--alpha", cfg.alpha, "sku conflict intensity");
  app.add_option("--txns", cfg.txns, "number of transactions");
  app.add_option("--workers", workers, "worker counts, e.g. 1,2,4")->delimiter(',');
  app.add_option("--seed", cfg.seed);
  app.add_option("--executor", executor, "repair | lock | serial | all")
      ->check(CLI::IsMember({"repair", "lock", "serial", "all"}));
  app.add_option("--commit-strategy", commit)->check(CLI::IsMember({"simple", "padded"}));
  app.add_option("--height", opt.height, "maximum transaction tree height");
  app.add_option("--admit-batch", opt.admit_batch, "admissions per idle queue (0: one per worker)");
  app.add_flag("--inverted", opt.inverted_priority, "latest transaction first");
  app.add_option("--csv", csv_path, "append rows to this file");
  app.add_option("--metrics-json", metrics_path, "write engine metrics of the last repair run");
  app.add_option("--script", script, "JSON script for --workload script");
  app.add_flag("--verify", verify, "compare every run against the serial oracle");
  CLI11_PARSE(app, argc, argv);
  opt.commit = commit == "padded" ? CommitStrategy::Padded : CommitStrategy::Simple;

  Workload w;
  try {
    if (workload == "script") {
      std::ifstream in(script);
      if (!in) throw std::runtime_error("cannot open script '" + script + "'");
      w = script_workload(nlohmann::json::parse(in), std::filesystem::path(script).parent_path().string());
    } else {
      cfg.kind = parse_workload(workload);
      w = gen_workload(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "trbench: " << e.what() << "\n";
    return 2;
  }
  const std::string name = workload == "script" ? "script" : workload_name(cfg.kind);

  std::ofstream csv;
  if (!csv_path.empty()) {
    const bool fresh = !std::filesystem::exists(csv_path) || std::filesystem::file_size(csv_path) == 0;
    csv.open(csv_path, std::ios::app);
    if (fresh) csv << csv_header() << "\n";
  }
  std::cout << csv_header() << "\n";
  auto emit = [&](const std::string& label, RunReport& r, double base) {
    r.speedup = base > 0 ? r.throughput / base : 1.0;
    const std::string row = csv_row(label, cfg.alpha, r);
    std::cout << row << "\n";
    if (csv) csv << row << "\n";
  };

  std::optional<RunReport> oracle;
  if (verify || executor == "serial" || executor == "all") oracle = run_serial_oracle(w);
  if (executor == "serial" || executor == "all") emit(name + "/serial", *oracle, 0);

  int status = 0;
  auto check = [&](const RunReport& r) {
    if (!verify) return;
    if (r.state_hash != oracle->state_hash) {
      std::cerr << "trbench: " << r.executor << " with " << r.workers
                << " workers diverges from serial execution: " << first_divergence(r.state, oracle->state) << "\n";
      status = 1;
    } else if (r.outcome_hash != oracle->outcome_hash) {
      for (std::size_t i = 0; i < r.failed.size(); ++i) {
        if (r.failed[i] != oracle->failed[i]) {
          std::cerr << "trbench: " << r.executor << " outcome of transaction " << i << " differs\n";
          break;
        }
      }
      status = 1;
    }
  };

  try {
    if (executor == "repair" || executor == "all") {
      double base = 0;
      for (std::size_t n : workers) {
        opt.workers = n;
        RunReport r = run_repair(w, opt);
        if (base == 0) base = r.throughput;
        emit(name, r, base);
        check(r);
        if (!metrics_path.empty()) std::ofstream(metrics_path) << r.metrics.dump(2) << "\n";
      }
    }
    if ((executor == "lock" || executor == "all") && cfg.kind == WorkloadKind::Sku && workload != "script") {
      double base = 0;
      for (std::size_t n : workers) {
        RunReport r = run_lock_baseline(w, n);
        if (base == 0) base = r.throughput;
        emit(name + "/lock", r, base);
        check(r);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "trbench: " << e.what() << "\n";
    return 2;
  }
  if (verify && status == 0) std::cerr << "trbench: all runs match serial execution\n";
  return status;
}
