#pragma once

#include <string>

#include "json.hpp"

#include "fedseg/config.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/workflow.hpp"

namespace fedseg {

struct RunArtifacts {
  RunResult result;
  std::string output_dir;  // where the artifact files were written
};

// Builds a SegNetObjective from a setup-task description (manifest + model +
// split parameters); used by both in-process worker threads and the
// socket-connected client binary.
ObjectiveFactory experiment_objective_factory();

// Executes the configured workflow end to end and writes
// config_snapshot.json, metrics.jsonl, ledger.csv, summary.json, and
// final_model.bin into the output directory (FEDSEG_OUTPUT_DIR overrides).
RunArtifacts run_experiment(const ExperimentConfig& cfg);

// Runs every (cell x repeat) with derived seeds, writes bench_report.txt and
// bench.json under out_dir, and returns the report json. Refuses when a
// declared CL budget diverges from a cell's FL budget by more than 5%.
nlohmann::json run_bench(const nlohmann::json& matrix,
                         const std::string& out_dir);

// Size-weighted overall metric report from a run's final_eval records.
MetricReport overall_from_log(const std::vector<nlohmann::json>& round_log);

// `client` subcommand: serve until the coordinator shuts us down.
int client_main(const std::string& host, std::uint16_t port,
                const std::string& id);

}  // namespace fedseg
