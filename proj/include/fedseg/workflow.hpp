#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedseg/accounting.hpp"
#include "fedseg/aggregate.hpp"
#include "fedseg/objective.hpp"
#include "fedseg/params.hpp"
#include "fedseg/transport.hpp"

namespace fedseg {

enum class WorkflowKind { kScatterGather, kCwt, kDcwt, kSwarm };

const char* workflow_kind_name(WorkflowKind k);
WorkflowKind workflow_kind_from_name(const std::string& name);

struct CyclicOrder {
  bool random_per_round = false;
  std::vector<std::string> fixed;  // used when !random_per_round; each client once
  std::uint64_t seed = 0;          // used when random_per_round
};

struct WorkflowConfig {
  WorkflowKind kind = WorkflowKind::kScatterGather;
  std::uint32_t num_rounds = 1;
  CyclicOrder cyclic_order;
  AggregatorConfig aggregator;
  TrainConfig local;
  double timeout_seconds = 120.0;
};

struct RunResult {
  ParameterSet final_model;
  RunLedger ledger;
  // Deterministic per-(client, round) records: metrics + sample counts, no
  // wall-clock fields. One JSONL line each in the run log.
  std::vector<nlohmann::json> round_log;
};

// rounds * local epochs / clients — the fairness budget for FL-vs-CL runs.
double epoch_budget(std::uint32_t num_rounds, std::uint32_t local_epochs,
                    std::uint32_t num_clients);

// Coordinator entry points. Workers for every id in `clients` must already be
// serving on `transport`; `initial` is the round-0 global model.
RunResult run_scatter_gather(const WorkflowConfig& cfg,
                             const std::vector<std::string>& clients,
                             Transport& transport,
                             const std::string& coordinator_id,
                             const ParameterSet& initial,
                             const PowerModel& power);

RunResult run_cyclic(const WorkflowConfig& cfg,
                     const std::vector<std::string>& clients,
                     Transport& transport, const std::string& coordinator_id,
                     const ParameterSet& initial, const PowerModel& power,
                     bool server_relayed);

RunResult run_swarm(const WorkflowConfig& cfg,
                    const std::vector<std::string>& clients,
                    Transport& transport, const std::string& coordinator_id,
                    const ParameterSet& initial, const PowerModel& power);

// Dispatch on cfg.kind.
RunResult run_workflow(const WorkflowConfig& cfg,
                       const std::vector<std::string>& clients,
                       Transport& transport, const std::string& coordinator_id,
                       const ParameterSet& initial, const PowerModel& power);

// Asks every worker to exit its serve loop.
void shutdown_clients(const std::vector<std::string>& clients,
                      Transport& transport, const std::string& coordinator_id);

// ---- message payload encoding shared by coordinator and workers ----
namespace proto {

// JSON header + length-prefixed parameter blobs in one payload.
std::vector<std::uint8_t> pack(const nlohmann::json& header,
                               const std::vector<ParameterSet>& blobs);
struct Packed {
  nlohmann::json header;
  std::vector<ParameterSet> blobs;
};
Packed unpack(std::span<const std::uint8_t> payload);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json aggregator_config_to_json(const AggregatorConfig& cfg);
AggregatorConfig aggregator_config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> pack_state(const AggregationState& state);
AggregationState unpack_state(std::span<const std::uint8_t> payload);

std::uint64_t stable_hash(const std::string& s);  // FNV-1a, seed derivation

}  // namespace proto

// ---- client worker ----

using ObjectiveFactory =
    std::function<std::unique_ptr<LocalObjective>(const nlohmann::json& setup)>;

struct WorkerOptions {
  std::string id;
  std::string coordinator_id = "coordinator";
  double timeout_seconds = 3600.0;   // workers wait patiently for tasks
  LocalObjective* objective = nullptr;  // pre-built (in-process runs), or
  ObjectiveFactory factory;             // built from the setup task (CLI runs)
};

// Registers with the coordinator and serves protocol messages until a
// shutdown task or Abort arrives.
void serve_client(Transport& transport, WorkerOptions options);

}  // namespace fedseg
