#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "fedseg/accounting.hpp"
#include "fedseg/data.hpp"
#include "fedseg/segnet.hpp"
#include "fedseg/workflow.hpp"

namespace fedseg {

enum class RunMode { kInProcess, kMultiProcess };

struct DataConfig {
  ClassManifest manifest;  // resolved from inline json, path, or generator
  std::uint32_t image_size = 16;
  double train_fraction = 0.8;
};

struct ExperimentConfig {
  WorkflowConfig workflow;
  DataConfig data;
  ModelSpec model;
  PowerModel power;
  RunMode mode = RunMode::kInProcess;
  std::string output_dir = "runs/out";
  std::uint64_t master_seed = 0;
  std::uint16_t port = 0;  // MultiProcess listener; 0 = ephemeral
  std::optional<double> cl_epochs;  // declared centralized budget, if any
  nlohmann::json raw;  // verbatim snapshot for reproducibility
};

// Validation failures raise ConfigInvalid naming the dotted field path,
// e.g. "workflow.aggregator.prox_mu".
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

// Message when the FL budget (rounds * epochs / clients) diverges from the
// declared CL epochs by more than 5%; nullopt when within bounds or no CL
// budget is declared.
std::optional<std::string> budget_parity_warning(const ExperimentConfig& cfg);

}  // namespace fedseg
