#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedseg/params.hpp"

namespace fedseg {

enum class Algorithm { kFedAvg, kFedProx, kFedOpt, kScaffold };
enum class BufferPolicy { kWeightedAverage, kKeepServer, kRequireStateless };

const char* algorithm_name(Algorithm a);
const char* buffer_policy_name(BufferPolicy p);

struct AggregatorConfig {
  Algorithm algorithm = Algorithm::kFedAvg;
  double server_lr = 1.0;        // FedOpt / Scaffold only
  double server_momentum = 0.9;  // FedOpt only
  double prox_mu = 0.0;          // FedProx only (applied client-side)
  BufferPolicy buffer_policy = BufferPolicy::kWeightedAverage;
};

// Stateless algorithms get WeightedAverage; server-side optimizers reject
// running statistics outright.
BufferPolicy default_buffer_policy(Algorithm a);

// A client's contribution to one round: delta over trainable entries plus
// optional buffer values and an optional refreshed control variate.
struct ClientUpdate {
  std::string source_client;
  std::uint64_t num_samples = 0;
  std::uint32_t round = 0;
  ParameterSet delta;                        // trainable subset, w_local - w_global
  std::optional<ParameterSet> buffers;       // client's persistent buffers
  std::optional<ParameterSet> new_variate;   // Scaffold only
};

// Per-client and global Scaffold correction vectors, delta-shaped.
class ControlVariates {
 public:
  ControlVariates() = default;
  explicit ControlVariates(const ParameterSet& delta_shape,
                           const std::vector<std::string>& client_ids);

  bool has_client(const std::string& id) const;
  const ParameterSet& client(const std::string& id) const;
  void set_client(const std::string& id, ParameterSet variate);
  const ParameterSet& global() const { return global_; }
  std::size_t client_count() const { return clients_.size(); }

  // Recomputes the global variate as the arithmetic mean over all registered
  // clients.
  void refresh_global();

  const std::map<std::string, ParameterSet>& all_clients() const {
    return clients_;
  }

 private:
  std::map<std::string, ParameterSet> clients_;
  ParameterSet global_;
};

struct ServerOptState {
  ParameterSet momentum;  // delta-shaped
  std::uint32_t round = 0;
};

// Sample-weighted average of client weights; buffers per cfg.buffer_policy.
ParameterSet fed_avg(const ParameterSet& global,
                     const std::vector<ClientUpdate>& updates,
                     const AggregatorConfig& cfg);

// Server SGD-with-momentum on the negated unweighted mean client delta.
std::pair<ParameterSet, ServerOptState> fed_opt_update(
    const ParameterSet& global, const std::vector<ClientUpdate>& updates,
    ServerOptState state, const AggregatorConfig& cfg);

// w^{t+1} = w^t + lr * mean_i(delta_i - c_i + c), then variates refreshed from
// the reported values and the global variate re-averaged over all clients.
std::pair<ParameterSet, ControlVariates> scaffold_update(
    const ParameterSet& global, const std::vector<ClientUpdate>& updates,
    ControlVariates variates, const AggregatorConfig& cfg);

// Buffer-only aggregation under the configured policy.
ParameterSet aggregate_buffers(const ParameterSet& global_buffers,
                               const std::vector<ClientUpdate>& updates,
                               BufferPolicy policy);

// Dispatch by cfg.algorithm; FedProx routes through fed_avg unchanged.
struct AggregationState {
  ServerOptState opt;
  ControlVariates variates;
};
ParameterSet apply_aggregation(const ParameterSet& global,
                               const std::vector<ClientUpdate>& updates,
                               AggregationState& state,
                               const AggregatorConfig& cfg);

}  // namespace fedseg
