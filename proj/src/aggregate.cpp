#include "fedseg/aggregate.hpp"

#include <algorithm>
#include <cmath>

#include "fedseg/errors.hpp"

namespace fedseg {

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedProx: return "fedprox";
    case Algorithm::kFedOpt: return "fedopt";
    case Algorithm::kScaffold: return "scaffold";
  }
  return "?";
}

const char* buffer_policy_name(BufferPolicy p) {
  switch (p) {
    case BufferPolicy::kWeightedAverage: return "weighted_average";
    case BufferPolicy::kKeepServer: return "keep_server";
    case BufferPolicy::kRequireStateless: return "require_stateless";
  }
  return "?";
}

BufferPolicy default_buffer_policy(Algorithm a) {
  if (a == Algorithm::kFedOpt || a == Algorithm::kScaffold) {
    return BufferPolicy::kRequireStateless;
  }
  return BufferPolicy::kWeightedAverage;
}

ControlVariates::ControlVariates(const ParameterSet& delta_shape,
                                 const std::vector<std::string>& client_ids) {
  ParameterSet zero = delta_shape.trainable_only().zeros_like();
  for (const auto& id : client_ids) clients_.emplace(id, zero);
  global_ = zero;
}

bool ControlVariates::has_client(const std::string& id) const {
  return clients_.count(id) != 0;
}

const ParameterSet& ControlVariates::client(const std::string& id) const {
  auto it = clients_.find(id);
  if (it == clients_.end()) throw MissingVariate("no control variate for client " + id);
  return it->second;
}

void ControlVariates::set_client(const std::string& id, ParameterSet variate) {
  clients_[id] = std::move(variate);
}

void ControlVariates::refresh_global() {
  if (clients_.empty()) {
    global_ = ParameterSet{};
    return;
  }
  ParameterSet sum = clients_.begin()->second.zeros_like();
  for (const auto& [id, v] : clients_) sum = axpy(1.0, v, sum);
  global_ = scale(1.0 / static_cast<double>(clients_.size()), sum);
}

namespace {

// Aggregation accumulates in a fixed client-id order so the result does not
// depend on arrival order.
std::vector<ClientUpdate> sorted_by_client(std::vector<ClientUpdate> updates) {
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) {
              return a.source_client < b.source_client;
            });
  return updates;
}

void check_updates(const std::vector<ClientUpdate>& updates,
                   const ParameterSet& global_trainable) {
  if (updates.empty()) throw EmptyUpdateSet("no client updates to aggregate");
  for (const auto& u : updates) {
    if (!u.delta.same_structure(global_trainable)) {
      throw StructureMismatch("client " + u.source_client +
                              " delta does not match global trainable structure");
    }
    if (u.round != updates.front().round) {
      throw StructureMismatch("client " + u.source_client +
                              " update is for a different round");
    }
  }
}

// Mean of deltas, unweighted (the server-optimizer form) or sample-weighted.
ParameterSet mean_delta(const std::vector<ClientUpdate>& updates,
                        bool sample_weighted) {
  ParameterSet shape = updates.front().delta.zeros_like();
  ParameterSet acc = shape;
  double total = 0.0;
  for (const auto& u : updates) {
    double w = sample_weighted ? static_cast<double>(u.num_samples) : 1.0;
    acc = axpy(w, u.delta, acc);
    total += w;
  }
  if (total == 0.0) {
    throw ZeroTotalWeight("all client updates carry zero samples");
  }
  return scale(1.0 / total, acc);
}

ParameterSet merge(const ParameterSet& trainable, const ParameterSet& buffers) {
  ParameterSet out;
  for (const auto& [name, t] : trainable) out.add(name, t);
  for (const auto& [name, t] : buffers) out.add(name, t);
  return out;
}

}  // namespace

ParameterSet aggregate_buffers(const ParameterSet& global_buffers,
                               const std::vector<ClientUpdate>& raw_updates,
                               BufferPolicy policy) {
  auto updates = sorted_by_client(raw_updates);
  bool any_client_buffers = false;
  for (const auto& u : updates) {
    if (u.buffers && !u.buffers->empty()) any_client_buffers = true;
  }
  switch (policy) {
    case BufferPolicy::kRequireStateless:
      if (!global_buffers.empty() || any_client_buffers) {
        throw StatefulModelRejected(
            "persistent buffers present but buffer policy is require_stateless");
      }
      return ParameterSet{};
    case BufferPolicy::kKeepServer:
      return global_buffers;
    case BufferPolicy::kWeightedAverage: {
      if (global_buffers.empty()) return ParameterSet{};
      ParameterSet acc = global_buffers.zeros_like();
      double total = 0.0;
      for (const auto& u : updates) {
        if (!u.buffers) {
          throw StructureMismatch("client " + u.source_client +
                                  " update is missing buffer values");
        }
        if (!u.buffers->same_structure(global_buffers)) {
          throw StructureMismatch("client " + u.source_client +
                                  " buffers do not match global structure");
        }
        double w = static_cast<double>(u.num_samples);
        acc = axpy(w, *u.buffers, acc);
        total += w;
      }
      if (total == 0.0) throw ZeroTotalWeight("all client updates carry zero samples");
      return scale(1.0 / total, acc);
    }
  }
  return ParameterSet{};
}

ParameterSet fed_avg(const ParameterSet& global,
                     const std::vector<ClientUpdate>& raw_updates,
                     const AggregatorConfig& cfg) {
  auto updates = sorted_by_client(raw_updates);
  ParameterSet trainable = global.trainable_only();
  check_updates(updates, trainable);
  // sum_i n_i w_i / sum_i n_i == w_global + sum_i n_i delta_i / sum_i n_i
  ParameterSet avg = axpy(1.0, mean_delta(updates, /*sample_weighted=*/true),
                          trainable);
  ParameterSet buffers =
      aggregate_buffers(global.buffers_only(), updates, cfg.buffer_policy);
  return merge(avg, buffers);
}

std::pair<ParameterSet, ServerOptState> fed_opt_update(
    const ParameterSet& global, const std::vector<ClientUpdate>& raw_updates,
    ServerOptState state, const AggregatorConfig& cfg) {
  auto updates = sorted_by_client(raw_updates);
  ParameterSet trainable = global.trainable_only();
  check_updates(updates, trainable);
  ParameterSet pseudo_grad =
      scale(-1.0, mean_delta(updates, /*sample_weighted=*/false));
  if (state.momentum.empty()) state.momentum = trainable.zeros_like();
  if (!state.momentum.same_structure(trainable)) {
    throw StructureMismatch("server momentum buffer does not match model");
  }
  state.momentum = axpy(cfg.server_momentum, state.momentum, pseudo_grad);
  ParameterSet next = axpy(-cfg.server_lr, state.momentum, trainable);
  state.round += 1;
  ParameterSet buffers =
      aggregate_buffers(global.buffers_only(), updates, cfg.buffer_policy);
  return {merge(next, buffers), std::move(state)};
}

std::pair<ParameterSet, ControlVariates> scaffold_update(
    const ParameterSet& global, const std::vector<ClientUpdate>& raw_updates,
    ControlVariates variates, const AggregatorConfig& cfg) {
  auto updates = sorted_by_client(raw_updates);
  ParameterSet trainable = global.trainable_only();
  check_updates(updates, trainable);
  ParameterSet acc = trainable.zeros_like();
  for (const auto& u : updates) {
    if (!variates.has_client(u.source_client)) {
      throw MissingVariate("no control variate registered for client " +
                           u.source_client);
    }
    ParameterSet term = axpy(-1.0, variates.client(u.source_client), u.delta);
    term = axpy(1.0, variates.global().empty()
                         ? trainable.zeros_like()
                         : variates.global(),
                term);
    acc = axpy(1.0, term, acc);
  }
  double inv = 1.0 / static_cast<double>(updates.size());
  ParameterSet next = axpy(cfg.server_lr * inv, acc, trainable);
  for (const auto& u : updates) {
    if (!u.new_variate) {
      throw MissingVariate("client " + u.source_client +
                           " update carries no refreshed variate");
    }
    variates.set_client(u.source_client, *u.new_variate);
  }
  variates.refresh_global();
  ParameterSet buffers =
      aggregate_buffers(global.buffers_only(), updates, cfg.buffer_policy);
  return {merge(next, buffers), std::move(variates)};
}

ParameterSet apply_aggregation(const ParameterSet& global,
                               const std::vector<ClientUpdate>& updates,
                               AggregationState& state,
                               const AggregatorConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::kFedAvg:
    case Algorithm::kFedProx:
      return fed_avg(global, updates, cfg);
    case Algorithm::kFedOpt: {
      auto [next, opt] = fed_opt_update(global, updates, std::move(state.opt), cfg);
      state.opt = std::move(opt);
      return next;
    }
    case Algorithm::kScaffold: {
      auto [next, cv] =
          scaffold_update(global, updates, std::move(state.variates), cfg);
      state.variates = std::move(cv);
      return next;
    }
  }
  throw AggregationError("unknown aggregation algorithm");
}

}  // namespace fedseg
