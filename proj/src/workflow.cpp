#include "fedseg/workflow.hpp"

#include <algorithm>
#include <chrono>

#include "fedseg/errors.hpp"
#include "fedseg/rng.hpp"

namespace fedseg {

const char* workflow_kind_name(WorkflowKind k) {
  switch (k) {
    case WorkflowKind::kScatterGather: return "sg";
    case WorkflowKind::kCwt: return "cwt";
    case WorkflowKind::kDcwt: return "dcwt";
    case WorkflowKind::kSwarm: return "swarm";
  }
  return "?";
}

WorkflowKind workflow_kind_from_name(const std::string& name) {
  if (name == "sg" || name == "scatter_gather") return WorkflowKind::kScatterGather;
  if (name == "cwt") return WorkflowKind::kCwt;
  if (name == "dcwt") return WorkflowKind::kDcwt;
  if (name == "swarm") return WorkflowKind::kSwarm;
  throw ConfigInvalid("unknown workflow kind: " + name);
}

double epoch_budget(std::uint32_t num_rounds, std::uint32_t local_epochs,
                    std::uint32_t num_clients) {
  if (num_rounds == 0 || local_epochs == 0 || num_clients == 0)
    throw ConfigInvalid("epoch_budget requires positive inputs");
  return static_cast<double>(num_rounds) * static_cast<double>(local_epochs) /
         static_cast<double>(num_clients);
}

namespace proto {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size())
    throw MalformedPayload("truncated length prefix", off);
  return static_cast<std::uint32_t>(b[off]) |
         (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> pack(const nlohmann::json& header,
                               const std::vector<ParameterSet>& blobs) {
  std::string hs = header.dump();
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(hs.size()));
  out.insert(out.end(), hs.begin(), hs.end());
  for (const auto& p : blobs) {
    auto bytes = serialize(p);
    put_u32(out, static_cast<std::uint32_t>(bytes.size()));
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

Packed unpack(std::span<const std::uint8_t> payload) {
  Packed out;
  std::size_t off = 0;
  std::uint32_t hlen = get_u32(payload, off);
  off += 4;
  if (off + hlen > payload.size())
    throw MalformedPayload("truncated header json", off);
  try {
    out.header = nlohmann::json::parse(payload.begin() + off,
                                       payload.begin() + off + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedPayload(std::string("bad header json: ") + e.what(), off);
  }
  off += hlen;
  while (off < payload.size()) {
    std::uint32_t blen = get_u32(payload, off);
    off += 4;
    if (off + blen > payload.size())
      throw MalformedPayload("truncated parameter blob", off);
    out.blobs.push_back(deserialize(payload.subspan(off, blen)));
    off += blen;
  }
  return out;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"local_epochs", cfg.local_epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"optimizer", cfg.optimizer == Optimizer::kAdam ? "adam" : "sgd"},
          {"focal_alpha", cfg.focal_alpha},
          {"focal_gamma", cfg.focal_gamma},
          {"prox_mu", cfg.prox_mu},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.local_epochs = j.at("local_epochs").get<std::uint32_t>();
  cfg.batch_size = j.at("batch_size").get<std::uint32_t>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  std::string opt = j.at("optimizer").get<std::string>();
  if (opt == "adam") cfg.optimizer = Optimizer::kAdam;
  else if (opt == "sgd") cfg.optimizer = Optimizer::kSgd;
  else throw ConfigInvalid("unknown optimizer: " + opt);
  cfg.focal_alpha = j.at("focal_alpha").get<double>();
  cfg.focal_gamma = j.at("focal_gamma").get<double>();
  cfg.prox_mu = j.at("prox_mu").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

nlohmann::json aggregator_config_to_json(const AggregatorConfig& cfg) {
  return {{"algorithm", algorithm_name(cfg.algorithm)},
          {"server_lr", cfg.server_lr},
          {"server_momentum", cfg.server_momentum},
          {"prox_mu", cfg.prox_mu},
          {"buffer_policy", buffer_policy_name(cfg.buffer_policy)}};
}

AggregatorConfig aggregator_config_from_json(const nlohmann::json& j) {
  AggregatorConfig cfg;
  std::string alg = j.at("algorithm").get<std::string>();
  if (alg == "fedavg") cfg.algorithm = Algorithm::kFedAvg;
  else if (alg == "fedprox") cfg.algorithm = Algorithm::kFedProx;
  else if (alg == "fedopt") cfg.algorithm = Algorithm::kFedOpt;
  else if (alg == "scaffold") cfg.algorithm = Algorithm::kScaffold;
  else throw ConfigInvalid("unknown aggregation algorithm: " + alg);
  cfg.server_lr = j.at("server_lr").get<double>();
  cfg.server_momentum = j.at("server_momentum").get<double>();
  cfg.prox_mu = j.at("prox_mu").get<double>();
  std::string pol = j.at("buffer_policy").get<std::string>();
  if (pol == "weighted_average") cfg.buffer_policy = BufferPolicy::kWeightedAverage;
  else if (pol == "keep_server") cfg.buffer_policy = BufferPolicy::kKeepServer;
  else if (pol == "require_stateless")
    cfg.buffer_policy = BufferPolicy::kRequireStateless;
  else throw ConfigInvalid("unknown buffer policy: " + pol);
  return cfg;
}

std::vector<std::uint8_t> pack_state(const AggregationState& state) {
  nlohmann::json header;
  header["kind"] = "agg_state";
  header["round"] = state.opt.round;
  header["has_momentum"] = !state.opt.momentum.empty();
  std::vector<std::string> ids;
  for (const auto& [id, v] : state.variates.all_clients()) ids.push_back(id);
  header["variate_ids"] = ids;
  std::vector<ParameterSet> blobs;
  if (!state.opt.momentum.empty()) blobs.push_back(state.opt.momentum);
  for (const auto& [id, v] : state.variates.all_clients()) blobs.push_back(v);
  return pack(header, blobs);
}

AggregationState unpack_state(std::span<const std::uint8_t> payload) {
  Packed p = unpack(payload);
  AggregationState state;
  state.opt.round = p.header.at("round").get<std::uint32_t>();
  std::size_t next = 0;
  if (p.header.at("has_momentum").get<bool>())
    state.opt.momentum = p.blobs.at(next++);
  auto ids = p.header.at("variate_ids").get<std::vector<std::string>>();
  for (const auto& id : ids)
    state.variates.set_client(id, p.blobs.at(next++));
  if (!ids.empty()) state.variates.refresh_global();
  return state;
}

std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace proto

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Envelope make_env(MsgType type, const std::string& sender,
                  const std::string& recipient, std::uint32_t round,
                  std::vector<std::uint8_t> payload) {
  Envelope env;
  env.msg_type = type;
  env.sender = sender;
  env.recipient = recipient;
  env.round = round;
  env.payload = std::move(payload);
  env.seal();
  return env;
}

std::vector<std::string> sorted_ids(const std::vector<std::string>& clients) {
  if (clients.empty())
    throw ConfigInvalid("workflow requires at least one client");
  std::vector<std::string> ids = clients;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() != clients.size())
    throw ConfigInvalid("duplicate client ids in workflow roster");
  return ids;
}

AggregationState initial_state(const WorkflowConfig& cfg,
                               const ParameterSet& global,
                               const std::vector<std::string>& ids) {
  AggregationState state;
  if (cfg.aggregator.algorithm == Algorithm::kScaffold)
    state.variates = ControlVariates(global.trainable_only(), ids);
  return state;
}

// The local TrainConfig a given client runs in a given round; FedProx routes
// its mu into the client-side objective here.
TrainConfig round_train_config(const WorkflowConfig& cfg, std::uint64_t slot,
                               const std::string& client) {
  TrainConfig tc = cfg.local;
  if (cfg.aggregator.algorithm == Algorithm::kFedProx)
    tc.prox_mu = cfg.aggregator.prox_mu;
  tc.seed = derive_seed(cfg.local.seed, slot, proto::stable_hash(client));
  return tc;
}

struct TrainResult {
  ClientUpdate update;
  nlohmann::json header;
};

ClientUpdate update_from_packed(const proto::Packed& p) {
  ClientUpdate u;
  u.source_client = p.header.at("client").get<std::string>();
  u.num_samples = p.header.at("num_samples").get<std::uint64_t>();
  u.round = p.header.at("round").get<std::uint32_t>();
  std::size_t next = 0;
  u.delta = p.blobs.at(next++);
  if (p.header.value("has_buffers", false)) u.buffers = p.blobs.at(next++);
  if (p.header.value("has_variate", false)) u.new_variate = p.blobs.at(next++);
  return u;
}

void append_comm_entries(RunLedger& ledger, const Transport& transport,
                         std::uint32_t round) {
  for (const auto& [link, s] : transport.stats()) {
    ledger.record_phase(link.first, "comm", round, s.latency_seconds, s.bytes);
  }
}

void broadcast_model(Transport& transport, const std::string& coordinator_id,
                     const std::vector<std::string>& ids,
                     const ParameterSet& model, std::uint32_t round) {
  auto bytes = serialize(model);
  for (const auto& id : ids) {
    transport.send(make_env(MsgType::kModelPayload, coordinator_id, id, round,
                            bytes));
  }
}

void send_train_task(Transport& transport, const WorkflowConfig& cfg,
                     const std::string& coordinator_id, const std::string& id,
                     std::uint32_t round, const std::string& submit_to) {
  nlohmann::json task = {
      {"task", "train"},
      {"round", round},
      {"submit_to", submit_to},
      {"scaffold", cfg.aggregator.algorithm == Algorithm::kScaffold},
      {"train", proto::train_config_to_json(
                    round_train_config(cfg, round, id))}};
  transport.send(make_env(MsgType::kTaskAssign, coordinator_id, id, round,
                          proto::pack(task, {})));
}

void send_global_variate(Transport& transport, const std::string& sender,
                         const std::vector<std::string>& ids,
                         const AggregationState& state, std::uint32_t round) {
  nlohmann::json header = {{"kind", "global_variate"}};
  auto payload = proto::pack(header, {state.variates.global()});
  for (const auto& id : ids)
    transport.send(make_env(MsgType::kVariatePayload, sender, id, round,
                            payload));
}

// Collects one ResultSubmit per client for `round`; one full re-dispatch of
// the missing tasks on the first timeout, then ClientTimeout.
std::map<std::string, TrainResult> collect_results(
    Transport& transport, const WorkflowConfig& cfg,
    const std::string& coordinator_id, const std::vector<std::string>& ids,
    std::uint32_t round, const ParameterSet& global,
    const AggregationState& state) {
  std::map<std::string, TrainResult> got;
  bool retried = false;
  while (got.size() < ids.size()) {
    Envelope env;
    try {
      env = transport.recv(coordinator_id, cfg.timeout_seconds);
    } catch (const Timeout&) {
      if (retried) {
        std::string missing;
        for (const auto& id : ids)
          if (!got.count(id)) missing += (missing.empty() ? "" : ", ") + id;
        throw ClientTimeout("round " + std::to_string(round) +
                            ": no result from " + missing);
      }
      retried = true;
      for (const auto& id : ids) {
        if (got.count(id)) continue;
        broadcast_model(transport, coordinator_id, {id}, global, round);
        if (cfg.aggregator.algorithm == Algorithm::kScaffold)
          send_global_variate(transport, coordinator_id, {id}, state, round);
        send_train_task(transport, cfg, coordinator_id, id, round,
                        coordinator_id);
      }
      continue;
    }
    if (env.msg_type != MsgType::kResultSubmit || env.round != round) continue;
    proto::Packed p = proto::unpack({env.payload.data(), env.payload.size()});
    TrainResult r;
    r.update = update_from_packed(p);
    r.header = std::move(p.header);
    got[r.update.source_client] = std::move(r);
  }
  return got;
}

std::vector<ClientUpdate> sorted_updates(
    std::map<std::string, TrainResult>& results) {
  std::vector<ClientUpdate> updates;
  for (auto& [id, r] : results) updates.push_back(std::move(r.update));
  return updates;
}

void log_train_round(RunResult& out, std::uint32_t round,
                     const std::map<std::string, TrainResult>& results) {
  for (const auto& [id, r] : results) {
    out.ledger.record_phase(id, "train", round,
                            r.header.value("seconds", 0.0), 0);
    nlohmann::json rec = {{"round", round},
                          {"client", id},
                          {"phase", "train"},
                          {"num_samples", r.update.num_samples}};
    if (r.header.contains("metrics")) rec["metrics"] = r.header["metrics"];
    out.round_log.push_back(std::move(rec));
  }
}

// Post-run evaluation of the final global model on every client's test split.
void final_evaluation(Transport& transport, const WorkflowConfig& cfg,
                      const std::string& coordinator_id,
                      const std::vector<std::string>& ids,
                      const ParameterSet& final_model, RunResult& out) {
  std::uint32_t round = cfg.num_rounds;
  broadcast_model(transport, coordinator_id, ids, final_model, round);
  for (const auto& id : ids) {
    nlohmann::json task = {
        {"task", "eval"},
        {"round", round},
        {"train", proto::train_config_to_json(cfg.local)}};
    transport.send(make_env(MsgType::kTaskAssign, coordinator_id, id, round,
                            proto::pack(task, {})));
  }
  std::map<std::string, nlohmann::json> got;
  while (got.size() < ids.size()) {
    Envelope env = transport.recv(coordinator_id, cfg.timeout_seconds);
    if (env.msg_type != MsgType::kRoundBarrier || env.round != round) continue;
    proto::Packed p = proto::unpack({env.payload.data(), env.payload.size()});
    got[p.header.at("client").get<std::string>()] = p.header;
  }
  for (const auto& [id, header] : got) {
    nlohmann::json rec = {{"round", round},
                          {"client", id},
                          {"phase", "final_eval"}};
    if (header.contains("metrics")) rec["metrics"] = header["metrics"];
    out.round_log.push_back(std::move(rec));
  }
}

}  // namespace

RunResult run_scatter_gather(const WorkflowConfig& cfg,
                             const std::vector<std::string>& clients,
                             Transport& transport,
                             const std::string& coordinator_id,
                             const ParameterSet& initial,
                             const PowerModel& power) {
  auto run_start = Clock::now();
  std::vector<std::string> ids = sorted_ids(clients);
  RunResult out;
  out.ledger = RunLedger(power);
  ParameterSet global = initial;
  AggregationState state = initial_state(cfg, global, ids);

  for (std::uint32_t t = 0; t < cfg.num_rounds; ++t) {
    broadcast_model(transport, coordinator_id, ids, global, t);
    if (cfg.aggregator.algorithm == Algorithm::kScaffold)
      send_global_variate(transport, coordinator_id, ids, state, t);
    for (const auto& id : ids)
      send_train_task(transport, cfg, coordinator_id, id, t, coordinator_id);

    auto results = collect_results(transport, cfg, coordinator_id, ids, t,
                                   global, state);
    log_train_round(out, t, results);
    auto updates = sorted_updates(results);
    auto agg_start = Clock::now();
    try {
      global = apply_aggregation(global, updates, state, cfg.aggregator);
    } catch (const Error& e) {
      throw AggregationError("round " + std::to_string(t) + ": " + e.what());
    }
    out.ledger.record_phase(coordinator_id, "aggregate", t,
                            seconds_since(agg_start), 0);
  }

  final_evaluation(transport, cfg, coordinator_id, ids, global, out);
  append_comm_entries(out.ledger, transport, cfg.num_rounds);
  out.ledger.set_runtime_seconds(seconds_since(run_start));
  out.final_model = std::move(global);
  return out;
}

namespace {

std::vector<std::string> resolve_order(const WorkflowConfig& cfg,
                                       const std::vector<std::string>& ids,
                                       std::uint32_t round) {
  if (cfg.cyclic_order.random_per_round) {
    std::vector<std::string> order = ids;  // sorted base for determinism
    auto rng = make_rng(derive_seed(cfg.cyclic_order.seed, round));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }
  std::vector<std::string> order = cfg.cyclic_order.fixed;
  if (order.empty()) return ids;
  if (order.size() != ids.size())
    throw OrderResolutionError("fixed order lists " +
                               std::to_string(order.size()) + " clients, have " +
                               std::to_string(ids.size()));
  auto check = sorted_ids(order);
  if (check != ids)
    throw OrderResolutionError("fixed order names unknown or missing clients");
  return order;
}

}  // namespace

RunResult run_cyclic(const WorkflowConfig& cfg,
                     const std::vector<std::string>& clients,
                     Transport& transport, const std::string& coordinator_id,
                     const ParameterSet& initial, const PowerModel& power,
                     bool server_relayed) {
  auto run_start = Clock::now();
  std::vector<std::string> ids = sorted_ids(clients);
  RunResult out;
  out.ledger = RunLedger(power);
  std::uint32_t n = static_cast<std::uint32_t>(ids.size());

  // pre-resolve all rounds so each hop knows its successor
  std::vector<std::vector<std::string>> orders;
  for (std::uint32_t t = 0; t < cfg.num_rounds; ++t)
    orders.push_back(resolve_order(cfg, ids, t));

  // hop tags: the coordinator's initial model carries tag 0; the model leaving
  // hop h carries tag h; the worker at hop h waits for tag h-1
  transport.send(make_env(MsgType::kModelPayload, coordinator_id, orders[0][0],
                          0, serialize(initial)));
  ParameterSet relayed = initial;  // tracked only in server-relayed mode
  ParameterSet final_model;
  bool have_final = false;

  for (std::uint32_t t = 0; t < cfg.num_rounds; ++t) {
    for (std::uint32_t k = 0; k < n; ++k) {
      const std::string& id = orders[t][k];
      std::uint32_t hop = t * n + k + 1;
      bool final_hop = (t + 1 == cfg.num_rounds) && (k + 1 == n);
      std::string next = final_hop
                             ? coordinator_id
                             : (k + 1 == n ? orders[t + 1][0] : orders[t][k + 1]);
      nlohmann::json task = {
          {"task", "cyc_train"},
          {"round", t},
          {"hop", hop},
          {"await_tag", hop - 1},
          {"relay", server_relayed ? "server" : "p2p"},
          {"next", next},
          {"final", final_hop},
          {"train", proto::train_config_to_json(
                        round_train_config(cfg, hop, id))}};
      transport.send(make_env(MsgType::kTaskAssign, coordinator_id, id, t,
                              proto::pack(task, {})));

      // await this hop's report (and, in server relay, the weights)
      bool retried = false;
      bool done = false;
      while (!done) {
        Envelope env;
        try {
          env = transport.recv(coordinator_id, cfg.timeout_seconds);
        } catch (const Timeout&) {
          if (retried)
            throw ClientTimeout("cyclic hop " + std::to_string(hop) +
                                " on client " + id + " timed out");
          retried = true;
          transport.send(make_env(MsgType::kTaskAssign, coordinator_id, id, t,
                                  proto::pack(task, {})));
          continue;
        }
        if (env.round != hop) continue;
        if (server_relayed && env.msg_type == MsgType::kResultSubmit) {
          proto::Packed p =
              proto::unpack({env.payload.data(), env.payload.size()});
          relayed = p.blobs.at(0);
          out.ledger.record_phase(id, "train", t,
                                  p.header.value("seconds", 0.0), 0);
          nlohmann::json rec = {
              {"round", t},
              {"client", id},
              {"phase", "train"},
              {"num_samples",
               p.header.value("num_samples", std::uint64_t{0})}};
          if (p.header.contains("metrics")) rec["metrics"] = p.header["metrics"];
          out.round_log.push_back(std::move(rec));
          if (final_hop) {
            final_model = relayed;
            have_final = true;
          } else {
            transport.send(make_env(MsgType::kModelPayload, coordinator_id,
                                    next, hop, serialize(relayed)));
          }
          done = true;
        } else if (!server_relayed &&
                   env.msg_type == MsgType::kRoundBarrier) {
          proto::Packed p =
              proto::unpack({env.payload.data(), env.payload.size()});
          out.ledger.record_phase(id, "train", t,
                                  p.header.value("seconds", 0.0), 0);
          nlohmann::json rec = {
              {"round", t},
              {"client", id},
              {"phase", "train"},
              {"num_samples",
               p.header.value("num_samples", std::uint64_t{0})}};
          if (p.header.contains("metrics")) rec["metrics"] = p.header["metrics"];
          out.round_log.push_back(std::move(rec));
          done = true;
        } else if (!server_relayed && final_hop &&
                   env.msg_type == MsgType::kModelPayload) {
          // the last client's weights may overtake its barrier message
          final_model = deserialize({env.payload.data(), env.payload.size()});
          have_final = true;
        }
      }
    }
  }

  if (!server_relayed) {
    // final weights arrive peer-to-peer from the last client
    std::uint32_t final_tag = cfg.num_rounds * n;
    while (!have_final) {
      Envelope env = transport.recv(coordinator_id, cfg.timeout_seconds);
      if (env.msg_type == MsgType::kModelPayload && env.round == final_tag) {
        final_model = deserialize({env.payload.data(), env.payload.size()});
        have_final = true;
      }
    }
  }
  if (!have_final)
    throw AggregationError("cyclic run finished without a final model");

  final_evaluation(transport, cfg, coordinator_id, ids, final_model, out);
  append_comm_entries(out.ledger, transport, cfg.num_rounds);
  out.ledger.set_runtime_seconds(seconds_since(run_start));
  out.final_model = std::move(final_model);
  return out;
}

RunResult run_swarm(const WorkflowConfig& cfg,
                    const std::vector<std::string>& clients,
                    Transport& transport, const std::string& coordinator_id,
                    const ParameterSet& initial, const PowerModel& power) {
  auto run_start = Clock::now();
  std::vector<std::string> ids = sorted_ids(clients);
  RunResult out;
  out.ledger = RunLedger(power);
  std::uint32_t n = static_cast<std::uint32_t>(ids.size());
  AggregationState state = initial_state(cfg, initial, ids);
  // aggregation state is relayed through the coordinator so a failed
  // aggregator can be replaced without losing it
  std::vector<std::uint8_t> state_bytes = proto::pack_state(state);

  broadcast_model(transport, coordinator_id, ids, initial, 0);
  ParameterSet final_model;
  bool have_final = false;

  for (std::uint32_t t = 0; t < cfg.num_rounds; ++t) {
    bool final_round = (t + 1 == cfg.num_rounds);
    auto dispatch = [&](const std::string& aggregator) {
      if (cfg.aggregator.algorithm == Algorithm::kScaffold) {
        AggregationState current = proto::unpack_state(
            {state_bytes.data(), state_bytes.size()});
        send_global_variate(transport, coordinator_id, ids, current, t);
      }
      for (const auto& id : ids)
        send_train_task(transport, cfg, coordinator_id, id, t, aggregator);
      transport.send(make_env(MsgType::kVariatePayload, coordinator_id,
                              aggregator, t, state_bytes));
      nlohmann::json task = {
          {"task", "aggregate"},
          {"round", t},
          {"clients", ids},
          {"final", final_round},
          {"aggregator", proto::aggregator_config_to_json(cfg.aggregator)}};
      transport.send(make_env(MsgType::kTaskAssign, coordinator_id, aggregator,
                              t, proto::pack(task, {})));
    };

    std::uint32_t elected = t % n;
    dispatch(ids[elected]);

    bool reelected = false;
    bool round_done = false;
    bool got_state = false;
    while (!round_done || !got_state || (final_round && !have_final)) {
      Envelope env;
      try {
        env = transport.recv(coordinator_id, cfg.timeout_seconds);
      } catch (const Timeout&) {
        if (reelected)
          throw AggregatorClientFailure(
              "round " + std::to_string(t) +
              ": aggregation failed after re-election");
        reelected = true;
        elected = (elected + 1) % n;
        dispatch(ids[elected]);
        continue;
      }
      if (env.round != t &&
          !(env.msg_type == MsgType::kModelPayload && final_round))
        continue;
      switch (env.msg_type) {
        case MsgType::kRoundBarrier: {
          proto::Packed p =
              proto::unpack({env.payload.data(), env.payload.size()});
          for (const auto& [id, rep] :
               p.header.at("reports").items()) {
            out.ledger.record_phase(id, "train", t,
                                    rep.value("seconds", 0.0), 0);
            nlohmann::json rec = {
                {"round", t},
                {"client", id},
                {"phase", "train"},
                {"num_samples", rep.value("num_samples", std::uint64_t{0})}};
            if (rep.contains("metrics")) rec["metrics"] = rep["metrics"];
            out.round_log.push_back(std::move(rec));
          }
          out.ledger.record_phase(env.sender, "aggregate", t,
                                  p.header.value("agg_seconds", 0.0), 0);
          round_done = true;
          break;
        }
        case MsgType::kVariatePayload:
          state_bytes = env.payload;
          got_state = true;
          break;
        case MsgType::kModelPayload:
          if (final_round) {
            final_model =
                deserialize({env.payload.data(), env.payload.size()});
            have_final = true;
          }
          break;
        default:
          break;
      }
    }
  }
  if (!have_final)
    throw AggregationError("swarm run finished without a final model");

  final_evaluation(transport, cfg, coordinator_id, ids, final_model, out);
  append_comm_entries(out.ledger, transport, cfg.num_rounds);
  out.ledger.set_runtime_seconds(seconds_since(run_start));
  out.final_model = std::move(final_model);
  return out;
}

RunResult run_workflow(const WorkflowConfig& cfg,
                       const std::vector<std::string>& clients,
                       Transport& transport, const std::string& coordinator_id,
                       const ParameterSet& initial, const PowerModel& power) {
  switch (cfg.kind) {
    case WorkflowKind::kScatterGather:
      return run_scatter_gather(cfg, clients, transport, coordinator_id,
                                initial, power);
    case WorkflowKind::kCwt:
      return run_cyclic(cfg, clients, transport, coordinator_id, initial,
                        power, /*server_relayed=*/true);
    case WorkflowKind::kDcwt:
      return run_cyclic(cfg, clients, transport, coordinator_id, initial,
                        power, /*server_relayed=*/false);
    case WorkflowKind::kSwarm:
      return run_swarm(cfg, clients, transport, coordinator_id, initial,
                       power);
  }
  throw ConfigInvalid("unknown workflow kind");
}

void shutdown_clients(const std::vector<std::string>& clients,
                      Transport& transport, const std::string& coordinator_id) {
  for (const auto& id : clients) {
    nlohmann::json task = {{"task", "shutdown"}};
    try {
      transport.send(make_env(MsgType::kTaskAssign, coordinator_id, id, 0,
                              proto::pack(task, {})));
    } catch (const Error&) {
      // peer already gone — that is what shutdown wants anyway
    }
  }
}

}  // namespace fedseg
