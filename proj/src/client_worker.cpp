#include <chrono>
#include <deque>
#include <iostream>

#include "fedseg/errors.hpp"
#include "fedseg/workflow.hpp"

namespace fedseg {

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

ParameterSet with_buffers(ParameterSet full, const ParameterSet& buffers) {
  for (const auto& [name, t] : buffers) full.at(name).values = t.values;
  return full;
}

class Worker {
 public:
  Worker(Transport& transport, WorkerOptions options)
      : transport_(transport), opt_(std::move(options)) {
    objective_ = opt_.objective;
  }

  void run() {
    transport_.register_node(opt_.id);
    nlohmann::json hello = {{"client", opt_.id}};
    transport_.send(make_env(MsgType::kRegister, opt_.id, opt_.coordinator_id,
                             0, proto::pack(hello, {})));
    for (;;) {
      Envelope env;
      try {
        env = transport_.recv(opt_.id, opt_.timeout_seconds);
      } catch (const Timeout&) {
        return;  // coordinator went quiet; nothing left to serve
      } catch (const PeerDisconnected&) {
        return;
      }
      if (!handle(env)) return;
    }
  }

 private:
  bool handle(const Envelope& env) {
    switch (env.msg_type) {
      case MsgType::kModelPayload:
        model_ = deserialize({env.payload.data(), env.payload.size()});
        model_tag_ = env.round;
        has_model_ = true;
        return true;
      case MsgType::kVariatePayload:
        store_variate(env);
        return true;
      case MsgType::kResultSubmit:
        results_.push_back(env);
        return true;
      case MsgType::kTaskAssign: {
        auto p = proto::unpack({env.payload.data(), env.payload.size()});
        return dispatch(p.header);
      }
      case MsgType::kAbort:
        return false;
      default:
        return true;
    }
  }

  void store_variate(const Envelope& env) {
    auto p = proto::unpack({env.payload.data(), env.payload.size()});
    std::string kind = p.header.value("kind", "agg_state");
    if (kind == "global_variate") {
      global_variate_ = p.blobs.at(0);
      has_global_variate_ = true;
    } else {
      state_bytes_ = env.payload;
      has_state_ = true;
    }
  }

  bool dispatch(const nlohmann::json& task) {
    std::string name = task.at("task").get<std::string>();
    if (name == "shutdown") return false;
    try {
      if (name == "setup") do_setup(task);
      else if (name == "train") do_train(task);
      else if (name == "cyc_train") do_cyc_train(task);
      else if (name == "aggregate") do_aggregate(task);
      else if (name == "eval") do_eval(task);
      else std::cerr << opt_.id << ": unknown task '" << name << "'\n";
    } catch (const Error& e) {
      std::cerr << opt_.id << ": task '" << name << "' failed: " << e.what()
                << "\n";
      return false;
    }
    return true;
  }

  LocalObjective& objective() {
    if (!objective_)
      throw ConfigInvalid("client " + opt_.id +
                          " has no objective (missing setup?)");
    return *objective_;
  }

  void do_setup(const nlohmann::json& task) {
    if (!opt_.factory)
      throw ConfigInvalid("client " + opt_.id + " cannot build an objective");
    owned_ = opt_.factory(task.at("config"));
    objective_ = owned_.get();
    nlohmann::json ack = {{"client", opt_.id}, {"ack", "setup"}};
    transport_.send(make_env(MsgType::kHeartbeat, opt_.id, opt_.coordinator_id,
                             0, proto::pack(ack, {})));
  }

  struct Trained {
    ClientUpdate update;
    ParameterSet local_final;
    double seconds = 0.0;
    nlohmann::json metrics;
  };

  Trained train_once(const TrainConfig& cfg, bool scaffold) {
    if (!has_model_)
      throw ConfigInvalid("client " + opt_.id + " asked to train without a model");
    ParameterSet start = model_;
    Trained out;
    auto t0 = Clock::now();
    if (scaffold) {
      ScaffoldVariates cv;
      cv.client = has_client_variate_ ? client_variate_
                                      : start.trainable_only().zeros_like();
      cv.global = has_global_variate_ ? global_variate_
                                      : start.trainable_only().zeros_like();
      out.update = train_local(objective(), start, cfg,
                               cfg.prox_mu > 0.0 ? &start : nullptr, &cv);
    } else {
      out.update = train_local(objective(), start, cfg,
                               cfg.prox_mu > 0.0 ? &start : nullptr);
    }
    out.seconds = seconds_since(t0);
    if (out.update.new_variate) {
      client_variate_ = *out.update.new_variate;
      has_client_variate_ = true;
    }
    out.local_final = apply_delta(start, out.update.delta);
    if (out.update.buffers)
      out.local_final = with_buffers(out.local_final, *out.update.buffers);
    out.metrics = objective().evaluate(out.local_final, cfg);
    return out;
  }

  void do_train(const nlohmann::json& task) {
    TrainConfig cfg = proto::train_config_from_json(task.at("train"));
    std::uint32_t round = task.at("round").get<std::uint32_t>();
    std::string submit_to = task.at("submit_to").get<std::string>();
    bool scaffold = task.value("scaffold", false);
    Trained r = train_once(cfg, scaffold);
    nlohmann::json header = {
        {"client", opt_.id},
        {"round", round},
        {"num_samples", r.update.num_samples},
        {"seconds", r.seconds},
        {"metrics", r.metrics},
        {"has_buffers", r.update.buffers.has_value()},
        {"has_variate", r.update.new_variate.has_value()}};
    std::vector<ParameterSet> blobs = {r.update.delta};
    if (r.update.buffers) blobs.push_back(*r.update.buffers);
    if (r.update.new_variate) blobs.push_back(*r.update.new_variate);
    transport_.send(make_env(MsgType::kResultSubmit, opt_.id, submit_to, round,
                             proto::pack(header, blobs)));
  }

  // Blocks until the model tagged `tag` has arrived (cyclic relay hand-off).
  void await_model(std::uint32_t tag) {
    while (!(has_model_ && model_tag_ == tag)) {
      Envelope env = transport_.recv(opt_.id, opt_.timeout_seconds);
      if (env.msg_type == MsgType::kModelPayload) {
        model_ = deserialize({env.payload.data(), env.payload.size()});
        model_tag_ = env.round;
        has_model_ = true;
      } else if (env.msg_type == MsgType::kVariatePayload) {
        store_variate(env);
      } else if (env.msg_type == MsgType::kResultSubmit) {
        results_.push_back(env);
      }
      // TaskAssign while waiting can only be a retry of the current task
    }
  }

  void do_cyc_train(const nlohmann::json& task) {
    TrainConfig cfg = proto::train_config_from_json(task.at("train"));
    std::uint32_t hop = task.at("hop").get<std::uint32_t>();
    await_model(task.at("await_tag").get<std::uint32_t>());
    Trained r = train_once(cfg, /*scaffold=*/false);
    model_ = r.local_final;
    model_tag_ = hop;
    std::string next = task.at("next").get<std::string>();
    nlohmann::json header = {{"client", opt_.id},
                             {"round", hop},
                             {"num_samples", r.update.num_samples},
                             {"seconds", r.seconds},
                             {"metrics", r.metrics}};
    if (task.at("relay").get<std::string>() == "server") {
      header["full"] = true;
      transport_.send(make_env(MsgType::kResultSubmit, opt_.id,
                               opt_.coordinator_id, hop,
                               proto::pack(header, {r.local_final})));
    } else {
      transport_.send(make_env(MsgType::kModelPayload, opt_.id, next, hop,
                               serialize(r.local_final)));
      transport_.send(make_env(MsgType::kRoundBarrier, opt_.id,
                               opt_.coordinator_id, hop,
                               proto::pack(header, {})));
    }
  }

  void do_aggregate(const nlohmann::json& task) {
    std::uint32_t round = task.at("round").get<std::uint32_t>();
    auto ids = task.at("clients").get<std::vector<std::string>>();
    bool final_round = task.value("final", false);
    AggregatorConfig acfg =
        proto::aggregator_config_from_json(task.at("aggregator"));

    std::map<std::string, ClientUpdate> updates;
    std::map<std::string, nlohmann::json> headers;
    auto consume = [&](const Envelope& env) {
      if (env.msg_type != MsgType::kResultSubmit || env.round != round) return;
      auto p = proto::unpack({env.payload.data(), env.payload.size()});
      std::string who = p.header.at("client").get<std::string>();
      ClientUpdate u;
      u.source_client = who;
      u.num_samples = p.header.at("num_samples").get<std::uint64_t>();
      u.round = round;
      std::size_t next = 0;
      u.delta = p.blobs.at(next++);
      if (p.header.value("has_buffers", false)) u.buffers = p.blobs.at(next++);
      if (p.header.value("has_variate", false))
        u.new_variate = p.blobs.at(next++);
      headers[who] = std::move(p.header);
      updates[who] = std::move(u);
    };

    while (!results_.empty()) {
      consume(results_.front());
      results_.pop_front();
    }
    while (updates.size() < ids.size() || !has_state_) {
      Envelope env = transport_.recv(opt_.id, opt_.timeout_seconds);
      if (env.msg_type == MsgType::kResultSubmit) consume(env);
      else if (env.msg_type == MsgType::kVariatePayload) store_variate(env);
      else if (env.msg_type == MsgType::kModelPayload) {
        model_ = deserialize({env.payload.data(), env.payload.size()});
        model_tag_ = env.round;
        has_model_ = true;
      }
    }

    AggregationState state =
        proto::unpack_state({state_bytes_.data(), state_bytes_.size()});
    has_state_ = false;
    std::vector<ClientUpdate> ordered;
    for (auto& [id, u] : updates) ordered.push_back(std::move(u));

    auto t0 = Clock::now();
    ParameterSet new_global = apply_aggregation(model_, ordered, state, acfg);
    double agg_seconds = seconds_since(t0);
    model_ = new_global;

    auto model_bytes = serialize(new_global);
    for (const auto& id : ids) {
      if (id == opt_.id) continue;
      transport_.send(make_env(MsgType::kModelPayload, opt_.id, id, round,
                               model_bytes));
    }
    transport_.send(make_env(MsgType::kVariatePayload, opt_.id,
                             opt_.coordinator_id, round,
                             proto::pack_state(state)));
    nlohmann::json reports = nlohmann::json::object();
    for (const auto& [id, h] : headers) {
      reports[id] = {{"num_samples", h.value("num_samples", std::uint64_t{0})},
                     {"seconds", h.value("seconds", 0.0)},
                     {"metrics", h.value("metrics", nlohmann::json())}};
    }
    nlohmann::json barrier = {{"client", opt_.id},
                              {"reports", reports},
                              {"agg_seconds", agg_seconds}};
    transport_.send(make_env(MsgType::kRoundBarrier, opt_.id,
                             opt_.coordinator_id, round,
                             proto::pack(barrier, {})));
    if (final_round) {
      transport_.send(make_env(MsgType::kModelPayload, opt_.id,
                               opt_.coordinator_id, round, model_bytes));
    }
  }

  void do_eval(const nlohmann::json& task) {
    TrainConfig cfg = proto::train_config_from_json(task.at("train"));
    std::uint32_t round = task.at("round").get<std::uint32_t>();
    if (!has_model_)
      throw ConfigInvalid("client " + opt_.id + " asked to evaluate without a model");
    nlohmann::json header = {{"client", opt_.id},
                             {"metrics", objective().evaluate(model_, cfg)}};
    transport_.send(make_env(MsgType::kRoundBarrier, opt_.id,
                             opt_.coordinator_id, round,
                             proto::pack(header, {})));
  }

  Transport& transport_;
  WorkerOptions opt_;
  std::unique_ptr<LocalObjective> owned_;
  LocalObjective* objective_ = nullptr;

  ParameterSet model_;
  bool has_model_ = false;
  std::uint32_t model_tag_ = 0;

  ParameterSet client_variate_, global_variate_;
  bool has_client_variate_ = false, has_global_variate_ = false;

  std::vector<std::uint8_t> state_bytes_;
  bool has_state_ = false;
  std::deque<Envelope> results_;
};

}  // namespace

void serve_client(Transport& transport, WorkerOptions options) {
  Worker(transport, std::move(options)).run();
}

}  // namespace fedseg
