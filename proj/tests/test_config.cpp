#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "fedseg/config.hpp"
#include "fedseg/errors.hpp"

using namespace fedseg;

namespace {

nlohmann::json minimal_config() {
  return nlohmann::json::parse(R"({
    "workflow": {"kind": "sg", "num_rounds": 2,
                 "local": {"local_epochs": 1, "batch_size": 4}},
    "data": {"generator": {"classes": ["car", "person"], "num_clients": 2,
                           "images_per_client": 4, "objects_per_class": 2}},
    "model": {"height": 16, "width": 16, "num_classes": 2,
              "channel_widths": [4], "normalization": "group",
              "group_count": 2},
    "seed": 11
  })");
}

std::string message_of(const nlohmann::json& bad) {
  try {
    experiment_config_from_json(bad);
  } catch (const ConfigInvalid& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config parses with documented defaults") {
  auto cfg = experiment_config_from_json(minimal_config());
  CHECK(cfg.workflow.kind == WorkflowKind::kScatterGather);
  CHECK(cfg.workflow.num_rounds == 2);
  CHECK(cfg.workflow.aggregator.algorithm == Algorithm::kFedAvg);
  CHECK(cfg.workflow.local.learning_rate == doctest::Approx(0.001));
  CHECK(cfg.workflow.local.optimizer == Optimizer::kAdam);
  CHECK(cfg.workflow.local.focal_alpha == doctest::Approx(0.25));
  CHECK(cfg.workflow.local.focal_gamma == doctest::Approx(2.0));
  CHECK(cfg.data.manifest.clients.size() == 2);
  CHECK(cfg.data.manifest.clients.count("c0") == 1);
  CHECK(cfg.data.image_size == 16);
  CHECK(cfg.data.train_fraction == doctest::Approx(0.8));
  CHECK(cfg.mode == RunMode::kInProcess);
  CHECK(cfg.master_seed == 11);
  CHECK(cfg.power.busy_watts == doctest::Approx(10.0));
  CHECK(cfg.raw == minimal_config());
}

TEST_CASE("validation errors name the dotted field path") {
  auto base = minimal_config();

  auto j = base;
  j["workflow"]["aggregator"] = {{"algorithm", "fedprox"}, {"prox_mu", -0.5}};
  CHECK(message_of(j).find("workflow.aggregator.prox_mu") !=
        std::string::npos);

  j = base;
  j["workflow"]["kind"] = "gossip";
  CHECK(message_of(j).find("workflow.kind") != std::string::npos);

  j = base;
  j["workflow"]["num_rounds"] = 0;
  CHECK(message_of(j).find("workflow.num_rounds") != std::string::npos);

  j = base;
  j["workflow"]["local"]["learning_rate"] = 0.0;
  CHECK(message_of(j).find("workflow.local.learning_rate") !=
        std::string::npos);

  j = base;
  j["workflow"]["local"]["focal_alpha"] = 1.5;
  CHECK(message_of(j).find("workflow.local.focal_alpha") != std::string::npos);

  j = base;
  j["model"]["normalization"] = "layer";
  CHECK(message_of(j).find("model.normalization") != std::string::npos);

  j = base;
  j["data"]["train_fraction"] = 0.0;
  CHECK(message_of(j).find("data.train_fraction") != std::string::npos);

  j = base;
  j.erase("data");
  CHECK(message_of(j).find("data") != std::string::npos);

  j = base;
  j["data"]["manifest"] = {{"classes", {"a"}},
                           {"clients", nlohmann::json::object()}};
  CHECK(!message_of(j).empty());  // two data sources at once

  j = base;
  j["mode"] = "distributed";
  CHECK(message_of(j).find("mode") != std::string::npos);
}

TEST_CASE("aggregator knobs parse per algorithm") {
  auto j = minimal_config();
  j["workflow"]["aggregator"] = {{"algorithm", "fedopt"},
                                 {"server_lr", 0.5},
                                 {"server_momentum", 0.8}};
  auto cfg = experiment_config_from_json(j);
  CHECK(cfg.workflow.aggregator.algorithm == Algorithm::kFedOpt);
  CHECK(cfg.workflow.aggregator.server_lr == doctest::Approx(0.5));
  CHECK(cfg.workflow.aggregator.server_momentum == doctest::Approx(0.8));
  // "default" buffer policy resolves per algorithm
  CHECK(cfg.workflow.aggregator.buffer_policy ==
        default_buffer_policy(Algorithm::kFedOpt));

  j["workflow"]["aggregator"]["server_momentum"] = 1.0;
  CHECK(message_of(j).find("server_momentum") != std::string::npos);
}

TEST_CASE("cyclic fixed order must match the manifest clients") {
  auto j = minimal_config();
  j["workflow"]["kind"] = "cwt";
  j["workflow"]["cyclic_order"] = {{"mode", "fixed"},
                                   {"order", {"c0", "ghost"}}};
  CHECK(message_of(j).find("workflow.cyclic_order.order") !=
        std::string::npos);

  j["workflow"]["cyclic_order"]["order"] = {"c0"};
  CHECK(message_of(j).find("workflow.cyclic_order.order") !=
        std::string::npos);

  j["workflow"]["cyclic_order"]["order"] = {"c1", "c0"};
  auto cfg = experiment_config_from_json(j);
  CHECK(cfg.workflow.cyclic_order.fixed ==
        std::vector<std::string>{"c1", "c0"});

  j["workflow"]["cyclic_order"] = {{"mode", "random"}, {"seed", 9}};
  cfg = experiment_config_from_json(j);
  CHECK(cfg.workflow.cyclic_order.random_per_round);
  CHECK(cfg.workflow.cyclic_order.seed == 9);
}

TEST_CASE("model spec json round trips") {
  auto j = minimal_config();
  auto cfg = experiment_config_from_json(j);
  auto back = model_spec_from_json(model_spec_to_json(cfg.model));
  CHECK(back.height == cfg.model.height);
  CHECK(back.num_classes == cfg.model.num_classes);
  CHECK(back.channel_widths == cfg.model.channel_widths);
  CHECK(back.normalization == cfg.model.normalization);
}

TEST_CASE("budget parity warning fires beyond five percent") {
  auto j = minimal_config();
  // FL budget: 2 rounds * 1 epoch / 2 clients = 1.0
  j["cl_epochs"] = 1.0;
  CHECK(!budget_parity_warning(experiment_config_from_json(j)));
  j["cl_epochs"] = 1.04;
  CHECK(!budget_parity_warning(experiment_config_from_json(j)));
  j["cl_epochs"] = 2.0;
  auto warning = budget_parity_warning(experiment_config_from_json(j));
  REQUIRE(warning.has_value());
  CHECK(warning->find("epoch budget mismatch") != std::string::npos);
  j.erase("cl_epochs");
  CHECK(!budget_parity_warning(experiment_config_from_json(j)));
}

TEST_CASE("cli validate accepts good configs and rejects bad ones") {
  const char* bin = std::getenv("FEDSEG_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "FEDSEG_BIN must point at the cli binary");

  auto write = [](const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2);
  };
  std::string good = "/tmp/fedseg_cfg_good.json";
  std::string bad = "/tmp/fedseg_cfg_bad.json";
  write(good, minimal_config());
  auto broken = minimal_config();
  broken["workflow"]["aggregator"] = {{"algorithm", "fedprox"},
                                      {"prox_mu", -1.0}};
  write(bad, broken);

  auto run = [&](const std::string& cfg) {
    std::string cmd = std::string(bin) + " validate " + cfg +
                      " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run(good) == 0);
  CHECK(run(bad) == 2);
  CHECK(run("/tmp/no_such_config.json") == 2);
  std::remove(good.c_str());
  std::remove(bad.c_str());
}
