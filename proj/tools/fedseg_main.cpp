#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "fedseg/config.hpp"
#include "fedseg/errors.hpp"
#include "fedseg/runner.hpp"

namespace {

// exit codes: 0 ok, 1 internal, 2 config, 3 timeout, 4 transport
int category_of(const fedseg::Error& e) {
  if (dynamic_cast<const fedseg::ConfigInvalid*>(&e)) return 2;
  if (dynamic_cast<const fedseg::Timeout*>(&e) ||
      dynamic_cast<const fedseg::ClientTimeout*>(&e))
    return 3;
  if (dynamic_cast<const fedseg::PeerDisconnected*>(&e) ||
      dynamic_cast<const fedseg::CrcMismatch*>(&e) ||
      dynamic_cast<const fedseg::MalformedFrame*>(&e))
    return 4;
  return 1;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fedseg::ConfigInvalid("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw fedseg::ConfigInvalid(path + " is not valid JSON: " + e.what());
  }
  return j;
}

std::pair<std::string, std::uint16_t> split_host_port(const std::string& addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos)
    throw fedseg::ConfigInvalid("--connect expects host:port, got " + addr);
  int port = std::stoi(addr.substr(colon + 1));
  if (port <= 0 || port > 65535)
    throw fedseg::ConfigInvalid("bad port in " + addr);
  return {addr.substr(0, colon), static_cast<std::uint16_t>(port)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated segmentation workbench"};
  app.require_subcommand(1);

  std::string config_path, matrix_path, connect_addr, client_id;
  std::string bench_out = "runs/bench";

  auto* run_cmd = app.add_subcommand("run", "execute one experiment config");
  run_cmd->add_option("config", config_path, "experiment config json")
      ->required();

  auto* bench_cmd =
      app.add_subcommand("bench", "run a (workflow x aggregator) matrix");
  bench_cmd->add_option("matrix", matrix_path, "bench matrix json")->required();
  bench_cmd->add_option("--out", bench_out, "report output directory");

  auto* validate_cmd =
      app.add_subcommand("validate", "check a config without running it");
  validate_cmd->add_option("config", config_path, "experiment config json")
      ->required();

  auto* client_cmd =
      app.add_subcommand("client", "serve as a remote training client");
  client_cmd->add_option("--connect", connect_addr, "coordinator host:port")
      ->required();
  client_cmd->add_option("--id", client_id, "client name")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      auto cfg = fedseg::load_experiment_config(config_path);
      auto artifacts = fedseg::run_experiment(cfg);
      std::cout << "run complete; artifacts in " << artifacts.output_dir
                << "\n";
      return 0;
    }
    if (*bench_cmd) {
      fedseg::run_bench(load_json(matrix_path), bench_out);
      return 0;
    }
    if (*validate_cmd) {
      auto cfg = fedseg::load_experiment_config(config_path);
      if (auto warning = fedseg::budget_parity_warning(cfg))
        std::cerr << "warning: " << *warning << "\n";
      std::cout << "config ok: " << config_path << "\n";
      return 0;
    }
    if (*client_cmd) {
      auto [host, port] = split_host_port(connect_addr);
      return fedseg::client_main(host, port, client_id);
    }
  } catch (const fedseg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return category_of(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
