#include "fedseg/runner.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "fedseg/errors.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/transport_tcp.hpp"

namespace fedseg {

namespace {

constexpr const char* kCoordinatorId = "coordinator";

nlohmann::json setup_json(const ExperimentConfig& cfg, const std::string& id,
                          std::uint64_t data_seed) {
  return {{"client", id},
          {"model", model_spec_to_json(cfg.model)},
          {"manifest", cfg.data.manifest.to_json()},
          {"image_size", cfg.data.image_size},
          {"train_fraction", cfg.data.train_fraction},
          {"data_seed", data_seed}};
}

Envelope task_env(const std::string& recipient, const nlohmann::json& task) {
  Envelope env;
  env.msg_type = MsgType::kTaskAssign;
  env.sender = kCoordinatorId;
  env.recipient = recipient;
  env.round = 0;
  env.payload = proto::pack(task, {});
  env.seal();
  return env;
}

// Waits for Register from every client, pushes their setup tasks, then waits
// for the setup acks.
void prepare_clients(Transport& transport, const ExperimentConfig& cfg,
                     const std::vector<std::string>& ids,
                     std::uint64_t data_seed, double timeout) {
  std::set<std::string> pending(ids.begin(), ids.end());
  while (!pending.empty()) {
    Envelope env = transport.recv(kCoordinatorId, timeout);
    if (env.msg_type == MsgType::kRegister) pending.erase(env.sender);
  }
  for (const auto& id : ids) {
    nlohmann::json task = {{"task", "setup"},
                           {"config", setup_json(cfg, id, data_seed)}};
    transport.send(task_env(id, task));
  }
  pending.insert(ids.begin(), ids.end());
  while (!pending.empty()) {
    Envelope env = transport.recv(kCoordinatorId, timeout);
    if (env.msg_type != MsgType::kHeartbeat) continue;
    auto p = proto::unpack({env.payload.data(), env.payload.size()});
    if (p.header.value("ack", "") == "setup")
      pending.erase(p.header.value("client", env.sender));
  }
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigInvalid("cannot write artifact: " + path.string());
  out << body;
}

void write_artifacts(const ExperimentConfig& cfg, const RunResult& result,
                     const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  nlohmann::json snapshot = cfg.raw;
  snapshot["seed"] = cfg.master_seed;
  write_file(fs::path(out_dir) / "config_snapshot.json", snapshot.dump(2) + "\n");

  std::string jsonl;
  for (const auto& rec : result.round_log) jsonl += rec.dump() + "\n";
  write_file(fs::path(out_dir) / "metrics.jsonl", jsonl);

  write_file(fs::path(out_dir) / "ledger.csv", result.ledger.to_csv());

  nlohmann::json summary = result.ledger.summary_json();
  try {
    summary["final_metrics"] = overall_from_log(result.round_log).to_json();
  } catch (const Error&) {
    // runs without evaluation records keep a bare summary
  }
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");

  auto model_bytes = serialize(result.final_model);
  std::ofstream model(fs::path(out_dir) / "final_model.bin", std::ios::binary);
  model.write(reinterpret_cast<const char*>(model_bytes.data()),
              static_cast<std::streamsize>(model_bytes.size()));
}

RunResult run_in_process(const ExperimentConfig& cfg,
                         const std::vector<std::string>& ids,
                         const WorkflowConfig& wf, const ParameterSet& initial,
                         std::uint64_t data_seed) {
  SimBus bus;
  bus.register_node(kCoordinatorId);
  std::vector<std::thread> workers;
  for (const auto& id : ids) {
    workers.emplace_back([&bus, id] {
      WorkerOptions opt;
      opt.id = id;
      opt.coordinator_id = kCoordinatorId;
      opt.timeout_seconds = 600.0;
      opt.factory = experiment_objective_factory();
      serve_client(bus, std::move(opt));
    });
  }
  RunResult result;
  try {
    prepare_clients(bus, cfg, ids, data_seed, wf.timeout_seconds);
    result = run_workflow(wf, ids, bus, kCoordinatorId, initial, cfg.power);
  } catch (...) {
    shutdown_clients(ids, bus, kCoordinatorId);
    for (auto& t : workers) t.join();
    throw;
  }
  shutdown_clients(ids, bus, kCoordinatorId);
  for (auto& t : workers) t.join();
  return result;
}

RunResult run_multi_process(const ExperimentConfig& cfg,
                            const std::vector<std::string>& ids,
                            const WorkflowConfig& wf,
                            const ParameterSet& initial,
                            std::uint64_t data_seed) {
  TcpHub hub(kCoordinatorId);
  std::uint16_t port = hub.listen(cfg.port);

  std::string exe;
  if (const char* env = std::getenv("FEDSEG_BIN")) exe = env;
  else exe = "/proc/self/exe";

  std::vector<pid_t> children;
  for (const auto& id : ids) {
    pid_t pid = fork();
    if (pid < 0) throw PeerDisconnected("fork failed");
    if (pid == 0) {
      std::string addr = "127.0.0.1:" + std::to_string(port);
      execl(exe.c_str(), "fedseg", "client", "--connect", addr.c_str(),
            "--id", id.c_str(), static_cast<char*>(nullptr));
      std::cerr << "execl " << exe << " failed: " << strerror(errno) << "\n";
      _exit(127);
    }
    children.push_back(pid);
  }

  RunResult result;
  try {
    prepare_clients(hub, cfg, ids, data_seed, wf.timeout_seconds);
    result = run_workflow(wf, ids, hub, kCoordinatorId, initial, cfg.power);
    shutdown_clients(ids, hub, kCoordinatorId);
  } catch (...) {
    shutdown_clients(ids, hub, kCoordinatorId);
    for (pid_t pid : children) kill(pid, SIGKILL);
    for (pid_t pid : children) waitpid(pid, nullptr, 0);
    hub.shutdown();
    throw;
  }
  for (pid_t pid : children) {
    int status = 0;
    waitpid(pid, &status, 0);
  }
  hub.shutdown();
  return result;
}

}  // namespace

ObjectiveFactory experiment_objective_factory() {
  return [](const nlohmann::json& setup) -> std::unique_ptr<LocalObjective> {
    std::string id = setup.at("client").get<std::string>();
    ClassManifest manifest = ClassManifest::from_json(setup.at("manifest"));
    ModelSpec spec = model_spec_from_json(setup.at("model"));
    std::uint32_t image_size = setup.at("image_size").get<std::uint32_t>();
    double fraction = setup.at("train_fraction").get<double>();
    std::uint64_t data_seed = setup.at("data_seed").get<std::uint64_t>();

    auto datasets = generate(manifest, image_size, data_seed);
    auto it = datasets.find(id);
    if (it == datasets.end())
      throw ConfigInvalid("manifest has no client named " + id);
    auto [train, test] = split_train_test(
        it->second, fraction, derive_seed(data_seed, proto::stable_hash(id)));
    return std::make_unique<SegNetObjective>(spec, std::move(train),
                                             std::move(test));
  };
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  if (auto warning = budget_parity_warning(cfg))
    std::cerr << "warning: " << *warning << "\n";

  std::vector<std::string> ids;
  for (const auto& [id, cm] : cfg.data.manifest.clients) ids.push_back(id);

  std::uint64_t data_seed = derive_seed(cfg.master_seed, 101);
  std::uint64_t init_seed = derive_seed(cfg.master_seed, 102);
  WorkflowConfig wf = cfg.workflow;
  wf.local.seed = derive_seed(cfg.master_seed, 103);

  ParameterSet initial = SegNet(cfg.model).initial_params(init_seed);

  RunResult result = cfg.mode == RunMode::kInProcess
                         ? run_in_process(cfg, ids, wf, initial, data_seed)
                         : run_multi_process(cfg, ids, wf, initial, data_seed);

  std::string out_dir = cfg.output_dir;
  if (const char* env = std::getenv("FEDSEG_OUTPUT_DIR")) out_dir = env;
  write_artifacts(cfg, result, out_dir);
  return {std::move(result), out_dir};
}

MetricReport overall_from_log(const std::vector<nlohmann::json>& round_log) {
  std::map<std::string, MetricReport> reports;
  std::map<std::string, std::size_t> sizes;
  for (const auto& rec : round_log) {
    if (rec.value("phase", "") != "final_eval" || !rec.contains("metrics"))
      continue;
    std::string client = rec.at("client").get<std::string>();
    reports[client] = MetricReport::from_json(rec["metrics"]);
    sizes[client] = rec["metrics"].value("test_images", std::size_t{1});
  }
  return overall(reports, sizes);
}

nlohmann::json run_bench(const nlohmann::json& matrix,
                         const std::string& out_dir) {
  if (!matrix.contains("cells") || !matrix["cells"].is_array() ||
      matrix["cells"].empty())
    throw ConfigInvalid("cells: bench matrix needs at least one cell");
  std::uint32_t repeats = matrix.value("repeats", 1u);
  if (repeats == 0) throw ConfigInvalid("repeats: must be positive");
  std::uint64_t seed = matrix.value("seed", std::uint64_t{0});

  // parse every cell up front; budget violations refuse the whole matrix
  struct Cell {
    std::string name;
    ExperimentConfig cfg;
  };
  std::vector<Cell> cells;
  std::size_t index = 0;
  for (const auto& cj : matrix["cells"]) {
    Cell cell;
    cell.name = cj.value("name", "cell" + std::to_string(index));
    if (!cj.contains("config"))
      throw ConfigInvalid("cells[" + std::to_string(index) +
                          "].config: missing");
    cell.cfg = experiment_config_from_json(cj["config"]);
    if (matrix.contains("cl_epochs"))
      cell.cfg.cl_epochs = matrix["cl_epochs"].get<double>();
    if (auto warning = budget_parity_warning(cell.cfg)) {
      std::cerr << "warning: " << *warning << "\n";
      throw ConfigInvalid("cells[" + std::to_string(index) + "] (" +
                          cell.name + "): refusing to run: " + *warning);
    }
    cells.push_back(std::move(cell));
    ++index;
  }

  const char* metric_names[] = {"macc", "mwp", "mwf1", "mwiou"};
  nlohmann::json report;
  report["repeats"] = repeats;
  report["cells"] = nlohmann::json::array();
  std::vector<LedgerTotals> cell_totals;

  for (std::size_t c = 0; c < cells.size(); ++c) {
    nlohmann::json cell_out = {{"name", cells[c].name}};
    std::map<std::string, std::vector<double>> samples;
    LedgerTotals totals_acc;
    bool failed = false;
    for (std::uint32_t r = 0; r < repeats && !failed; ++r) {
      ExperimentConfig cfg = cells[c].cfg;
      cfg.master_seed = derive_seed(seed, c, r);
      cfg.output_dir = out_dir + "/" + cells[c].name + "/rep" +
                       std::to_string(r);
      try {
        RunArtifacts art = run_experiment(cfg);
        MetricReport m = overall_from_log(art.result.round_log);
        samples["macc"].push_back(m.macc);
        samples["mwp"].push_back(m.mwp);
        samples["mwf1"].push_back(m.mwf1);
        samples["mwiou"].push_back(m.mwiou);
        auto t = art.result.ledger.totals();
        totals_acc.runtime_seconds += t.runtime_seconds;
        totals_acc.energy_joules += t.energy_joules;
        totals_acc.bytes += t.bytes;
      } catch (const Error& e) {
        cell_out["error"] = e.what();
        failed = true;
      }
    }
    if (!failed) {
      nlohmann::json metrics;
      for (const char* name : metric_names) {
        const auto& v = samples[name];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        double std_dev =
            v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1))
                         : 0.0;
        metrics[name] = {{"mean", mean}, {"std", std_dev}};
      }
      cell_out["metrics"] = metrics;
      LedgerTotals mean_totals{
          totals_acc.runtime_seconds / repeats,
          totals_acc.energy_joules / repeats,
          totals_acc.bytes / repeats};
      cell_out["totals"] = {{"runtime_seconds", mean_totals.runtime_seconds},
                            {"energy_joules", mean_totals.energy_joules},
                            {"bytes", mean_totals.bytes}};
      cell_totals.push_back(mean_totals);
      if (cell_totals.size() > 1)
        cell_out["vs_base"] = compare(cell_totals.front(), mean_totals).to_json();
    } else {
      cell_totals.push_back(LedgerTotals{});
    }
    report["cells"].push_back(std::move(cell_out));
  }

  // plain-text table, one row per cell
  std::string text = "bench report (modeled energy), mean +/- std over " +
                     std::to_string(repeats) + " repeats\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-20s %18s %18s %18s %18s\n", "cell",
                "mACC", "mwP", "mwF1", "mwIoU");
  text += line;
  for (const auto& cell : report["cells"]) {
    if (cell.contains("error")) {
      std::snprintf(line, sizeof(line), "%-20s FAILED: %s\n",
                    cell["name"].get<std::string>().c_str(),
                    cell["error"].get<std::string>().c_str());
      text += line;
      continue;
    }
    const auto& m = cell["metrics"];
    std::snprintf(
        line, sizeof(line),
        "%-20s %9.4f+/-%6.4f %9.4f+/-%6.4f %9.4f+/-%6.4f %9.4f+/-%6.4f\n",
        cell["name"].get<std::string>().c_str(),
        m["macc"]["mean"].get<double>(), m["macc"]["std"].get<double>(),
        m["mwp"]["mean"].get<double>(), m["mwp"]["std"].get<double>(),
        m["mwf1"]["mean"].get<double>(), m["mwf1"]["std"].get<double>(),
        m["mwiou"]["mean"].get<double>(), m["mwiou"]["std"].get<double>());
    text += line;
  }

  std::filesystem::create_directories(out_dir);
  write_file(std::filesystem::path(out_dir) / "bench.json",
             report.dump(2) + "\n");
  write_file(std::filesystem::path(out_dir) / "bench_report.txt", text);
  std::cout << text;
  return report;
}

int client_main(const std::string& host, std::uint16_t port,
                const std::string& id) {
  TcpClient transport(host, port, id);
  WorkerOptions opt;
  opt.id = id;
  opt.coordinator_id = kCoordinatorId;
  opt.timeout_seconds = 600.0;
  opt.factory = experiment_objective_factory();
  serve_client(transport, std::move(opt));
  return 0;
}

}  // namespace fedseg
