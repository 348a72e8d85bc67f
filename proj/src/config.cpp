#include "fedseg/config.hpp"

#include <cmath>
#include <fstream>

#include "fedseg/errors.hpp"

namespace fedseg {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw ConfigInvalid(path + ": " + why);
}

const nlohmann::json& field(const nlohmann::json& j, const std::string& parent,
                            const char* name) {
  if (!j.contains(name)) fail(parent.empty() ? name : parent + "." + name,
                              "missing required field");
  return j[name];
}

template <typename T>
T get_or(const nlohmann::json& j, const char* name, T fallback,
         const std::string& parent) {
  if (!j.contains(name)) return fallback;
  try {
    return j[name].get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(parent + "." + name, "wrong type");
  }
}

AggregatorConfig parse_aggregator(const nlohmann::json& j,
                                  const std::string& path) {
  AggregatorConfig cfg;
  std::string alg = get_or<std::string>(j, "algorithm", "fedavg", path);
  if (alg == "fedavg") cfg.algorithm = Algorithm::kFedAvg;
  else if (alg == "fedprox") cfg.algorithm = Algorithm::kFedProx;
  else if (alg == "fedopt") cfg.algorithm = Algorithm::kFedOpt;
  else if (alg == "scaffold") cfg.algorithm = Algorithm::kScaffold;
  else fail(path + ".algorithm", "unknown algorithm '" + alg + "'");
  cfg.server_lr = get_or(j, "server_lr", 1.0, path);
  if (cfg.server_lr <= 0.0) fail(path + ".server_lr", "must be positive");
  cfg.server_momentum = get_or(j, "server_momentum", 0.9, path);
  if (cfg.server_momentum < 0.0 || cfg.server_momentum >= 1.0)
    fail(path + ".server_momentum", "must lie in [0, 1)");
  cfg.prox_mu = get_or(j, "prox_mu", 0.0, path);
  if (cfg.prox_mu < 0.0 || !std::isfinite(cfg.prox_mu))
    fail(path + ".prox_mu", "must be nonnegative");
  std::string pol = get_or<std::string>(j, "buffer_policy", "default", path);
  if (pol == "default") cfg.buffer_policy = default_buffer_policy(cfg.algorithm);
  else if (pol == "weighted_average")
    cfg.buffer_policy = BufferPolicy::kWeightedAverage;
  else if (pol == "keep_server") cfg.buffer_policy = BufferPolicy::kKeepServer;
  else if (pol == "require_stateless")
    cfg.buffer_policy = BufferPolicy::kRequireStateless;
  else fail(path + ".buffer_policy", "unknown policy '" + pol + "'");
  return cfg;
}

TrainConfig parse_local(const nlohmann::json& j, const std::string& path) {
  TrainConfig cfg;
  cfg.local_epochs = get_or<std::uint32_t>(j, "local_epochs", 1, path);
  cfg.batch_size = get_or<std::uint32_t>(j, "batch_size", 8, path);
  if (cfg.batch_size == 0) fail(path + ".batch_size", "must be positive");
  cfg.learning_rate = get_or(j, "learning_rate", 0.001, path);
  if (cfg.learning_rate <= 0.0) fail(path + ".learning_rate", "must be positive");
  std::string opt = get_or<std::string>(j, "optimizer", "adam", path);
  if (opt == "adam") cfg.optimizer = Optimizer::kAdam;
  else if (opt == "sgd") cfg.optimizer = Optimizer::kSgd;
  else fail(path + ".optimizer", "must be 'adam' or 'sgd'");
  cfg.focal_alpha = get_or(j, "focal_alpha", 0.25, path);
  if (cfg.focal_alpha < 0.0 || cfg.focal_alpha > 1.0)
    fail(path + ".focal_alpha", "must lie in [0, 1]");
  cfg.focal_gamma = get_or(j, "focal_gamma", 2.0, path);
  if (cfg.focal_gamma < 0.0) fail(path + ".focal_gamma", "must be nonnegative");
  return cfg;
}

WorkflowConfig parse_workflow(const nlohmann::json& j) {
  WorkflowConfig cfg;
  const std::string path = "workflow";
  std::string kind = get_or<std::string>(j, "kind", "sg", path);
  try {
    cfg.kind = workflow_kind_from_name(kind);
  } catch (const ConfigInvalid&) {
    fail(path + ".kind", "unknown workflow '" + kind + "'");
  }
  cfg.num_rounds = get_or<std::uint32_t>(j, "num_rounds", 1, path);
  if (cfg.num_rounds == 0) fail(path + ".num_rounds", "must be positive");
  if (j.contains("cyclic_order")) {
    const auto& co = j["cyclic_order"];
    std::string mode = get_or<std::string>(co, "mode", "fixed",
                                           path + ".cyclic_order");
    if (mode == "random") {
      cfg.cyclic_order.random_per_round = true;
      cfg.cyclic_order.seed =
          get_or<std::uint64_t>(co, "seed", 0, path + ".cyclic_order");
    } else if (mode == "fixed") {
      cfg.cyclic_order.fixed = get_or<std::vector<std::string>>(
          co, "order", {}, path + ".cyclic_order");
    } else {
      fail(path + ".cyclic_order.mode", "must be 'fixed' or 'random'");
    }
  }
  cfg.aggregator = parse_aggregator(
      j.contains("aggregator") ? j["aggregator"] : nlohmann::json::object(),
      path + ".aggregator");
  cfg.local = parse_local(
      j.contains("local") ? j["local"] : nlohmann::json::object(),
      path + ".local");
  cfg.timeout_seconds = get_or(j, "timeout_seconds", 120.0, path);
  if (cfg.timeout_seconds <= 0.0)
    fail(path + ".timeout_seconds", "must be positive");
  return cfg;
}

ClassManifest manifest_from_generator(const nlohmann::json& g) {
  const std::string path = "data.generator";
  auto classes = get_or<std::vector<std::string>>(g, "classes", {}, path);
  if (classes.empty()) fail(path + ".classes", "need at least one class");
  std::uint32_t clients = get_or<std::uint32_t>(g, "num_clients", 2, path);
  if (clients == 0) fail(path + ".num_clients", "must be positive");
  std::uint32_t images = get_or<std::uint32_t>(g, "images_per_client", 16, path);
  std::uint32_t objects = get_or<std::uint32_t>(g, "objects_per_class", 4, path);
  auto offsets = get_or<std::vector<double>>(g, "intensity_offsets", {}, path);
  if (!offsets.empty() && offsets.size() != clients)
    fail(path + ".intensity_offsets", "length must equal num_clients");
  ClassManifest m;
  m.classes = classes;
  for (std::uint32_t i = 0; i < clients; ++i) {
    ClientManifest cm;
    cm.images = images;
    for (const auto& cls : classes) cm.counts[cls] = objects;
    if (!offsets.empty()) cm.intensity_offset = offsets[i];
    m.clients["c" + std::to_string(i)] = std::move(cm);
  }
  return m;
}

DataConfig parse_data(const nlohmann::json& j) {
  DataConfig cfg;
  const std::string path = "data";
  int sources = j.contains("manifest") + j.contains("manifest_path") +
                j.contains("generator");
  if (sources != 1)
    fail(path, "exactly one of manifest / manifest_path / generator required");
  if (j.contains("manifest")) {
    cfg.manifest = ClassManifest::from_json(j["manifest"]);
  } else if (j.contains("manifest_path")) {
    cfg.manifest = ClassManifest::load(j["manifest_path"].get<std::string>());
  } else {
    cfg.manifest = manifest_from_generator(j["generator"]);
  }
  if (cfg.manifest.clients.empty()) fail(path, "manifest lists no clients");
  cfg.image_size = get_or<std::uint32_t>(j, "image_size", 16, path);
  if (cfg.image_size < 8) fail(path + ".image_size", "must be at least 8");
  cfg.train_fraction = get_or(j, "train_fraction", 0.8, path);
  if (cfg.train_fraction <= 0.0 || cfg.train_fraction > 1.0)
    fail(path + ".train_fraction", "must lie in (0, 1]");
  return cfg;
}

}  // namespace

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  const char* norm = "group";
  if (spec.normalization == Normalization::kBatchStats) norm = "batch";
  if (spec.normalization == Normalization::kNone) norm = "none";
  return {{"height", spec.height},
          {"width", spec.width},
          {"channels", spec.channels},
          {"num_classes", spec.num_classes},
          {"channel_widths", spec.channel_widths},
          {"normalization", norm},
          {"group_count", spec.group_count}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  const std::string path = "model";
  spec.height = get_or<std::uint32_t>(j, "height", 16, path);
  spec.width = get_or<std::uint32_t>(j, "width", 16, path);
  spec.channels = get_or<std::uint32_t>(j, "channels", 1, path);
  spec.num_classes = get_or<std::uint32_t>(j, "num_classes", 7, path);
  spec.channel_widths = get_or<std::vector<std::uint32_t>>(
      j, "channel_widths", {8, 8}, path);
  std::string norm = get_or<std::string>(j, "normalization", "group", path);
  if (norm == "group") spec.normalization = Normalization::kGroupStats;
  else if (norm == "batch") spec.normalization = Normalization::kBatchStats;
  else if (norm == "none") spec.normalization = Normalization::kNone;
  else fail(path + ".normalization", "must be 'group', 'batch', or 'none'");
  spec.group_count = get_or<std::uint32_t>(j, "group_count", 4, path);
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(path, e.what());
  }
  return spec;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigInvalid("config root must be a JSON object");
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.workflow = parse_workflow(
      j.contains("workflow") ? j["workflow"] : nlohmann::json::object());
  cfg.data = parse_data(field(j, "", "data"));
  cfg.model = model_spec_from_json(
      j.contains("model") ? j["model"] : nlohmann::json::object());
  cfg.power = PowerModel::from_json(
      j.contains("power") ? j["power"] : nlohmann::json::object());
  std::string mode = get_or<std::string>(j, "mode", "in_process", "");
  if (mode == "in_process") cfg.mode = RunMode::kInProcess;
  else if (mode == "multi_process") cfg.mode = RunMode::kMultiProcess;
  else fail("mode", "must be 'in_process' or 'multi_process'");
  cfg.output_dir = get_or<std::string>(j, "output_dir", "runs/out", "");
  cfg.master_seed = get_or<std::uint64_t>(j, "seed", 0, "");
  cfg.port = get_or<std::uint16_t>(j, "port", 0, "");
  if (j.contains("cl_epochs")) cfg.cl_epochs = j["cl_epochs"].get<double>();

  // cyclic fixed orders must name exactly the manifest's clients
  if ((cfg.workflow.kind == WorkflowKind::kCwt ||
       cfg.workflow.kind == WorkflowKind::kDcwt) &&
      !cfg.workflow.cyclic_order.random_per_round &&
      !cfg.workflow.cyclic_order.fixed.empty()) {
    for (const auto& id : cfg.workflow.cyclic_order.fixed) {
      if (!cfg.data.manifest.clients.count(id))
        fail("workflow.cyclic_order.order", "unknown client '" + id + "'");
    }
    if (cfg.workflow.cyclic_order.fixed.size() !=
        cfg.data.manifest.clients.size())
      fail("workflow.cyclic_order.order",
           "must list each manifest client exactly once");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("config " + path + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

std::optional<std::string> budget_parity_warning(const ExperimentConfig& cfg) {
  if (!cfg.cl_epochs) return std::nullopt;
  double fl = epoch_budget(cfg.workflow.num_rounds,
                           cfg.workflow.local.local_epochs,
                           static_cast<std::uint32_t>(
                               cfg.data.manifest.clients.size()));
  double cl = *cfg.cl_epochs;
  if (cl <= 0.0) return std::nullopt;
  double divergence = std::abs(fl - cl) / cl;
  if (divergence <= 0.05) return std::nullopt;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "epoch budget mismatch: FL budget %.3f vs CL epochs %.3f "
                "(%.1f%% apart, > 5%%)",
                fl, cl, divergence * 100.0);
  return std::string(buf);
}

}  // namespace fedseg
