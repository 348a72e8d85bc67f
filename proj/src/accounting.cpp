#include "fedseg/accounting.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "fedseg/errors.hpp"

namespace fedseg {

void PowerModel::validate() const {
  if (idle_watts < 0.0 || busy_watts < 0.0 || joules_per_byte < 0.0)
    throw ConfigInvalid("power: all figures must be nonnegative");
  if (busy_watts < idle_watts)
    throw ConfigInvalid("power.busy_watts: must be >= idle_watts");
}

nlohmann::json PowerModel::to_json() const {
  return {{"idle_watts", idle_watts},
          {"busy_watts", busy_watts},
          {"joules_per_byte", joules_per_byte}};
}

PowerModel PowerModel::from_json(const nlohmann::json& j) {
  PowerModel p;
  if (j.contains("idle_watts")) p.idle_watts = j["idle_watts"].get<double>();
  if (j.contains("busy_watts")) p.busy_watts = j["busy_watts"].get<double>();
  if (j.contains("joules_per_byte"))
    p.joules_per_byte = j["joules_per_byte"].get<double>();
  p.validate();
  return p;
}

nlohmann::json ComparisonReport::to_json() const {
  return {{"runtime_pct", runtime_pct},
          {"energy_pct", energy_pct},
          {"bytes_pct", bytes_pct}};
}

const LedgerEntry& RunLedger::record_phase(const std::string& node,
                                           const std::string& phase,
                                           std::uint32_t round, double seconds,
                                           std::uint64_t bytes) {
  if (seconds < 0.0 || !std::isfinite(seconds))
    throw NegativeDuration("phase '" + phase + "' on node " + node + ": " +
                           std::to_string(seconds) + " s");
  LedgerEntry e;
  e.node = node;
  e.round = round;
  e.phase = phase;
  e.seconds = seconds;
  e.bytes = bytes;
  double watts = phase == "idle" ? power_.idle_watts : power_.busy_watts;
  e.energy_joules = seconds * watts +
                    static_cast<double>(bytes) * power_.joules_per_byte;
  entries_.push_back(std::move(e));
  return entries_.back();
}

void RunLedger::set_runtime_seconds(double seconds) {
  if (seconds < 0.0) throw NegativeDuration("run duration " +
                                            std::to_string(seconds) + " s");
  runtime_seconds_ = seconds;
}

LedgerTotals RunLedger::totals() const {
  LedgerTotals t;
  for (const auto& e : entries_) {
    t.runtime_seconds += e.seconds;
    t.energy_joules += e.energy_joules;
    t.bytes += e.bytes;
  }
  if (runtime_seconds_ >= 0.0) t.runtime_seconds = runtime_seconds_;
  return t;
}

std::map<std::string, LedgerTotals> RunLedger::per_node() const {
  std::map<std::string, LedgerTotals> out;
  for (const auto& e : entries_) {
    auto& t = out[e.node];
    t.runtime_seconds += e.seconds;
    t.energy_joules += e.energy_joules;
    t.bytes += e.bytes;
  }
  return out;
}

void RunLedger::set_config_snapshot(nlohmann::json snapshot) {
  config_snapshot_ = std::move(snapshot);
}

std::string RunLedger::to_csv() const {
  std::ostringstream out;
  out << "node,round,phase,seconds,bytes,energy_joules\n";
  for (const auto& e : entries_) {
    out << e.node << ',' << e.round << ',' << e.phase << ','
        << std::setprecision(9) << e.seconds << ',' << e.bytes << ','
        << std::setprecision(9) << e.energy_joules << '\n';
  }
  return out.str();
}

nlohmann::json RunLedger::summary_json() const {
  auto t = totals();
  nlohmann::json nodes = nlohmann::json::object();
  for (const auto& [node, nt] : per_node()) {
    nodes[node] = {{"seconds", nt.runtime_seconds},
                   {"energy_joules", nt.energy_joules},
                   {"bytes", nt.bytes}};
  }
  nlohmann::json j = {{"energy_model", "modeled"},
                      {"power", power_.to_json()},
                      {"runtime_seconds", t.runtime_seconds},
                      {"energy_joules", t.energy_joules},
                      {"bytes", t.bytes},
                      {"per_node", nodes}};
  if (!config_snapshot_.is_null()) j["config"] = config_snapshot_;
  return j;
}

std::string RunLedger::report_text(const std::string& title) const {
  std::ostringstream out;
  out << title << " (modeled energy)\n";
  out << std::left << std::setw(16) << "node" << std::right << std::setw(14)
      << "seconds" << std::setw(16) << "bytes" << std::setw(16) << "energy J"
      << '\n';
  for (const auto& [node, t] : per_node()) {
    out << std::left << std::setw(16) << node << std::right << std::fixed
        << std::setprecision(3) << std::setw(14) << t.runtime_seconds
        << std::setw(16) << t.bytes << std::setw(16) << t.energy_joules
        << '\n';
    out.unsetf(std::ios::fixed);
  }
  auto t = totals();
  out << std::left << std::setw(16) << "total" << std::right << std::fixed
      << std::setprecision(3) << std::setw(14) << t.runtime_seconds
      << std::setw(16) << t.bytes << std::setw(16) << t.energy_joules << '\n';
  out.unsetf(std::ios::fixed);
  return out.str();
}

namespace {

double pct_delta(double base, double other, const char* what) {
  if (base == 0.0)
    throw ZeroBaseline(std::string("cannot compare ") + what +
                       " against a zero baseline");
  return (other - base) / base * 100.0;
}

}  // namespace

ComparisonReport compare(const LedgerTotals& base, const LedgerTotals& other) {
  ComparisonReport r;
  r.runtime_pct = pct_delta(base.runtime_seconds, other.runtime_seconds,
                            "runtime");
  r.energy_pct = pct_delta(base.energy_joules, other.energy_joules, "energy");
  r.bytes_pct = pct_delta(static_cast<double>(base.bytes),
                          static_cast<double>(other.bytes), "bytes");
  return r;
}

ComparisonReport compare(const RunLedger& base, const RunLedger& other) {
  return compare(base.totals(), other.totals());
}

}  // namespace fedseg
