#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedseg {

// Declared (not measured) power figures; energy in reports is always modeled.
struct PowerModel {
  double idle_watts = 2.0;
  double busy_watts = 10.0;
  double joules_per_byte = 1e-7;

  void validate() const;
  nlohmann::json to_json() const;
  static PowerModel from_json(const nlohmann::json& j);
};

struct LedgerEntry {
  std::string node;
  std::uint32_t round = 0;
  std::string phase;  // "train", "aggregate", "comm", "idle", ...
  double seconds = 0.0;
  std::uint64_t bytes = 0;
  double energy_joules = 0.0;
};

struct LedgerTotals {
  double runtime_seconds = 0.0;
  double energy_joules = 0.0;
  std::uint64_t bytes = 0;
};

// Percentage deltas of `other` relative to `base`: (other - base) / base * 100.
// Always reported signed; presentation decides what to call the direction.
struct ComparisonReport {
  double runtime_pct = 0.0;
  double energy_pct = 0.0;
  double bytes_pct = 0.0;

  nlohmann::json to_json() const;
};

class RunLedger {
 public:
  RunLedger() = default;
  explicit RunLedger(PowerModel power) : power_(power) {}

  // Appends one entry; energy = seconds * watts(phase) + bytes * J/byte,
  // where phase "idle" bills idle watts and everything else busy watts.
  const LedgerEntry& record_phase(const std::string& node,
                                  const std::string& phase,
                                  std::uint32_t round, double seconds,
                                  std::uint64_t bytes);

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  const PowerModel& power() const { return power_; }

  // Wall-clock duration of the whole run; when unset, totals fall back to the
  // sum of entry seconds.
  void set_runtime_seconds(double seconds);
  LedgerTotals totals() const;

  // Per-node rollup of seconds / bytes / energy.
  std::map<std::string, LedgerTotals> per_node() const;

  void set_config_snapshot(nlohmann::json snapshot);
  const nlohmann::json& config_snapshot() const { return config_snapshot_; }

  std::string to_csv() const;                     // node,round,phase,...
  nlohmann::json summary_json() const;
  std::string report_text(const std::string& title) const;

 private:
  PowerModel power_;
  std::vector<LedgerEntry> entries_;
  double runtime_seconds_ = -1.0;
  nlohmann::json config_snapshot_;
};

ComparisonReport compare(const LedgerTotals& base, const LedgerTotals& other);
ComparisonReport compare(const RunLedger& base, const RunLedger& other);

}  // namespace fedseg
