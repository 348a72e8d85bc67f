#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fedseg {

enum class TensorKind : std::uint8_t { kTrainable = 0, kPersistentBuffer = 1 };

struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
  TensorKind kind = TensorKind::kTrainable;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

// Named flat f32 tensors with deterministic (lexicographic) iteration order.
// Values are immutable through the public API; arithmetic constructs new sets.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;

  ParameterSet() = default;

  // Throws StructureMismatch on duplicate name or shape/value-length mismatch.
  void add(std::string name, Tensor tensor);
  void add(std::string name, std::vector<std::uint32_t> shape,
           std::vector<float> values, TensorKind kind = TensorKind::kTrainable);

  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t value_count() const;

  ParameterSet trainable_only() const;
  ParameterSet buffers_only() const;
  bool has_buffers() const;

  // Structural equality of names, shapes and (optionally) kinds.
  bool same_structure(const ParameterSet& other, bool check_kinds = true) const;
  bool all_finite() const;

  ParameterSet zeros_like() const;

  bool operator==(const ParameterSet&) const = default;

 private:
  Map entries_;
};

// a*x + y elementwise over all entries; 64-bit intermediates, f32 storage.
// Throws StructureMismatch / NonFiniteResult.
ParameterSet axpy(double a, const ParameterSet& x, const ParameterSet& y);

// a*x elementwise.
ParameterSet scale(double a, const ParameterSet& x);

// Sum of squared differences over trainable entries only (64-bit accumulate).
double l2_norm_sq(const ParameterSet& x, const ParameterSet& reference);

// Adds a trainable-subset delta into a full parameter set (buffers untouched).
ParameterSet apply_delta(const ParameterSet& full, const ParameterSet& delta);

// Model payload format: magic "FFPS", version u16 LE, entry count u32 LE;
// per entry: name-length u16 LE + UTF-8 name, kind u8, rank u8, dims u32 LE,
// raw f32 LE values; trailing CRC32 (of all preceding bytes) u32 LE.
std::vector<std::uint8_t> serialize(const ParameterSet& p);
ParameterSet deserialize(std::span<const std::uint8_t> bytes);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace fedseg
