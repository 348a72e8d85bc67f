#include "fedseg/params.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

#include "fedseg/errors.hpp"

namespace fedseg {

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? (values.empty() ? 0 : 1) : n;
}

void ParameterSet::add(std::string name, Tensor tensor) {
  if (entries_.count(name) != 0) {
    throw StructureMismatch("duplicate tensor name: " + name);
  }
  std::size_t expected = 1;
  for (auto d : tensor.shape) {
    if (d == 0) throw StructureMismatch("zero dimension in tensor " + name);
    expected *= d;
  }
  if (tensor.values.size() != expected) {
    throw StructureMismatch("value count " + std::to_string(tensor.values.size()) +
                            " does not match shape product " +
                            std::to_string(expected) + " for tensor " + name);
  }
  entries_.emplace(std::move(name), std::move(tensor));
}

void ParameterSet::add(std::string name, std::vector<std::uint32_t> shape,
                       std::vector<float> values, TensorKind kind) {
  add(std::move(name), Tensor{std::move(shape), std::move(values), kind});
}

bool ParameterSet::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw StructureMismatch("no tensor named " + name);
  }
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw StructureMismatch("no tensor named " + name);
  }
  return it->second;
}

std::size_t ParameterSet::value_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.values.size();
  return n;
}

ParameterSet ParameterSet::trainable_only() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) {
    if (t.kind == TensorKind::kTrainable) out.add(name, t);
  }
  return out;
}

ParameterSet ParameterSet::buffers_only() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) {
    if (t.kind == TensorKind::kPersistentBuffer) out.add(name, t);
  }
  return out;
}

bool ParameterSet::has_buffers() const {
  for (const auto& [name, t] : entries_) {
    if (t.kind == TensorKind::kPersistentBuffer) return true;
  }
  return false;
}

bool ParameterSet::same_structure(const ParameterSet& other,
                                  bool check_kinds) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    if (a->second.shape != b->second.shape) return false;
    if (check_kinds && a->second.kind != b->second.kind) return false;
  }
  return true;
}

bool ParameterSet::all_finite() const {
  for (const auto& [name, t] : entries_) {
    for (float v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) {
    out.add(name, Tensor{t.shape, std::vector<float>(t.values.size(), 0.0f),
                         t.kind});
  }
  return out;
}

ParameterSet axpy(double a, const ParameterSet& x, const ParameterSet& y) {
  if (!x.same_structure(y)) {
    throw StructureMismatch("axpy operands differ in names, shapes, or kinds");
  }
  ParameterSet out;
  auto xi = x.begin();
  auto yi = y.begin();
  for (; xi != x.end(); ++xi, ++yi) {
    const auto& xt = xi->second;
    const auto& yt = yi->second;
    std::vector<float> v(xt.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double r = a * static_cast<double>(xt.values[i]) +
                 static_cast<double>(yt.values[i]);
      v[i] = static_cast<float>(r);
      if (!std::isfinite(v[i])) {
        throw NonFiniteResult("axpy produced a non-finite value in tensor " +
                              xi->first);
      }
    }
    out.add(xi->first, Tensor{xt.shape, std::move(v), xt.kind});
  }
  return out;
}

ParameterSet scale(double a, const ParameterSet& x) {
  return axpy(a - 1.0, x, x);
}

ParameterSet apply_delta(const ParameterSet& full, const ParameterSet& delta) {
  if (!full.trainable_only().same_structure(delta)) {
    throw StructureMismatch("delta does not match the trainable subset");
  }
  ParameterSet out = full;
  for (const auto& [name, t] : delta) {
    auto& dst = out.at(name).values;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double v = static_cast<double>(dst[i]) + static_cast<double>(t.values[i]);
      if (!std::isfinite(v)) {
        throw NonFiniteResult("non-finite value applying delta to " + name);
      }
      dst[i] = static_cast<float>(v);
    }
  }
  return out;
}

double l2_norm_sq(const ParameterSet& x, const ParameterSet& reference) {
  ParameterSet xt = x.trainable_only();
  ParameterSet rt = reference.trainable_only();
  if (!xt.same_structure(rt)) {
    throw StructureMismatch("l2_norm_sq operands differ in trainable structure");
  }
  double acc = 0.0;
  auto a = xt.begin();
  auto b = rt.begin();
  for (; a != xt.end(); ++a, ++b) {
    const auto& av = a->second.values;
    const auto& bv = b->second.values;
    for (std::size_t i = 0; i < av.size(); ++i) {
      double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
      acc += d * d;
    }
  }
  return acc;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

namespace {

constexpr char kMagic[4] = {'F', 'F', 'P', 'S'};
constexpr std::uint16_t kFormatVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_]) |
                      static_cast<std::uint16_t>(bytes_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw MalformedPayload(std::string("truncated payload while reading ") + what,
                             pos_);
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const ParameterSet& p) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(p.size()));
  for (const auto& [name, t] : p) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.kind));
    out.push_back(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, d);
    for (float v : t.values) put_f32(out, v);
  }
  put_u32(out, crc32_of(out));
  return out;
}

ParameterSet deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw MalformedPayload("bad magic bytes", 0);
  }
  std::uint16_t version = r.u16("format version");
  if (version != kFormatVersion) {
    throw MalformedPayload("unsupported format version " + std::to_string(version),
                           4);
  }
  std::uint32_t count = r.u32("entry count");
  ParameterSet p;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::uint16_t name_len = r.u16("name length");
    std::string name = r.str(name_len, "tensor name");
    std::uint8_t kind_raw = r.u8("kind");
    if (kind_raw > 1) {
      throw MalformedPayload("invalid tensor kind " + std::to_string(kind_raw),
                             r.pos() - 1);
    }
    std::uint8_t rank = r.u8("rank");
    std::vector<std::uint32_t> shape(rank);
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      shape[i] = r.u32("dimension");
      if (shape[i] == 0) {
        throw MalformedPayload("zero dimension in tensor " + name, r.pos() - 4);
      }
      n *= shape[i];
    }
    if (n > (std::size_t{1} << 31) || n * 4 > r.remaining()) {
      throw MalformedPayload("value block exceeds remaining payload for " + name,
                             r.pos());
    }
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = r.f32("value");
    try {
      p.add(std::move(name), std::move(shape), std::move(values),
            static_cast<TensorKind>(kind_raw));
    } catch (const StructureMismatch& err) {
      throw MalformedPayload(err.what(), r.pos());
    }
  }
  std::size_t crc_pos = r.pos();
  std::uint32_t stored = r.u32("trailing crc32");
  std::uint32_t actual = crc32_of(bytes.subspan(0, crc_pos));
  if (stored != actual) {
    throw MalformedPayload("crc32 mismatch", crc_pos);
  }
  if (r.remaining() != 0) {
    throw MalformedPayload("trailing bytes after crc32", r.pos());
  }
  return p;
}

}  // namespace fedseg
