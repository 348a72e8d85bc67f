#include "fedseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>

#include "fedseg/errors.hpp"
#include "fedseg/rng.hpp"

namespace fedseg {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Blob {
  std::uint32_t r0, c0, r1, c1;  // inclusive bounding box
  bool ellipse;

  bool covers(std::uint32_t r, std::uint32_t c) const {
    if (r < r0 || r > r1 || c < c0 || c > c1) return false;
    if (!ellipse) return true;
    double cy = 0.5 * (r0 + r1), cx = 0.5 * (c0 + c1);
    double by = 0.5 * (r1 - r0) + 0.5, bx = 0.5 * (c1 - c0) + 0.5;
    double dy = (r - cy) / by, dx = (c - cx) / bx;
    return dy * dy + dx * dx <= 1.0;
  }
};

// A blob may be placed only where its bounding box, grown by one pixel, meets
// no existing foreground. Same-class blobs then never merge and cross-class
// blobs never carve each other up, so connected components per class stay
// equal to the manifest counts.
bool placement_free(const SynthImage& img, const Blob& b) {
  std::uint32_t lo_r = b.r0 == 0 ? 0 : b.r0 - 1;
  std::uint32_t lo_c = b.c0 == 0 ? 0 : b.c0 - 1;
  std::uint32_t hi_r = std::min(img.height - 1, b.r1 + 1);
  std::uint32_t hi_c = std::min(img.width - 1, b.c1 + 1);
  for (std::uint32_t r = lo_r; r <= hi_r; ++r)
    for (std::uint32_t c = lo_c; c <= hi_c; ++c)
      if (img.mask_at(r, c) != 0) return false;
  return true;
}

}  // namespace

ClassManifest ClassManifest::from_json(const nlohmann::json& j) {
  ClassManifest m;
  if (!j.contains("classes") || !j["classes"].is_array())
    throw ConfigInvalid("/classes: expected an array of class names");
  for (const auto& c : j["classes"]) m.classes.push_back(c.get<std::string>());
  if (!j.contains("clients") || !j["clients"].is_object())
    throw ConfigInvalid("/clients: expected an object keyed by client id");
  for (const auto& [id, cj] : j["clients"].items()) {
    ClientManifest cm;
    cm.images = cj.at("images").get<std::uint32_t>();
    if (cj.contains("counts")) {
      for (const auto& [name, n] : cj["counts"].items()) {
        if (std::find(m.classes.begin(), m.classes.end(), name) ==
            m.classes.end())
          throw ConfigInvalid("/clients/" + id + "/counts/" + name +
                              ": class not listed in /classes");
        cm.counts[name] = n.get<std::uint32_t>();
      }
    }
    if (cj.contains("intensity_offset"))
      cm.intensity_offset = cj["intensity_offset"].get<double>();
    m.clients[id] = std::move(cm);
  }
  return m;
}

ClassManifest ClassManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open manifest file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("manifest " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ClassManifest::to_json() const {
  nlohmann::json j;
  j["classes"] = classes;
  j["clients"] = nlohmann::json::object();
  for (const auto& [id, cm] : clients) {
    nlohmann::json cj;
    cj["images"] = cm.images;
    cj["counts"] = cm.counts;
    if (cm.intensity_offset != 0.0) cj["intensity_offset"] = cm.intensity_offset;
    j["clients"][id] = std::move(cj);
  }
  return j;
}

std::uint32_t ClassManifest::class_id(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return static_cast<std::uint32_t>(i + 1);
  throw ConfigInvalid("unknown class name: " + name);
}

std::map<std::string, Dataset> generate(const ClassManifest& manifest,
                                        std::uint32_t image_size,
                                        std::uint64_t seed) {
  if (image_size < 8) throw ConfigInvalid("image_size must be at least 8");
  std::map<std::string, Dataset> out;
  for (const auto& [client_id, cm] : manifest.clients) {
    auto rng = make_rng(derive_seed(seed, fnv1a(client_id)));
    std::normal_distribution<double> noise(0.0, 0.05);

    Dataset images(cm.images);
    for (auto& img : images) {
      img.height = img.width = image_size;
      img.intensity.resize(image_size * image_size);
      img.mask.assign(image_size * image_size, 0);
      for (auto& v : img.intensity)
        v = static_cast<float>(-0.5 + cm.intensity_offset + noise(rng));
    }

    std::uint32_t max_extent = std::max(2u, image_size / 4);
    for (std::size_t ci = 0; ci < manifest.classes.size(); ++ci) {
      const std::string& cls = manifest.classes[ci];
      auto it = cm.counts.find(cls);
      std::uint32_t want = it == cm.counts.end() ? 0 : it->second;
      if (want > 0 && cm.images == 0)
        throw CapacityExceeded("client " + client_id + ", class " + cls +
                               ": objects requested but zero images");
      // per-class thermal signature; classes stay separable by intensity
      double signature = 0.3 + 0.12 * static_cast<double>(ci + 1);

      for (std::uint32_t placed = 0; placed < want;) {
        bool ok = false;
        for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
          SynthImage& img = images[rng() % images.size()];
          std::uniform_int_distribution<std::uint32_t> extent(2, max_extent);
          std::uint32_t h = extent(rng), w = extent(rng);
          if (h >= image_size || w >= image_size) continue;
          Blob b;
          b.r0 = rng() % (image_size - h);
          b.c0 = rng() % (image_size - w);
          b.r1 = b.r0 + h - 1;
          b.c1 = b.c0 + w - 1;
          b.ellipse = (rng() & 1u) != 0;
          if (!placement_free(img, b)) continue;
          for (std::uint32_t r = b.r0; r <= b.r1; ++r) {
            for (std::uint32_t c = b.c0; c <= b.c1; ++c) {
              if (!b.covers(r, c)) continue;
              img.mask_at(r, c) = static_cast<std::uint8_t>(ci + 1);
              img.at(r, c) = static_cast<float>(signature +
                                                cm.intensity_offset +
                                                0.4 * noise(rng));
            }
          }
          ok = true;
        }
        if (!ok)
          throw CapacityExceeded("client " + client_id + ", class " + cls +
                                 ": could not place object " +
                                 std::to_string(placed + 1) + " of " +
                                 std::to_string(want));
        ++placed;
      }
    }
    out[client_id] = std::move(images);
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset,
                                             double fraction,
                                             std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ConfigInvalid("split fraction must lie in [0, 1]");
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(derive_seed(seed, 0x5711ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t train_n = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(dataset.size())));
  Dataset train, test;
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < train_n ? train : test).push_back(dataset[idx[i]]);
  return {std::move(train), std::move(test)};
}

std::vector<Dataset> equal_partition(const Dataset& dataset, std::size_t k,
                                     std::uint64_t seed,
                                     double dirichlet_alpha) {
  if (k == 0) throw ConfigInvalid("partition requires k >= 1");
  if (dataset.size() < k)
    throw DatasetTooSmall("cannot split " + std::to_string(dataset.size()) +
                          " images across " + std::to_string(k) + " shards");
  auto rng = make_rng(derive_seed(seed, 0xe9a1ULL));
  std::size_t n = dataset.size();
  std::vector<std::size_t> capacity(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++capacity[i];

  // bucket indices by dominant class, shuffled within each bucket
  std::map<std::uint8_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i)
    by_class[dominant_class(dataset[i])].push_back(i);
  for (auto& [cls, idx] : by_class) std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<Dataset> shards(k);
  for (auto& [cls, idx] : by_class) {
    // per-class Dirichlet preference over shards; huge alpha -> near-uniform,
    // i.e. a stratified split
    std::gamma_distribution<double> gamma(std::min(dirichlet_alpha, 1e12), 1.0);
    std::vector<double> pref(k);
    double total = 0.0;
    for (auto& p : pref) total += (p = std::max(gamma(rng), 1e-300));
    for (auto& p : pref) p /= total;

    for (std::size_t i : idx) {
      // sample shard with probability proportional to preference times
      // remaining capacity, so shard sizes come out exact
      double mass = 0.0;
      for (std::size_t s = 0; s < k; ++s)
        mass += pref[s] * static_cast<double>(capacity[s]);
      std::uniform_real_distribution<double> u(0.0, mass);
      double pick = u(rng), acc = 0.0;
      std::size_t chosen = k - 1;
      for (std::size_t s = 0; s < k; ++s) {
        acc += pref[s] * static_cast<double>(capacity[s]);
        if (pick <= acc && capacity[s] > 0) {
          chosen = s;
          break;
        }
      }
      while (capacity[chosen] == 0) chosen = (chosen + 1) % k;
      shards[chosen].push_back(dataset[i]);
      --capacity[chosen];
    }
  }
  return shards;
}

std::uint8_t dominant_class(const SynthImage& img) {
  std::map<std::uint8_t, std::size_t> counts;
  for (std::uint8_t m : img.mask)
    if (m != 0) ++counts[m];
  std::uint8_t best = 0;
  std::size_t best_n = 0;
  for (const auto& [cls, n] : counts) {
    if (n > best_n) {
      best = cls;
      best_n = n;
    }
  }
  return best;
}

std::size_t connected_components(const SynthImage& img, std::uint8_t class_id) {
  std::vector<char> seen(img.mask.size(), 0);
  std::size_t components = 0;
  for (std::uint32_t r = 0; r < img.height; ++r) {
    for (std::uint32_t c = 0; c < img.width; ++c) {
      std::size_t i = r * img.width + c;
      if (seen[i] || img.mask[i] != class_id || class_id == 0) continue;
      ++components;
      std::deque<std::pair<std::uint32_t, std::uint32_t>> frontier{{r, c}};
      seen[i] = 1;
      while (!frontier.empty()) {
        auto [fr, fc] = frontier.front();
        frontier.pop_front();
        const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          std::int64_t nr = static_cast<std::int64_t>(fr) + dr[d];
          std::int64_t nc = static_cast<std::int64_t>(fc) + dc[d];
          if (nr < 0 || nc < 0 || nr >= img.height || nc >= img.width) continue;
          std::size_t ni = static_cast<std::size_t>(nr) * img.width +
                           static_cast<std::size_t>(nc);
          if (!seen[ni] && img.mask[ni] == class_id) {
            seen[ni] = 1;
            frontier.push_back({static_cast<std::uint32_t>(nr),
                                static_cast<std::uint32_t>(nc)});
          }
        }
      }
    }
  }
  return components;
}

double class_skew(const std::vector<Dataset>& shards,
                  std::uint32_t num_classes) {
  if (shards.empty()) throw EmptyInput("class_skew needs at least one shard");
  std::size_t k = shards.size();
  double worst = 0.0;
  for (std::uint32_t cls = 1; cls <= num_classes; ++cls) {
    std::vector<double> freq(k, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      if (shards[s].empty()) continue;
      std::size_t hits = 0;
      for (const auto& img : shards[s])
        if (dominant_class(img) == cls) ++hits;
      freq[s] = static_cast<double>(hits) /
                static_cast<double>(shards[s].size());
    }
    double mean = std::accumulate(freq.begin(), freq.end(), 0.0) /
                  static_cast<double>(k);
    if (mean <= 0.0) continue;
    worst = std::max(worst, *std::max_element(freq.begin(), freq.end()) / mean);
  }
  return worst;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigInvalid("cannot open dataset cache for write: " + path);
  std::uint32_t h = dataset.empty() ? 0 : dataset[0].height;
  std::uint32_t w = dataset.empty() ? 0 : dataset[0].width;
  std::uint32_t count = static_cast<std::uint32_t>(dataset.size());
  auto put_u32 = [&](std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v),
                         static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16),
                         static_cast<std::uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(h);
  put_u32(w);
  put_u32(count);
  for (const auto& img : dataset) {
    if (img.height != h || img.width != w)
      throw ShapeMismatch("dataset cache requires uniform image dimensions");
    out.write(reinterpret_cast<const char*>(img.intensity.data()),
              static_cast<std::streamsize>(img.intensity.size() * 4));
    out.write(reinterpret_cast<const char*>(img.mask.data()),
              static_cast<std::streamsize>(img.mask.size()));
  }
  if (!out) throw ConfigInvalid("short write on dataset cache: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigInvalid("cannot open dataset cache: " + path);
  auto get_u32 = [&]() {
    std::uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw MalformedPayload("truncated dataset cache header", 0);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  std::uint32_t h = get_u32(), w = get_u32(), count = get_u32();
  Dataset out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& img = out[i];
    img.height = h;
    img.width = w;
    img.intensity.resize(static_cast<std::size_t>(h) * w);
    img.mask.resize(static_cast<std::size_t>(h) * w);
    in.read(reinterpret_cast<char*>(img.intensity.data()),
            static_cast<std::streamsize>(img.intensity.size() * 4));
    in.read(reinterpret_cast<char*>(img.mask.data()),
            static_cast<std::streamsize>(img.mask.size()));
    if (!in)
      throw MalformedPayload(
          "truncated dataset cache at image " + std::to_string(i), 12);
  }
  char extra;
  if (in.read(&extra, 1))
    throw MalformedPayload("trailing bytes after dataset cache body", 12);
  return out;
}

}  // namespace fedseg
