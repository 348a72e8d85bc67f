#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedseg {

// Simulated thermal image with a per-pixel class-id mask (0 = background,
// 1..num_classes = foreground).
struct SynthImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> intensity;     // height*width, row-major
  std::vector<std::uint8_t> mask;   // height*width

  float& at(std::uint32_t r, std::uint32_t c) { return intensity[r * width + c]; }
  float at(std::uint32_t r, std::uint32_t c) const { return intensity[r * width + c]; }
  std::uint8_t& mask_at(std::uint32_t r, std::uint32_t c) { return mask[r * width + c]; }
  std::uint8_t mask_at(std::uint32_t r, std::uint32_t c) const { return mask[r * width + c]; }

  bool operator==(const SynthImage&) const = default;
};

using Dataset = std::vector<SynthImage>;

struct ClientManifest {
  std::uint32_t images = 0;
  std::map<std::string, std::uint32_t> counts;  // class name -> object count
  double intensity_offset = 0.0;  // additive shift, lets clients live in
                                  // disjoint intensity ranges
};

// Per-client object-count manifest in the shape of a city split.
struct ClassManifest {
  std::vector<std::string> classes;
  std::map<std::string, ClientManifest> clients;

  static ClassManifest from_json(const nlohmann::json& j);
  static ClassManifest load(const std::string& path);
  nlohmann::json to_json() const;

  std::uint32_t class_id(const std::string& name) const;  // 1-based
};

// Places the manifest's object counts as separated blobs with per-class
// intensity signatures; realized per-class connected-component counts equal
// the manifest exactly. Deterministic under (manifest, size, seed).
// Throws CapacityExceeded naming the offending client/class when objects
// cannot fit.
std::map<std::string, Dataset> generate(const ClassManifest& manifest,
                                        std::uint32_t image_size,
                                        std::uint64_t seed);

// Deterministic disjoint/exhaustive split; train size = round(fraction * n).
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset,
                                             double fraction,
                                             std::uint64_t seed);

// Disjoint exhaustive partition into k shards with sizes differing by <= 1.
// dirichlet_alpha < inf skews per-shard class composition (label skew); large
// alpha converges to a stratified equal split.
std::vector<Dataset> equal_partition(const Dataset& dataset, std::size_t k,
                                     std::uint64_t seed,
                                     double dirichlet_alpha = 1e18);

// Dominant foreground class of an image (0 when background only).
std::uint8_t dominant_class(const SynthImage& img);

// Connected-component count of one class id (4-connectivity); the test oracle
// for generation.
std::size_t connected_components(const SynthImage& img, std::uint8_t class_id);

// Across-client heterogeneity statistic: max over classes of
// max-client-frequency / mean-client-frequency.
double class_skew(const std::vector<Dataset>& shards, std::uint32_t num_classes);

// Dataset cache: header u32 H, u32 W, u32 count (LE); per image H*W f32
// intensities then H*W u8 mask values.
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

}  // namespace fedseg
