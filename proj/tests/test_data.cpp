#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "fedseg/data.hpp"
#include "fedseg/errors.hpp"

using namespace fedseg;

namespace {

ClassManifest small_manifest() {
  return ClassManifest::from_json(nlohmann::json::parse(R"({
    "classes": ["car", "person", "manhole"],
    "clients": {
      "c0": {"images": 6, "counts": {"car": 5, "person": 3, "manhole": 2}},
      "c1": {"images": 4, "counts": {"car": 2, "person": 0, "manhole": 4},
             "intensity_offset": 0.5}
    }
  })"));
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/fedseg_data_test_") + name;
}

}  // namespace

TEST_CASE("manifest json round trip and class ids") {
  auto m = small_manifest();
  CHECK(m.classes.size() == 3);
  CHECK(m.class_id("car") == 1);
  CHECK(m.class_id("manhole") == 3);
  CHECK_THROWS_AS(m.class_id("bicycle"), ConfigInvalid);
  CHECK(m.clients.at("c1").intensity_offset == doctest::Approx(0.5));

  auto back = ClassManifest::from_json(m.to_json());
  CHECK(back.classes == m.classes);
  CHECK(back.clients.at("c0").counts == m.clients.at("c0").counts);

  CHECK_THROWS_AS(ClassManifest::from_json(nlohmann::json::parse(
                      R"({"clients": {}})")),
                  ConfigInvalid);
  CHECK_THROWS_AS(ClassManifest::from_json(nlohmann::json::parse(
                      R"({"classes": ["a"],
                          "clients": {"c": {"images": 1,
                                            "counts": {"b": 1}}}})")),
                  ConfigInvalid);
}

TEST_CASE("connected components per class match the manifest exactly") {
  auto m = small_manifest();
  auto sets = generate(m, 24, 42);
  REQUIRE(sets.size() == 2);
  for (const auto& [client, dataset] : sets) {
    const auto& spec = m.clients.at(client);
    REQUIRE(dataset.size() == spec.images);
    for (const auto& [cls, want] : spec.counts) {
      std::size_t got = 0;
      auto id = static_cast<std::uint8_t>(m.class_id(cls));
      for (const auto& img : dataset) got += connected_components(img, id);
      CHECK_MESSAGE(got == want, client, "/", cls);
    }
  }
}

TEST_CASE("client with zero count of a class has no such pixels") {
  auto m = small_manifest();
  auto sets = generate(m, 24, 7);
  const auto& c1 = sets.at("c1");
  auto person = static_cast<std::uint8_t>(m.class_id("person"));
  for (const auto& img : c1) {
    CHECK(std::count(img.mask.begin(), img.mask.end(), person) == 0);
  }
}

TEST_CASE("all-zero counts produce background-only masks") {
  auto m = ClassManifest::from_json(nlohmann::json::parse(R"({
    "classes": ["a"],
    "clients": {"solo": {"images": 3, "counts": {"a": 0}}}
  })"));
  auto sets = generate(m, 12, 3);
  for (const auto& img : sets.at("solo")) {
    for (auto px : img.mask) CHECK(px == 0);
  }
}

TEST_CASE("generation is bit-identical under the same seed") {
  auto m = small_manifest();
  auto a = generate(m, 20, 99);
  auto b = generate(m, 20, 99);
  CHECK(a == b);
  auto c = generate(m, 20, 100);
  CHECK(a != c);
}

TEST_CASE("intensity offset shifts a client's value range") {
  auto m = small_manifest();  // c1 has offset 0.5
  auto sets = generate(m, 20, 11);
  auto mean = [](const Dataset& d) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& img : d)
      for (auto v : img.intensity) {
        s += v;
        ++n;
      }
    return s / static_cast<double>(n);
  };
  CHECK(mean(sets.at("c1")) > mean(sets.at("c0")) + 0.3);
}

TEST_CASE("generation refuses impossible object densities") {
  auto m = ClassManifest::from_json(nlohmann::json::parse(R"({
    "classes": ["a"],
    "clients": {"dense": {"images": 1, "counts": {"a": 400}}}
  })"));
  CHECK_THROWS_AS(generate(m, 8, 1), CapacityExceeded);
}

TEST_CASE("train/test split is disjoint, exhaustive, and sized by fraction") {
  auto m = small_manifest();
  auto dataset = generate(m, 16, 5).at("c0");
  auto [train, test] = split_train_test(dataset, 0.8, 17);
  CHECK(train.size() == 5);  // round(0.8 * 6)
  CHECK(test.size() == 1);
  CHECK(train.size() + test.size() == dataset.size());

  // every original image appears exactly once across the two halves
  auto count_in = [&](const SynthImage& img) {
    auto n = std::count(train.begin(), train.end(), img);
    n += std::count(test.begin(), test.end(), img);
    return n;
  };
  for (const auto& img : dataset) CHECK(count_in(img) == 1);

  auto [train2, test2] = split_train_test(dataset, 0.8, 17);
  CHECK(train == train2);
  CHECK(test == test2);
}

TEST_CASE("equal partition balances sizes and exhausts the dataset") {
  auto m = ClassManifest::from_json(nlohmann::json::parse(R"({
    "classes": ["a", "b"],
    "clients": {"all": {"images": 11, "counts": {"a": 12, "b": 10}}}
  })"));
  auto dataset = generate(m, 16, 23).at("all");
  auto shards = equal_partition(dataset, 3, 9);
  REQUIRE(shards.size() == 3);
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  for (const auto& s : shards) {
    total += s.size();
    sizes.push_back(s.size());
  }
  CHECK(total == dataset.size());
  auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  CHECK(*hi - *lo <= 1);
}

TEST_CASE("small dirichlet alpha increases label skew") {
  auto m = ClassManifest::from_json(nlohmann::json::parse(R"({
    "classes": ["a", "b"],
    "clients": {"all": {"images": 40, "counts": {"a": 30, "b": 30}}}
  })"));
  auto dataset = generate(m, 16, 31).at("all");

  double skew_iid = 0.0, skew_noniid = 0.0;
  int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    skew_iid += class_skew(equal_partition(dataset, 4, 100 + s, 1e18), 2);
    skew_noniid += class_skew(equal_partition(dataset, 4, 100 + s, 0.05), 2);
  }
  CHECK(skew_noniid / seeds > skew_iid / seeds);
}

TEST_CASE("dominant class picks the most frequent foreground label") {
  SynthImage img;
  img.height = 2;
  img.width = 3;
  img.intensity.assign(6, 0.0f);
  img.mask = {0, 0, 1, 2, 2, 0};
  CHECK(dominant_class(img) == 2);
  img.mask.assign(6, 0);
  CHECK(dominant_class(img) == 0);
}

TEST_CASE("connected component counting follows 4-connectivity") {
  SynthImage img;
  img.height = 3;
  img.width = 3;
  img.intensity.assign(9, 0.0f);
  // two diagonal touches are separate components under 4-connectivity
  img.mask = {1, 0, 0,
              0, 1, 1,
              0, 0, 1};
  CHECK(connected_components(img, 1) == 2);
  CHECK(connected_components(img, 2) == 0);
}

TEST_CASE("dataset cache round trips and rejects truncation") {
  auto m = small_manifest();
  auto dataset = generate(m, 16, 13).at("c0");
  auto path = temp_path("cache.bin");
  save_dataset(path, dataset);
  auto loaded = load_dataset(path);
  CHECK(loaded == dataset);

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  in.close();
  auto truncated = temp_path("cache_trunc.bin");
  std::ofstream out(truncated, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  CHECK_THROWS_AS(load_dataset(truncated), MalformedPayload);
  std::remove(path.c_str());
  std::remove(truncated.c_str());
}
