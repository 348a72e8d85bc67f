#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "fedseg/aggregate.hpp"
#include "fedseg/errors.hpp"
#include "fedseg/params.hpp"

using namespace fedseg;

namespace {

ParameterSet scalar_model(float w) {
  ParameterSet p;
  p.add("t", {1}, {w});
  return p;
}

ClientUpdate update_for(const std::string& id, const ParameterSet& global,
                        float local_weight, std::uint64_t n,
                        std::uint32_t round = 0) {
  ClientUpdate u;
  u.source_client = id;
  u.num_samples = n;
  u.round = round;
  u.delta = axpy(-1.0, global.trainable_only(), scalar_model(local_weight));
  return u;
}

AggregatorConfig fedavg_cfg() {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kFedAvg;
  return cfg;
}

}  // namespace

TEST_CASE("fed_avg single client identity") {
  auto global = scalar_model(0.0f);
  auto out = fed_avg(global, {update_for("a", global, 3.5f, 10)}, fedavg_cfg());
  CHECK(out.at("t").values[0] == doctest::Approx(3.5f));
}

TEST_CASE("fed_avg weighted by Table-1-shaped client sizes") {
  auto global = scalar_model(0.0f);
  std::vector<ClientUpdate> ups = {update_for("mu", global, 1.0f, 700),
                                   update_for("ka", global, 5.0f, 93)};
  auto out = fed_avg(global, ups, fedavg_cfg());
  double expected = (700.0 * 1.0 + 93.0 * 5.0) / 793.0;
  CHECK(out.at("t").values[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("fed_avg consensus fixed point ignores sample counts") {
  auto global = scalar_model(2.0f);
  std::vector<ClientUpdate> ups = {update_for("a", global, 4.0f, 5),
                                   update_for("b", global, 4.0f, 5000),
                                   update_for("c", global, 4.0f, 1)};
  auto out = fed_avg(global, ups, fedavg_cfg());
  CHECK(out.at("t").values[0] == doctest::Approx(4.0f));
}

TEST_CASE("fed_avg error paths") {
  auto global = scalar_model(0.0f);
  CHECK_THROWS_AS(fed_avg(global, {}, fedavg_cfg()), EmptyUpdateSet);
  CHECK_THROWS_AS(
      fed_avg(global, {update_for("a", global, 1.0f, 0)}, fedavg_cfg()),
      ZeroTotalWeight);
  ClientUpdate bad = update_for("b", global, 1.0f, 3);
  bad.delta = ParameterSet{};
  bad.delta.add("other", {1}, {0.0f});
  CHECK_THROWS_AS(fed_avg(global, {bad}, fedavg_cfg()), StructureMismatch);
  ClientUpdate wrong_round = update_for("c", global, 1.0f, 3, 7);
  CHECK_THROWS_AS(
      fed_avg(global, {update_for("a", global, 1.0f, 3), wrong_round},
              fedavg_cfg()),
      StructureMismatch);
}

TEST_CASE("fed_avg convex hull and permutation invariance") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> wdist(-3.0f, 3.0f);
  std::uniform_int_distribution<std::uint64_t> ndist(1, 500);
  for (int rep = 0; rep < 30; ++rep) {
    auto global = scalar_model(wdist(rng));
    std::vector<ClientUpdate> ups;
    float lo = 1e9f, hi = -1e9f;
    for (int i = 0; i < 4; ++i) {
      float w = wdist(rng);
      lo = std::min(lo, w);
      hi = std::max(hi, w);
      ups.push_back(update_for("c" + std::to_string(i), global, w, ndist(rng)));
    }
    auto out = fed_avg(global, ups, fedavg_cfg());
    float v = out.at("t").values[0];
    CHECK(v >= lo - 1e-5f);
    CHECK(v <= hi + 1e-5f);

    auto shuffled = ups;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto out2 = fed_avg(global, shuffled, fedavg_cfg());
    CHECK(out2.at("t").values[0] == v);
  }
}

TEST_CASE("fed_avg with equal weights equals the unweighted mean") {
  auto global = scalar_model(0.0f);
  std::vector<ClientUpdate> ups = {update_for("a", global, 1.0f, 42),
                                   update_for("b", global, 2.0f, 42),
                                   update_for("c", global, 6.0f, 42)};
  auto out = fed_avg(global, ups, fedavg_cfg());
  CHECK(out.at("t").values[0] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("fed_opt single client full step") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kFedOpt;
  cfg.server_lr = 1.0;
  cfg.server_momentum = 0.0;
  auto global = scalar_model(1.0f);
  auto [next, state] =
      fed_opt_update(global, {update_for("a", global, 4.0f, 9)}, {}, cfg);
  CHECK(next.at("t").values[0] == doctest::Approx(4.0f));
  CHECK(state.round == 1);
}

TEST_CASE("fed_opt zero deltas decay the momentum buffer") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kFedOpt;
  cfg.server_momentum = 0.5;
  auto global = scalar_model(2.0f);
  ServerOptState state;
  state.momentum = global.trainable_only().zeros_like();
  state.momentum.at("t").values[0] = 0.8f;
  auto [next, st] =
      fed_opt_update(global, {update_for("a", global, 2.0f, 9)}, state, cfg);
  CHECK(next.at("t").values[0] == doctest::Approx(2.0 - 1.0 * 0.4));
  CHECK(st.momentum.at("t").values[0] == doctest::Approx(0.4f));
}

TEST_CASE("fed_opt two momentum rounds accumulate d + (d + 0.9 d)") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kFedOpt;
  cfg.server_lr = 1.0;
  cfg.server_momentum = 0.9;
  const double d = 0.25;
  auto global = scalar_model(0.0f);
  ServerOptState state;
  ClientUpdate u;
  u.source_client = "a";
  u.num_samples = 3;
  u.delta = scalar_model(static_cast<float>(d));
  auto [w1, s1] = fed_opt_update(global, {u}, state, cfg);
  CHECK(w1.at("t").values[0] == doctest::Approx(d));
  auto [w2, s2] = fed_opt_update(w1, {u}, s1, cfg);
  CHECK(w2.at("t").values[0] == doctest::Approx(d + (d + 0.9 * d)));
  CHECK(s2.round == 2);
}

TEST_CASE("fed_opt uses the unweighted mean of deltas") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kFedOpt;
  cfg.server_lr = 1.0;
  cfg.server_momentum = 0.0;
  auto global = scalar_model(0.0f);
  std::vector<ClientUpdate> ups = {update_for("a", global, 1.0f, 1),
                                   update_for("b", global, 3.0f, 999)};
  auto [next, st] = fed_opt_update(global, ups, {}, cfg);
  CHECK(next.at("t").values[0] == doctest::Approx(2.0f));  // not 2.998
}

namespace {

std::pair<std::vector<ClientUpdate>, ControlVariates> scaffold_fixture(
    const ParameterSet& global, std::vector<float> deltas,
    std::vector<float> variates) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < deltas.size(); ++i)
    ids.push_back("c" + std::to_string(i));
  ControlVariates cv(global, ids);
  std::vector<ClientUpdate> ups;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    ClientUpdate u;
    u.source_client = ids[i];
    u.num_samples = 10;
    u.delta = scalar_model(deltas[i]);
    u.new_variate = scalar_model(0.0f);
    ups.push_back(std::move(u));
    cv.set_client(ids[i], scalar_model(variates[i]));
  }
  cv.refresh_global();
  return {std::move(ups), std::move(cv)};
}

}  // namespace

TEST_CASE("scaffold with zero variates reduces to the mean delta step") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kScaffold;
  cfg.server_lr = 1.0;
  auto global = scalar_model(1.0f);
  auto [ups, cv] = scaffold_fixture(global, {0.5f, 1.5f}, {0.0f, 0.0f});
  auto [next, cv2] = scaffold_update(global, ups, cv, cfg);
  CHECK(next.at("t").values[0] == doctest::Approx(2.0f));
}

TEST_CASE("scaffold exact cancellation keeps the global fixed") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kScaffold;
  cfg.server_lr = 1.0;
  auto global = scalar_model(3.0f);
  // delta_i = c_i - c with c = mean(c_i) = 0
  auto [ups, cv] = scaffold_fixture(global, {1.0f, -1.0f}, {1.0f, -1.0f});
  auto [next, cv2] = scaffold_update(global, ups, cv, cfg);
  CHECK(next.at("t").values[0] == doctest::Approx(3.0f));
}

TEST_CASE("scaffold scalar oracle from the update equation") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kScaffold;
  cfg.server_lr = 0.5;
  auto global = scalar_model(10.0f);
  auto [ups, cv] = scaffold_fixture(global, {2.0f, 4.0f}, {1.0f, -1.0f});
  auto [next, cv2] = scaffold_update(global, ups, cv, cfg);
  // w + 0.5 * ((2-1)+(4+1))/2 = w + 1.5
  CHECK(next.at("t").values[0] == doctest::Approx(11.5f));
}

TEST_CASE("scaffold global variate averages over all registered clients") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kScaffold;
  auto global = scalar_model(0.0f);
  ControlVariates cv(global, {"a", "b", "c", "d"});
  ClientUpdate u;
  u.source_client = "a";
  u.num_samples = 5;
  u.delta = scalar_model(1.0f);
  u.new_variate = scalar_model(8.0f);
  auto [next, cv2] = scaffold_update(global, {u}, cv, cfg);
  // only one of four registered clients reported a nonzero variate
  CHECK(cv2.global().at("t").values[0] == doctest::Approx(2.0f));
}

TEST_CASE("scaffold missing variate errors") {
  AggregatorConfig cfg;
  cfg.algorithm = Algorithm::kScaffold;
  auto global = scalar_model(0.0f);
  ControlVariates cv(global, {"registered"});
  ClientUpdate u;
  u.source_client = "stranger";
  u.num_samples = 5;
  u.delta = scalar_model(1.0f);
  u.new_variate = scalar_model(0.0f);
  CHECK_THROWS_AS(scaffold_update(global, {u}, cv, cfg), MissingVariate);

  ClientUpdate no_variate;
  no_variate.source_client = "registered";
  no_variate.num_samples = 5;
  no_variate.delta = scalar_model(1.0f);
  CHECK_THROWS_AS(scaffold_update(global, {no_variate}, cv, cfg),
                  MissingVariate);
}

TEST_CASE("scaffold with zero variates matches fed_opt(momentum=0, lr=1)") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
  for (int rep = 0; rep < 25; ++rep) {
    auto global = scalar_model(dist(rng));
    std::vector<float> deltas = {dist(rng), dist(rng), dist(rng)};
    auto [ups, cv] = scaffold_fixture(global, deltas, {0.0f, 0.0f, 0.0f});
    AggregatorConfig sc;
    sc.algorithm = Algorithm::kScaffold;
    sc.server_lr = 1.0;
    auto [w_scaffold, cv2] = scaffold_update(global, ups, cv, sc);
    AggregatorConfig fo;
    fo.algorithm = Algorithm::kFedOpt;
    fo.server_lr = 1.0;
    fo.server_momentum = 0.0;
    auto [w_fedopt, st] = fed_opt_update(global, ups, {}, fo);
    CHECK(w_scaffold.at("t").values[0] ==
          doctest::Approx(w_fedopt.at("t").values[0]).epsilon(1e-7));
  }
}

TEST_CASE("FedProx server aggregation is byte-identical to FedAvg") {
  auto global = scalar_model(0.5f);
  std::vector<ClientUpdate> ups = {update_for("a", global, 1.25f, 7),
                                   update_for("b", global, -0.75f, 13)};
  AggregatorConfig avg = fedavg_cfg();
  AggregatorConfig prox;
  prox.algorithm = Algorithm::kFedProx;
  prox.prox_mu = 0.1;
  AggregationState s1, s2;
  auto a = apply_aggregation(global, ups, s1, avg);
  auto b = apply_aggregation(global, ups, s2, prox);
  CHECK(serialize(a) == serialize(b));
}

TEST_CASE("buffer policies") {
  ParameterSet global;
  global.add("w", {1}, {0.0f});
  global.add("rm", {1}, {4.0f}, TensorKind::kPersistentBuffer);

  auto mk = [&](float w, float buf, std::uint64_t n) {
    ClientUpdate u;
    u.source_client = "c" + std::to_string(n);
    u.num_samples = n;
    u.delta = scalar_model(w);
    ParameterSet b;
    b.add("rm", {1}, {buf}, TensorKind::kPersistentBuffer);
    u.buffers = b;
    return u;
  };

  SUBCASE("no buffers, any policy, empty result") {
    ParameterSet none;
    ClientUpdate u;
    u.source_client = "a";
    u.num_samples = 1;
    u.delta = scalar_model(0.0f);
    for (auto pol : {BufferPolicy::kWeightedAverage, BufferPolicy::kKeepServer,
                     BufferPolicy::kRequireStateless}) {
      CHECK(aggregate_buffers(none, {u}, pol).empty());
    }
  }
  SUBCASE("weighted average of running means") {
    auto out = aggregate_buffers(global.buffers_only(),
                                 {mk(0.0f, 0.0f, 10), mk(0.0f, 2.0f, 10)},
                                 BufferPolicy::kWeightedAverage);
    CHECK(out.at("rm").values[0] == doctest::Approx(1.0f));
  }
  SUBCASE("keep server") {
    auto out = aggregate_buffers(global.buffers_only(), {mk(0.0f, 9.0f, 10)},
                                 BufferPolicy::kKeepServer);
    CHECK(out.at("rm").values[0] == doctest::Approx(4.0f));
  }
  SUBCASE("require stateless rejects stateful models") {
    CHECK_THROWS_AS(aggregate_buffers(global.buffers_only(),
                                      {mk(0.0f, 0.0f, 10)},
                                      BufferPolicy::kRequireStateless),
                    StatefulModelRejected);
  }
}

TEST_CASE("default buffer policy per algorithm") {
  CHECK(default_buffer_policy(Algorithm::kFedAvg) ==
        BufferPolicy::kWeightedAverage);
  CHECK(default_buffer_policy(Algorithm::kFedProx) ==
        BufferPolicy::kWeightedAverage);
  CHECK(default_buffer_policy(Algorithm::kFedOpt) ==
        BufferPolicy::kRequireStateless);
  CHECK(default_buffer_policy(Algorithm::kScaffold) ==
        BufferPolicy::kRequireStateless);
}
