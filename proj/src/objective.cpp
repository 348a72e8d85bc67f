#include "fedseg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fedseg/errors.hpp"
#include "fedseg/rng.hpp"

namespace fedseg {

nlohmann::json LocalObjective::evaluate(const ParameterSet& params,
                                        const TrainConfig& cfg) const {
  return {{"loss", full_dataset_loss(*this, params, cfg)}};
}

double full_dataset_loss(const LocalObjective& objective,
                         const ParameterSet& params, const TrainConfig& cfg) {
  std::size_t n = objective.num_examples();
  if (n == 0) throw EmptyDataset("objective has no examples");
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  return objective.loss(params, all, cfg);
}

namespace {

struct AdamState {
  ParameterSet m, v;
  std::uint64_t step = 0;
};

void adam_step(ParameterSet& params, const ParameterSet& grad, AdamState& st,
               double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  st.step += 1;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.step));
  auto gi = grad.begin();
  for (; gi != grad.end(); ++gi) {
    auto& p = params.at(gi->first);
    auto& m = st.m.at(gi->first);
    auto& v = st.v.at(gi->first);
    const auto& g = gi->second.values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double gd = g[i];
      double md = kBeta1 * static_cast<double>(m.values[i]) + (1.0 - kBeta1) * gd;
      double vd = kBeta2 * static_cast<double>(v.values[i]) + (1.0 - kBeta2) * gd * gd;
      m.values[i] = static_cast<float>(md);
      v.values[i] = static_cast<float>(vd);
      double update = lr * (md / bc1) / (std::sqrt(vd / bc2) + kEps);
      p.values[i] = static_cast<float>(static_cast<double>(p.values[i]) - update);
    }
  }
}

void sgd_step(ParameterSet& params, const ParameterSet& grad, double lr) {
  for (auto gi = grad.begin(); gi != grad.end(); ++gi) {
    auto& p = params.at(gi->first);
    const auto& g = gi->second.values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      p.values[i] = static_cast<float>(static_cast<double>(p.values[i]) -
                                       lr * static_cast<double>(g[i]));
    }
  }
}

// grad += a * (x - y) over matching trainable entries
void add_scaled_diff(ParameterSet& grad, double a, const ParameterSet& x,
                     const ParameterSet& y) {
  for (auto gi = grad.begin(); gi != grad.end(); ++gi) {
    auto& g = grad.at(gi->first);
    const auto& xv = x.at(gi->first).values;
    const auto& yv = y.at(gi->first).values;
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      g.values[i] = static_cast<float>(
          static_cast<double>(g.values[i]) +
          a * (static_cast<double>(xv[i]) - static_cast<double>(yv[i])));
    }
  }
}

}  // namespace

ClientUpdate train_local(LocalObjective& objective, const ParameterSet& start,
                         const TrainConfig& cfg, const ParameterSet* global_ref,
                         const ScaffoldVariates* variates) {
  std::size_t n = objective.num_examples();
  if (n == 0) throw EmptyDataset("cannot train on an empty dataset");
  if (cfg.prox_mu > 0.0 && global_ref == nullptr) {
    throw StructureMismatch("prox_mu > 0 requires a global reference model");
  }

  bool use_sgd = cfg.optimizer == Optimizer::kSgd || variates != nullptr;
  if (variates != nullptr && cfg.optimizer == Optimizer::kAdam) {
    std::cerr << "[fedseg] warning: control-variate training forces plain "
                 "gradient steps; configured Adam optimizer is ignored\n";
  }

  ParameterSet params = start;
  ParameterSet start_trainable = start.trainable_only();
  AdamState adam;
  if (!use_sgd) {
    adam.m = start_trainable.zeros_like();
    adam.v = start_trainable.zeros_like();
  }

  std::mt19937_64 rng = make_rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  std::uint64_t steps = 0;

  for (std::uint32_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t off = 0, bi = 0; off < n; off += batch, ++bi) {
      std::size_t len = std::min(batch, n - off);
      std::span<const std::size_t> indices(order.data() + off, len);
      ParameterSet grad = start_trainable.zeros_like();
      double loss = objective.train_step(params, indices, grad, cfg);
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi));
      }
      if (cfg.prox_mu > 0.0) {
        add_scaled_diff(grad, cfg.prox_mu, params.trainable_only(),
                        global_ref->trainable_only());
      }
      if (variates != nullptr) {
        add_scaled_diff(grad, 1.0, variates->global, variates->client);
      }
      if (use_sgd) {
        sgd_step(params, grad, cfg.learning_rate);
      } else {
        adam_step(params, grad, adam, cfg.learning_rate);
      }
      ++steps;
    }
  }

  ClientUpdate update;
  update.num_samples = n;
  update.delta = axpy(-1.0, start_trainable, params.trainable_only());
  if (params.has_buffers()) update.buffers = params.buffers_only();
  if (variates != nullptr) {
    // Option II variate refresh: c_i+ = c_i - c + (w_start - w_final)/(S*lr).
    double inv = steps > 0 ? 1.0 / (static_cast<double>(steps) * cfg.learning_rate)
                           : 0.0;
    ParameterSet moved = scale(-inv, update.delta);  // (start - final)/(S*lr)
    ParameterSet next = axpy(-1.0, variates->global, variates->client);
    update.new_variate = axpy(1.0, moved, next);
  }
  return update;
}

}  // namespace fedseg
