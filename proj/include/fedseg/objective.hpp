#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedseg/aggregate.hpp"
#include "fedseg/params.hpp"

#include "json.hpp"

namespace fedseg {

enum class Optimizer { kAdam, kSgd };

struct TrainConfig {
  std::uint32_t local_epochs = 1;  // K
  std::uint32_t batch_size = 8;
  double learning_rate = 0.001;
  Optimizer optimizer = Optimizer::kAdam;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double prox_mu = 0.0;  // 0 disables the proximal term
  std::uint64_t seed = 0;
};

// A client-local differentiable training problem. Implementations own their
// data; the trainer only sees example indices.
class LocalObjective {
 public:
  virtual ~LocalObjective() = default;

  virtual std::size_t num_examples() const = 0;
  virtual ParameterSet initial_params(std::uint64_t seed) const = 0;

  // Mean loss over `batch` plus gradient w.r.t. every trainable entry
  // (written into `grad`, which arrives zeroed with trainable structure).
  // May update persistent-buffer entries of `params` in place (training-time
  // running statistics); trainable entries must not be touched.
  virtual double train_step(ParameterSet& params,
                            std::span<const std::size_t> batch,
                            ParameterSet& grad, const TrainConfig& cfg) = 0;

  // Pure evaluation loss (buffers frozen).
  virtual double loss(const ParameterSet& params,
                      std::span<const std::size_t> batch,
                      const TrainConfig& cfg) const = 0;

  // Optional richer evaluation for run logs (metrics, loss, ...).
  virtual nlohmann::json evaluate(const ParameterSet& params,
                                  const TrainConfig& cfg) const;
};

struct ScaffoldVariates {
  ParameterSet client;  // c_i
  ParameterSet global;  // c
};

// Runs cfg.local_epochs epochs of seeded minibatch optimization and returns
// the trainable delta (final - start) plus new buffers and, when variates are
// given, the refreshed client control variate
//   c_i+ = c_i - c + (w_start - w_final) / (steps * lr).
// Variate-corrected runs use plain gradient steps regardless of cfg.optimizer.
ClientUpdate train_local(LocalObjective& objective, const ParameterSet& start,
                         const TrainConfig& cfg,
                         const ParameterSet* global_ref = nullptr,
                         const ScaffoldVariates* variates = nullptr);

double full_dataset_loss(const LocalObjective& objective,
                         const ParameterSet& params, const TrainConfig& cfg);

}  // namespace fedseg
