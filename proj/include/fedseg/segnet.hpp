#pragma once

#include <cstdint>
#include <vector>

#include "fedseg/data.hpp"
#include "fedseg/objective.hpp"
#include "fedseg/params.hpp"

namespace fedseg {

enum class Normalization { kBatchStats, kGroupStats, kNone };

const char* normalization_name(Normalization n);

// Desk-scale convolutional segmentation model: 3x3 conv blocks with optional
// normalization, ReLU, and a 1x1 classification head emitting per-pixel
// multi-label logits.
struct ModelSpec {
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint32_t channels = 1;
  std::uint32_t num_classes = 7;
  std::vector<std::uint32_t> channel_widths = {8, 8};
  Normalization normalization = Normalization::kGroupStats;
  std::uint32_t group_count = 4;

  void validate() const;  // group_count must divide every width under GroupStats
};

struct ForwardResult {
  double loss = 0.0;
  // per-pixel class logits, [batch][class][row][col] flattened
  std::vector<double> scores;
};

class SegNet {
 public:
  explicit SegNet(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }

  // He-initialized weights; BatchStats adds running mean/variance buffers
  // (exactly two per normalized layer), GroupStats and None add none.
  ParameterSet initial_params(std::uint64_t seed) const;

  // Multi-label sigmoid focal cross-entropy, mean over pixels and classes.
  // training selects batch statistics for BatchStats normalization; buffers
  // are never modified here.
  ForwardResult forward_loss(const ParameterSet& params,
                             const std::vector<const SynthImage*>& batch,
                             const TrainConfig& cfg, bool training) const;

  // Loss + full backprop gradient (into grad, zero-initialized trainable
  // structure). Training-mode statistics; when update_buffers is set the BN
  // running statistics in params move with momentum 0.9.
  double loss_and_gradient(ParameterSet& params,
                           const std::vector<const SynthImage*>& batch,
                           const TrainConfig& cfg, ParameterSet& grad,
                           bool update_buffers) const;

  // Per-pixel prediction: argmax class when its logit is positive, else
  // background. Evaluation mode (frozen buffers).
  std::vector<std::uint8_t> predict(const ParameterSet& params,
                                    const SynthImage& image) const;

 private:
  ModelSpec spec_;
};

// Client-local training problem binding a SegNet to train/test shards.
class SegNetObjective : public LocalObjective {
 public:
  SegNetObjective(ModelSpec spec, Dataset train, Dataset test);

  std::size_t num_examples() const override { return train_.size(); }
  ParameterSet initial_params(std::uint64_t seed) const override;
  double train_step(ParameterSet& params, std::span<const std::size_t> batch,
                    ParameterSet& grad, const TrainConfig& cfg) override;
  double loss(const ParameterSet& params, std::span<const std::size_t> batch,
              const TrainConfig& cfg) const override;
  nlohmann::json evaluate(const ParameterSet& params,
                          const TrainConfig& cfg) const override;

  const SegNet& net() const { return net_; }
  const Dataset& test_set() const { return test_; }

 private:
  SegNet net_;
  Dataset train_;
  Dataset test_;
};

}  // namespace fedseg
