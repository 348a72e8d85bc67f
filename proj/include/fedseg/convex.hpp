#pragma once

#include <cstdint>
#include <vector>

#include "fedseg/objective.hpp"

namespace fedseg {

// Regularized least-squares problem; the closed-form oracle behind the
// aggregator correctness checks.
struct ConvexProblem {
  std::size_t dim = 0;
  std::vector<std::vector<double>> rows;  // design matrix, one row per example
  std::vector<double> targets;
  double lambda = 0.0;

  std::size_t num_rows() const { return rows.size(); }
};

// Analytic minimizer of (1/2n)||Xw - y||^2 + (lambda/2)||w||^2 via the normal
// equations. Throws SingularSystem when lambda == 0 and X is rank-deficient.
std::vector<double> solve_convex(const ConvexProblem& p);

// Loss of the problem at w, same convention as the minimizer above.
double convex_loss(const ConvexProblem& p, const std::vector<double>& w);

// Least-squares training objective over the rows of a ConvexProblem.
// Single trainable tensor "w" of shape [dim].
class LeastSquaresObjective : public LocalObjective {
 public:
  explicit LeastSquaresObjective(ConvexProblem problem);

  std::size_t num_examples() const override { return problem_.num_rows(); }
  ParameterSet initial_params(std::uint64_t seed) const override;
  double train_step(ParameterSet& params, std::span<const std::size_t> batch,
                    ParameterSet& grad, const TrainConfig& cfg) override;
  double loss(const ParameterSet& params, std::span<const std::size_t> batch,
              const TrainConfig& cfg) const override;

 private:
  ConvexProblem problem_;
};

// Binary logistic regression with optional L2 term; labels in {0, 1}.
class LogisticObjective : public LocalObjective {
 public:
  LogisticObjective(std::vector<std::vector<double>> rows,
                    std::vector<int> labels, double lambda = 0.0);

  std::size_t num_examples() const override { return rows_.size(); }
  ParameterSet initial_params(std::uint64_t seed) const override;
  double train_step(ParameterSet& params, std::span<const std::size_t> batch,
                    ParameterSet& grad, const TrainConfig& cfg) override;
  double loss(const ParameterSet& params, std::span<const std::size_t> batch,
              const TrainConfig& cfg) const override;

 private:
  std::size_t dim_;
  std::vector<std::vector<double>> rows_;
  std::vector<int> labels_;
  double lambda_;
};

// Exact quadratic bowl 0.5 (w - a)' A (w - a); every "example" yields the full
// gradient, so full-batch SGD on it is deterministic gradient descent. Used
// for the client-drift demonstration.
class QuadraticObjective : public LocalObjective {
 public:
  QuadraticObjective(std::vector<std::vector<double>> curvature,
                     std::vector<double> optimum, std::size_t num_samples);

  std::size_t num_examples() const override { return num_samples_; }
  ParameterSet initial_params(std::uint64_t seed) const override;
  double train_step(ParameterSet& params, std::span<const std::size_t> batch,
                    ParameterSet& grad, const TrainConfig& cfg) override;
  double loss(const ParameterSet& params, std::span<const std::size_t> batch,
              const TrainConfig& cfg) const override;

  const std::vector<std::vector<double>>& curvature() const { return a_; }
  const std::vector<double>& optimum() const { return opt_; }

 private:
  std::vector<std::vector<double>> a_;
  std::vector<double> opt_;
  std::size_t num_samples_;
};

}  // namespace fedseg
