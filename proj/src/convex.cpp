#include "fedseg/convex.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "fedseg/errors.hpp"

namespace fedseg {

namespace {

Eigen::MatrixXd design_matrix(const ConvexProblem& p) {
  Eigen::MatrixXd x(p.num_rows(), p.dim);
  for (std::size_t i = 0; i < p.num_rows(); ++i) {
    if (p.rows[i].size() != p.dim) {
      throw ShapeMismatch("design row " + std::to_string(i) +
                          " has inconsistent dimension");
    }
    for (std::size_t j = 0; j < p.dim; ++j) x(i, j) = p.rows[i][j];
  }
  return x;
}

std::vector<double> trainable_vector(const ParameterSet& params) {
  const auto& w = params.at("w").values;
  return std::vector<double>(w.begin(), w.end());
}

}  // namespace

std::vector<double> solve_convex(const ConvexProblem& p) {
  if (p.dim == 0 || p.num_rows() == 0) {
    throw ShapeMismatch("convex problem has no rows or zero dimension");
  }
  if (p.targets.size() != p.num_rows()) {
    throw ShapeMismatch("target count does not match row count");
  }
  Eigen::MatrixXd x = design_matrix(p);
  double n = static_cast<double>(p.num_rows());
  Eigen::MatrixXd normal = x.transpose() * x / n +
                           p.lambda * Eigen::MatrixXd::Identity(p.dim, p.dim);
  Eigen::VectorXd y(p.num_rows());
  for (std::size_t i = 0; i < p.num_rows(); ++i) y(i) = p.targets[i];
  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  if (!lu.isInvertible()) {
    throw SingularSystem("normal equations are singular (rank-deficient design "
                         "with lambda = 0)");
  }
  Eigen::VectorXd w = lu.solve(x.transpose() * y / n);
  return std::vector<double>(w.data(), w.data() + w.size());
}

double convex_loss(const ConvexProblem& p, const std::vector<double>& w) {
  if (w.size() != p.dim) throw ShapeMismatch("weight dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.num_rows(); ++i) {
    double r = -p.targets[i];
    for (std::size_t j = 0; j < p.dim; ++j) r += p.rows[i][j] * w[j];
    acc += 0.5 * r * r;
  }
  acc /= static_cast<double>(p.num_rows());
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return acc + 0.5 * p.lambda * reg;
}

LeastSquaresObjective::LeastSquaresObjective(ConvexProblem problem)
    : problem_(std::move(problem)) {}

ParameterSet LeastSquaresObjective::initial_params(std::uint64_t) const {
  ParameterSet p;
  p.add("w", {static_cast<std::uint32_t>(problem_.dim)},
        std::vector<float>(problem_.dim, 0.0f));
  return p;
}

double LeastSquaresObjective::train_step(ParameterSet& params,
                                         std::span<const std::size_t> batch,
                                         ParameterSet& grad,
                                         const TrainConfig& cfg) {
  std::vector<double> w = trainable_vector(params);
  auto& g = grad.at("w").values;
  double loss_acc = 0.0;
  double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t idx : batch) {
    const auto& row = problem_.rows[idx];
    double r = -problem_.targets[idx];
    for (std::size_t j = 0; j < problem_.dim; ++j) r += row[j] * w[j];
    loss_acc += 0.5 * r * r;
    for (std::size_t j = 0; j < problem_.dim; ++j) {
      g[j] = static_cast<float>(static_cast<double>(g[j]) + inv * r * row[j]);
    }
  }
  double reg = 0.0;
  for (std::size_t j = 0; j < problem_.dim; ++j) {
    g[j] = static_cast<float>(static_cast<double>(g[j]) + problem_.lambda * w[j]);
    reg += w[j] * w[j];
  }
  (void)cfg;
  return loss_acc * inv + 0.5 * problem_.lambda * reg;
}

double LeastSquaresObjective::loss(const ParameterSet& params,
                                   std::span<const std::size_t> batch,
                                   const TrainConfig&) const {
  std::vector<double> w = trainable_vector(params);
  double acc = 0.0;
  for (std::size_t idx : batch) {
    const auto& row = problem_.rows[idx];
    double r = -problem_.targets[idx];
    for (std::size_t j = 0; j < problem_.dim; ++j) r += row[j] * w[j];
    acc += 0.5 * r * r;
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return acc / static_cast<double>(batch.size()) + 0.5 * problem_.lambda * reg;
}

LogisticObjective::LogisticObjective(std::vector<std::vector<double>> rows,
                                     std::vector<int> labels, double lambda)
    : dim_(rows.empty() ? 0 : rows.front().size()),
      rows_(std::move(rows)),
      labels_(std::move(labels)),
      lambda_(lambda) {
  if (rows_.size() != labels_.size()) {
    throw ShapeMismatch("label count does not match row count");
  }
}

ParameterSet LogisticObjective::initial_params(std::uint64_t) const {
  ParameterSet p;
  p.add("w", {static_cast<std::uint32_t>(dim_)},
        std::vector<float>(dim_, 0.0f));
  return p;
}

namespace {

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// -log sigmoid(z), computed stably
inline double softplus_neg(double z) {
  return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

}  // namespace

double LogisticObjective::train_step(ParameterSet& params,
                                     std::span<const std::size_t> batch,
                                     ParameterSet& grad, const TrainConfig&) {
  std::vector<double> w = trainable_vector(params);
  auto& g = grad.at("w").values;
  double loss_acc = 0.0;
  double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t idx : batch) {
    const auto& row = rows_[idx];
    double z = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) z += row[j] * w[j];
    double y = labels_[idx];
    loss_acc += y > 0.5 ? softplus_neg(z) : softplus_neg(-z);
    double err = sigmoid(z) - y;
    for (std::size_t j = 0; j < dim_; ++j) {
      g[j] = static_cast<float>(static_cast<double>(g[j]) + inv * err * row[j]);
    }
  }
  double reg = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    g[j] = static_cast<float>(static_cast<double>(g[j]) + lambda_ * w[j]);
    reg += w[j] * w[j];
  }
  return loss_acc * inv + 0.5 * lambda_ * reg;
}

double LogisticObjective::loss(const ParameterSet& params,
                               std::span<const std::size_t> batch,
                               const TrainConfig&) const {
  std::vector<double> w = trainable_vector(params);
  double acc = 0.0;
  for (std::size_t idx : batch) {
    const auto& row = rows_[idx];
    double z = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) z += row[j] * w[j];
    acc += labels_[idx] > 0 ? softplus_neg(z) : softplus_neg(-z);
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return acc / static_cast<double>(batch.size()) + 0.5 * lambda_ * reg;
}

QuadraticObjective::QuadraticObjective(std::vector<std::vector<double>> curvature,
                                       std::vector<double> optimum,
                                       std::size_t num_samples)
    : a_(std::move(curvature)), opt_(std::move(optimum)),
      num_samples_(num_samples) {
  if (a_.size() != opt_.size()) {
    throw ShapeMismatch("curvature dimension does not match optimum dimension");
  }
}

ParameterSet QuadraticObjective::initial_params(std::uint64_t) const {
  ParameterSet p;
  p.add("w", {static_cast<std::uint32_t>(opt_.size())},
        std::vector<float>(opt_.size(), 0.0f));
  return p;
}

double QuadraticObjective::train_step(ParameterSet& params,
                                      std::span<const std::size_t>,
                                      ParameterSet& grad, const TrainConfig&) {
  std::vector<double> w = trainable_vector(params);
  auto& g = grad.at("w").values;
  std::size_t d = opt_.size();
  std::vector<double> diff(d);
  for (std::size_t j = 0; j < d; ++j) diff[j] = w[j] - opt_[j];
  double loss = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double gi = 0.0;
    for (std::size_t j = 0; j < d; ++j) gi += a_[i][j] * diff[j];
    g[i] = static_cast<float>(static_cast<double>(g[i]) + gi);
    loss += 0.5 * diff[i] * gi;
  }
  return loss;
}

double QuadraticObjective::loss(const ParameterSet& params,
                                std::span<const std::size_t>,
                                const TrainConfig&) const {
  std::vector<double> w = trainable_vector(params);
  std::size_t d = opt_.size();
  std::vector<double> diff(d);
  for (std::size_t j = 0; j < d; ++j) diff[j] = w[j] - opt_[j];
  double loss = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double gi = 0.0;
    for (std::size_t j = 0; j < d; ++j) gi += a_[i][j] * diff[j];
    loss += 0.5 * diff[i] * gi;
  }
  return loss;
}

}  // namespace fedseg
