#pragma once

// Sparse nonlinear least squares over a factor graph: Levenberg-Marquardt
// with on-manifold updates, Schur-complement marginalization into a dense
// prior, and marginal covariance recovery.

#include <map>
#include <vector>

#include <Eigen/Core>

#include "raloc/graph.hpp"

namespace raloc {

class FactorGraph {
 public:
  void add_variable(const VariableKey& key, Value value) { values_.insert(key, std::move(value)); }
  /// Throws InvalidArgument if the factor references an unknown variable.
  void add_factor(FactorPtr factor);
  void remove_variable(const VariableKey& key);

  bool contains(const VariableKey& key) const { return values_.contains(key); }
  const Values& values() const { return values_; }
  Values& values() { return values_; }
  const std::vector<FactorPtr>& factors() const { return factors_; }
  void set_factors(std::vector<FactorPtr> factors) { factors_ = std::move(factors); }

  /// 0.5 * sum of squared whitened residuals (Huber-adjusted where enabled).
  double cost() const { return cost(values_); }
  double cost(const Values& values) const;

 private:
  Values values_;
  std::vector<FactorPtr> factors_;
};

/// Tangent-space layout of a set of variables.
struct Ordering {
  std::map<VariableKey, int> offset;
  int dim = 0;

  static Ordering of(const Values& values);
  static Ordering of(const Values& values, const std::vector<VariableKey>& keys);
};

struct OptimizerOptions {
  int max_iters = 20;
  double rel_cost_tol = 1e-6;
  double abs_step_tol = 1e-8;
  double initial_damping = 1e-4;
  double damping_ceiling = 1e10;
};

struct OptimizeSummary {
  bool converged = false;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// Never throws on numerical trouble; reports non-convergence instead.
OptimizeSummary optimize(FactorGraph& graph, const OptimizerOptions& options = {});

/// Information form of the retained variables' marginal, linearized at
/// `linearization_point`: cost(d) = 0.5 d^T H d + g^T d, d = local(x0, x).
struct MarginalPrior {
  std::vector<VariableKey> keys;
  Values linearization_point;
  Eigen::MatrixXd information;
  Eigen::VectorXd gradient;

  bool empty() const { return keys.empty(); }
  int dim() const { return static_cast<int>(information.rows()); }
  /// Offset of `key` inside the joint tangent vector; -1 if absent.
  int offset_of(const VariableKey& key) const;

  /// Adds zero-mean noise P w, w ~ N(0, q), to the variables while keeping
  /// the prior mean: H' = (H^-1 + P q P^T)^-1 computed in Woodbury form, so
  /// a singular H is fine.
  MarginalPrior with_process_noise(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) const;
};

/// Dense prior factor in square-root form, r(x) = r0 + J local(x0, x).
class DensePriorFactor final : public Factor {
 public:
  explicit DensePriorFactor(MarginalPrior prior);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "marginal_prior"; }
  const MarginalPrior& prior() const { return prior_; }

 private:
  MarginalPrior prior_;
  Eigen::MatrixXd sqrt_h_;
  Eigen::VectorXd r0_;
};

struct MarginalizeOptions {
  /// Per-variable white noise variance (isotropic over the variable's
  /// tangent space) added to the new prior, e.g. a bias random walk.
  std::map<VariableKey, double> process_noise;
};

/// Removes `drop` and every factor touching it, installing the Schur
/// complement as one DensePriorFactor. Existing dense priors are folded into
/// the new one so the graph carries at most one. Returns the installed prior
/// (empty if no factor touched `drop`).
MarginalPrior marginalize(FactorGraph& graph, const std::vector<VariableKey>& drop,
                          const MarginalizeOptions& options = {});

/// Joint linear system at the current estimate: H = J^T J, g = J^T r.
void linearize(const FactorGraph& graph, const Ordering& ordering, Eigen::MatrixXd& h,
               Eigen::VectorXd& g);

/// Block of H^-1 for `key`. Throws UnconstrainedError with the number of
/// null directions if H is singular.
Eigen::MatrixXd marginal_covariance(const FactorGraph& graph, const VariableKey& key);
/// Same for several keys with a single factorization.
std::vector<Eigen::MatrixXd> marginal_covariances(const FactorGraph& graph,
                                                  const std::vector<VariableKey>& keys);

}  // namespace raloc
