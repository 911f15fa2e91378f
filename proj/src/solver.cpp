#include "raloc/solver.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

struct WhitenedFactor {
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> j;
  double cost = 0.0;
};

// Whitened residual and Jacobians with iteratively reweighted Huber.
WhitenedFactor whiten(const Factor& f, const Values& values, bool with_jacobians) {
  const Residual res = f.evaluate(values);
  WhitenedFactor out;
  out.r = res.whitened_value();
  const double e = out.r.norm();
  double scale = 1.0;
  if (f.huber() > 0.0 && e > f.huber()) {
    out.cost = f.huber() * e - 0.5 * f.huber() * f.huber();
    scale = std::sqrt(f.huber() / e);
    out.r *= scale;
  } else {
    out.cost = 0.5 * e * e;
  }
  if (with_jacobians) {
    out.j.reserve(res.jacobians.size());
    for (std::size_t i = 0; i < res.jacobians.size(); ++i) {
      out.j.push_back(scale * res.whitened_jacobian(i));
    }
  }
  return out;
}

template <typename Add>
void accumulate_factor(const Factor& f, const Values& values, const Ordering& ordering,
                       Eigen::VectorXd& g, Add&& add_block) {
  const WhitenedFactor w = whiten(f, values, true);
  const auto& keys = f.keys();
  for (std::size_t a = 0; a < keys.size(); ++a) {
    const int oa = ordering.offset.at(keys[a]);
    g.segment(oa, w.j[a].cols()) += w.j[a].transpose() * w.r;
    for (std::size_t b = 0; b < keys.size(); ++b) {
      const int ob = ordering.offset.at(keys[b]);
      add_block(oa, ob, Eigen::MatrixXd(w.j[a].transpose() * w.j[b]));
    }
  }
}

Eigen::SparseMatrix<double> sparse_system(const FactorGraph& graph, const Ordering& ordering,
                                          Eigen::VectorXd& g) {
  std::vector<Eigen::Triplet<double>> triplets;
  g = Eigen::VectorXd::Zero(ordering.dim);
  for (const auto& f : graph.factors()) {
    accumulate_factor(*f, graph.values(), ordering, g,
                      [&](int oa, int ob, const Eigen::MatrixXd& block) {
                        for (int r = 0; r < block.rows(); ++r) {
                          for (int c = 0; c < block.cols(); ++c) {
                            triplets.emplace_back(oa + r, ob + c, block(r, c));
                          }
                        }
                      });
  }
  // Explicit diagonal keeps the pattern valid for damping.
  for (int i = 0; i < ordering.dim; ++i) triplets.emplace_back(i, i, 0.0);
  Eigen::SparseMatrix<double> h(ordering.dim, ordering.dim);
  h.setFromTriplets(triplets.begin(), triplets.end());
  return h;
}

Values retract_all(const Values& values, const Ordering& ordering, const Eigen::VectorXd& delta) {
  Values out;
  for (const auto& [key, value] : values) {
    const int o = ordering.offset.at(key);
    out.insert(key, retract(value, delta.segment(o, tangent_dim(value))));
  }
  return out;
}

bool touches(const Factor& f, const std::set<VariableKey>& keys) {
  return std::any_of(f.keys().begin(), f.keys().end(),
                     [&](const VariableKey& k) { return keys.count(k) != 0; });
}

int count_null_directions(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1.0);
  return static_cast<int>((ev.array() <= 1e-9 * scale).count());
}

}  // namespace

void FactorGraph::add_factor(FactorPtr factor) {
  for (const auto& key : factor->keys()) {
    if (!values_.contains(key)) {
      throw InvalidArgument(
          fmt::format("{} factor references unknown variable {}", factor->name(), to_string(key)));
    }
  }
  factors_.push_back(std::move(factor));
}

void FactorGraph::remove_variable(const VariableKey& key) {
  const std::set<VariableKey> k{key};
  for (const auto& f : factors_) {
    if (touches(*f, k)) {
      throw InvalidArgument("remove_variable: " + to_string(key) + " still has factors");
    }
  }
  values_.erase(key);
}

double FactorGraph::cost(const Values& values) const {
  double c = 0.0;
  for (const auto& f : factors_) c += whiten(*f, values, false).cost;
  return c;
}

Ordering Ordering::of(const Values& values) {
  Ordering o;
  for (const auto& [key, value] : values) {
    o.offset[key] = o.dim;
    o.dim += tangent_dim(value);
  }
  return o;
}

Ordering Ordering::of(const Values& values, const std::vector<VariableKey>& keys) {
  Ordering o;
  for (const auto& key : keys) {
    o.offset[key] = o.dim;
    o.dim += tangent_dim(values.at(key));
  }
  return o;
}

void linearize(const FactorGraph& graph, const Ordering& ordering, Eigen::MatrixXd& h,
               Eigen::VectorXd& g) {
  h = Eigen::MatrixXd::Zero(ordering.dim, ordering.dim);
  g = Eigen::VectorXd::Zero(ordering.dim);
  for (const auto& f : graph.factors()) {
    accumulate_factor(*f, graph.values(), ordering, g,
                      [&](int oa, int ob, const Eigen::MatrixXd& block) {
                        h.block(oa, ob, block.rows(), block.cols()) += block;
                      });
  }
}

OptimizeSummary optimize(FactorGraph& graph, const OptimizerOptions& options) {
  OptimizeSummary summary;
  double cost = graph.cost();
  summary.initial_cost = cost;
  summary.final_cost = cost;
  if (!std::isfinite(cost)) return summary;
  if (cost == 0.0 || graph.values().size() == 0) {
    summary.converged = true;
    return summary;
  }

  const Ordering ordering = Ordering::of(graph.values());
  double lambda = options.initial_damping;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;

  for (int iter = 0; iter < options.max_iters; ++iter) {
    Eigen::VectorXd g;
    const Eigen::SparseMatrix<double> h = sparse_system(graph, ordering, g);
    if (g.lpNorm<Eigen::Infinity>() < 1e-14) {
      summary.converged = true;
      break;
    }
    Eigen::VectorXd diag = h.diagonal();

    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> a = h;
      for (int i = 0; i < ordering.dim; ++i) {
        a.coeffRef(i, i) += lambda * std::max(diag[i], 1e-9);
      }
      solver.compute(a);
      Eigen::VectorXd step;
      if (solver.info() == Eigen::Success) step = solver.solve(-g);
      if (solver.info() != Eigen::Success || !step.allFinite()) {
        lambda *= 10.0;
        if (lambda > options.damping_ceiling) break;
        continue;
      }
      Values candidate = retract_all(graph.values(), ordering, step);
      const double new_cost = graph.cost(candidate);
      if (std::isfinite(new_cost) && new_cost <= cost) {
        accepted = true;
        graph.values() = std::move(candidate);
        ++summary.iterations;
        const double decrease = cost - new_cost;
        cost = new_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        if (decrease <= options.rel_cost_tol * std::max(cost + decrease, 1e-300) ||
            step.norm() < options.abs_step_tol) {
          summary.converged = true;
        }
      } else {
        // A step too small to change anything means we are at the minimum.
        if (step.norm() < options.abs_step_tol) {
          summary.converged = true;
          break;
        }
        lambda *= 10.0;
        if (lambda > options.damping_ceiling) break;
      }
    }
    if (!accepted || summary.converged) break;
  }
  summary.final_cost = cost;
  return summary;
}

int MarginalPrior::offset_of(const VariableKey& key) const {
  int o = 0;
  for (const auto& k : keys) {
    if (k == key) return o;
    o += tangent_dim(linearization_point.at(k));
  }
  return -1;
}

MarginalPrior MarginalPrior::with_process_noise(const Eigen::MatrixXd& p,
                                                const Eigen::MatrixXd& q) const {
  if (p.rows() != dim() || p.cols() != q.rows() || q.rows() != q.cols()) {
    throw InvalidArgument("with_process_noise: dimension mismatch");
  }
  MarginalPrior out = *this;
  if (q.isZero(0.0)) return out;
  const Eigen::MatrixXd hp = information * p;
  const Eigen::MatrixXd inner = q.inverse() + p.transpose() * hp;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(inner);
  out.information = lie::symmetrize(Eigen::MatrixXd(information - hp * ldlt.solve(hp.transpose())));
  out.gradient = gradient - hp * ldlt.solve(p.transpose() * gradient);
  return out;
}

DensePriorFactor::DensePriorFactor(MarginalPrior prior)
    : Factor(prior.keys), prior_(std::move(prior)) {
  // H = U D U^T  ->  J = D^1/2 U^T, r0 = D^-1/2 U^T g so that J^T J = H, J^T r0 = g.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lie::symmetrize(prior_.information));
  const Eigen::VectorXd d = eig.eigenvalues();
  const double tol = 1e-12 * std::max(d.cwiseAbs().maxCoeff(), 1.0);
  std::vector<int> kept;
  for (int i = 0; i < d.size(); ++i) {
    if (d[i] > tol) kept.push_back(i);
  }
  const int n = prior_.dim();
  sqrt_h_.resize(static_cast<int>(kept.size()), n);
  r0_.resize(static_cast<int>(kept.size()));
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const double s = std::sqrt(d[kept[r]]);
    const Eigen::VectorXd u = eig.eigenvectors().col(kept[r]);
    sqrt_h_.row(static_cast<int>(r)) = s * u.transpose();
    r0_[static_cast<int>(r)] = u.dot(prior_.gradient) / s;
  }
}

Residual DensePriorFactor::evaluate(const Values& values) const {
  Residual res;
  const int n = prior_.dim();
  Eigen::VectorXd d(n);
  int o = 0;
  std::vector<Eigen::MatrixXd> local_j;
  for (const auto& key : prior_.keys) {
    const Value& x0 = prior_.linearization_point.at(key);
    const Value& x = values.at(key);
    const int k = tangent_dim(x0);
    d.segment(o, k) = local(x0, x);
    local_j.push_back(local_jacobian(x0, x));
    o += k;
  }
  res.value = r0_ + sqrt_h_ * d;
  o = 0;
  for (const auto& lj : local_j) {
    const int k = static_cast<int>(lj.cols());
    res.jacobians.push_back(sqrt_h_.middleCols(o, k) * lj);
    o += k;
  }
  res.weight = Eigen::MatrixXd::Identity(res.value.size(), res.value.size());
  return res;
}

MarginalPrior marginalize(FactorGraph& graph, const std::vector<VariableKey>& drop,
                          const MarginalizeOptions& options) {
  const std::set<VariableKey> drop_set(drop.begin(), drop.end());
  for (const auto& k : drop) {
    if (!graph.contains(k)) throw InvalidArgument("marginalize: unknown variable " + to_string(k));
  }

  std::vector<FactorPtr> involved;
  std::vector<FactorPtr> kept;
  for (const auto& f : graph.factors()) {
    (touches(*f, drop_set) ? involved : kept).push_back(f);
  }
  MarginalPrior prior;
  if (involved.empty()) {
    for (const auto& k : drop) graph.values().erase(k);
    return prior;
  }
  // Fold existing dense priors in as well.
  std::vector<FactorPtr> remaining;
  for (const auto& f : kept) {
    (dynamic_cast<const DensePriorFactor*>(f.get()) ? involved : remaining).push_back(f);
  }

  std::set<VariableKey> retained_set;
  for (const auto& f : involved) {
    for (const auto& k : f->keys()) {
      if (!drop_set.count(k)) retained_set.insert(k);
    }
  }
  std::vector<VariableKey> order(retained_set.begin(), retained_set.end());
  const std::size_t n_retained = order.size();
  for (const auto& k : drop) order.push_back(k);

  FactorGraph local_graph;
  for (const auto& k : order) local_graph.add_variable(graph.values().key(k), graph.values().at(k));
  for (const auto& f : involved) local_graph.add_factor(f);
  const Ordering ordering = Ordering::of(local_graph.values(), order);
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  linearize(local_graph, ordering, h, g);

  const int nr = n_retained == 0 ? 0 : ordering.offset.at(order[n_retained - 1]) +
                                            tangent_dim(graph.values().at(order[n_retained - 1]));
  const int nd = ordering.dim - nr;
  Eigen::MatrixXd hdd = h.bottomRightCorner(nd, nd);
  Eigen::LLT<Eigen::MatrixXd> llt(hdd);
  if (llt.info() != Eigen::Success) {
    spdlog::warn("marginalize: dropped block singular, adding ridge");
    hdd += 1e-10 * Eigen::MatrixXd::Identity(nd, nd);
    llt.compute(hdd);
  }
  const Eigen::MatrixXd hrd = h.topRightCorner(nr, nd);
  prior.keys.assign(order.begin(), order.begin() + static_cast<long>(n_retained));
  for (const auto& k : prior.keys) {
    prior.linearization_point.insert(graph.values().key(k), graph.values().at(k));
  }
  prior.information = lie::symmetrize(
      Eigen::MatrixXd(h.topLeftCorner(nr, nr) - hrd * llt.solve(hrd.transpose())));
  prior.gradient = g.head(nr) - hrd * llt.solve(g.tail(nd));

  if (!options.process_noise.empty() && nr > 0) {
    std::vector<std::pair<int, int>> blocks;  // offset, dim
    std::vector<double> variances;
    for (const auto& [key, variance] : options.process_noise) {
      const int o = prior.offset_of(key);
      if (o < 0 || !(variance > 0.0)) continue;
      blocks.emplace_back(o, tangent_dim(prior.linearization_point.at(key)));
      variances.push_back(variance);
    }
    int m = 0;
    for (const auto& b : blocks) m += b.second;
    if (m > 0) {
      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nr, m);
      Eigen::MatrixXd q = Eigen::MatrixXd::Zero(m, m);
      int c = 0;
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        for (int k = 0; k < blocks[i].second; ++k, ++c) {
          p(blocks[i].first + k, c) = 1.0;
          q(c, c) = variances[i];
        }
      }
      prior = prior.with_process_noise(p, q);
    }
  }

  if (nr > 0) remaining.push_back(std::make_shared<DensePriorFactor>(prior));
  graph.set_factors(std::move(remaining));
  for (const auto& k : drop) graph.values().erase(k);
  return prior;
}

Eigen::MatrixXd marginal_covariance(const FactorGraph& graph, const VariableKey& key) {
  return marginal_covariances(graph, {key}).front();
}

std::vector<Eigen::MatrixXd> marginal_covariances(const FactorGraph& graph,
                                                  const std::vector<VariableKey>& keys) {
  const Ordering ordering = Ordering::of(graph.values());
  int cols = 0;
  for (const auto& key : keys) {
    if (!ordering.offset.count(key)) {
      throw InvalidArgument("marginal_covariance: unknown variable " + to_string(key));
    }
    cols += tangent_dim(graph.values().at(key));
  }
  Eigen::VectorXd g;
  const Eigen::SparseMatrix<double> h = sparse_system(graph, ordering, g);

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
  bool singular = ldlt.info() != Eigen::Success;
  if (!singular) {
    const Eigen::VectorXd d = ldlt.vectorD();
    const double scale = std::max(d.cwiseAbs().maxCoeff(), 1.0);
    singular = d.minCoeff() <= 1e-12 * scale;
  }
  if (singular) {
    const int null_dirs = std::max(count_null_directions(Eigen::MatrixXd(h)), 1);
    throw UnconstrainedError(
        fmt::format("marginal_covariance: information singular, {} unconstrained direction(s)",
                    null_dirs),
        null_dirs);
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ordering.dim, cols);
  int c = 0;
  for (const auto& key : keys) {
    const int k = tangent_dim(graph.values().at(key));
    rhs.block(ordering.offset.at(key), c, k, k).setIdentity();
    c += k;
  }
  const Eigen::MatrixXd sol = ldlt.solve(rhs);
  std::vector<Eigen::MatrixXd> out;
  c = 0;
  for (const auto& key : keys) {
    const int k = tangent_dim(graph.values().at(key));
    out.push_back(lie::symmetrize(Eigen::MatrixXd(sol.block(ordering.offset.at(key), c, k, k))));
    c += k;
  }
  return out;
}

}  // namespace raloc
