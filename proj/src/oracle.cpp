#include "tda/oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tda/attribution.hpp"

namespace tda {
namespace oracle {

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// numerically stable log(1 + exp(z))
double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

void ConvexProxySpec::validate() const {
  if (dim < 1) throw std::invalid_argument("proxy spec: dim must be >= 1");
  if (!(l2 > 0.0)) throw std::invalid_argument("proxy spec: l2 must be > 0 for a unique optimum");
  if (data.size() < 2) throw std::invalid_argument("proxy spec: need at least 2 data points");
  for (const auto& p : data) {
    if (p.x.size() != dim) throw std::invalid_argument("proxy spec: feature dim mismatch");
    if (model == ProxyModel::logistic_regression && p.y != 0.0 && p.y != 1.0) {
      throw std::invalid_argument("proxy spec: logistic labels must be 0 or 1");
    }
  }
  for (const auto& p : query) {
    if (p.x.size() != dim) throw std::invalid_argument("proxy spec: query feature dim mismatch");
  }
}

double point_loss(const ConvexProxySpec& spec, const ProxyPoint& p, const Eigen::VectorXd& theta) {
  const double reg = 0.5 * spec.l2 * theta.squaredNorm();
  const double z = theta.dot(p.x);
  if (spec.model == ProxyModel::logistic_regression) {
    // -log p(y | x) = log(1+exp(z)) - y z
    return log1pexp(z) - p.y * z + reg;
  }
  const double r = z - p.y;
  return 0.5 * r * r + reg;
}

Eigen::VectorXd point_loss_grad(const ConvexProxySpec& spec, const ProxyPoint& p,
                                const Eigen::VectorXd& theta) {
  const double z = theta.dot(p.x);
  if (spec.model == ProxyModel::logistic_regression) {
    return (sigmoid(z) - p.y) * p.x + spec.l2 * theta;
  }
  return (z - p.y) * p.x + spec.l2 * theta;
}

double objective(const ConvexProxySpec& spec, const Eigen::VectorXd& theta) {
  double s = 0.0;
  for (const auto& p : spec.data) s += point_loss(spec, p, theta);
  return s / static_cast<double>(spec.data.size());
}

Eigen::VectorXd objective_grad(const ConvexProxySpec& spec, const Eigen::VectorXd& theta) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(spec.dim);
  for (const auto& p : spec.data) g += point_loss_grad(spec, p, theta);
  return g / static_cast<double>(spec.data.size());
}

Eigen::MatrixXd objective_hessian(const ConvexProxySpec& spec, const Eigen::VectorXd& theta) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(spec.dim, spec.dim);
  for (const auto& p : spec.data) {
    if (spec.model == ProxyModel::logistic_regression) {
      const double mu = sigmoid(theta.dot(p.x));
      h.noalias() += mu * (1.0 - mu) * p.x * p.x.transpose();
    } else {
      h.noalias() += p.x * p.x.transpose();
    }
  }
  h /= static_cast<double>(spec.data.size());
  h.diagonal().array() += spec.l2;
  return h;
}

double query_value(const ConvexProxySpec& spec, const Eigen::VectorXd& theta) {
  if (spec.query.empty()) throw std::invalid_argument("proxy spec: empty query objective");
  double s = 0.0;
  for (const auto& p : spec.query) {
    const double z = theta.dot(p.x);
    if (spec.model == ProxyModel::logistic_regression) {
      s += p.y * z - log1pexp(z);
    } else {
      const double r = z - p.y;
      s += -0.5 * r * r;
    }
  }
  return s / static_cast<double>(spec.query.size());
}

Eigen::VectorXd query_grad(const ConvexProxySpec& spec, const Eigen::VectorXd& theta) {
  if (spec.query.empty()) throw std::invalid_argument("proxy spec: empty query objective");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(spec.dim);
  for (const auto& p : spec.query) {
    const double z = theta.dot(p.x);
    if (spec.model == ProxyModel::logistic_regression) {
      g += (p.y - sigmoid(z)) * p.x;
    } else {
      g += (p.y - z) * p.x;
    }
  }
  return g / static_cast<double>(spec.query.size());
}

namespace {

// damped Newton on a strongly convex objective
Eigen::VectorXd newton_minimize(const ConvexProxySpec& spec,
                                const std::function<double(const Eigen::VectorXd&)>& f,
                                const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                                const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& hess,
                                Eigen::VectorXd theta, double tol, int max_iter = 200) {
  (void)spec;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd g = grad(theta);
    const double gnorm = g.norm();
    if (gnorm <= tol) return theta;
    const Eigen::MatrixXd h = hess(theta);
    const Eigen::VectorXd step = h.ldlt().solve(g);
    if (gnorm < 1e-6) {
      // quadratic convergence region: objective differences drop below FP
      // resolution, so take the full Newton step unconditionally
      theta -= step;
      continue;
    }
    double alpha = 1.0;
    const double f0 = f(theta);
    const double slack = 1e-14 * std::max(1.0, std::abs(f0));
    while (alpha > 1e-12 && f(theta - alpha * step) > f0 + slack) alpha *= 0.5;
    theta -= alpha * step;
  }
  const double final_norm = grad(theta).norm();
  if (final_norm <= tol) return theta;
  std::ostringstream msg;
  msg << "fit did not converge: final gradient norm " << final_norm << " > tol " << tol;
  throw std::runtime_error(msg.str());
}

}  // namespace

Eigen::VectorXd fit_convex(const ConvexProxySpec& spec, double tol) {
  spec.validate();
  return newton_minimize(
      spec, [&](const Eigen::VectorXd& t) { return objective(spec, t); },
      [&](const Eigen::VectorXd& t) { return objective_grad(spec, t); },
      [&](const Eigen::VectorXd& t) { return objective_hessian(spec, t); },
      Eigen::VectorXd::Zero(spec.dim), tol);
}

Eigen::VectorXd reweight_retrain(const ConvexProxySpec& spec, std::size_t m, double eps,
                                 const Eigen::VectorXd& warm_start, double tol) {
  spec.validate();
  if (m >= spec.data.size()) throw std::invalid_argument("reweight_retrain: index out of range");
  const double n = static_cast<double>(spec.data.size());
  const auto& pm = spec.data[m];

  const auto f = [&](const Eigen::VectorXd& t) {
    return objective(spec, t) + eps * point_loss(spec, pm, t);
  };
  const auto grad = [&](const Eigen::VectorXd& t) {
    return (objective_grad(spec, t) + eps * point_loss_grad(spec, pm, t)).eval();
  };
  const auto hess = [&](const Eigen::VectorXd& t) {
    Eigen::MatrixXd h = objective_hessian(spec, t);
    if (spec.model == ProxyModel::logistic_regression) {
      const double mu = sigmoid(t.dot(pm.x));
      h.noalias() += eps * mu * (1.0 - mu) * pm.x * pm.x.transpose();
    } else {
      h.noalias() += eps * pm.x * pm.x.transpose();
    }
    h.diagonal().array() += eps * spec.l2;
    return h;
  };
  // the eps = -1/N objective stays strongly convex: it is ((N-1)/N) times
  // the mean over the remaining points
  (void)n;
  return newton_minimize(spec, f, grad, hess, warm_start, tol);
}

std::map<std::size_t, double> loo_retrain_oracle(const ConvexProxySpec& spec, double tol) {
  spec.validate();
  const Eigen::VectorXd theta_full = fit_convex(spec, tol);
  const double f_full = query_value(spec, theta_full);
  const double eps = -1.0 / static_cast<double>(spec.data.size());

  std::map<std::size_t, double> out;
  for (std::size_t m = 0; m < spec.data.size(); ++m) {
    const Eigen::VectorXd theta_m = reweight_retrain(spec, m, eps, theta_full, tol);
    out[m] = query_value(spec, theta_m) - f_full;
  }
  return out;
}

double dense_influence(const ConvexProxySpec& spec, std::size_t example_index, double damping) {
  spec.validate();
  if (example_index >= spec.data.size()) {
    throw std::invalid_argument("dense_influence: index out of range");
  }
  const Eigen::VectorXd theta = fit_convex(spec);
  Eigen::MatrixXd h = objective_hessian(spec, theta);
  h.diagonal().array() += damping;

  const Eigen::LDLT<Eigen::MatrixXd> solver(h);
  if (solver.info() != Eigen::Success || !solver.isPositive()) {
    throw std::invalid_argument("dense_influence: singular curvature; demand damping > 0");
  }
  const Eigen::VectorXd gf = query_grad(spec, theta);
  const Eigen::VectorXd gl = point_loss_grad(spec, spec.data[example_index], theta);
  return -gf.dot(solver.solve(gl));
}

std::map<std::size_t, double> dense_influence_all(const ConvexProxySpec& spec, double damping) {
  spec.validate();
  const Eigen::VectorXd theta = fit_convex(spec);
  Eigen::MatrixXd h = objective_hessian(spec, theta);
  h.diagonal().array() += damping;
  const Eigen::LDLT<Eigen::MatrixXd> solver(h);
  if (solver.info() != Eigen::Success || !solver.isPositive()) {
    throw std::invalid_argument("dense_influence: singular curvature; demand damping > 0");
  }
  const Eigen::VectorXd gf = query_grad(spec, theta);
  const Eigen::VectorXd q = solver.solve(gf);

  std::map<std::size_t, double> out;
  for (std::size_t m = 0; m < spec.data.size(); ++m) {
    out[m] = -q.dot(point_loss_grad(spec, spec.data[m], theta));
  }
  return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equally sized vectors");
  }
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  return pearson(ranks(a), ranks(b));
}

AgreementStats compare_influence_to_loo(const std::map<std::size_t, double>& influence,
                                        const std::map<std::size_t, double>& loo_delta,
                                        double eps, double noise_floor) {
  if (influence.size() != loo_delta.size()) {
    throw std::invalid_argument("compare_influence_to_loo: id sets differ");
  }
  std::vector<double> predicted, actual;
  predicted.reserve(influence.size());
  for (const auto& [id, inf] : influence) {
    const auto it = loo_delta.find(id);
    if (it == loo_delta.end()) {
      throw std::invalid_argument("compare_influence_to_loo: id sets differ");
    }
    predicted.push_back(eps * inf);
    actual.push_back(it->second);
  }

  AgreementStats stats;
  stats.pearson = pearson(predicted, actual);
  stats.spearman = spearman(predicted, actual);
  std::size_t agree = 0, used = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (std::abs(actual[i]) < noise_floor) continue;
    ++used;
    if ((predicted[i] > 0) == (actual[i] > 0)) ++agree;
  }
  stats.used = used;
  stats.sign_agreement = used ? static_cast<double>(agree) / static_cast<double>(used) : 1.0;
  return stats;
}

}  // namespace oracle
}  // namespace tda
