#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

namespace tda {
namespace oracle {

enum class ProxyModel { logistic_regression, linear_regression };

struct ProxyPoint {
  Eigen::VectorXd x;
  double y = 0.0;  // logistic: label in {0,1}; linear: regression target
};

// Strongly convex proxy where the response function is exact and
// leave-one-out retraining is cheap. The per-point loss folds the L2 term
// ((l2/2)||theta||^2), so the eps = -1/N objective and the mean over the
// remaining N-1 points share their argmin exactly.
struct ConvexProxySpec {
  ProxyModel model = ProxyModel::logistic_regression;
  int dim = 0;
  double l2 = 1e-2;  // > 0 for a unique optimum
  std::vector<ProxyPoint> data;
  std::vector<ProxyPoint> query;  // defines f = mean per-point log-likelihood

  void validate() const;
};

double point_loss(const ConvexProxySpec& spec, const ProxyPoint& p, const Eigen::VectorXd& theta);
Eigen::VectorXd point_loss_grad(const ConvexProxySpec& spec, const ProxyPoint& p,
                                const Eigen::VectorXd& theta);

// J(theta) = mean_i [loss_i + (l2/2)||theta||^2]
double objective(const ConvexProxySpec& spec, const Eigen::VectorXd& theta);
Eigen::VectorXd objective_grad(const ConvexProxySpec& spec, const Eigen::VectorXd& theta);
// Gauss-Newton curvature of the objective (exact Hessian for both proxies)
Eigen::MatrixXd objective_hessian(const ConvexProxySpec& spec, const Eigen::VectorXd& theta);

// f(theta) = mean over query points of the per-point log-likelihood
double query_value(const ConvexProxySpec& spec, const Eigen::VectorXd& theta);
Eigen::VectorXd query_grad(const ConvexProxySpec& spec, const Eigen::VectorXd& theta);

// Newton fit to gradient norm <= tol; throws with the final norm on failure.
Eigen::VectorXd fit_convex(const ConvexProxySpec& spec, double tol = 1e-10);

// Refit with example m reweighted by eps (the response function argument):
// minimizes (1/N) sum_i L_i + eps * L_m. eps = -1/N is leave-one-out.
Eigen::VectorXd reweight_retrain(const ConvexProxySpec& spec, std::size_t m, double eps,
                                 const Eigen::VectorXd& warm_start, double tol = 1e-10);

// Actual Delta f of removing each example: f(theta_refit) - f(theta_full).
std::map<std::size_t, double> loo_retrain_oracle(const ConvexProxySpec& spec,
                                                 double tol = 1e-10);

// -grad(f)^T (H + damping I)^{-1} grad(L_m) with the exact dense curvature
// at the fit. Demands damping > 0 when H is singular.
double dense_influence(const ConvexProxySpec& spec, std::size_t example_index,
                       double damping = 0.0);
std::map<std::size_t, double> dense_influence_all(const ConvexProxySpec& spec,
                                                  double damping = 0.0);

struct AgreementStats {
  double pearson = 0.0;
  double spearman = 0.0;
  double sign_agreement = 0.0;  // over |delta f| above the noise floor
  std::size_t used = 0;
};

// Correlation between predicted eps * I_f and the actual refit Delta f.
AgreementStats compare_influence_to_loo(const std::map<std::size_t, double>& influence,
                                        const std::map<std::size_t, double>& loo_delta,
                                        double eps, double noise_floor = 1e-12);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace oracle
}  // namespace tda
