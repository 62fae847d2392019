#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tda/model.hpp"

namespace tda {

// Gradient over the MLP-restricted parameter view, aligned with
// ParamView::layer_map.
struct GradVector {
  enum class Source { example, token, query };
  std::vector<double> values;
  Source source = Source::example;

  std::size_t size() const { return values.size(); }
};

double dot(const GradVector& a, const GradVector& b);
double dot(std::span<const double> a, std::span<const double> b);

// d nll_loss / d view. Throws on empty response or non-finite entries
// (diagnostic names the offending view block).
GradVector example_grad(const Model& model, const Example& ex);

// Loss-masked variant: positions of the response whose index satisfies
// keep(t) contribute loss terms; normalization is over the kept count.
GradVector example_grad_masked(const Model& model, const Example& ex,
                               const std::function<bool(std::size_t)>& keep);

// One gradient per response token: entry t is (1/T) d log p(z_t | z_<t) / d view,
// sharing the per-example normalization of nll_loss, so that
// -sum_t token_grads[t] == example_grad. Tokens dropped by truncation get a
// zero entry.
std::vector<GradVector> token_grads(const Model& model, const Example& ex);

// d f / d view where f is the mean per-item log-likelihood of the query set
// (mean over items of the per-item token-mean log-probability).
GradVector query_grad(const Model& model, const QuerySet& queries);

// f(theta) evaluated for the query set; the scalar query_grad differentiates.
double query_loglik(const Model& model, const QuerySet& queries);

// Central-difference derivative of eval() with respect to one coordinate.
double central_difference(const std::function<double()>& eval, double& coord, double eps);

// Max relative error between the analytic gradient and central differences
// on n_coords seeded random view coordinates. eps must be positive.
double finite_diff_check(const Model& model, const Example& ex, double eps,
                         int n_coords = 24, std::uint64_t seed = 17);
double finite_diff_check(const Model& model, const QuerySet& queries, double eps,
                         int n_coords = 24, std::uint64_t seed = 17);

}  // namespace tda
