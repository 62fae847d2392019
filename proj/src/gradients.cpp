#include "tda/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tda/rng.hpp"

namespace tda {

namespace {

void check_finite(const Model& model, const std::vector<double>& view_vals) {
  for (const auto& blk : model.view().layer_map) {
    for (std::size_t i = 0; i < blk.size(); ++i) {
      if (!std::isfinite(view_vals[blk.offset + i])) {
        throw std::runtime_error("non-finite gradient in mlp view block layer_id=" +
                                 std::to_string(blk.layer_id));
      }
    }
  }
}

GradVector backward_to_view(const Model& model, const Activations& act,
                            const Eigen::MatrixXd& dlog, GradVector::Source source) {
  std::vector<double> full(model.n_params(), 0.0);
  model.run_backward(act, dlog, full);
  GradVector gv{model.restrict_to_view(full), source};
  check_finite(model, gv.values);
  return gv;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dot(const GradVector& a, const GradVector& b) { return dot(std::span(a.values), std::span(b.values)); }

GradVector example_grad(const Model& model, const Example& ex) {
  return example_grad_masked(model, ex, [](std::size_t) { return true; });
}

GradVector example_grad_masked(const Model& model, const Example& ex,
                               const std::function<bool(std::size_t)>& keep) {
  const SeqTask task = make_task(model.config(), ex.prompt, ex.response);
  const Activations act = model.run_forward(task.tokens);
  const auto T = static_cast<Eigen::Index>(task.tokens.size());

  std::size_t kept = 0;
  for (std::size_t j = 0; j < task.target_len; ++j) {
    if (keep(j)) ++kept;
  }
  if (kept == 0) throw std::invalid_argument("example_grad: no unmasked response tokens");

  Eigen::MatrixXd dlog = Eigen::MatrixXd::Zero(T, model.config().vocab_size);
  const double w = 1.0 / static_cast<double>(kept);
  for (std::size_t j = 0; j < task.target_len; ++j) {
    if (!keep(j)) continue;
    const auto row = static_cast<Eigen::Index>(task.first_target + j - 1);
    const int target = task.tokens[task.first_target + j];
    dlog.row(row) += act.probs.row(row) * w;
    dlog(row, target) -= w;
  }
  return backward_to_view(model, act, dlog, GradVector::Source::example);
}

std::vector<GradVector> token_grads(const Model& model, const Example& ex) {
  const SeqTask task = make_task(model.config(), ex.prompt, ex.response);
  const Activations act = model.run_forward(task.tokens);
  const auto T = static_cast<Eigen::Index>(task.tokens.size());
  const double w = 1.0 / static_cast<double>(task.target_len);

  std::vector<GradVector> out;
  out.reserve(task.full_target_len);
  for (std::size_t j = 0; j < task.full_target_len; ++j) {
    if (j >= task.target_len) {
      // token fell off the truncation bound: zero contribution
      out.push_back(GradVector{std::vector<double>(model.view().size(), 0.0),
                               GradVector::Source::token});
      continue;
    }
    Eigen::MatrixXd dlog = Eigen::MatrixXd::Zero(T, model.config().vocab_size);
    const auto row = static_cast<Eigen::Index>(task.first_target + j - 1);
    const int target = task.tokens[task.first_target + j];
    dlog.row(row) -= act.probs.row(row) * w;
    dlog(row, target) += w;
    out.push_back(backward_to_view(model, act, dlog, GradVector::Source::token));
  }
  return out;
}

GradVector query_grad(const Model& model, const QuerySet& queries) {
  if (queries.items.empty()) throw std::invalid_argument("query_grad: empty query set");
  std::vector<double> full(model.n_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(queries.items.size());

  for (const auto& item : queries.items) {
    if (item.answer.empty()) throw std::invalid_argument("query_grad: empty answer");
    const SeqTask task = make_task(model.config(), item.prompt, item.answer);
    const Activations act = model.run_forward(task.tokens);
    const auto T = static_cast<Eigen::Index>(task.tokens.size());
    Eigen::MatrixXd dlog = Eigen::MatrixXd::Zero(T, model.config().vocab_size);
    const double w = inv_n / static_cast<double>(task.target_len);
    for (std::size_t j = 0; j < task.target_len; ++j) {
      const auto row = static_cast<Eigen::Index>(task.first_target + j - 1);
      const int target = task.tokens[task.first_target + j];
      dlog.row(row) -= act.probs.row(row) * w;
      dlog(row, target) += w;
    }
    model.run_backward(act, dlog, full);
  }
  GradVector gv{model.restrict_to_view(full), GradVector::Source::query};
  check_finite(model, gv.values);
  return gv;
}

double query_loglik(const Model& model, const QuerySet& queries) {
  if (queries.items.empty()) throw std::invalid_argument("query_loglik: empty query set");
  double s = 0.0;
  for (const auto& item : queries.items) {
    s -= model.nll_loss(item.prompt, item.answer);
  }
  return s / static_cast<double>(queries.items.size());
}

double central_difference(const std::function<double()>& eval, double& coord, double eps) {
  const double orig = coord;
  coord = orig + eps;
  const double fp = eval();
  coord = orig - eps;
  const double fm = eval();
  coord = orig;
  return (fp - fm) / (2.0 * eps);
}

namespace {

double fd_check_impl(const Model& model, const GradVector& analytic,
                     const std::function<double(const Model&)>& objective, double eps,
                     int n_coords, std::uint64_t seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");

  Model work = model;
  const std::size_t n_view = work.view().size();
  std::vector<std::size_t> coords;
  if (static_cast<std::size_t>(n_coords) >= n_view) {
    coords.resize(n_view);
    std::iota(coords.begin(), coords.end(), 0);
  } else {
    Rng rng(seed);
    std::vector<bool> taken(n_view, false);
    while (coords.size() < static_cast<std::size_t>(n_coords)) {
      const std::size_t c = static_cast<std::size_t>(rng.below(n_view));
      if (!taken[c]) {
        taken[c] = true;
        coords.push_back(c);
      }
    }
    std::sort(coords.begin(), coords.end());
  }

  double worst = 0.0;
  for (std::size_t c : coords) {
    double& coord = work.params()[work.view().full_index[c]];
    const double numeric =
        central_difference([&] { return objective(work); }, coord, eps);
    const double a = analytic.values[c];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace

double finite_diff_check(const Model& model, const Example& ex, double eps, int n_coords,
                         std::uint64_t seed) {
  const GradVector analytic = example_grad(model, ex);
  return fd_check_impl(
      model, analytic, [&](const Model& m) { return m.nll_loss(ex); }, eps, n_coords, seed);
}

double finite_diff_check(const Model& model, const QuerySet& queries, double eps, int n_coords,
                         std::uint64_t seed) {
  const GradVector analytic = query_grad(model, queries);
  return fd_check_impl(
      model, analytic, [&](const Model& m) { return query_loglik(m, queries); }, eps, n_coords,
      seed);
}

}  // namespace tda
