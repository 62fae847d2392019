#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tda/gradients.hpp"
#include "tda/model.hpp"

namespace tda {

// Kronecker factors and corrected eigenvalues for one MLP weight block.
// A is the bias-augmented input second moment, S the pre-activation
// gradient second moment; Lambda holds the eigenbasis-diagonal variances
// refit from per-sample gradients.
struct LayerFactors {
  int layer_id = 0;
  int d_in = 0;
  int d_out = 0;
  Eigen::MatrixXd A;       // (d_in+1) x (d_in+1)
  Eigen::MatrixXd S;       // d_out x d_out
  Eigen::MatrixXd Q_A;     // eigenbasis of A, columns, eigenvalues descending
  Eigen::MatrixXd Q_S;     // eigenbasis of S
  Eigen::VectorXd evals_A; // d_in+1, descending, clamped at zero
  Eigen::VectorXd evals_S; // d_out
  Eigen::MatrixXd Lambda;  // (d_in+1) x d_out, corrected eigenvalues, >= 0
  double damping = 0.0;
  std::size_t sample_count = 0;
};

struct CurvatureModel {
  std::vector<LayerFactors> layers;  // one per ParamView block, same order
  std::string checkpoint_hash;
  std::uint64_t seed = 0;
};

struct FactorOptions {
  std::size_t sample_count = 64;           // examples drawn from the dataset
  std::size_t positions_per_example = 8;   // token positions kept per example
  std::uint64_t seed = 0;
  double damping_scale = 0.1;  // lambda = scale * mean(Lambda), per layer
  double damping_floor = 1e-8;
};

// --- core accumulation, shared by the transformer driver and by synthetic
// --- fixtures that exercise the same math on other models

class FactorAccumulator {
 public:
  FactorAccumulator(int d_in, int d_out);
  // input is the raw layer input (d_in); the homogeneous 1 for the bias is
  // appended internally. g is the pre-activation gradient (d_out).
  void add(const Eigen::VectorXd& input, const Eigen::VectorXd& g);
  Eigen::MatrixXd mean_A() const;
  Eigen::MatrixXd mean_S() const;
  std::size_t count() const { return count_; }

 private:
  Eigen::MatrixXd sum_A_, sum_S_;
  std::size_t count_ = 0;
};

struct EigenPair {
  Eigen::MatrixXd Q;
  Eigen::VectorXd evals;  // descending, clamped at zero
};

// Symmetric eigendecomposition with a symmetry guard and a multiply-back
// reconstruction check (1e-8 relative Frobenius).
EigenPair eigendecompose(const Eigen::MatrixXd& sym);

class LambdaAccumulator {
 public:
  LambdaAccumulator(Eigen::MatrixXd Q_A, Eigen::MatrixXd Q_S);
  // G is a d_out x (d_in+1) per-sample gradient matrix
  void add(const Eigen::MatrixXd& G);
  // rank-1 sample G = g * augmented(input)^T
  void add_rank1(const Eigen::VectorXd& input, const Eigen::VectorXd& g);
  // Lambda[i,j] = mean over samples of (Q_S^T G Q_A)[j,i]^2
  Eigen::MatrixXd mean() const;
  std::size_t count() const { return count_; }

 private:
  Eigen::MatrixXd q_a_, q_s_;
  Eigen::MatrixXd sum_sq_;  // (d_in+1) x d_out
  std::size_t count_ = 0;
};

// --- transformer driver

// Estimate A and S per MLP block from the sample: token positions are drawn
// per example (at most positions_per_example), and backward passes use
// targets sampled from the model's own predictive distribution.
std::vector<LayerFactors> estimate_factors(const Model& model,
                                           const std::vector<Example>& sample,
                                           const FactorOptions& opts);

// Fill Lambda on factors whose eigenbases are already computed, replaying
// the same seeded sample walk.
void correct_eigenvalues(const Model& model, const std::vector<Example>& sample,
                         const FactorOptions& opts, std::vector<LayerFactors>& factors);

void set_damping(std::vector<LayerFactors>& factors, double scale, double floor);

// Full pipeline: subsample the dataset, estimate factors, eigendecompose,
// refit eigenvalues, set damping.
CurvatureModel estimate_curvature(const Model& model, const std::vector<Example>& dataset,
                                  const FactorOptions& opts);

// Damped inverse-curvature vector product, layer by layer:
//   Q_S [ (Q_S^T V Q_A) / (Lambda + damping) ] Q_A^T
GradVector ihvp(const CurvatureModel& curv, const ParamView& view, const GradVector& v);

void save_curvature(const std::filesystem::path& path, const CurvatureModel& curv);
CurvatureModel load_curvature(const std::filesystem::path& path);

}  // namespace tda
