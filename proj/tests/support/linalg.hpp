#pragma once

// Small linear-algebra fixtures shared by the curvature tests and the
// acceptance suite.

#include <Eigen/Dense>

#include "tda/ekfac.hpp"
#include "tda/rng.hpp"

namespace tda::testrig {

inline Eigen::MatrixXd random_orthogonal(int n, Rng& rng) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m(i, j) = rng.normal();
  }
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

// row-major flatten of a d_out x (d_in+1) matrix, matching the view layout
inline Eigen::VectorXd vec_rm(const Eigen::MatrixXd& g) {
  Eigen::VectorXd v(g.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) v(k++) = g(r, c);
  }
  return v;
}

// single-block curvature plus a matching parameter view
struct SyntheticLayer {
  CurvatureModel curv;
  ParamView view;
};

inline SyntheticLayer make_synthetic(const LayerFactors& f) {
  SyntheticLayer s;
  s.curv.layers.push_back(f);
  ViewBlock blk{f.layer_id, 0, f.d_in, f.d_out};
  s.view.layer_map.push_back(blk);
  s.view.full_index.resize(blk.size());
  return s;
}

inline LayerFactors identity_factors(int d_in, int d_out, double lambda_value, double damping) {
  LayerFactors f;
  f.layer_id = 0;
  f.d_in = d_in;
  f.d_out = d_out;
  f.A = Eigen::MatrixXd::Identity(d_in + 1, d_in + 1);
  f.S = Eigen::MatrixXd::Identity(d_out, d_out);
  f.Q_A = f.A;
  f.Q_S = f.S;
  f.evals_A = Eigen::VectorXd::Ones(d_in + 1);
  f.evals_S = Eigen::VectorXd::Ones(d_out);
  f.Lambda = Eigen::MatrixXd::Constant(d_in + 1, d_out, lambda_value);
  f.damping = damping;
  f.sample_count = 1;
  return f;
}

inline GradVector make_vec(const Eigen::VectorXd& v) {
  return GradVector{std::vector<double>(v.data(), v.data() + v.size()),
                    GradVector::Source::example};
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

}  // namespace tda::testrig
