#include "tda/ekfac.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "tda/hash.hpp"
#include "tda/rng.hpp"

namespace tda {

using nlohmann::json;

FactorAccumulator::FactorAccumulator(int d_in, int d_out)
    : sum_A_(Eigen::MatrixXd::Zero(d_in + 1, d_in + 1)),
      sum_S_(Eigen::MatrixXd::Zero(d_out, d_out)) {}

void FactorAccumulator::add(const Eigen::VectorXd& input, const Eigen::VectorXd& g) {
  if (input.size() + 1 != sum_A_.rows() || g.size() != sum_S_.rows()) {
    throw std::invalid_argument("factor accumulator: dimension mismatch");
  }
  Eigen::VectorXd aug(input.size() + 1);
  aug << input, 1.0;
  sum_A_.noalias() += aug * aug.transpose();
  sum_S_.noalias() += g * g.transpose();
  ++count_;
}

Eigen::MatrixXd FactorAccumulator::mean_A() const {
  if (count_ == 0) throw std::invalid_argument("factor accumulator: empty sample");
  return sum_A_ / static_cast<double>(count_);
}

Eigen::MatrixXd FactorAccumulator::mean_S() const {
  if (count_ == 0) throw std::invalid_argument("factor accumulator: empty sample");
  return sum_S_ / static_cast<double>(count_);
}

EigenPair eigendecompose(const Eigen::MatrixXd& sym) {
  if (sym.rows() != sym.cols()) throw std::invalid_argument("eigendecompose: not square");
  const double scale = std::max(1.0, sym.cwiseAbs().maxCoeff());
  if ((sym - sym.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("eigendecompose: input not symmetric within tolerance");
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sym + sym.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecompose: solver failed");

  const auto n = sym.rows();
  EigenPair out;
  out.Q.resize(n, n);
  out.evals.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.Q.col(i) = es.eigenvectors().col(n - 1 - i);
    out.evals(i) = es.eigenvalues()(n - 1 - i);
  }

  const Eigen::MatrixXd recon = out.Q * out.evals.asDiagonal() * out.Q.transpose();
  if ((recon - sym).norm() > 1e-8 * std::max(1.0, sym.norm())) {
    throw std::runtime_error("eigendecompose: reconstruction check failed");
  }
  return out;
}

LambdaAccumulator::LambdaAccumulator(Eigen::MatrixXd Q_A, Eigen::MatrixXd Q_S)
    : q_a_(std::move(Q_A)),
      q_s_(std::move(Q_S)),
      sum_sq_(Eigen::MatrixXd::Zero(q_a_.cols(), q_s_.cols())) {}

void LambdaAccumulator::add(const Eigen::MatrixXd& G) {
  if (G.rows() != q_s_.rows() || G.cols() != q_a_.rows()) {
    throw std::invalid_argument("lambda accumulator: gradient shape mismatch");
  }
  const Eigen::MatrixXd rotated = q_s_.transpose() * G * q_a_;
  sum_sq_ += rotated.transpose().cwiseProduct(rotated.transpose());
  ++count_;
}

void LambdaAccumulator::add_rank1(const Eigen::VectorXd& input, const Eigen::VectorXd& g) {
  Eigen::VectorXd aug(input.size() + 1);
  aug << input, 1.0;
  if (aug.size() != q_a_.rows() || g.size() != q_s_.rows()) {
    throw std::invalid_argument("lambda accumulator: rank1 shape mismatch");
  }
  const Eigen::VectorXd ar = (q_a_.transpose() * aug).array().square();
  const Eigen::VectorXd gr = (q_s_.transpose() * g).array().square();
  sum_sq_.noalias() += ar * gr.transpose();
  ++count_;
}

Eigen::MatrixXd LambdaAccumulator::mean() const {
  if (count_ == 0) throw std::invalid_argument("lambda accumulator: empty sample");
  return sum_sq_ / static_cast<double>(count_);
}

namespace {

// Deterministic walk over (example, token position) samples. For each
// example the targets at every loss row are drawn from the model's own
// predictive distribution, a single backward pass is taken, and the kept
// positions are handed to the callback in ascending row order.
template <class Callback>
void sample_walk(const Model& model, const std::vector<Example>& sample,
                 const FactorOptions& opts, Callback&& cb) {
  if (sample.empty()) throw std::invalid_argument("factor estimation: empty sample");
  const int V = model.config().vocab_size;

  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& ex = sample[i];
    const SeqTask task = make_task(model.config(), ex.prompt, ex.response);
    const Activations act = model.run_forward(task.tokens);
    const auto T = static_cast<Eigen::Index>(task.tokens.size());
    Rng rng(Rng::mix(opts.seed, i));

    Eigen::MatrixXd dlog = Eigen::MatrixXd::Zero(T, V);
    for (std::size_t j = 0; j < task.target_len; ++j) {
      const auto row = static_cast<Eigen::Index>(task.first_target + j - 1);
      const double u = rng.uniform();
      double cdf = 0.0;
      int drawn = V - 1;
      for (int v = 0; v < V; ++v) {
        cdf += act.probs(row, v);
        if (u < cdf) {
          drawn = v;
          break;
        }
      }
      dlog.row(row) += act.probs.row(row);
      dlog(row, drawn) -= 1.0;
    }

    // all positions up to the last loss row carry gradient
    const std::size_t n_rows = static_cast<std::size_t>(T) - 1;
    std::vector<std::size_t> rows(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) rows[r] = r;
    if (opts.positions_per_example > 0 && opts.positions_per_example < n_rows) {
      rng.shuffle(rows);
      rows.resize(opts.positions_per_example);
      std::sort(rows.begin(), rows.end());
    }

    MlpTap tap;
    std::vector<double> scratch(model.n_params(), 0.0);
    model.run_backward(act, dlog, scratch, &tap);

    for (std::size_t r : rows) {
      const auto t = static_cast<Eigen::Index>(r);
      for (std::size_t l = 0; l < tap.layers.size(); ++l) {
        const auto& tl = tap.layers[l];
        cb(2 * l, tl.fc1_in.row(t).transpose(), tl.fc1_g.row(t).transpose());
        cb(2 * l + 1, tl.fc2_in.row(t).transpose(), tl.fc2_g.row(t).transpose());
      }
    }
  }
}

void check_psd_and_clamp(Eigen::VectorXd& evals, const char* what) {
  const double tol = 1e-8 * std::max(1.0, evals.cwiseAbs().maxCoeff());
  if (evals.minCoeff() < -tol) {
    throw std::runtime_error(std::string(what) + ": factor is not PSD within tolerance");
  }
  evals = evals.cwiseMax(0.0);
}

}  // namespace

std::vector<LayerFactors> estimate_factors(const Model& model,
                                           const std::vector<Example>& sample,
                                           const FactorOptions& opts) {
  const auto& blocks = model.view().layer_map;
  std::vector<FactorAccumulator> acc;
  acc.reserve(blocks.size());
  for (const auto& b : blocks) acc.emplace_back(b.d_in, b.d_out);

  sample_walk(model, sample, opts,
              [&](std::size_t block, const Eigen::VectorXd& input, const Eigen::VectorXd& g) {
                acc[block].add(input, g);
              });

  std::vector<LayerFactors> out(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    out[b].layer_id = blocks[b].layer_id;
    out[b].d_in = blocks[b].d_in;
    out[b].d_out = blocks[b].d_out;
    out[b].A = acc[b].mean_A();
    out[b].S = acc[b].mean_S();
    out[b].sample_count = acc[b].count();
  }
  return out;
}

void correct_eigenvalues(const Model& model, const std::vector<Example>& sample,
                         const FactorOptions& opts, std::vector<LayerFactors>& factors) {
  std::vector<LambdaAccumulator> acc;
  acc.reserve(factors.size());
  for (const auto& f : factors) {
    if (f.Q_A.size() == 0 || f.Q_S.size() == 0) {
      throw std::invalid_argument("correct_eigenvalues: eigenbases not computed");
    }
    acc.emplace_back(f.Q_A, f.Q_S);
  }

  sample_walk(model, sample, opts,
              [&](std::size_t block, const Eigen::VectorXd& input, const Eigen::VectorXd& g) {
                acc[block].add_rank1(input, g);
              });

  for (std::size_t b = 0; b < factors.size(); ++b) factors[b].Lambda = acc[b].mean();
}

void set_damping(std::vector<LayerFactors>& factors, double scale, double floor) {
  for (auto& f : factors) {
    if (f.Lambda.size() == 0) throw std::invalid_argument("set_damping: Lambda not computed");
    f.damping = std::max(scale * f.Lambda.mean(), floor);
  }
}

CurvatureModel estimate_curvature(const Model& model, const std::vector<Example>& dataset,
                                  const FactorOptions& opts) {
  if (dataset.empty()) throw std::invalid_argument("estimate_curvature: empty dataset");

  std::vector<Example> sample;
  if (opts.sample_count >= dataset.size()) {
    sample = dataset;
  } else {
    std::vector<std::size_t> idx(dataset.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(Rng::mix(opts.seed, 0x5eed));
    rng.shuffle(idx);
    idx.resize(opts.sample_count);
    std::sort(idx.begin(), idx.end());
    sample.reserve(idx.size());
    for (std::size_t i : idx) sample.push_back(dataset[i]);
  }

  CurvatureModel curv;
  curv.checkpoint_hash = model.content_hash();
  curv.seed = opts.seed;
  curv.layers = estimate_factors(model, sample, opts);
  for (auto& f : curv.layers) {
    EigenPair ea = eigendecompose(f.A);
    check_psd_and_clamp(ea.evals, "A");
    f.Q_A = std::move(ea.Q);
    f.evals_A = std::move(ea.evals);
    EigenPair es = eigendecompose(f.S);
    check_psd_and_clamp(es.evals, "S");
    f.Q_S = std::move(es.Q);
    f.evals_S = std::move(es.evals);
  }
  correct_eigenvalues(model, sample, opts, curv.layers);
  set_damping(curv.layers, opts.damping_scale, opts.damping_floor);
  return curv;
}

GradVector ihvp(const CurvatureModel& curv, const ParamView& view, const GradVector& v) {
  if (curv.layers.size() != view.layer_map.size()) {
    throw std::invalid_argument("ihvp: curvature does not cover the parameter view");
  }
  if (v.values.size() != view.size()) {
    throw std::invalid_argument("ihvp: vector not aligned with the parameter view");
  }

  GradVector out{std::vector<double>(v.values.size(), 0.0), v.source};
  for (std::size_t b = 0; b < curv.layers.size(); ++b) {
    const auto& f = curv.layers[b];
    const auto& blk = view.layer_map[b];
    if (f.d_in != blk.d_in || f.d_out != blk.d_out || f.layer_id != blk.layer_id) {
      throw std::invalid_argument("ihvp: layer shape mismatch");
    }
    if (!(f.damping > 0.0)) throw std::invalid_argument("ihvp: damping not set");

    Eigen::Map<const MatrixRM> V(v.values.data() + blk.offset, f.d_out, f.d_in + 1);
    Eigen::MatrixXd rotated = f.Q_S.transpose() * V * f.Q_A;
    for (int r = 0; r < f.d_out; ++r) {
      for (int c = 0; c < f.d_in + 1; ++c) {
        rotated(r, c) /= f.Lambda(c, r) + f.damping;
      }
    }
    Eigen::Map<MatrixRM> O(out.values.data() + blk.offset, f.d_out, f.d_in + 1);
    O = f.Q_S * rotated * f.Q_A.transpose();
  }
  return out;
}

namespace {

constexpr char kCurvMagic[8] = {'T', 'D', 'A', 'C', 'U', 'R', 'V', '1'};

void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(m.size()) * sizeof(double)));
}

void read_matrix(std::ifstream& in, Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
  m.resize(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(static_cast<std::size_t>(m.size()) * sizeof(double)));
}

}  // namespace

void save_curvature(const std::filesystem::path& path, const CurvatureModel& curv) {
  json header;
  header["checkpoint_hash"] = curv.checkpoint_hash;
  header["seed"] = curv.seed;
  json layers = json::array();
  for (const auto& f : curv.layers) {
    layers.push_back({{"d_in", f.d_in},
                      {"d_out", f.d_out},
                      {"damping", f.damping},
                      {"layer_id", f.layer_id},
                      {"sample_count", f.sample_count}});
  }
  header["layers"] = layers;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write curvature file: " + path.string());
  out.write(kCurvMagic, sizeof kCurvMagic);
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& f : curv.layers) {
    write_matrix(out, f.A);
    write_matrix(out, f.S);
    write_matrix(out, f.Q_A);
    write_matrix(out, f.Q_S);
    Eigen::MatrixXd ea = f.evals_A, es = f.evals_S;
    write_matrix(out, ea);
    write_matrix(out, es);
    write_matrix(out, f.Lambda);
  }
  if (!out) throw std::runtime_error("short write on curvature file: " + path.string());
}

CurvatureModel load_curvature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open curvature file: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCurvMagic, sizeof magic) != 0) {
    throw std::runtime_error("bad curvature magic: " + path.string());
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  const json header = json::parse(hs);

  CurvatureModel curv;
  curv.checkpoint_hash = header.at("checkpoint_hash").get<std::string>();
  curv.seed = header.at("seed").get<std::uint64_t>();
  for (const auto& jl : header.at("layers")) {
    LayerFactors f;
    f.layer_id = jl.at("layer_id").get<int>();
    f.d_in = jl.at("d_in").get<int>();
    f.d_out = jl.at("d_out").get<int>();
    f.damping = jl.at("damping").get<double>();
    f.sample_count = jl.at("sample_count").get<std::size_t>();
    const Eigen::Index da = f.d_in + 1, ds = f.d_out;
    read_matrix(in, f.A, da, da);
    read_matrix(in, f.S, ds, ds);
    read_matrix(in, f.Q_A, da, da);
    read_matrix(in, f.Q_S, ds, ds);
    Eigen::MatrixXd ea, es;
    read_matrix(in, ea, da, 1);
    read_matrix(in, es, ds, 1);
    f.evals_A = ea.col(0);
    f.evals_S = es.col(0);
    read_matrix(in, f.Lambda, da, ds);
    curv.layers.push_back(std::move(f));
  }
  if (!in) throw std::runtime_error("truncated curvature file: " + path.string());
  return curv;
}

}  // namespace tda
