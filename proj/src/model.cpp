#include "tda/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tda/hash.hpp"
#include "tda/rng.hpp"

namespace tda {

using nlohmann::json;

namespace {

constexpr double kRmsEps = 1e-6;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_deriv(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

using ConstMap = Eigen::Map<const MatrixRM>;
using MutMap = Eigen::Map<MatrixRM>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using MutVecMap = Eigen::Map<Eigen::VectorXd>;

// y = gain (.) x * (1/rms(x)) per row; returns 1/rms per row
Eigen::VectorXd rmsnorm_forward(const Eigen::MatrixXd& x, ConstVecMap gain,
                                Eigen::MatrixXd& y) {
  const auto T = x.rows();
  const auto d = x.cols();
  Eigen::VectorXd r(T);
  y.resize(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double ms = x.row(t).squaredNorm() / static_cast<double>(d);
    r(t) = 1.0 / std::sqrt(ms + kRmsEps);
    y.row(t) = (x.row(t).transpose().cwiseProduct(gain)).transpose() * r(t);
  }
  return r;
}

// backward through rmsnorm; accumulates dgain, returns dx
Eigen::MatrixXd rmsnorm_backward(const Eigen::MatrixXd& x, ConstVecMap gain,
                                 const Eigen::VectorXd& r, const Eigen::MatrixXd& dy,
                                 MutVecMap dgain) {
  const auto T = x.rows();
  const auto d = x.cols();
  Eigen::MatrixXd dx(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double rt = r(t);
    const Eigen::VectorXd gx = gain.cwiseProduct(x.row(t).transpose());
    const double c = dy.row(t).dot(gx.transpose());
    dx.row(t) = (gain.cwiseProduct(dy.row(t).transpose()) * rt -
                 x.row(t).transpose() * (rt * rt * rt / static_cast<double>(d) * c))
                    .transpose();
    dgain += dy.row(t).transpose().cwiseProduct(x.row(t).transpose()) * rt;
  }
  return dx;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    throw std::invalid_argument("model config: all counts must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model must be divisible by n_heads");
  }
  if (max_seq_len < 2) {
    throw std::invalid_argument("model config: max_seq_len must be >= 2");
  }
  if (vocab_size < Tokenizer::kVocabSize) {
    throw std::invalid_argument("model config: vocab_size must cover the byte tokenizer");
  }
}

SeqTask make_task(const ModelConfig& cfg, std::span<const int> prompt,
                  std::span<const int> target) {
  SeqTask task;
  task.full_target_len = target.size();
  task.tokens.reserve(1 + prompt.size() + target.size());
  task.tokens.push_back(Tokenizer::kBos);
  task.tokens.insert(task.tokens.end(), prompt.begin(), prompt.end());
  task.first_target = task.tokens.size();
  task.tokens.insert(task.tokens.end(), target.begin(), target.end());
  if (task.tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    task.tokens.resize(static_cast<std::size_t>(cfg.max_seq_len));
  }
  task.target_len =
      task.tokens.size() > task.first_target ? task.tokens.size() - task.first_target : 0;
  if (task.target_len == 0) {
    throw std::invalid_argument("empty response (no target tokens left after truncation)");
  }
  return task;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  build_layout();
  init_params();
}

void Model::build_layout() {
  const auto V = static_cast<std::size_t>(cfg_.vocab_size);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto f = static_cast<std::size_t>(cfg_.d_ff);
  const auto L = static_cast<std::size_t>(cfg_.max_seq_len);

  std::size_t cur = 0;
  layout_.wte = cur;
  cur += V * d;
  layout_.wpe = cur;
  cur += L * d;
  layout_.blocks.resize(cfg_.n_layers);
  for (auto& b : layout_.blocks) {
    b.attn_gain = cur;
    cur += d;
    b.wq = cur;
    cur += d * d;
    b.wk = cur;
    cur += d * d;
    b.wv = cur;
    cur += d * d;
    b.wo = cur;
    cur += d * d;
    b.mlp_gain = cur;
    cur += d;
    b.fc1_w = cur;
    cur += f * d;
    b.fc1_b = cur;
    cur += f;
    b.fc2_w = cur;
    cur += d * f;
    b.fc2_b = cur;
    cur += d;
  }
  layout_.final_gain = cur;
  cur += d;
  layout_.lm_head = cur;
  cur += V * d;
  layout_.total = cur;

  // MLP-restricted view: fc1 then fc2 per block, bias as last input column
  view_.layer_map.clear();
  view_.full_index.clear();
  std::size_t voff = 0;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto& b = layout_.blocks[static_cast<std::size_t>(l)];
    ViewBlock fc1{2 * l, voff, cfg_.d_model, cfg_.d_ff};
    view_.layer_map.push_back(fc1);
    for (int o = 0; o < cfg_.d_ff; ++o) {
      for (int i = 0; i < cfg_.d_model; ++i) {
        view_.full_index.push_back(b.fc1_w + static_cast<std::size_t>(o) * d +
                                   static_cast<std::size_t>(i));
      }
      view_.full_index.push_back(b.fc1_b + static_cast<std::size_t>(o));
    }
    voff += fc1.size();
    ViewBlock fc2{2 * l + 1, voff, cfg_.d_ff, cfg_.d_model};
    view_.layer_map.push_back(fc2);
    for (int o = 0; o < cfg_.d_model; ++o) {
      for (int i = 0; i < cfg_.d_ff; ++i) {
        view_.full_index.push_back(b.fc2_w + static_cast<std::size_t>(o) * f +
                                   static_cast<std::size_t>(i));
      }
      view_.full_index.push_back(b.fc2_b + static_cast<std::size_t>(o));
    }
    voff += fc2.size();
  }
}

void Model::init_params() {
  params_.assign(layout_.total, 0.0);
  Rng rng(seed_);

  const auto V = static_cast<std::size_t>(cfg_.vocab_size);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto f = static_cast<std::size_t>(cfg_.d_ff);
  const auto L = static_cast<std::size_t>(cfg_.max_seq_len);
  const double emb_std = 0.08;
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double fc1_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double fc2_std = 1.0 / std::sqrt(static_cast<double>(f));

  for (std::size_t i = 0; i < V * d; ++i) params_[layout_.wte + i] = rng.normal(0, emb_std);
  for (std::size_t i = 0; i < L * d; ++i) params_[layout_.wpe + i] = rng.normal(0, emb_std);
  for (auto& b : layout_.blocks) {
    for (std::size_t i = 0; i < d; ++i) params_[b.attn_gain + i] = 1.0;
    for (std::size_t i = 0; i < d * d; ++i) params_[b.wq + i] = rng.normal(0, attn_std);
    for (std::size_t i = 0; i < d * d; ++i) params_[b.wk + i] = rng.normal(0, attn_std);
    for (std::size_t i = 0; i < d * d; ++i) params_[b.wv + i] = rng.normal(0, attn_std);
    for (std::size_t i = 0; i < d * d; ++i) params_[b.wo + i] = rng.normal(0, attn_std);
    for (std::size_t i = 0; i < d; ++i) params_[b.mlp_gain + i] = 1.0;
    for (std::size_t i = 0; i < f * d; ++i) params_[b.fc1_w + i] = rng.normal(0, fc1_std);
    for (std::size_t i = 0; i < d * f; ++i) params_[b.fc2_w + i] = rng.normal(0, fc2_std);
  }
  for (std::size_t i = 0; i < d; ++i) params_[layout_.final_gain + i] = 1.0;
  for (std::size_t i = 0; i < V * d; ++i) params_[layout_.lm_head + i] = rng.normal(0, attn_std);
}

std::vector<double> Model::gather_view() const {
  std::vector<double> out(view_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = params_[view_.full_index[i]];
  return out;
}

std::vector<double> Model::restrict_to_view(const std::vector<double>& full_grad) const {
  if (full_grad.size() != params_.size()) {
    throw std::invalid_argument("restrict_to_view: gradient size mismatch");
  }
  std::vector<double> out(view_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = full_grad[view_.full_index[i]];
  return out;
}

Activations Model::run_forward(std::span<const int> tokens) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  if (T < 1) throw std::invalid_argument("forward: empty token sequence");
  if (T > cfg_.max_seq_len) {
    throw std::invalid_argument("forward: sequence longer than max_seq_len");
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg_.vocab_size) throw std::invalid_argument("forward: token out of vocab");
  }

  const int d = cfg_.d_model;
  const int f = cfg_.d_ff;
  const int V = cfg_.vocab_size;
  const int nh = cfg_.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = params_.data();

  Activations act;
  act.tokens.assign(tokens.begin(), tokens.end());
  act.x0.resize(T, d);
  ConstMap wte(p + layout_.wte, V, d);
  ConstMap wpe(p + layout_.wpe, cfg_.max_seq_len, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    act.x0.row(t) = wte.row(tokens[static_cast<std::size_t>(t)]) + wpe.row(t);
  }

  Eigen::MatrixXd x = act.x0;
  act.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& L = act.layers[static_cast<std::size_t>(l)];
    const auto& b = layout_.blocks[static_cast<std::size_t>(l)];
    L.x_in = x;

    ConstVecMap gain1(p + b.attn_gain, d);
    L.r1 = rmsnorm_forward(L.x_in, gain1, L.a_in);

    ConstMap wq(p + b.wq, d, d), wk(p + b.wk, d, d), wv(p + b.wv, d, d), wo(p + b.wo, d, d);
    L.q = L.a_in * wq.transpose();
    L.k = L.a_in * wk.transpose();
    L.v = L.a_in * wv.transpose();

    L.probs.resize(static_cast<std::size_t>(nh));
    L.attn_cat.resize(T, d);
    for (int h = 0; h < nh; ++h) {
      const auto qh = L.q.middleCols(h * dh, dh);
      const auto kh = L.k.middleCols(h * dh, dh);
      const auto vh = L.v.middleCols(h * dh, dh);
      Eigen::MatrixXd s = (qh * kh.transpose()) * scale;
      Eigen::MatrixXd& P = L.probs[static_cast<std::size_t>(h)];
      P = Eigen::MatrixXd::Zero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        const double mx = s.row(t).head(t + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= t; ++j) {
          const double e = std::exp(s(t, j) - mx);
          P(t, j) = e;
          z += e;
        }
        P.row(t).head(t + 1) /= z;
      }
      L.attn_cat.middleCols(h * dh, dh) = P * vh;
    }

    L.x_mid = L.x_in + L.attn_cat * wo.transpose();

    ConstVecMap gain2(p + b.mlp_gain, d);
    L.r2 = rmsnorm_forward(L.x_mid, gain2, L.m_in);

    ConstMap w1(p + b.fc1_w, f, d), w2(p + b.fc2_w, d, f);
    ConstVecMap b1(p + b.fc1_b, f), b2(p + b.fc2_b, d);
    L.h1 = (L.m_in * w1.transpose()).rowwise() + b1.transpose();
    L.h2 = L.h1.unaryExpr([](double v) { return gelu(v); });
    L.mlp_out = (L.h2 * w2.transpose()).rowwise() + b2.transpose();

    x = L.x_mid + L.mlp_out;
  }
  act.x_last = x;

  ConstVecMap gain3(p + layout_.final_gain, d);
  act.r3 = rmsnorm_forward(act.x_last, gain3, act.x_final);

  ConstMap whead(p + layout_.lm_head, V, d);
  act.logits = act.x_final * whead.transpose();

  act.probs.resize(T, V);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mx = act.logits.row(t).maxCoeff();
    act.probs.row(t) = (act.logits.row(t).array() - mx).exp();
    act.probs.row(t) /= act.probs.row(t).sum();
  }
  return act;
}

void Model::run_backward(const Activations& act, const Eigen::MatrixXd& d_logits,
                         std::vector<double>& full_grad, MlpTap* tap) const {
  const auto T = static_cast<Eigen::Index>(act.seq_len());
  const int d = cfg_.d_model;
  const int f = cfg_.d_ff;
  const int V = cfg_.vocab_size;
  const int nh = cfg_.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (d_logits.rows() != T || d_logits.cols() != V) {
    throw std::invalid_argument("backward: d_logits shape mismatch");
  }
  if (full_grad.size() != params_.size()) full_grad.assign(params_.size(), 0.0);
  const double* p = params_.data();
  double* g = full_grad.data();
  if (tap) tap->layers.resize(static_cast<std::size_t>(cfg_.n_layers));

  ConstMap whead(p + layout_.lm_head, V, d);
  MutMap dwhead(g + layout_.lm_head, V, d);
  dwhead += d_logits.transpose() * act.x_final;
  Eigen::MatrixXd dxf = d_logits * whead;

  ConstVecMap gain3(p + layout_.final_gain, d);
  MutVecMap dgain3(g + layout_.final_gain, d);
  Eigen::MatrixXd dx = rmsnorm_backward(act.x_last, gain3, act.r3, dxf, dgain3);

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& L = act.layers[static_cast<std::size_t>(l)];
    const auto& b = layout_.blocks[static_cast<std::size_t>(l)];

    // mlp sublayer
    const Eigen::MatrixXd& dmlp_out = dx;
    ConstMap w1(p + b.fc1_w, f, d), w2(p + b.fc2_w, d, f);
    MutMap dw1(g + b.fc1_w, f, d), dw2(g + b.fc2_w, d, f);
    MutVecMap db1(g + b.fc1_b, f), db2(g + b.fc2_b, d);

    dw2 += dmlp_out.transpose() * L.h2;
    db2 += dmlp_out.colwise().sum();
    Eigen::MatrixXd dh2 = dmlp_out * w2;
    Eigen::MatrixXd dh1 =
        dh2.cwiseProduct(L.h1.unaryExpr([](double v) { return gelu_deriv(v); }));
    dw1 += dh1.transpose() * L.m_in;
    db1 += dh1.colwise().sum();
    Eigen::MatrixXd dm_in = dh1 * w1;

    if (tap) {
      auto& tl = tap->layers[static_cast<std::size_t>(l)];
      tl.fc1_in = L.m_in;
      tl.fc1_g = dh1;
      tl.fc2_in = L.h2;
      tl.fc2_g = dmlp_out;
    }

    ConstVecMap gain2(p + b.mlp_gain, d);
    MutVecMap dgain2(g + b.mlp_gain, d);
    Eigen::MatrixXd dx_mid = dx + rmsnorm_backward(L.x_mid, gain2, L.r2, dm_in, dgain2);

    // attention sublayer
    ConstMap wq(p + b.wq, d, d), wk(p + b.wk, d, d), wv(p + b.wv, d, d), wo(p + b.wo, d, d);
    MutMap dwq(g + b.wq, d, d), dwk(g + b.wk, d, d), dwv(g + b.wv, d, d), dwo(g + b.wo, d, d);

    dwo += dx_mid.transpose() * L.attn_cat;
    Eigen::MatrixXd dcat = dx_mid * wo;

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(T, d);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(T, d);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(T, d);
    for (int h = 0; h < nh; ++h) {
      const auto& P = L.probs[static_cast<std::size_t>(h)];
      const auto qh = L.q.middleCols(h * dh, dh);
      const auto kh = L.k.middleCols(h * dh, dh);
      const auto vh = L.v.middleCols(h * dh, dh);
      const auto doh = dcat.middleCols(h * dh, dh);

      Eigen::MatrixXd dP = doh * vh.transpose();
      dv.middleCols(h * dh, dh) += P.transpose() * doh;

      Eigen::MatrixXd ds(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        const double dot = dP.row(t).dot(P.row(t));
        ds.row(t) = P.row(t).cwiseProduct((dP.row(t).array() - dot).matrix());
      }
      dq.middleCols(h * dh, dh) += scale * (ds * kh);
      dk.middleCols(h * dh, dh) += scale * (ds.transpose() * qh);
    }
    dwq += dq.transpose() * L.a_in;
    dwk += dk.transpose() * L.a_in;
    dwv += dv.transpose() * L.a_in;
    Eigen::MatrixXd da_in = dq * wq + dk * wk + dv * wv;

    ConstVecMap gain1(p + b.attn_gain, d);
    MutVecMap dgain1(g + b.attn_gain, d);
    dx = dx_mid + rmsnorm_backward(L.x_in, gain1, L.r1, da_in, dgain1);
  }

  MutMap dwte(g + layout_.wte, V, d);
  MutMap dwpe(g + layout_.wpe, cfg_.max_seq_len, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    dwte.row(act.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    dwpe.row(t) += dx.row(t);
  }
}

Eigen::MatrixXd Model::log_probs(std::span<const int> tokens) const {
  const Activations act = run_forward(tokens);
  const auto T = static_cast<Eigen::Index>(act.seq_len());
  Eigen::MatrixXd lp(T, cfg_.vocab_size);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mx = act.logits.row(t).maxCoeff();
    const double lse = mx + std::log((act.logits.row(t).array() - mx).exp().sum());
    lp.row(t) = act.logits.row(t).array() - lse;
  }
  return lp;
}

double Model::nll_loss(std::span<const int> prompt, std::span<const int> response) const {
  const SeqTask task = make_task(cfg_, prompt, response);
  const Activations act = run_forward(task.tokens);
  double total = 0.0;
  for (std::size_t j = 0; j < task.target_len; ++j) {
    const auto row = static_cast<Eigen::Index>(task.first_target + j - 1);
    const int target = task.tokens[task.first_target + j];
    const double mx = act.logits.row(row).maxCoeff();
    const double lse = mx + std::log((act.logits.row(row).array() - mx).exp().sum());
    total += lse - act.logits(row, target);
  }
  return total / static_cast<double>(task.target_len);
}

double Model::nll_loss(const Example& ex) const { return nll_loss(ex.prompt, ex.response); }

std::vector<int> Model::greedy_decode(std::span<const int> prompt, std::size_t n_new) const {
  std::vector<int> tokens;
  tokens.push_back(Tokenizer::kBos);
  tokens.insert(tokens.end(), prompt.begin(), prompt.end());
  const auto cap = static_cast<std::size_t>(cfg_.max_seq_len);
  if (tokens.size() + n_new > cap) {
    // keep the most recent context
    const std::size_t keep = cap > n_new ? cap - n_new : 1;
    std::vector<int> tail(tokens.end() - static_cast<std::ptrdiff_t>(keep), tokens.end());
    tokens = std::move(tail);
  }

  std::vector<int> out;
  out.reserve(n_new);
  for (std::size_t i = 0; i < n_new; ++i) {
    const Activations act = run_forward(tokens);
    const auto last = static_cast<Eigen::Index>(tokens.size()) - 1;
    int best = 0;
    double best_v = act.logits(last, 0);
    for (int v = 1; v < cfg_.vocab_size; ++v) {
      if (act.logits(last, v) > best_v) {
        best_v = act.logits(last, v);
        best = v;
      }
    }
    out.push_back(best);
    tokens.push_back(best);
  }
  return out;
}

std::string Model::content_hash() const {
  Hasher h;
  h.add("ckpt.v1");
  h.add_u64(static_cast<std::uint64_t>(cfg_.vocab_size));
  h.add_u64(static_cast<std::uint64_t>(cfg_.d_model));
  h.add_u64(static_cast<std::uint64_t>(cfg_.n_layers));
  h.add_u64(static_cast<std::uint64_t>(cfg_.n_heads));
  h.add_u64(static_cast<std::uint64_t>(cfg_.d_ff));
  h.add_u64(static_cast<std::uint64_t>(cfg_.max_seq_len));
  h.add_u64(seed_);
  h.add(std::string_view(reinterpret_cast<const char*>(params_.data()),
                         params_.size() * sizeof(double)));
  return h.hex();
}

namespace {
constexpr char kCkptMagic[8] = {'T', 'D', 'A', 'C', 'K', 'P', 'T', '1'};
}

void Model::save_checkpoint(const std::filesystem::path& path) const {
  json header;
  header["config"] = {{"vocab_size", cfg_.vocab_size}, {"d_model", cfg_.d_model},
                      {"n_layers", cfg_.n_layers},     {"n_heads", cfg_.n_heads},
                      {"d_ff", cfg_.d_ff},             {"max_seq_len", cfg_.max_seq_len}};
  header["seed"] = seed_;
  json lm = json::array();
  for (const auto& vb : view_.layer_map) {
    lm.push_back({{"d_in", vb.d_in}, {"d_out", vb.d_out}, {"layer", vb.layer_id},
                  {"offset", vb.offset}});
  }
  header["layer_map"] = lm;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCkptMagic, sizeof kCkptMagic);
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  const std::uint64_t n = params_.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw std::runtime_error("short write on checkpoint: " + path.string());
}

Model Model::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCkptMagic, sizeof magic) != 0) {
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  const json header = json::parse(hs);

  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.n_layers = jc.at("n_layers").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.d_ff = jc.at("d_ff").get<int>();
  cfg.max_seq_len = jc.at("max_seq_len").get<int>();

  Model m(cfg, header.at("seed").get<std::uint64_t>());
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (n != m.params_.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(m.params_.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return m;
}

TrainStats train(Model& model, const std::vector<Example>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw std::invalid_argument("train: bad hyperparams");

  const std::size_t n_eval = std::min<std::size_t>(dataset.size(), 128);
  const auto eval_mean = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n_eval; ++i) s += model.nll_loss(dataset[i]);
    return s / static_cast<double>(n_eval);
  };

  TrainStats stats;
  stats.initial_loss = eval_mean();

  std::vector<double> m(model.n_params(), 0.0), v(model.n_params(), 0.0);
  std::vector<double> grad(model.n_params(), 0.0);
  Rng rng(cfg.seed);

  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0.0;
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
      const auto& ex = dataset[rng.below(dataset.size())];
      const SeqTask task = make_task(model.config(), ex.prompt, ex.response);
      const Activations act = model.run_forward(task.tokens);

      const auto T = static_cast<Eigen::Index>(task.tokens.size());
      Eigen::MatrixXd dlog = Eigen::MatrixXd::Zero(T, model.config().vocab_size);
      const double w = 1.0 / (static_cast<double>(task.target_len) *
                              static_cast<double>(cfg.batch_size));
      for (std::size_t j = 0; j < task.target_len; ++j) {
        const auto row = static_cast<Eigen::Index>(task.first_target + j - 1);
        const int target = task.tokens[task.first_target + j];
        dlog.row(row) += act.probs.row(row) * w;
        dlog(row, target) -= w;
        const double pt = act.probs(row, target);
        batch_loss -= std::log(std::max(pt, 1e-300)) /
                      (static_cast<double>(task.target_len) * cfg.batch_size);
      }
      model.run_backward(act, dlog, grad);
    }
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error("train: loss diverged (non-finite) at step " +
                               std::to_string(step));
    }

    const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    const double lr_t = cfg.lr_decay ? cfg.lr * (1.0 - 0.9 * frac) : cfg.lr;
    const double b1t = 1.0 - std::pow(cfg.beta1, step + 1);
    const double b2t = 1.0 - std::pow(cfg.beta2, step + 1);
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      params[i] -= lr_t * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + cfg.adam_eps);
    }
    stats.steps_run = step + 1;
  }

  stats.final_loss = eval_mean();
  if (cfg.steps > 0 && !(stats.final_loss < stats.initial_loss)) {
    std::ostringstream msg;
    msg << "train: final loss " << stats.final_loss << " did not improve on initial "
        << stats.initial_loss;
    throw std::runtime_error(msg.str());
  }
  return stats;
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = false;
  for (char c : s) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (ws) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out.push_back(' ');
    in_ws = false;
    out.push_back(c);
  }
  return out;
}

QuerySet evaluate_correct(const Model& model, const std::vector<EvalItem>& evalset,
                          std::size_t n, std::uint64_t seed, bool* short_of_n) {
  if (evalset.empty()) throw std::invalid_argument("evaluate_correct: empty evalset");
  if (n < 1) throw std::invalid_argument("evaluate_correct: n must be >= 1");

  const Tokenizer tok;
  std::vector<std::size_t> correct;
  for (std::size_t i = 0; i < evalset.size(); ++i) {
    const auto& item = evalset[i];
    if (item.answer.empty()) continue;
    const std::vector<int> decoded = model.greedy_decode(item.prompt, item.answer.size());
    if (normalize_whitespace(tok.decode(decoded)) ==
        normalize_whitespace(tok.decode(item.answer))) {
      correct.push_back(i);
    }
  }
  if (correct.empty()) {
    throw std::runtime_error("evaluate_correct: no correctly answered items; query set is empty");
  }

  Rng rng(seed);
  rng.shuffle(correct);
  const std::size_t take = std::min(n, correct.size());
  std::vector<std::size_t> picked(correct.begin(), correct.begin() + take);
  std::sort(picked.begin(), picked.end());

  QuerySet qs;
  for (std::size_t i : picked) qs.items.push_back({evalset[i].prompt, evalset[i].answer});
  qs.id = query_set_content_id(qs);
  if (short_of_n) *short_of_n = correct.size() < n;
  return qs;
}

}  // namespace tda
