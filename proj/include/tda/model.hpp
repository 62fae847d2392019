#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tda/dataset.hpp"

namespace tda {

struct ModelConfig {
  int vocab_size = Tokenizer::kVocabSize;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 128;
  int max_seq_len = 4096;  // truncation bound for model inputs

  void validate() const;
};

// One MLP weight block of the restricted parameter view: a d_out x (d_in+1)
// matrix, row-major, with the bias folded in as the last input column.
struct ViewBlock {
  int layer_id = 0;
  std::size_t offset = 0;
  int d_in = 0;
  int d_out = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(d_out) * static_cast<std::size_t>(d_in + 1);
  }
};

// The MLP-restricted parameter subvector. Non-MLP parameters (embeddings,
// attention, norms, head) are trained but excluded from attribution.
struct ParamView {
  std::vector<ViewBlock> layer_map;
  std::vector<std::size_t> full_index;  // view coordinate -> full param index

  std::size_t size() const { return full_index.size(); }
};

// Model input assembled from (prompt, target): BOS + prompt + target,
// truncated from the end to max_seq_len. Target tokens are the loss terms.
struct SeqTask {
  std::vector<int> tokens;
  std::size_t first_target = 0;  // index into tokens of the first kept target token
  std::size_t target_len = 0;    // number of kept target tokens
  std::size_t full_target_len = 0;  // target length before truncation
};

SeqTask make_task(const ModelConfig& cfg, std::span<const int> prompt,
                  std::span<const int> target);

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Everything the backward pass needs from a forward evaluation.
struct Activations {
  std::vector<int> tokens;
  Eigen::MatrixXd x0;  // token + position embeddings, T x d
  struct Layer {
    Eigen::MatrixXd x_in;      // block input, T x d
    Eigen::VectorXd r1;        // attn rmsnorm 1/rms per row
    Eigen::MatrixXd a_in;      // normed attn input
    Eigen::MatrixXd q, k, v;   // T x d
    std::vector<Eigen::MatrixXd> probs;  // per head, T x T causal softmax
    Eigen::MatrixXd attn_cat;  // concatenated head outputs, T x d
    Eigen::MatrixXd x_mid;     // after attention residual
    Eigen::VectorXd r2;        // mlp rmsnorm 1/rms per row
    Eigen::MatrixXd m_in;      // normed mlp input, T x d
    Eigen::MatrixXd h1;        // fc1 pre-activation, T x f
    Eigen::MatrixXd h2;        // gelu(h1), T x f
    Eigen::MatrixXd mlp_out;   // fc2 output (pre-residual), T x d
  };
  std::vector<Layer> layers;
  Eigen::MatrixXd x_last;  // hidden states after the final block
  Eigen::VectorXd r3;      // final rmsnorm 1/rms per row
  Eigen::MatrixXd x_final; // normed final states
  Eigen::MatrixXd logits;  // T x V
  Eigen::MatrixXd probs;   // row softmax of logits

  std::size_t seq_len() const { return tokens.size(); }
};

// Per-position inputs and pre-activation gradients of each MLP linear,
// recorded during a backward pass. Consumed by curvature estimation.
struct MlpTap {
  struct Layer {
    Eigen::MatrixXd fc1_in;  // T x d  (mlp block input, pre-augmentation)
    Eigen::MatrixXd fc1_g;   // T x f  (d loss / d h1)
    Eigen::MatrixXd fc2_in;  // T x f  (gelu outputs)
    Eigen::MatrixXd fc2_g;   // T x d  (d loss / d mlp_out)
  };
  std::vector<Layer> layers;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t n_params() const { return params_.size(); }

  const ParamView& view() const { return view_; }
  // current values of the restricted subvector, in view layout
  std::vector<double> gather_view() const;
  // extract the view-aligned slice of a full-parameter gradient
  std::vector<double> restrict_to_view(const std::vector<double>& full_grad) const;

  Activations run_forward(std::span<const int> tokens) const;
  // d_logits is T x V; parameter gradients accumulate into full_grad
  void run_backward(const Activations& act, const Eigen::MatrixXd& d_logits,
                    std::vector<double>& full_grad, MlpTap* tap = nullptr) const;

  // per-position next-token log-probability table (rows sum to one in
  // probability space)
  Eigen::MatrixXd log_probs(std::span<const int> tokens) const;

  // mean negative log-likelihood over response tokens; prompt masked
  double nll_loss(const Example& ex) const;
  double nll_loss(std::span<const int> prompt, std::span<const int> response) const;

  // greedy continuation of the prompt, n_new tokens
  std::vector<int> greedy_decode(std::span<const int> prompt, std::size_t n_new) const;

  // hash of (config, seed, parameter bytes); identifies a checkpoint
  std::string content_hash() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  static Model load_checkpoint(const std::filesystem::path& path);

  // offsets into the flat parameter vector
  struct Layout {
    std::size_t wte = 0, wpe = 0, final_gain = 0, lm_head = 0, total = 0;
    struct Block {
      std::size_t attn_gain = 0, wq = 0, wk = 0, wv = 0, wo = 0;
      std::size_t mlp_gain = 0, fc1_w = 0, fc1_b = 0, fc2_w = 0, fc2_b = 0;
    };
    std::vector<Block> blocks;
  };
  const Layout& layout() const { return layout_; }

 private:
  void build_layout();
  void init_params();

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  Layout layout_;
  ParamView view_;
  std::vector<double> params_;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  bool lr_decay = true;  // linear decay to 0.1x over the run
  std::uint64_t seed = 0;
};

struct TrainStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps_run = 0;
};

// Deterministic single-threaded training loop (Adam, ordered reductions).
// Throws on divergence (non-finite loss) naming the offending step.
TrainStats train(Model& model, const std::vector<Example>& dataset, const TrainConfig& cfg);

// Greedy-decode each prompt and keep items whose decoded answer matches the
// gold answer after whitespace normalization; uniformly sample n of the
// matches with the given seed. Fewer than n matches is reported through
// `short_of_n`; zero matches throws.
struct EvalItem {
  std::vector<int> prompt;
  std::vector<int> answer;
};

QuerySet evaluate_correct(const Model& model, const std::vector<EvalItem>& evalset,
                          std::size_t n, std::uint64_t seed, bool* short_of_n = nullptr);

std::string normalize_whitespace(std::string_view s);

}  // namespace tda
