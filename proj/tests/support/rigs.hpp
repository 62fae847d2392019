#pragma once

// Shared test fixtures: rigged models with known closed-form behaviour and
// random example generators.

#include <string>
#include <vector>

#include "tda/model.hpp"
#include "tda/rng.hpp"
#include "tda/tokenizer.hpp"

namespace tda::testrig {

// Model that continues any context ending in token `c` with `c` again, at
// probability exactly 1.0 in double precision: identity embeddings, dead
// attention/MLP blocks (gains zeroed), and a scaled identity head. The
// margin is large enough that exp(-gap) underflows to exactly zero.
inline Model prob_one_model(double margin = 60.0) {
  ModelConfig cfg;
  cfg.vocab_size = Tokenizer::kVocabSize;
  cfg.d_model = Tokenizer::kVocabSize;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_ff = 4;
  cfg.max_seq_len = 32;
  Model m(cfg, 0);
  auto& p = m.params();
  std::fill(p.begin(), p.end(), 0.0);
  const auto& lay = m.layout();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  for (std::size_t v = 0; v < static_cast<std::size_t>(cfg.vocab_size); ++v) {
    p[lay.wte + v * d + v] = 1.0;
    p[lay.lm_head + v * d + v] = margin;
  }
  for (std::size_t i = 0; i < d; ++i) p[lay.final_gain + i] = 1.0;
  return m;
}

// All-zero parameters: logits are identically zero, so every next-token
// distribution is exactly uniform.
inline Model uniform_model(int max_seq_len = 32) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq_len = max_seq_len;
  Model m(cfg, 0);
  std::fill(m.params().begin(), m.params().end(), 0.0);
  return m;
}

inline ModelConfig tiny_config(int n_layers = 2, int d_model = 16, int max_seq_len = 64) {
  ModelConfig cfg;
  cfg.d_model = d_model;
  cfg.n_layers = n_layers;
  cfg.n_heads = 4;
  cfg.d_ff = 4 * d_model;
  cfg.max_seq_len = max_seq_len;
  return cfg;
}

inline std::vector<int> random_tokens(Rng& rng, std::size_t len) {
  std::vector<int> out(len);
  for (auto& t : out) t = static_cast<int>(rng.below(256));
  return out;
}

inline Example random_example(Rng& rng, const std::string& id, std::size_t prompt_len,
                              std::size_t response_len) {
  Example ex;
  ex.id = id;
  ex.prompt = random_tokens(rng, prompt_len);
  ex.response = random_tokens(rng, response_len);
  return ex;
}

}  // namespace tda::testrig
