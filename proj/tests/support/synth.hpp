#pragma once

// Synthetic two-domain corpus: arithmetic-answer strings (math) and
// bracket-matching programs (code). Both answer in digits, so the domains
// share output structure while the tasks stay distinct.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tda/dataset.hpp"
#include "tda/model.hpp"
#include "tda/rng.hpp"

namespace tda::testrig {

struct SynthTask {
  std::string prompt;
  std::string answer;
  int level = 1;            // difficulty 1..5
  std::string category;
};

SynthTask gen_math_task(Rng& rng, int level);
SynthTask gen_code_task(Rng& rng, int level);
bool brackets_balanced(const std::string& s);

struct SynthOptions {
  std::size_t math_per_level = 20;
  std::size_t code_per_level = 20;
  double span_fraction = 0.15;  // fraction of examples given behavior suffixes
  std::uint64_t seed = 1;
  std::string id_prefix = "ex";
};

std::vector<Example> synth_corpus(const Tokenizer& tok, const SynthOptions& opts);

// fresh tasks from the same distributions, answers are the gold strings
std::vector<EvalItem> synth_eval(const Tokenizer& tok, std::size_t per_domain,
                                 std::uint64_t seed);

void write_eval_file(const std::filesystem::path& path, const std::vector<EvalItem>& items,
                     const Tokenizer& tok);

}  // namespace tda::testrig
