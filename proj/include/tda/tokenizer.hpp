#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tda {

// Byte-level tokenizer: ids 0..255 are raw bytes, 256 is the BOS marker
// prepended to every model input. Encoding is total and reversible;
// sequences longer than max_len are truncated from the end (tail dropped).
class Tokenizer {
 public:
  static constexpr int kBos = 256;
  static constexpr int kVocabSize = 257;

  explicit Tokenizer(std::size_t max_len = 4096) : max_len_(max_len) {}

  std::size_t max_len() const { return max_len_; }

  std::vector<int> encode(std::string_view text) const {
    const std::size_t n = text.size() < max_len_ ? text.size() : max_len_;
    std::vector<int> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(static_cast<int>(static_cast<unsigned char>(text[i])));
    }
    return out;
  }

  std::string decode(std::span<const int> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) {
      if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
    }
    return out;
  }

 private:
  std::size_t max_len_;
};

}  // namespace tda
