#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tda {

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

// Incremental hasher for composite cache keys.
class Hasher {
 public:
  Hasher& add(std::string_view part);
  Hasher& add_u64(std::uint64_t v);
  Hasher& add_double(double v);
  std::string hex() const;

 private:
  std::string buf_;
};

}  // namespace tda
