#include "tda/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tda {

namespace {

std::string to_hex(const unsigned char* digest, std::size_t len) {
  static const char* k = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (std::size_t i = 0; i < len; ++i) {
    out[2 * i] = k[digest[i] >> 4];
    out[2 * i + 1] = k[digest[i] & 0xf];
  }
  return out;
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!EVP_Digest(data, size, digest.data(), &len, EVP_sha256(), nullptr)) {
    throw std::runtime_error("sha256: digest failed");
  }
  return to_hex(digest.data(), len);
}

std::string sha256_hex(std::string_view bytes) {
  return sha256_hex(bytes.data(), bytes.size());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("sha256: cannot open " + path.string());

  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("sha256: ctx alloc failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);

  std::array<char, 1 << 16> chunk{};
  while (in) {
    in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    const auto got = in.gcount();
    if (got > 0) EVP_DigestUpdate(ctx, chunk.data(), static_cast<std::size_t>(got));
  }

  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);
  return to_hex(digest.data(), len);
}

Hasher& Hasher::add(std::string_view part) {
  buf_.append(part);
  buf_.push_back('\x1f');
  return *this;
}

Hasher& Hasher::add_u64(std::uint64_t v) {
  char raw[8];
  for (int i = 0; i < 8; ++i) raw[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  buf_.append(raw, 8);
  buf_.push_back('\x1f');
  return *this;
}

Hasher& Hasher::add_double(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return add_u64(bits);
}

std::string Hasher::hex() const { return sha256_hex(buf_); }

}  // namespace tda
