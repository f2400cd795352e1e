#include "conflictqa/hashing.hpp"

#include <array>

#include <openssl/evp.h>

#include "conflictqa/errors.hpp"

namespace conflictqa {

namespace {

std::array<unsigned char, 32> sha256(std::string_view data) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32)
    throw Error("SHA-256 digest failed");
  return digest;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  auto digest = sha256(data);
  std::string out;
  out.reserve(64);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
  std::string material = std::to_string(seed);
  material.push_back(':');
  material.append(key);
  auto digest = sha256(material);
  std::uint64_t out = 0;
  for (int i = 7; i >= 0; --i) out = (out << 8) | digest[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace conflictqa
