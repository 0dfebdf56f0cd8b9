#pragma once

// SHAKE-128 via OpenSSL, plus the 64-bit function type ids derived from it.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nanozone/error.hpp"

namespace nanozone {

inline std::vector<std::uint8_t> shake128(std::string_view data, std::size_t out_len) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::vector<std::uint8_t> out(out_len);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_shake128(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinalXOF(ctx.get(), out.data(), out.size()) != 1)
    throw Error(ErrorCode::kInvalidArgument, "SHAKE-128 digest failed");
  return out;
}

inline std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

// Canonical signature: all whitespace removed, e.g. "void(int,char*)".
inline std::string canonical_signature(std::string_view sig) {
  std::string out;
  std::copy_if(sig.begin(), sig.end(), std::back_inserter(out),
               [](unsigned char c) { return !std::isspace(c); });
  return out;
}

// First 8 bytes of SHAKE-128 over the canonical signature, big-endian.
inline std::uint64_t type_id(std::string_view signature) {
  const std::string canon = canonical_signature(signature);
  if (canon.empty()) throw Error(ErrorCode::kInvalidArgument, "empty function signature");
  const auto digest = shake128(canon, 8);
  std::uint64_t id = 0;
  for (std::uint8_t b : digest) id = (id << 8) | b;
  return id;
}

}  // namespace nanozone
