#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "offtrack/error.hpp"

namespace offtrack {

inline std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error(ErrorCode::kIoFailure, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

// Ids and cache keys: SHA-256 hex truncated to 16 characters.
inline std::string content_id(std::string_view canonical) { return sha256_hex(canonical).substr(0, 16); }

// 64-bit seed derived from a base seed and a string salt, so per-question
// streams do not depend on iteration order.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view salt) {
  const std::string h = sha256_hex(std::to_string(base) + "\x1f" + std::string(salt));
  return std::stoull(h.substr(0, 16), nullptr, 16);
}

// std::uniform_int_distribution and std::shuffle are implementation-defined;
// these keep item files byte-identical across standard libraries.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw Error(ErrorCode::kInvalidArgument, "empty range");
    const std::uint64_t limit = engine_.max() - (engine_.max() % bound);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
  }

  // Uniform in (0, 1).
  double unit_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace offtrack
