#include "geco/util/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace geco::util {

namespace {

struct DigestCtx {
  DigestCtx() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256: digest init failed");
  }
  ~DigestCtx() { EVP_MD_CTX_free(ctx); }
  DigestCtx(const DigestCtx&) = delete;
  DigestCtx& operator=(const DigestCtx&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx, data, n) != 1) throw std::runtime_error("sha256: update failed");
  }
  std::array<unsigned char, 32> finish() {
    std::array<unsigned char, 32> out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != 32)
      throw std::runtime_error("sha256: finalize failed");
    return out;
  }

  EVP_MD_CTX* ctx;
};

std::string to_hex(const std::array<unsigned char, 32>& d) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(64, '0');
  for (std::size_t i = 0; i < d.size(); ++i) {
    s[2 * i] = kDigits[d[i] >> 4];
    s[2 * i + 1] = kDigits[d[i] & 15];
  }
  return s;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  DigestCtx ctx;
  ctx.update(bytes.data(), bytes.size());
  return to_hex(ctx.finish());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for hashing");
  DigestCtx ctx;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) ctx.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return to_hex(ctx.finish());
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label) {
  DigestCtx ctx;
  const std::string text = std::to_string(global_seed) + ":" + std::string(label);
  ctx.update(text.data(), text.size());
  const auto d = ctx.finish();
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s = (s << 8) | d[i];
  return s;
}

std::uint64_t keyed_seed(std::uint64_t seed, std::string_view key) {
  return splitmix64(seed ^ fnv1a64(key));
}

}  // namespace geco::util
