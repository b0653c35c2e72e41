#pragma once

// Thin RAII wrappers over the OpenSSL primitives the scheme is built on:
// SHA-256, AES-128-CBC with PKCS#7 padding, and the system CSPRNG.

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include "sefrag/bytes.hpp"

namespace sefrag {

using Digest = std::array<std::uint8_t, 32>;

inline constexpr std::size_t kAesBlock = 16;

inline Digest sha256(ByteView data) {
  Digest out{};
  SHA256(data.data(), data.size(), out.data());
  return out;
}

/// Incremental SHA-256 for hashing scattered inputs without concatenating them.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("EVP_DigestInit_ex failed");
    }
  }

  Sha256& update(ByteView data) {
    EVP_DigestUpdate(ctx_.get(), data.data(), data.size());
    return *this;
  }

  Digest finish() {
    Digest out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
    return out;
  }

 private:
  struct Free {
    void operator()(EVP_MD_CTX* p) const noexcept { EVP_MD_CTX_free(p); }
  };
  std::unique_ptr<EVP_MD_CTX, Free> ctx_;
};

inline void random_fill(std::span<std::uint8_t> out) {
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
    throw std::runtime_error("RAND_bytes failed");
  }
}

/// Ciphertext length produced by PKCS#7 padding: always at least one extra byte.
constexpr std::size_t pkcs7_padded_size(std::size_t n) noexcept {
  return (n / kAesBlock + 1) * kAesBlock;
}

namespace detail {
struct CipherCtxFree {
  void operator()(EVP_CIPHER_CTX* p) const noexcept { EVP_CIPHER_CTX_free(p); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

inline CipherCtx make_cipher_ctx() {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw std::runtime_error("EVP_CIPHER_CTX_new failed");
  return ctx;
}
}  // namespace detail

inline Bytes aes128_cbc_encrypt(ByteView plain, std::span<const std::uint8_t, 16> key,
                                std::span<const std::uint8_t, 16> iv) {
  auto ctx = detail::make_cipher_ctx();
  if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_cbc(), nullptr, key.data(), iv.data()) != 1) {
    throw std::runtime_error("EVP_EncryptInit_ex failed");
  }
  Bytes out(pkcs7_padded_size(plain.size()));
  int len = 0;
  int total = 0;
  if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plain.data(), static_cast<int>(plain.size())) != 1) {
    throw std::runtime_error("EVP_EncryptUpdate failed");
  }
  total = len;
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + total, &len) != 1) {
    throw std::runtime_error("EVP_EncryptFinal_ex failed");
  }
  total += len;
  out.resize(static_cast<std::size_t>(total));
  return out;
}

/// Throws bad_padding when the final block does not unpad, which is what a wrong key produces
/// in all but ~1/256 of cases.
inline Bytes aes128_cbc_decrypt(ByteView cipher, std::span<const std::uint8_t, 16> key,
                                std::span<const std::uint8_t, 16> iv) {
  if (cipher.empty() || cipher.size() % kAesBlock != 0) {
    throw Error(Errc::format_error, "ciphertext length is not a positive multiple of 16");
  }
  auto ctx = detail::make_cipher_ctx();
  if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_128_cbc(), nullptr, key.data(), iv.data()) != 1) {
    throw std::runtime_error("EVP_DecryptInit_ex failed");
  }
  Bytes out(cipher.size() + kAesBlock);
  int len = 0;
  if (EVP_DecryptUpdate(ctx.get(), out.data(), &len, cipher.data(), static_cast<int>(cipher.size())) != 1) {
    throw std::runtime_error("EVP_DecryptUpdate failed");
  }
  int total = len;
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + total, &len) != 1) {
    throw Error(Errc::bad_padding, "CBC padding check failed (wrong key?)");
  }
  total += len;
  out.resize(static_cast<std::size_t>(total));
  return out;
}

}  // namespace sefrag
