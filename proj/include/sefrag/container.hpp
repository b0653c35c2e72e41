#pragma once

// On-disk formats for the public (.puf) and private (.prf) fragment files,
// header/content splitting, and the AES layer over the private stream.
//
//   .puf  "PUF1" | ver u8 | flags u8 | file_id[16] | header_len u32 | content_len u64
//         | unit_count u64 | header | payload (28 * unit_count)
//   .prf  "PRF1" | ver u8 | file_id[16] | kdf_salt[16] | iv[16] | ct_len u64 | ciphertext
//
// All integers little-endian.

#include <array>
#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

#include "sefrag/bytes.hpp"
#include "sefrag/core.hpp"
#include "sefrag/crypto.hpp"
#include "sefrag/error.hpp"

namespace sefrag {

using FileId = std::array<std::uint8_t, 16>;
using Salt = std::array<std::uint8_t, 16>;
using Iv = std::array<std::uint8_t, 16>;

inline constexpr std::string_view kPufMagic = "PUF1";
inline constexpr std::string_view kPrfMagic = "PRF1";
inline constexpr std::uint8_t kContainerVersion = 1;
inline constexpr std::uint8_t kFlagHeaderOmitted = 0x01;

inline constexpr std::size_t kDicomPreamble = 128;
inline constexpr std::size_t kDicomHeaderSize = kDicomPreamble + 4;
inline constexpr std::uint32_t kKdfIterations = 100000;

struct HeaderMode {
  enum class Kind { raw, fixed, dicom };
  Kind kind = Kind::raw;
  std::size_t fixed_len = 0;

  static HeaderMode raw() { return {}; }
  static HeaderMode fixed(std::size_t n) { return {Kind::fixed, n}; }
  static HeaderMode dicom() { return {Kind::dicom, 0}; }

  /// Parses "raw", "dicom" or "fixed:<n>".
  static HeaderMode parse(std::string_view text) {
    if (text == "raw") return raw();
    if (text == "dicom") return dicom();
    if (text.starts_with("fixed:")) {
      std::size_t n = 0;
      auto digits = text.substr(6);
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
      if (ec == std::errc{} && ptr == digits.data() + digits.size() && !digits.empty()) return fixed(n);
    }
    throw std::invalid_argument("header mode must be raw, dicom or fixed:<n>");
  }
};

struct HeaderSplit {
  Bytes head;
  Bytes content;
  HeaderMode mode{};
};

inline HeaderSplit split_header(ByteView input, HeaderMode mode) {
  std::size_t cut = 0;
  switch (mode.kind) {
    case HeaderMode::Kind::raw:
      break;
    case HeaderMode::Kind::fixed:
      if (mode.fixed_len > input.size()) throw Error(Errc::too_short, "fixed header longer than input");
      cut = mode.fixed_len;
      break;
    case HeaderMode::Kind::dicom: {
      if (input.size() < kDicomHeaderSize ||
          !std::equal(input.begin() + kDicomPreamble, input.begin() + kDicomHeaderSize, "DICM")) {
        throw Error(Errc::not_dicom, "missing DICM magic at offset 128");
      }
      cut = kDicomHeaderSize;
      break;
    }
  }
  return {Bytes(input.begin(), input.begin() + cut), Bytes(input.begin() + cut, input.end()), mode};
}

struct PufContainer {
  std::uint8_t flags = 0;
  FileId file_id{};
  Bytes header;
  std::uint64_t content_len = 0;
  Bytes payload;

  [[nodiscard]] std::uint64_t unit_count() const noexcept { return content_len / kUnitSize; }
  [[nodiscard]] bool header_omitted() const noexcept { return (flags & kFlagHeaderOmitted) != 0; }

  [[nodiscard]] Bytes serialize() const {
    ByteWriter w;
    w.raw(as_bytes(kPufMagic))
        .u8(kContainerVersion)
        .u8(flags)
        .raw(file_id)
        .u32(static_cast<std::uint32_t>(header.size()))
        .u64(content_len)
        .u64(unit_count())
        .raw(header)
        .raw(payload);
    return std::move(w).take();
  }

  static PufContainer parse(ByteView data) {
    ByteReader r(data);
    if (!std::ranges::equal(r.take(4), as_bytes(kPufMagic))) throw Error(Errc::format_error, "not a PUF container");
    if (r.u8() != kContainerVersion) throw Error(Errc::format_error, "unsupported PUF version");
    PufContainer c;
    c.flags = r.u8();
    auto id = r.take(16);
    std::copy(id.begin(), id.end(), c.file_id.begin());
    const std::uint32_t header_len = r.u32();
    c.content_len = r.u64();
    const std::uint64_t units = r.u64();
    if (units != c.unit_count()) throw Error(Errc::format_error, "unit count disagrees with content length");
    auto head = r.take(header_len);
    c.header.assign(head.begin(), head.end());
    if (r.remaining() % kRemainderSize != 0 || r.remaining() / kRemainderSize != units) {
      throw Error(Errc::format_error, "PUF payload length mismatch");
    }
    auto payload = r.take(r.remaining());
    c.payload.assign(payload.begin(), payload.end());
    return c;
  }

  friend bool operator==(const PufContainer&, const PufContainer&) = default;
};

struct PrfContainer {
  FileId file_id{};
  Salt kdf_salt{};
  Iv iv{};
  Bytes ciphertext;

  [[nodiscard]] Bytes serialize() const {
    ByteWriter w;
    w.raw(as_bytes(kPrfMagic))
        .u8(kContainerVersion)
        .raw(file_id)
        .raw(kdf_salt)
        .raw(iv)
        .u64(ciphertext.size())
        .raw(ciphertext);
    return std::move(w).take();
  }

  static PrfContainer parse(ByteView data) {
    ByteReader r(data);
    if (!std::ranges::equal(r.take(4), as_bytes(kPrfMagic))) throw Error(Errc::format_error, "not a PRF container");
    if (r.u8() != kContainerVersion) throw Error(Errc::format_error, "unsupported PRF version");
    PrfContainer c;
    auto copy16 = [&r](std::array<std::uint8_t, 16>& dst) {
      auto s = r.take(16);
      std::copy(s.begin(), s.end(), dst.begin());
    };
    copy16(c.file_id);
    copy16(c.kdf_salt);
    copy16(c.iv);
    const std::uint64_t ct_len = r.u64();
    if (ct_len != r.remaining() || ct_len == 0 || ct_len % kAesBlock != 0) {
      throw Error(Errc::format_error, "PRF ciphertext length mismatch");
    }
    auto ct = r.take(ct_len);
    c.ciphertext.assign(ct.begin(), ct.end());
    return c;
  }

  [[nodiscard]] bool has_kdf_salt() const noexcept {
    return std::ranges::any_of(kdf_salt, [](std::uint8_t b) { return b != 0; });
  }

  friend bool operator==(const PrfContainer&, const PrfContainer&) = default;
};

struct SealedPair {
  PufContainer puf;
  PrfContainer prf;
  PrimitiveCounts counts;
  /// Bytes pushed through AES-CBC, padding included.
  std::uint64_t aes_bytes = 0;
};

struct SealOptions {
  HeaderMode mode{};
  /// Recorded in the PRF so a passphrase-derived key can be rebuilt; zero for raw keys.
  Salt kdf_salt{};
  ProtectOptions protect{};
};

inline SealedPair seal(ByteView input, const ProtectionKey& key, const SealOptions& opts = {}) {
  HeaderSplit split = split_header(input, opts.mode);
  ProtectedStreams streams = protect(split.content, key, opts.protect);

  SealedPair out;
  random_fill(out.puf.file_id);
  out.puf.header = std::move(split.head);
  out.puf.content_len = split.content.size();
  out.puf.payload = std::move(streams.puf_payload);

  out.prf.file_id = out.puf.file_id;
  out.prf.kdf_salt = opts.kdf_salt;
  random_fill(out.prf.iv);
  out.prf.ciphertext = aes128_cbc_encrypt(streams.prf_plain, key.bytes(), out.prf.iv);

  out.counts = streams.counts;
  out.aes_bytes = out.prf.ciphertext.size();
  return out;
}

/// Returns header || content. When the header was omitted from the PUF, only content comes back.
inline Bytes open(const PufContainer& puf, const PrfContainer& prf, const ProtectionKey& key) {
  if (puf.file_id != prf.file_id) throw Error(Errc::pair_mismatch, "PUF and PRF belong to different records");
  if (puf.payload.size() != puf.unit_count() * kRemainderSize) {
    throw Error(Errc::format_error, "PUF payload length mismatch");
  }
  const Bytes prf_plain = aes128_cbc_decrypt(prf.ciphertext, key.bytes(), prf.iv);
  if (prf_plain.size() != puf.unit_count() * kPieceSize + puf.content_len % kUnitSize + kDigestSize) {
    // Wrong key that happened to unpad cleanly, or a mismatched container.
    throw Error(Errc::integrity_failure, "private stream length disagrees with PUF header");
  }
  Bytes content = recover(puf.payload, prf_plain, key);
  Bytes out;
  out.reserve(puf.header.size() + content.size());
  out.insert(out.end(), puf.header.begin(), puf.header.end());
  out.insert(out.end(), content.begin(), content.end());
  return out;
}

inline Bytes open(ByteView puf_bytes, ByteView prf_bytes, const ProtectionKey& key) {
  return open(PufContainer::parse(puf_bytes), PrfContainer::parse(prf_bytes), key);
}

/// Copy of the PUF with its plaintext header removed and the omission flag set.
inline PufContainer strip_header(PufContainer puf) {
  puf.header.clear();
  puf.flags |= kFlagHeaderOmitted;
  return puf;
}

/// Iterated SHA-256: x <- H(x || passphrase || salt), 100000 rounds from empty x; key = first 16 bytes.
inline ProtectionKey derive_key(ByteView passphrase, std::span<const std::uint8_t, 16> salt,
                                std::uint32_t iterations = kKdfIterations) {
  if (passphrase.empty()) throw Error(Errc::empty_passphrase, "passphrase must not be empty");
  Bytes buf(kDigestSize + passphrase.size() + salt.size());
  std::copy(passphrase.begin(), passphrase.end(), buf.begin() + kDigestSize);
  std::copy(salt.begin(), salt.end(), buf.begin() + kDigestSize + static_cast<std::ptrdiff_t>(passphrase.size()));
  Digest x{};
  // First round hashes with x empty, so the digest slot is skipped.
  x = sha256(ByteView(buf).subspan(kDigestSize));
  for (std::uint32_t i = 1; i < iterations; ++i) {
    std::copy(x.begin(), x.end(), buf.begin());
    x = sha256(buf);
  }
  ProtectionKey::Array k{};
  std::copy_n(x.begin(), kKeySize, k.begin());
  return ProtectionKey(k);
}

}  // namespace sefrag
