#pragma once

// Selective encryption with fragmentation, byte-level engine.
//
// Content is cut into 32-byte units. Each unit is split into eight 4-byte
// pieces; a keyed selector picks one piece to go to the private stream and
// the other seven (28 bytes) are XOR-masked with the first 28 bytes of
// SHA-256(selected || key || LE64(index)) to form the public stream. The tail
// (content length mod 32) and SHA-256(content) go to the private stream,
// which the container layer then encrypts with AES.

#include <algorithm>
#include <array>
#include <cstdint>
#include <mutex>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "sefrag/bytes.hpp"
#include "sefrag/crypto.hpp"
#include "sefrag/error.hpp"

namespace sefrag {

inline constexpr std::size_t kUnitSize = 32;
inline constexpr std::size_t kPieceSize = 4;
inline constexpr std::size_t kPiecesPerUnit = kUnitSize / kPieceSize;
inline constexpr std::size_t kRemainderSize = kUnitSize - kPieceSize;
inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kSelectorsPerBlock = 32;
inline constexpr std::size_t kKeySize = 16;

inline constexpr std::string_view kSelectorDomain = "FRAG-SEL";

class ProtectionKey {
 public:
  using Array = std::array<std::uint8_t, kKeySize>;

  constexpr ProtectionKey() noexcept = default;
  constexpr explicit ProtectionKey(const Array& bytes) noexcept : bytes_(bytes) {}

  /// Accepts exactly 32 hex characters.
  static ProtectionKey from_hex(std::string_view hex) {
    if (hex.size() != 2 * kKeySize) throw Error(Errc::format_error, "key must be 32 hex characters");
    auto raw = sefrag::from_hex(hex);
    Array a{};
    std::copy(raw.begin(), raw.end(), a.begin());
    return ProtectionKey(a);
  }

  static ProtectionKey random() {
    Array a{};
    random_fill(a);
    return ProtectionKey(a);
  }

  [[nodiscard]] std::span<const std::uint8_t, kKeySize> bytes() const noexcept { return bytes_; }
  [[nodiscard]] std::string hex() const { return to_hex(bytes_); }

  /// Flips a single bit; used by key-sensitivity tests.
  [[nodiscard]] ProtectionKey with_bit_flipped(std::size_t bit) const {
    Array a = bytes_;
    a.at(bit / 8) ^= static_cast<std::uint8_t>(1u << (bit % 8));
    return ProtectionKey(a);
  }

  friend bool operator==(const ProtectionKey&, const ProtectionKey&) = default;

 private:
  Array bytes_{};
};

using Piece = std::array<std::uint8_t, kPieceSize>;
using Remainder = std::array<std::uint8_t, kRemainderSize>;
using UnitKeystream = std::array<std::uint8_t, kRemainderSize>;
using UnitBytes = std::array<std::uint8_t, kUnitSize>;

struct ContentUnit {
  std::span<const std::uint8_t, kUnitSize> bytes;
  std::uint64_t index = 0;
};

struct FragmentSelection {
  unsigned selector = 0;
  Piece selected{};
  Remainder remainder{};
};

/// Exact tallies of the primitive work done by one protect() call.
struct PrimitiveCounts {
  std::uint64_t unit_count = 0;
  std::uint64_t protection_hashes = 0;
  std::uint64_t selector_hashes = 0;
  std::uint64_t digest_passes = 0;
  std::uint64_t selected_bytes = 0;
  std::uint64_t tail_bytes = 0;

  [[nodiscard]] std::uint64_t hash_invocations() const noexcept {
    return protection_hashes + selector_hashes + digest_passes;
  }
  /// Size of the private stream before padding.
  [[nodiscard]] std::uint64_t private_plain_bytes() const noexcept {
    return selected_bytes + tail_bytes + kDigestSize;
  }

  friend bool operator==(const PrimitiveCounts&, const PrimitiveCounts&) = default;
};

struct ProtectedStreams {
  Bytes puf_payload;
  Bytes prf_plain;
  PrimitiveCounts counts;
};

/// Expected counts for content of `len` bytes, from the closed-form formula.
constexpr PrimitiveCounts expected_counts(std::uint64_t len) noexcept {
  PrimitiveCounts c;
  c.unit_count = len / kUnitSize;
  c.protection_hashes = c.unit_count;
  c.selector_hashes = (c.unit_count + kSelectorsPerBlock - 1) / kSelectorsPerBlock;
  c.digest_passes = 1;
  c.selected_bytes = c.unit_count * kPieceSize;
  c.tail_bytes = len % kUnitSize;
  return c;
}

inline Digest selector_block(const ProtectionKey& key, std::uint64_t block) {
  std::array<std::uint8_t, kKeySize + kSelectorDomain.size() + 8> input{};
  std::copy(key.bytes().begin(), key.bytes().end(), input.begin());
  std::copy(kSelectorDomain.begin(), kSelectorDomain.end(), input.begin() + kKeySize);
  store_le64(input.data() + kKeySize + kSelectorDomain.size(), block);
  return sha256(input);
}

/// Selector for a single unit; costs one hash. Bulk callers use selector_stream.
inline unsigned selector_at(const ProtectionKey& key, std::uint64_t index) {
  return selector_block(key, index / kSelectorsPerBlock)[index % kSelectorsPerBlock] % kPiecesPerUnit;
}

/// Selectors in [0,7] for units 0..unit_count-1.
inline std::vector<std::uint8_t> selector_stream(const ProtectionKey& key, std::uint64_t unit_count) {
  std::vector<std::uint8_t> out(unit_count);
  for (std::uint64_t block = 0; block * kSelectorsPerBlock < unit_count; ++block) {
    const Digest d = selector_block(key, block);
    const std::uint64_t base = block * kSelectorsPerBlock;
    const std::uint64_t n = std::min<std::uint64_t>(kSelectorsPerBlock, unit_count - base);
    for (std::uint64_t k = 0; k < n; ++k) out[base + k] = d[k] % kPiecesPerUnit;
  }
  return out;
}

inline FragmentSelection split_unit(std::span<const std::uint8_t, kUnitSize> unit, unsigned selector) {
  if (selector >= kPiecesPerUnit) throw std::out_of_range("selector must be in [0,7]");
  FragmentSelection out;
  out.selector = selector;
  const std::size_t cut = selector * kPieceSize;
  std::copy_n(unit.begin() + cut, kPieceSize, out.selected.begin());
  std::copy_n(unit.begin(), cut, out.remainder.begin());
  std::copy(unit.begin() + cut + kPieceSize, unit.end(), out.remainder.begin() + cut);
  return out;
}

/// Inverse of split_unit.
inline UnitBytes reinsert(std::span<const std::uint8_t, kRemainderSize> remainder,
                          std::span<const std::uint8_t, kPieceSize> selected, unsigned selector) {
  if (selector >= kPiecesPerUnit) throw std::out_of_range("selector must be in [0,7]");
  UnitBytes out{};
  const std::size_t cut = selector * kPieceSize;
  std::copy_n(remainder.begin(), cut, out.begin());
  std::copy(selected.begin(), selected.end(), out.begin() + cut);
  std::copy(remainder.begin() + cut, remainder.end(), out.begin() + cut + kPieceSize);
  return out;
}

inline UnitKeystream unit_keystream(std::span<const std::uint8_t, kPieceSize> selected, const ProtectionKey& key,
                                    std::uint64_t index) {
  std::array<std::uint8_t, kPieceSize + kKeySize + 8> input{};
  std::copy(selected.begin(), selected.end(), input.begin());
  std::copy(key.bytes().begin(), key.bytes().end(), input.begin() + kPieceSize);
  store_le64(input.data() + kPieceSize + kKeySize, index);
  const Digest h = sha256(input);
  UnitKeystream ks{};
  std::copy_n(h.begin(), kRemainderSize, ks.begin());
  return ks;
}

struct ProtectedUnit {
  Remainder puf_unit{};
  Piece selected{};
};

inline ProtectedUnit protect_unit(const ContentUnit& unit, unsigned selector, const ProtectionKey& key) {
  const FragmentSelection sel = split_unit(unit.bytes, selector);
  const UnitKeystream ks = unit_keystream(sel.selected, key, unit.index);
  ProtectedUnit out;
  out.selected = sel.selected;
  for (std::size_t k = 0; k < kRemainderSize; ++k) out.puf_unit[k] = sel.remainder[k] ^ ks[k];
  return out;
}

inline ProtectedUnit protect_unit(const ContentUnit& unit, const ProtectionKey& key) {
  return protect_unit(unit, selector_at(key, unit.index), key);
}

struct ProtectOptions {
  /// Worker threads for the per-unit loop; 0 or 1 runs inline.
  unsigned threads = 1;
};

namespace detail {

// Runs body(begin, end) over [0, n) split into contiguous slices, one per worker.
template <typename Body>
void for_each_slice(std::uint64_t n, unsigned threads, Body&& body) {
  if (threads <= 1 || n < 2 * static_cast<std::uint64_t>(threads)) {
    body(std::uint64_t{0}, n);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  const std::uint64_t step = (n + threads - 1) / threads;
  for (std::uint64_t begin = 0; begin < n; begin += step) {
    const std::uint64_t end = std::min(n, begin + step);
    workers.emplace_back([&body, begin, end] { body(begin, end); });
  }
}

}  // namespace detail

inline ProtectedStreams protect(ByteView content, const ProtectionKey& key, const ProtectOptions& opts = {}) {
  const std::uint64_t units = content.size() / kUnitSize;
  const std::size_t tail = content.size() % kUnitSize;

  ProtectedStreams out;
  out.counts.unit_count = units;
  out.counts.selector_hashes = (units + kSelectorsPerBlock - 1) / kSelectorsPerBlock;
  const auto selectors = selector_stream(key, units);

  out.puf_payload.resize(units * kRemainderSize);
  out.prf_plain.resize(units * kPieceSize + tail + kDigestSize);

  std::vector<std::uint64_t> hashes_per_slice;
  std::mutex tally_mutex;
  detail::for_each_slice(units, opts.threads, [&](std::uint64_t begin, std::uint64_t end) {
    std::uint64_t hashes = 0;
    for (std::uint64_t i = begin; i < end; ++i) {
      const ContentUnit unit{content.subspan(i * kUnitSize).first<kUnitSize>(), i};
      const ProtectedUnit pu = protect_unit(unit, selectors[i], key);
      ++hashes;
      std::copy(pu.puf_unit.begin(), pu.puf_unit.end(), out.puf_payload.begin() + i * kRemainderSize);
      std::copy(pu.selected.begin(), pu.selected.end(), out.prf_plain.begin() + i * kPieceSize);
    }
    std::lock_guard lock(tally_mutex);
    hashes_per_slice.push_back(hashes);
  });
  for (auto h : hashes_per_slice) out.counts.protection_hashes += h;

  auto prf_tail = out.prf_plain.begin() + units * kPieceSize;
  std::copy(content.end() - static_cast<std::ptrdiff_t>(tail), content.end(), prf_tail);
  const Digest digest = sha256(content);
  std::copy(digest.begin(), digest.end(), prf_tail + static_cast<std::ptrdiff_t>(tail));
  out.counts.digest_passes = 1;
  out.counts.selected_bytes = units * kPieceSize;
  out.counts.tail_bytes = tail;
  return out;
}

/// Result of running recovery without enforcing the integrity check.
struct RecoveryAttempt {
  Bytes content;
  /// The unmasked 28-byte remainders of every unit, i.e. only what was derived from the public stream.
  Bytes public_portion;
  bool digest_ok = false;
};

/// Validates stream lengths and returns the unit count.
inline std::uint64_t check_stream_lengths(std::size_t puf_len, std::size_t prf_len) {
  if (puf_len % kRemainderSize != 0) {
    throw Error(Errc::length_mismatch, "public payload length is not a multiple of 28");
  }
  const std::uint64_t units = puf_len / kRemainderSize;
  const std::uint64_t fixed = units * kPieceSize + kDigestSize;
  if (prf_len < fixed || prf_len - fixed >= kUnitSize) {
    throw Error(Errc::length_mismatch, "private stream length inconsistent with public payload");
  }
  return units;
}

inline RecoveryAttempt recover_unchecked(ByteView puf_payload, ByteView prf_plain, const ProtectionKey& key) {
  const std::uint64_t units = check_stream_lengths(puf_payload.size(), prf_plain.size());
  const std::size_t tail = prf_plain.size() - units * kPieceSize - kDigestSize;
  const auto selectors = selector_stream(key, units);

  RecoveryAttempt out;
  out.content.resize(units * kUnitSize + tail);
  out.public_portion.resize(units * kRemainderSize);
  for (std::uint64_t i = 0; i < units; ++i) {
    const auto selected = prf_plain.subspan(i * kPieceSize).first<kPieceSize>();
    const UnitKeystream ks = unit_keystream(selected, key, i);
    Remainder rem{};
    const auto masked = puf_payload.subspan(i * kRemainderSize).first<kRemainderSize>();
    for (std::size_t k = 0; k < kRemainderSize; ++k) rem[k] = masked[k] ^ ks[k];
    const UnitBytes unit = reinsert(rem, selected, selectors[i]);
    std::copy(unit.begin(), unit.end(), out.content.begin() + i * kUnitSize);
    std::copy(rem.begin(), rem.end(), out.public_portion.begin() + i * kRemainderSize);
  }
  const auto tail_bytes = prf_plain.subspan(units * kPieceSize, tail);
  std::copy(tail_bytes.begin(), tail_bytes.end(), out.content.begin() + units * kUnitSize);

  const Digest actual = sha256(out.content);
  const auto stored = prf_plain.last<kDigestSize>();
  out.digest_ok = std::equal(actual.begin(), actual.end(), stored.begin());
  return out;
}

/// Throws length_mismatch on inconsistent streams and integrity_failure on digest mismatch.
inline Bytes recover(ByteView puf_payload, ByteView prf_plain, const ProtectionKey& key) {
  RecoveryAttempt attempt = recover_unchecked(puf_payload, prf_plain, key);
  if (!attempt.digest_ok) throw Error(Errc::integrity_failure, "content digest mismatch");
  return std::move(attempt.content);
}

}  // namespace sefrag
