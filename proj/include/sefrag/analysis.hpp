#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "sefrag/bytes.hpp"
#include "sefrag/error.hpp"

namespace sefrag {

struct ByteHistogram {
  std::array<std::uint64_t, 256> counts{};
  std::uint64_t total = 0;

  void add(ByteView data) noexcept {
    for (std::uint8_t b : data) ++counts[b];
    total += data.size();
  }

  /// Sharded accumulation.
  ByteHistogram& merge(const ByteHistogram& other) noexcept {
    for (std::size_t v = 0; v < counts.size(); ++v) counts[v] += other.counts[v];
    total += other.total;
    return *this;
  }

  [[nodiscard]] double probability(std::uint8_t v) const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(counts[v]) / static_cast<double>(total);
  }

  /// Ratio of the most to the least frequent byte value; infinity if any value is missing.
  [[nodiscard]] double max_min_ratio() const noexcept {
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (*lo == 0) return INFINITY;
    return static_cast<double>(*hi) / static_cast<double>(*lo);
  }

  friend bool operator==(const ByteHistogram&, const ByteHistogram&) = default;
};

inline ByteHistogram histogram(ByteView data) noexcept {
  ByteHistogram h;
  h.add(data);
  return h;
}

/// Shannon entropy in bits per byte, summed in ascending byte-value order.
inline double entropy(const ByteHistogram& h) {
  if (h.total == 0) throw Error(Errc::empty_input, "entropy of empty input");
  const double n = static_cast<double>(h.total);
  double bits = 0.0;
  for (std::uint64_t c : h.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    bits -= p * std::log2(p);
  }
  // -0.0 for single-symbol input.
  return bits <= 0.0 ? 0.0 : bits;
}

inline double entropy(ByteView data) { return entropy(histogram(data)); }

/// 256 rows of "value,count,probability" with probability to six decimals.
inline void export_pdf_csv(const ByteHistogram& h, std::ostream& sink) {
  char line[64];
  for (std::size_t v = 0; v < h.counts.size(); ++v) {
    std::snprintf(line, sizeof line, "%zu,%llu,%.6f\n", v, static_cast<unsigned long long>(h.counts[v]),
                  h.probability(static_cast<std::uint8_t>(v)));
    sink << line;
  }
  if (!sink) throw Error(Errc::io_error, "failed writing PDF CSV");
}

}  // namespace sefrag
