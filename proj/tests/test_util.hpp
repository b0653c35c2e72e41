#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sefrag/bytes.hpp"

namespace sefrag::test {

inline Bytes random_bytes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

inline Bytes ascii_text(std::size_t n) {
  static constexpr std::string_view words[] = {"patient ", "record ",  "blood ",   "pressure ", "normal ",
                                               "history ", "allergy ", "dose ",    "mg ",       "daily\n",
                                               "imaging ", "report ",  "follow ", "up ",       "visit "};
  std::mt19937_64 rng(12345);
  Bytes out;
  out.reserve(n);
  while (out.size() < n) {
    auto w = words[rng() % std::size(words)];
    for (char c : w) {
      if (out.size() == n) break;
      out.push_back(static_cast<std::uint8_t>(c));
    }
  }
  return out;
}

inline Bytes repeating_pattern(std::size_t n) {
  static constexpr std::uint8_t pattern[] = {0xde, 0xad, 0xbe, 0xef, 0x00, 0x11, 0x22};
  Bytes out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pattern[i % std::size(pattern)];
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sefrag-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace sefrag::test
