#pragma once

// Selective encryption versus whole-buffer AES-128-CBC, timed in memory.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <random>
#include <vector>

#include "sefrag/container.hpp"
#include "sefrag/core.hpp"
#include "sefrag/crypto.hpp"

namespace sefrag {

struct TimingStats {
  double min_s = 0;
  double median_s = 0;
  double max_s = 0;

  static TimingStats of(std::vector<double> samples) {
    std::ranges::sort(samples);
    TimingStats t;
    if (samples.empty()) return t;
    t.min_s = samples.front();
    t.max_s = samples.back();
    const std::size_t mid = samples.size() / 2;
    t.median_s = samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
    return t;
  }
};

struct BenchReport {
  std::uint64_t input_size = 0;
  unsigned iterations = 0;
  unsigned threads = 1;
  TimingStats se_elapsed;
  TimingStats aes_baseline_elapsed;
  /// MB/s (2^20 bytes) from the median run.
  double se_throughput = 0;
  double aes_throughput = 0;
  double ratio = 0;
  PrimitiveCounts counts;
  std::uint64_t aes_bytes_se = 0;
  std::uint64_t aes_bytes_baseline = 0;
  std::uint64_t hash_invocations_se = 0;
};

struct BenchOptions {
  std::uint64_t size_bytes = 1u << 20;
  unsigned iterations = 3;
  unsigned threads = 1;
  std::uint64_t seed = 42;
};

inline BenchReport run_bench(const BenchOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  Bytes buffer(opts.size_bytes);
  for (auto& b : buffer) b = static_cast<std::uint8_t>(rng());
  const ProtectionKey key = ProtectionKey::random();
  Iv iv{};
  random_fill(iv);

  BenchReport report;
  report.input_size = opts.size_bytes;
  report.iterations = std::max(1u, opts.iterations);
  report.threads = std::max(1u, opts.threads);

  using clock = std::chrono::steady_clock;
  std::vector<double> se_samples;
  std::vector<double> aes_samples;
  for (unsigned it = 0; it < report.iterations; ++it) {
    auto t0 = clock::now();
    ProtectedStreams streams = protect(buffer, key, {report.threads});
    Bytes prf_ct = aes128_cbc_encrypt(streams.prf_plain, key.bytes(), iv);
    auto t1 = clock::now();
    Bytes full_ct = aes128_cbc_encrypt(buffer, key.bytes(), iv);
    auto t2 = clock::now();
    se_samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    aes_samples.push_back(std::chrono::duration<double>(t2 - t1).count());

    report.counts = streams.counts;
    report.aes_bytes_se = prf_ct.size();
    report.aes_bytes_baseline = full_ct.size();
  }
  report.hash_invocations_se = report.counts.hash_invocations();
  report.se_elapsed = TimingStats::of(se_samples);
  report.aes_baseline_elapsed = TimingStats::of(aes_samples);
  const double mb = static_cast<double>(opts.size_bytes) / (1024.0 * 1024.0);
  report.se_throughput = report.se_elapsed.median_s > 0 ? mb / report.se_elapsed.median_s : 0;
  report.aes_throughput = report.aes_baseline_elapsed.median_s > 0 ? mb / report.aes_baseline_elapsed.median_s : 0;
  report.ratio = report.aes_throughput > 0 ? report.se_throughput / report.aes_throughput : 0;
  return report;
}

inline void print_table(const BenchReport& r, std::ostream& os) {
  char buf[160];
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    os << buf << '\n';
  };
  line("input size            %llu bytes, %u iterations, %u thread(s)",
       static_cast<unsigned long long>(r.input_size), r.iterations, r.threads);
  line("%-22s %12s %12s %12s %12s", "", "min [ms]", "median [ms]", "max [ms]", "MB/s");
  line("%-22s %12.3f %12.3f %12.3f %12.1f", "selective (SE)", r.se_elapsed.min_s * 1e3, r.se_elapsed.median_s * 1e3,
       r.se_elapsed.max_s * 1e3, r.se_throughput);
  line("%-22s %12.3f %12.3f %12.3f %12.1f", "AES-128-CBC baseline", r.aes_baseline_elapsed.min_s * 1e3,
       r.aes_baseline_elapsed.median_s * 1e3, r.aes_baseline_elapsed.max_s * 1e3, r.aes_throughput);
  line("ratio SE/AES          %.3f", r.ratio);
  line("units                 %llu", static_cast<unsigned long long>(r.counts.unit_count));
  line("protection hashes     %llu", static_cast<unsigned long long>(r.counts.protection_hashes));
  line("selector hashes       %llu", static_cast<unsigned long long>(r.counts.selector_hashes));
  line("digest passes         %llu", static_cast<unsigned long long>(r.counts.digest_passes));
  line("hash invocations (SE) %llu", static_cast<unsigned long long>(r.hash_invocations_se));
  line("selected bytes        %llu", static_cast<unsigned long long>(r.counts.selected_bytes));
  line("AES bytes (SE)        %llu", static_cast<unsigned long long>(r.aes_bytes_se));
  line("AES bytes (baseline)  %llu", static_cast<unsigned long long>(r.aes_bytes_baseline));
}

inline void print_csv(const BenchReport& r, std::ostream& os) {
  os << "input_size,iterations,threads,se_min_s,se_median_s,se_max_s,aes_min_s,aes_median_s,aes_max_s,"
        "se_mb_s,aes_mb_s,ratio,unit_count,protection_hashes,selector_hashes,digest_passes,"
        "hash_invocations_se,selected_bytes,aes_bytes_se,aes_bytes_baseline\n";
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%u,%u,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.3f,%.3f,%.4f,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu\n",
                static_cast<unsigned long long>(r.input_size), r.iterations, r.threads, r.se_elapsed.min_s,
                r.se_elapsed.median_s, r.se_elapsed.max_s, r.aes_baseline_elapsed.min_s,
                r.aes_baseline_elapsed.median_s, r.aes_baseline_elapsed.max_s, r.se_throughput, r.aes_throughput,
                r.ratio, static_cast<unsigned long long>(r.counts.unit_count),
                static_cast<unsigned long long>(r.counts.protection_hashes),
                static_cast<unsigned long long>(r.counts.selector_hashes),
                static_cast<unsigned long long>(r.counts.digest_passes),
                static_cast<unsigned long long>(r.hash_invocations_se),
                static_cast<unsigned long long>(r.counts.selected_bytes),
                static_cast<unsigned long long>(r.aes_bytes_se), static_cast<unsigned long long>(r.aes_bytes_baseline));
  os << buf;
}

}  // namespace sefrag
