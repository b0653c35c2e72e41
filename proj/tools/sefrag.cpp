// sefrag command-line tool.
//
// Exit codes: 0 ok, 2 usage, 3 format, 4 integrity/auth, 5 input, 6 network.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <termios.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "sefrag/sefrag.hpp"

namespace fs = std::filesystem;
using namespace sefrag;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kFormat = 3, kIntegrity = 4, kInput = 5, kNetwork = 6 };

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::format_error:
    case Errc::not_dicom:
    case Errc::too_short:
    case Errc::length_mismatch:
      return kFormat;
    case Errc::integrity_failure:
    case Errc::bad_padding:
    case Errc::pair_mismatch:
    case Errc::corrupt_blob:
    case Errc::not_owner:
    case Errc::unknown_party:
      return kIntegrity;
    case Errc::empty_input:
    case Errc::io_error:
    case Errc::not_found:
    case Errc::unknown_record:
      return kInput;
    case Errc::backend_unavailable:
    case Errc::bind_error:
    case Errc::protocol_error:
      return kNetwork;
    case Errc::same_backend:
    case Errc::empty_passphrase:
      return kUsage;
  }
  return kUsage;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string store;
  std::string remote;
  std::string cloud_dir;
};

struct KeyOptions {
  std::string key_hex;
  bool passphrase = false;
};

void add_key_options(CLI::App* cmd, KeyOptions& k) {
  auto* hex = cmd->add_option("--key-hex", k.key_hex, "128-bit key as 32 hex characters");
  auto* pass = cmd->add_flag("--passphrase", k.passphrase, "Derive the key from a passphrase read from the terminal/stdin");
  hex->excludes(pass);
}

std::string read_passphrase() {
  const bool tty = ::isatty(STDIN_FILENO) != 0;
  termios old{};
  if (tty) {
    std::cerr << "passphrase: " << std::flush;
    ::tcgetattr(STDIN_FILENO, &old);
    termios quiet = old;
    quiet.c_lflag &= ~static_cast<tcflag_t>(ECHO);
    ::tcsetattr(STDIN_FILENO, TCSANOW, &quiet);
  }
  std::string line;
  std::getline(std::cin, line);
  if (tty) {
    ::tcsetattr(STDIN_FILENO, TCSANOW, &old);
    std::cerr << '\n';
  }
  return line;
}

ProtectionKey parse_key_hex(const std::string& hex) {
  try {
    return ProtectionKey::from_hex(hex);
  } catch (const Error& e) {
    throw UsageError(std::string("--key-hex: ") + e.what());
  }
}

/// Key and salt for sealing. Passphrase keys get a fresh random salt.
std::pair<ProtectionKey, Salt> key_for_seal(const KeyOptions& k) {
  if (k.passphrase) {
    Salt salt{};
    random_fill(salt);
    const std::string pass = read_passphrase();
    return {derive_key(as_bytes(pass), salt), salt};
  }
  if (k.key_hex.empty()) throw UsageError("one of --key-hex or --passphrase is required");
  return {parse_key_hex(k.key_hex), Salt{}};
}

ProtectionKey key_for_open(const KeyOptions& k, const PrfContainer& prf) {
  if (k.passphrase) {
    if (!prf.has_kdf_salt()) throw UsageError("this PRF was sealed with a raw key; use --key-hex");
    const std::string pass = read_passphrase();
    return derive_key(as_bytes(pass), prf.kdf_salt);
  }
  if (k.key_hex.empty()) throw UsageError("one of --key-hex or --passphrase is required");
  return parse_key_hex(k.key_hex);
}

/// Device-side state under --store.
struct DeviceStore {
  explicit DeviceStore(const fs::path& root)
      : root(root), blobs(root / "blobs"), index(root / "placements.jsonl"), policy_path(root / "policy.json") {}

  fs::path root;
  DirectoryBackend blobs;
  PlacementIndex index;
  fs::path policy_path;
};

DeviceStore require_store(const GlobalOptions& g) {
  if (g.store.empty()) throw UsageError("--store is required for this command");
  return DeviceStore(g.store);
}

std::unique_ptr<Backend> cloud_backend(const GlobalOptions& g) {
  if (!g.remote.empty()) return std::make_unique<wire::RemoteBackend>(wire::Endpoint::parse(g.remote));
  if (!g.cloud_dir.empty()) return std::make_unique<DirectoryBackend>(g.cloud_dir);
  return nullptr;
}

void write_output(const fs::path& path, ByteView data) { write_file_atomic(path, data); }

Bytes read_input(const fs::path& path) { return read_file(path); }

/// Bytes that entropy/pdf measure: the payload of a .puf, otherwise the whole file.
Bytes analysis_bytes(const fs::path& path, bool whole_file) {
  Bytes data = read_input(path);
  if (!whole_file && data.size() >= 4 && std::equal(kPufMagic.begin(), kPufMagic.end(), data.begin())) {
    return PufContainer::parse(data).payload;
  }
  return data;
}

volatile std::sig_atomic_t g_stop = 0;
extern "C" void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective encryption with fragmentation: protect, disperse, share and analyse files"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--store", g.store, "Device store directory (private blobs, placement index, policy)");
  app.add_option("--remote", g.remote, "Cloud blob server as host:port");
  app.add_option("--cloud-dir", g.cloud_dir, "Use a local directory as the cloud backend instead of --remote");

  // protect
  auto* protect_cmd = app.add_subcommand("protect", "Seal a file into .puf/.prf containers");
  std::string protect_in, protect_out, protect_mode = "raw";
  unsigned protect_threads = 1;
  KeyOptions protect_key;
  protect_cmd->add_option("input", protect_in, "File to protect")->required()->check(CLI::ExistingFile);
  protect_cmd->add_option("-o,--out", protect_out, "Directory for <name>.puf and <name>.prf");
  protect_cmd->add_option("--mode", protect_mode, "Header split: raw, dicom or fixed:<n>");
  protect_cmd->add_option("--threads", protect_threads, "Worker threads for unit protection");
  add_key_options(protect_cmd, protect_key);

  // recover
  auto* recover_cmd = app.add_subcommand("recover", "Rebuild the original file from a .puf/.prf pair");
  std::string recover_puf, recover_prf, recover_out;
  KeyOptions recover_key;
  recover_cmd->add_option("puf", recover_puf, "Public fragment container")->required()->check(CLI::ExistingFile);
  recover_cmd->add_option("prf", recover_prf, "Private fragment container")->required()->check(CLI::ExistingFile);
  recover_cmd->add_option("-o,--out", recover_out, "Output file")->required();
  add_key_options(recover_cmd, recover_key);

  // entropy / pdf
  auto* entropy_cmd = app.add_subcommand("entropy", "Shannon entropy in bits/byte (payload only for .puf files)");
  std::string entropy_path;
  bool entropy_whole = false;
  entropy_cmd->add_option("path", entropy_path)->required()->check(CLI::ExistingFile);
  entropy_cmd->add_flag("--whole-file", entropy_whole, "Measure container files including their headers");

  auto* pdf_cmd = app.add_subcommand("pdf", "Byte-value distribution as CSV (value,count,probability)");
  std::string pdf_path, pdf_out;
  bool pdf_whole = false;
  pdf_cmd->add_option("path", pdf_path)->required()->check(CLI::ExistingFile);
  pdf_cmd->add_option("-o,--out", pdf_out, "CSV file (stdout when omitted)");
  pdf_cmd->add_flag("--whole-file", pdf_whole, "Measure container files including their headers");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Compare selective encryption against full AES-128-CBC");
  unsigned bench_size = 1, bench_iters = 3, bench_threads = 1;
  std::string bench_csv;
  bench_cmd->add_option("--size", bench_size, "Buffer size in MB (2^20 bytes)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--iterations", bench_iters, "Timed repetitions")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--threads", bench_threads, "Worker threads for unit protection")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--csv", bench_csv, "Write the CSV report here instead of stdout");

  // blob store
  auto* serve_cmd = app.add_subcommand("serve", "Run a content-addressed blob server");
  std::string serve_bind = "127.0.0.1:7878", serve_root;
  serve_cmd->add_option("--bind", serve_bind, "host:port to listen on (port 0 picks a free port)");
  serve_cmd->add_option("--root", serve_root, "Blob directory")->required();

  auto* put_cmd = app.add_subcommand("put", "Store a file as a blob and print its id");
  std::string put_path;
  put_cmd->add_option("path", put_path)->required()->check(CLI::ExistingFile);

  auto* get_cmd = app.add_subcommand("get", "Fetch a blob by id");
  std::string get_id, get_out;
  get_cmd->add_option("id", get_id, "64-hex blob id")->required();
  get_cmd->add_option("-o,--out", get_out, "Output file")->required();

  // sharing
  std::string as_party, party, record_hex, role;
  auto* enroll_cmd = app.add_subcommand("enroll", "Register a party and its role in the policy store");
  enroll_cmd->add_option("--as", as_party, "Calling party (the owner; omit when enrolling the owner itself)");
  enroll_cmd->add_option("--party", party)->required();
  enroll_cmd->add_option("--role", role, "owner, doctor, authority or requester")->required();

  auto* grant_cmd = app.add_subcommand("grant", "Owner grants a party access to a record's private fragment");
  auto* revoke_cmd = app.add_subcommand("revoke", "Owner revokes a party's access to a record");
  for (auto* cmd : {grant_cmd, revoke_cmd}) {
    cmd->add_option("--as", as_party, "Calling party")->required();
    cmd->add_option("--party", party, "Grantee")->required();
    cmd->add_option("--record", record_hex, "Record id (32 hex)")->required();
  }

  auto* request_cmd = app.add_subcommand("request", "Ask for a record; prints PufOnly, Full or Denied");
  std::string request_out;
  bool request_anonymize = false;
  request_cmd->add_option("--party", party)->required();
  request_cmd->add_option("--record", record_hex, "Record id (32 hex)")->required();
  request_cmd->add_option("-o,--out", request_out, "Directory to receive <record>.puf / <record>.prf");
  request_cmd->add_flag("--anonymize", request_anonymize, "Strip the plaintext header from a full release");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*protect_cmd) {
      const Bytes input = read_input(protect_in);
      const auto [key, salt] = key_for_seal(protect_key);
      SealOptions opts;
      opts.mode = HeaderMode::parse(protect_mode);
      opts.kdf_salt = salt;
      opts.protect.threads = protect_threads;

      auto cloud = cloud_backend(g);
      const bool dispersing = !g.store.empty() && cloud != nullptr;
      if (protect_out.empty() && !dispersing) {
        throw UsageError("protect needs --out, or --store together with --remote/--cloud-dir");
      }
      const SealedPair sealed = seal(input, key, opts);
      if (!protect_out.empty()) {
        fs::create_directories(protect_out);
        const std::string stem = fs::path(protect_in).filename().string();
        write_output(fs::path(protect_out) / (stem + ".puf"), sealed.puf.serialize());
        write_output(fs::path(protect_out) / (stem + ".prf"), sealed.prf.serialize());
      }
      if (dispersing) {
        DeviceStore device = require_store(g);
        disperse(sealed.puf, sealed.prf, device.blobs, *cloud, &device.index);
      }
      std::cout << to_hex(sealed.puf.file_id) << '\n';
      return kOk;
    }

    if (*recover_cmd) {
      const PufContainer puf = PufContainer::parse(read_input(recover_puf));
      const PrfContainer prf = PrfContainer::parse(read_input(recover_prf));
      const ProtectionKey key = key_for_open(recover_key, prf);
      const Bytes plain = open(puf, prf, key);
      write_output(recover_out, plain);
      return kOk;
    }

    if (*entropy_cmd) {
      const double h = entropy(analysis_bytes(entropy_path, entropy_whole));
      std::printf("%.4f\n", h);
      return kOk;
    }

    if (*pdf_cmd) {
      const ByteHistogram h = histogram(analysis_bytes(pdf_path, pdf_whole));
      if (pdf_out.empty()) {
        export_pdf_csv(h, std::cout);
      } else {
        std::ofstream out(pdf_out, std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot create " + pdf_out);
        export_pdf_csv(h, out);
      }
      return kOk;
    }

    if (*bench_cmd) {
      BenchOptions opts;
      opts.size_bytes = static_cast<std::uint64_t>(bench_size) << 20;
      opts.iterations = bench_iters;
      opts.threads = bench_threads;
      const BenchReport report = run_bench(opts);
      print_table(report, std::cout);
      if (bench_csv.empty()) {
        std::cout << '\n';
        print_csv(report, std::cout);
      } else {
        std::ofstream out(bench_csv, std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot create " + bench_csv);
        print_csv(report, out);
      }
      return kOk;
    }

    if (*serve_cmd) {
      DirectoryBackend root(serve_root);
      wire::BlobServer server(wire::Endpoint::parse(serve_bind), root);
      const std::uint16_t port = server.start();
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening " << wire::Endpoint::parse(serve_bind).host << ":" << port << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      server.stop();
      return kOk;
    }

    if (*put_cmd || *get_cmd) {
      std::unique_ptr<Backend> backend;
      if (!g.remote.empty()) {
        backend = std::make_unique<wire::RemoteBackend>(wire::Endpoint::parse(g.remote));
      } else if (!g.store.empty()) {
        backend = std::make_unique<DirectoryBackend>(fs::path(g.store) / "blobs");
      } else {
        throw UsageError("put/get need --remote or --store");
      }
      if (*put_cmd) {
        std::cout << backend->put(read_input(put_path)).hex() << '\n';
      } else {
        write_output(get_out, backend->get(BlobRef::from_hex(get_id)));
      }
      return kOk;
    }

    if (*enroll_cmd || *grant_cmd || *revoke_cmd || *request_cmd) {
      DeviceStore device = require_store(g);
      PolicyStore policy = PolicyStore::load(device.policy_path);

      if (*enroll_cmd) {
        std::optional<std::string_view> caller;
        if (!as_party.empty()) caller = as_party;
        policy.enroll(Party{party, parse_role(role)}, caller);
        policy.save(device.policy_path);
        return kOk;
      }

      const FileId record = parse_record_id(record_hex);
      if (*grant_cmd || *revoke_cmd) {
        if (*grant_cmd) {
          policy.grant(as_party, party, record);
        } else {
          policy.revoke(as_party, party, record);
        }
        policy.save(device.policy_path);
        return kOk;
      }

      const auto placement = device.index.find(record);
      const Decision decision =
          policy.request_access(party, record, [&](const FileId&) { return placement.has_value(); });
      std::cout << to_string(decision) << '\n';
      if (!request_out.empty() && decision != Decision::denied) {
        auto cloud = cloud_backend(g);
        BackendSet backends;
        backends.add(device.blobs);
        if (cloud) backends.add(*cloud);
        const Release rel = release(decision, *placement, backends, request_anonymize);
        fs::create_directories(request_out);
        if (rel.puf) write_output(fs::path(request_out) / (record_hex + ".puf"), *rel.puf);
        if (rel.prf) write_output(fs::path(request_out) / (record_hex + ".prf"), *rel.prf);
      }
      return decision == Decision::denied ? kIntegrity : kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
  return kUsage;
}
