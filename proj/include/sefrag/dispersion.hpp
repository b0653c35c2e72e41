#pragma once

// Fragment placement: content-addressed blob backends, the placement index,
// and the disperse/fetch pair that keeps public and private fragments apart.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "sefrag/bytes.hpp"
#include "sefrag/container.hpp"
#include "sefrag/crypto.hpp"
#include "sefrag/error.hpp"

namespace sefrag {

struct BlobRef {
  Digest id{};

  static BlobRef of(ByteView payload) { return {sha256(payload)}; }

  static BlobRef from_hex(std::string_view hex) {
    if (hex.size() != 64) throw Error(Errc::format_error, "blob id must be 64 hex characters");
    auto raw = sefrag::from_hex(hex);
    BlobRef r;
    std::copy(raw.begin(), raw.end(), r.id.begin());
    return r;
  }

  [[nodiscard]] std::string hex() const { return to_hex(id); }
  [[nodiscard]] bool matches(ByteView payload) const { return sha256(payload) == id; }

  friend auto operator<=>(const BlobRef&, const BlobRef&) = default;
};

/// Uniform interface over in-memory, directory and remote blob stores.
class Backend {
 public:
  virtual ~Backend() = default;

  /// Stable identity; two backends with equal names are the same store.
  [[nodiscard]] virtual std::string name() const = 0;
  virtual BlobRef put(ByteView payload) = 0;
  /// Stored bytes as-is; throws not_found.
  virtual Bytes load(const BlobRef& ref) = 0;
  /// Returns false if the blob was absent.
  virtual bool remove(const BlobRef& ref) = 0;
  virtual bool contains(const BlobRef& ref) = 0;

  /// load() plus the content-hash check; throws not_found or corrupt_blob.
  Bytes get(const BlobRef& ref) {
    Bytes data = load(ref);
    if (!ref.matches(data)) throw Error(Errc::corrupt_blob, ref.hex());
    return data;
  }
};

class MemoryBackend final : public Backend {
 public:
  explicit MemoryBackend(std::string label = "memory") : name_("mem:" + std::move(label)) {}

  [[nodiscard]] std::string name() const override { return name_; }

  BlobRef put(ByteView payload) override {
    const BlobRef ref = BlobRef::of(payload);
    std::lock_guard lock(mutex_);
    blobs_.try_emplace(ref, payload.begin(), payload.end());
    return ref;
  }

  Bytes load(const BlobRef& ref) override {
    std::lock_guard lock(mutex_);
    auto it = blobs_.find(ref);
    if (it == blobs_.end()) throw Error(Errc::not_found, ref.hex());
    return it->second;
  }

  bool remove(const BlobRef& ref) override {
    std::lock_guard lock(mutex_);
    return blobs_.erase(ref) > 0;
  }

  bool contains(const BlobRef& ref) override {
    std::lock_guard lock(mutex_);
    return blobs_.contains(ref);
  }

  [[nodiscard]] std::size_t blob_count() const {
    std::lock_guard lock(mutex_);
    return blobs_.size();
  }

  /// Direct mutable access to stored bytes, for fault injection.
  Bytes& raw(const BlobRef& ref) {
    std::lock_guard lock(mutex_);
    return blobs_.at(ref);
  }

 private:
  std::string name_;
  mutable std::mutex mutex_;
  std::map<BlobRef, Bytes> blobs_;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io_error, "read failed: " + path.string());
  return data;
}

/// Writes to a sibling temp file then renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, ByteView data) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(Errc::io_error, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(Errc::io_error, "rename failed: " + path.string());
  }
}

/// Blobs stored as <root>/<first two hex chars>/<full hex id>.
class DirectoryBackend final : public Backend {
 public:
  explicit DirectoryBackend(const std::filesystem::path& root) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) throw Error(Errc::io_error, "cannot create store " + root.string());
    root_ = std::filesystem::canonical(root);
  }

  [[nodiscard]] std::string name() const override { return "dir:" + root_.string(); }
  [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }

  [[nodiscard]] std::filesystem::path path_of(const BlobRef& ref) const {
    const std::string hex = ref.hex();
    return root_ / hex.substr(0, 2) / hex;
  }

  BlobRef put(ByteView payload) override {
    const BlobRef ref = BlobRef::of(payload);
    const auto path = path_of(ref);
    if (std::filesystem::exists(path)) return ref;
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(Errc::io_error, "cannot create " + path.parent_path().string());
    write_file_atomic(path, payload);
    return ref;
  }

  Bytes load(const BlobRef& ref) override {
    const auto path = path_of(ref);
    if (!std::filesystem::exists(path)) throw Error(Errc::not_found, ref.hex());
    return read_file(path);
  }

  bool remove(const BlobRef& ref) override {
    std::error_code ec;
    return std::filesystem::remove(path_of(ref), ec);
  }

  bool contains(const BlobRef& ref) override { return std::filesystem::exists(path_of(ref)); }

 private:
  std::filesystem::path root_;
};

struct StoredRef {
  std::string backend;
  BlobRef ref;

  friend bool operator==(const StoredRef&, const StoredRef&) = default;
};

struct Placement {
  FileId record_id{};
  StoredRef puf;
  StoredRef prf;

  friend bool operator==(const Placement&, const Placement&) = default;
};

inline nlohmann::json to_json(const Placement& p) {
  return {{"record_id", to_hex(p.record_id)},
          {"puf", {{"backend", p.puf.backend}, {"id", p.puf.ref.hex()}}},
          {"prf", {{"backend", p.prf.backend}, {"id", p.prf.ref.hex()}}}};
}

inline FileId parse_record_id(std::string_view hex) {
  if (hex.size() != 32) throw Error(Errc::format_error, "record id must be 32 hex characters");
  auto raw = from_hex(hex);
  FileId id{};
  std::copy(raw.begin(), raw.end(), id.begin());
  return id;
}

inline Placement placement_from_json(const nlohmann::json& j) {
  try {
    Placement p;
    p.record_id = parse_record_id(j.at("record_id").get<std::string>());
    p.puf = {j.at("puf").at("backend").get<std::string>(), BlobRef::from_hex(j.at("puf").at("id").get<std::string>())};
    p.prf = {j.at("prf").at("backend").get<std::string>(), BlobRef::from_hex(j.at("prf").at("id").get<std::string>())};
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, std::string("placement record: ") + e.what());
  }
}

/// Append-only JSON-lines file of placements; the last line for a record id wins.
class PlacementIndex {
 public:
  explicit PlacementIndex(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const Placement& p) {
    if (p.puf.backend == p.prf.backend) throw Error(Errc::same_backend, p.puf.backend);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    out << to_json(p).dump() << '\n';
    out.flush();
    if (!out) throw Error(Errc::io_error, "cannot append to " + path_.string());
  }

  [[nodiscard]] std::map<FileId, Placement> load() const {
    std::map<FileId, Placement> out;
    std::ifstream in(path_);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::format_error, std::string("placement index: ") + e.what());
      }
      Placement p = placement_from_json(j);
      out.insert_or_assign(p.record_id, p);
    }
    return out;
  }

  [[nodiscard]] std::optional<Placement> find(const FileId& record_id) const {
    auto all = load();
    auto it = all.find(record_id);
    if (it == all.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] bool contains(const FileId& record_id) const { return find(record_id).has_value(); }

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// Name-to-backend lookup used when fetching fragments back from a placement.
class BackendSet {
 public:
  BackendSet& add(Backend& backend) {
    backends_[backend.name()] = &backend;
    return *this;
  }

  Backend& resolve(const std::string& name) const {
    auto it = backends_.find(name);
    if (it == backends_.end()) throw Error(Errc::backend_unavailable, "no backend named " + name);
    return *it->second;
  }

 private:
  std::map<std::string, Backend*> backends_;
};

/// PUF goes to the cloud first; the PRF is stored and the placement indexed only after that succeeds.
inline Placement disperse(const PufContainer& puf, const PrfContainer& prf, Backend& device, Backend& cloud,
                          PlacementIndex* index = nullptr) {
  if (device.name() == cloud.name()) throw Error(Errc::same_backend, device.name());
  if (puf.file_id != prf.file_id) throw Error(Errc::pair_mismatch, "cannot disperse an unpaired PUF/PRF");
  Placement p;
  p.record_id = puf.file_id;
  p.puf = {cloud.name(), cloud.put(puf.serialize())};
  p.prf = {device.name(), device.put(prf.serialize())};
  if (index) index->append(p);
  return p;
}

struct FetchedPair {
  Bytes puf;
  Bytes prf;
};

inline FetchedPair fetch(const Placement& p, const BackendSet& backends) {
  FetchedPair out;
  out.puf = backends.resolve(p.puf.backend).get(p.puf.ref);
  out.prf = backends.resolve(p.prf.backend).get(p.prf.ref);
  return out;
}

}  // namespace sefrag
