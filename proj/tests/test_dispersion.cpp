#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "sefrag/analysis.hpp"
#include "sefrag/container.hpp"
#include "sefrag/dispersion.hpp"
#include "sefrag/wire.hpp"
#include "test_util.hpp"

using namespace sefrag;
using sefrag::test::random_bytes;
using sefrag::test::TempDir;

namespace {

template <typename Fn>
Errc error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no sefrag::Error thrown";
  return Errc::format_error;
}

std::size_t count_files(const std::filesystem::path& root) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) n += e.is_regular_file();
  return n;
}

/// A port nothing listens on: bind an ephemeral port, then close it.
std::uint16_t dead_port() {
  MemoryBackend scratch;
  wire::BlobServer s(wire::Endpoint::parse("127.0.0.1:0"), scratch);
  const auto port = s.start();
  s.stop();
  return port;
}

void backend_contract(Backend& b) {
  const Bytes payload = random_bytes(1000, 1);
  const BlobRef ref = b.put(payload);
  EXPECT_EQ(ref, BlobRef::of(payload));
  EXPECT_EQ(b.get(ref), payload);
  EXPECT_EQ(b.put(payload), ref);
  EXPECT_TRUE(b.contains(ref));

  const BlobRef empty = b.put({});
  EXPECT_EQ(empty.hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_TRUE(b.get(empty).empty());

  const BlobRef unknown = BlobRef::of(as_bytes("never stored"));
  EXPECT_EQ(error_code_of([&] { b.get(unknown); }), Errc::not_found);
  EXPECT_FALSE(b.contains(unknown));

  EXPECT_TRUE(b.remove(ref));
  EXPECT_FALSE(b.remove(ref));
  EXPECT_EQ(error_code_of([&] { b.get(ref); }), Errc::not_found);
}

}  // namespace

TEST(MemoryBackend, Contract) {
  MemoryBackend b;
  backend_contract(b);
}

TEST(MemoryBackend, IdempotentPutKeepsSize) {
  MemoryBackend b;
  const Bytes x = random_bytes(64, 2);
  b.put(x);
  b.put(x);
  EXPECT_EQ(b.blob_count(), 1u);
}

TEST(MemoryBackend, TamperDetected) {
  MemoryBackend b;
  const BlobRef ref = b.put(random_bytes(64, 3));
  b.raw(ref)[10] ^= 0xff;
  EXPECT_EQ(error_code_of([&] { b.get(ref); }), Errc::corrupt_blob);
}

TEST(DirectoryBackend, Contract) {
  TempDir dir;
  DirectoryBackend b(dir.path());
  backend_contract(b);
}

TEST(DirectoryBackend, LayoutIdempotenceAndTamper) {
  TempDir dir;
  DirectoryBackend b(dir.path());
  const Bytes x = random_bytes(500, 4);
  const BlobRef ref = b.put(x);
  const std::string hex = ref.hex();
  const auto path = dir.path() / hex.substr(0, 2) / hex;
  ASSERT_TRUE(std::filesystem::exists(path));
  b.put(x);
  EXPECT_EQ(count_files(dir.path()), 1u);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(123);
    f.put(static_cast<char>(x[123] ^ 0x01));
  }
  EXPECT_EQ(error_code_of([&] { b.get(ref); }), Errc::corrupt_blob);
}

TEST(Wire, EndpointParse) {
  const auto ep = wire::Endpoint::parse("localhost:8080");
  EXPECT_EQ(ep.host, "localhost");
  EXPECT_EQ(ep.port, 8080);
  EXPECT_THROW(wire::Endpoint::parse("nope"), std::invalid_argument);
  EXPECT_THROW(wire::Endpoint::parse("h:70000"), std::invalid_argument);
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_unique<DirectoryBackend>(dir_.path());
    server_ = std::make_unique<wire::BlobServer>(wire::Endpoint::parse("127.0.0.1:0"), *store_);
    port_ = server_->start();
  }
  void TearDown() override { server_->stop(); }

  [[nodiscard]] wire::Endpoint endpoint() const { return {"127.0.0.1", port_}; }

  TempDir dir_;
  std::unique_ptr<DirectoryBackend> store_;
  std::unique_ptr<wire::BlobServer> server_;
  std::uint16_t port_ = 0;
};

TEST_F(ServerTest, RemoteBackendContract) {
  wire::RemoteBackend remote(endpoint());
  backend_contract(remote);
}

TEST_F(ServerTest, MalformedOpcodeKeepsConnectionUsable) {
  wire::BlobClient client(endpoint());
  const BlobRef ref = BlobRef::of(as_bytes("x"));
  EXPECT_EQ(client.request(0x7f, ref.id).status, wire::Status::error);
  EXPECT_EQ(client.request(0x00, ref.id).status, wire::Status::error);
  const Bytes payload = random_bytes(300, 1);
  const BlobRef stored = client.put(payload);
  EXPECT_EQ(client.get(stored), payload);
}

TEST_F(ServerTest, StatusCodes) {
  wire::BlobClient client(endpoint());
  const BlobRef absent = BlobRef::of(as_bytes("absent"));
  EXPECT_EQ(client.request(0x02, absent.id).status, wire::Status::not_found);
  EXPECT_EQ(client.request(0x04, absent.id).status, wire::Status::not_found);
  EXPECT_EQ(client.request(0x03, absent.id).status, wire::Status::not_found);

  // PUT whose id does not hash the payload.
  const Bytes payload = random_bytes(50, 2);
  EXPECT_EQ(client.request(0x01, absent.id, ByteView(payload)).status, wire::Status::error);
  EXPECT_FALSE(store_->contains(absent));

  const BlobRef ref = client.put(payload);
  EXPECT_EQ(client.request(0x04, ref.id).status, wire::Status::ok);
  EXPECT_EQ(client.request(0x03, ref.id).status, wire::Status::ok);
  EXPECT_EQ(client.request(0x04, ref.id).status, wire::Status::not_found);
}

TEST_F(ServerTest, GetFrameIsBitExact) {
  const Bytes payload = random_bytes(40, 3);
  const BlobRef ref = store_->put(payload);
  wire::Socket raw = wire::connect_to(endpoint());
  Bytes req{0x02};
  req.insert(req.end(), ref.id.begin(), ref.id.end());
  ASSERT_TRUE(raw.send_all(req));
  Bytes resp(1 + 8 + payload.size());
  ASSERT_TRUE(raw.recv_all(resp));
  EXPECT_EQ(resp[0], 0x00);
  EXPECT_EQ(load_le64(resp.data() + 1), payload.size());
  EXPECT_TRUE(std::equal(payload.begin(), payload.end(), resp.begin() + 9));
}

TEST_F(ServerTest, OversizedPutRejected) {
  wire::Socket raw = wire::connect_to(endpoint());
  ByteWriter w;
  w.u8(0x01).raw(BlobRef::of({}).id).u64(wire::kMaxPayload + 1);
  ASSERT_TRUE(raw.send_all(std::move(w).take()));
  std::uint8_t status = 0xff;
  ASSERT_TRUE(raw.recv_all({&status, 1}));
  EXPECT_EQ(status, 0x02);
}

TEST_F(ServerTest, CorruptStoredBlobReported) {
  const Bytes payload = random_bytes(100, 4);
  const BlobRef ref = store_->put(payload);
  {
    std::fstream f(store_->path_of(ref), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put(static_cast<char>(payload[0] ^ 0x80));
  }
  wire::RemoteBackend remote(endpoint());
  EXPECT_EQ(error_code_of([&] { remote.get(ref); }), Errc::corrupt_blob);
}

TEST_F(ServerTest, ConcurrentClients) {
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      wire::RemoteBackend remote(endpoint());
      for (int i = 0; i < 20; ++i) {
        const Bytes p = random_bytes(1000 + i, t * 100 + i);
        if (remote.get(remote.put(p)) == p) ++ok;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok.load(), 160);
}

TEST(BlobServer, BindErrorOnBusyPort) {
  MemoryBackend a, b;
  wire::BlobServer first(wire::Endpoint::parse("127.0.0.1:0"), a);
  const auto port = first.start();
  wire::BlobServer second(wire::Endpoint{"127.0.0.1", port}, b);
  // SO_REUSEADDR does not allow two listeners on the same port.
  EXPECT_EQ(error_code_of([&] { second.start(); }), Errc::bind_error);
}

TEST(RemoteBackend, OfflineIsBackendUnavailable) {
  wire::RemoteBackend remote(wire::Endpoint{"127.0.0.1", dead_port()});
  EXPECT_EQ(error_code_of([&] { remote.put(as_bytes("x")); }), Errc::backend_unavailable);
}

TEST(PlacementIndex, LastWriteWinsAndRejectsColocation) {
  TempDir dir;
  PlacementIndex index(dir / "placements.jsonl");
  Placement p;
  p.record_id.fill(0x01);
  p.puf = {"cloud", BlobRef::of(as_bytes("a"))};
  p.prf = {"device", BlobRef::of(as_bytes("b"))};
  index.append(p);
  Placement q = p;
  q.puf.ref = BlobRef::of(as_bytes("c"));
  index.append(q);
  EXPECT_EQ(index.find(p.record_id), q);
  EXPECT_EQ(index.load().size(), 1u);

  FileId other{};
  EXPECT_FALSE(index.find(other).has_value());

  Placement same = p;
  same.prf.backend = "cloud";
  EXPECT_EQ(error_code_of([&] { index.append(same); }), Errc::same_backend);
}

TEST(Disperse, SameBackendRejected) {
  MemoryBackend b("one");
  const SealedPair sp = seal(random_bytes(100, 1), ProtectionKey::random());
  EXPECT_EQ(error_code_of([&] { disperse(sp.puf, sp.prf, b, b); }), Errc::same_backend);
  MemoryBackend alias("one");
  EXPECT_EQ(error_code_of([&] { disperse(sp.puf, sp.prf, b, alias); }), Errc::same_backend);
}

TEST(Disperse, OfflineCloudLeavesNoPartialPlacement) {
  TempDir dir;
  MemoryBackend device("device");
  wire::RemoteBackend cloud(wire::Endpoint{"127.0.0.1", dead_port()});
  PlacementIndex index(dir / "placements.jsonl");
  const SealedPair sp = seal(random_bytes(1000, 1), ProtectionKey::random());
  EXPECT_EQ(error_code_of([&] { disperse(sp.puf, sp.prf, device, cloud, &index); }), Errc::backend_unavailable);
  EXPECT_EQ(device.blob_count(), 0u);
  EXPECT_TRUE(index.load().empty());
}

TEST_F(ServerTest, DisperseFetchOpenRoundTrip) {
  TempDir device_dir;
  DirectoryBackend device(device_dir.path());
  wire::RemoteBackend cloud(endpoint());
  PlacementIndex index(device_dir / "placements.jsonl");

  const ProtectionKey key = ProtectionKey::random();
  const Bytes file = random_bytes(200'000, 5);
  const SealedPair sp = seal(file, key);
  const Placement p = disperse(sp.puf, sp.prf, device, cloud, &index);
  EXPECT_EQ(p.record_id, sp.puf.file_id);
  EXPECT_EQ(p.puf.backend, cloud.name());
  EXPECT_EQ(p.prf.backend, device.name());
  EXPECT_TRUE(store_->contains(p.puf.ref));
  EXPECT_FALSE(store_->contains(p.prf.ref));

  BackendSet backends;
  backends.add(device).add(cloud);
  const auto found = index.find(p.record_id);
  ASSERT_TRUE(found);
  const FetchedPair fetched = fetch(*found, backends);
  EXPECT_EQ(open(fetched.puf, fetched.prf, key), file);
}

TEST_F(ServerTest, CloudPlusKeyCannotReconstruct) {
  MemoryBackend device("device");
  wire::RemoteBackend cloud(endpoint());
  const ProtectionKey key = ProtectionKey::random();
  const Bytes file = sefrag::test::ascii_text(100'000);
  const SealedPair sp = seal(file, key);
  const Placement p = disperse(sp.puf, sp.prf, device, cloud);

  const PufContainer puf = PufContainer::parse(cloud.get(p.puf.ref));
  const Bytes empty_prf(puf.unit_count() * kPieceSize + puf.content_len % kUnitSize + kDigestSize, 0);
  const RecoveryAttempt attempt = recover_unchecked(puf.payload, empty_prf, key);
  EXPECT_FALSE(attempt.digest_ok);
  EXPECT_GT(entropy(attempt.public_portion), 7.9);
  EXPECT_EQ(error_code_of([&] { recover(puf.payload, empty_prf, key); }), Errc::integrity_failure);
}
