#include <gtest/gtest.h>

#include <random>

#include "sefrag/analysis.hpp"
#include "sefrag/sharing.hpp"
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

FileId record(std::uint8_t fill) {
  FileId id{};
  id.fill(fill);
  return id;
}

const auto any_record = [](const FileId&) { return true; };

PolicyStore clinic() {
  PolicyStore s;
  s.enroll({"alice", Role::owner});
  s.enroll({"dr-bob", Role::doctor}, "alice");
  s.enroll({"cdc", Role::authority}, "alice");
  s.enroll({"insurer", Role::requester}, "alice");
  return s;
}

}  // namespace

TEST(PolicyStore, EnrollmentRules) {
  PolicyStore s;
  EXPECT_EQ(error_code_of([&] { s.enroll({"bob", Role::doctor}); }), Errc::not_owner);
  s.enroll({"alice", Role::owner});
  EXPECT_EQ(error_code_of([&] { s.enroll({"mallory", Role::owner}, "alice"); }), Errc::not_owner);
  EXPECT_EQ(error_code_of([&] { s.enroll({"bob", Role::doctor}, "bob"); }), Errc::not_owner);
  s.enroll({"bob", Role::doctor}, "alice");
  EXPECT_EQ(s.find_party("bob")->role, Role::doctor);
}

TEST(RequestAccess, DecisionsByRole) {
  const PolicyStore s = clinic();
  const FileId r = record(1);
  EXPECT_EQ(s.request_access("insurer", r, any_record), Decision::puf_only);
  EXPECT_EQ(s.request_access("dr-bob", r, any_record), Decision::full);
  EXPECT_EQ(s.request_access("cdc", r, any_record), Decision::full);
  EXPECT_EQ(s.request_access("alice", r, any_record), Decision::full);
  EXPECT_EQ(s.request_access("stranger", r, any_record), Decision::denied);
  EXPECT_EQ(error_code_of([&] { (void)s.request_access("insurer", r, [](const FileId&) { return false; }); }),
            Errc::unknown_record);
}

TEST(Grant, OwnerOnlyIdempotent) {
  PolicyStore s = clinic();
  const FileId r = record(1);
  s.grant("alice", "insurer", r, 100);
  EXPECT_EQ(s.request_access("insurer", r, any_record), Decision::full);
  s.grant("alice", "insurer", r, 200);
  ASSERT_EQ(s.policy(r)->grants.size(), 1u);
  EXPECT_EQ(s.policy(r)->grants[0].ts, 100);
  EXPECT_EQ(error_code_of([&] { s.grant("dr-bob", "insurer", r); }), Errc::not_owner);
}

TEST(Grant, UnknownGranteeBecomesRequester) {
  PolicyStore s = clinic();
  s.grant("alice", "researcher", record(1));
  EXPECT_EQ(s.find_party("researcher")->role, Role::requester);
  EXPECT_EQ(s.request_access("researcher", record(1), any_record), Decision::full);
  EXPECT_EQ(s.request_access("researcher", record(2), any_record), Decision::puf_only);
}

TEST(Revoke, Semantics) {
  PolicyStore s = clinic();
  const FileId a = record(1), b = record(2);
  s.grant("alice", "insurer", a);
  s.grant("alice", "insurer", b);
  s.revoke("alice", "insurer", a);
  EXPECT_EQ(s.request_access("insurer", a, any_record), Decision::puf_only);
  EXPECT_EQ(s.request_access("insurer", b, any_record), Decision::full);
  EXPECT_TRUE(s.policy(a)->revoked.contains("insurer"));
  EXPECT_FALSE(s.policy(a)->is_granted("insurer"));

  s.revoke("alice", "nobody", a);
  EXPECT_FALSE(s.policy(a)->revoked.contains("nobody"));
  EXPECT_EQ(error_code_of([&] { s.revoke("insurer", "insurer", b); }), Errc::not_owner);

  s.grant("alice", "insurer", a);
  EXPECT_FALSE(s.policy(a)->revoked.contains("insurer"));
  EXPECT_EQ(s.request_access("insurer", a, any_record), Decision::full);
}

TEST(Property, GrantRevokeSequencesStayConsistent) {
  std::mt19937_64 rng(31);
  const std::vector<std::string> people{"p0", "p1", "p2", "p3"};
  const std::vector<FileId> records{record(1), record(2), record(3)};
  PolicyStore s;
  s.enroll({"owner", Role::owner});
  // Model: last operation per (party, record).
  std::map<std::pair<std::string, FileId>, bool> granted;
  for (int step = 0; step < 2000; ++step) {
    const auto& who = people[rng() % people.size()];
    const auto& rec = records[rng() % records.size()];
    if (rng() % 2) {
      s.grant("owner", who, rec);
      granted[{who, rec}] = true;
    } else {
      s.revoke("owner", who, rec);
      granted[{who, rec}] = false;
    }
    for (const auto& p : people) {
      for (const auto& r : records) {
        const SharePolicy* pol = s.policy(r);
        if (pol) {
          ASSERT_FALSE(pol->is_granted(p) && pol->revoked.contains(p));
        }
        if (!s.find_party(p)) continue;
        const bool expect_full = granted[{p, r}];
        ASSERT_EQ(s.request_access(p, r, any_record), expect_full ? Decision::full : Decision::puf_only);
      }
    }
  }
}

TEST(PolicyStore, JsonSchemaAndPersistence) {
  TempDir dir;
  PolicyStore s = clinic();
  s.grant("alice", "insurer", record(0xab), 1700000000);
  s.grant("alice", "temp", record(0xab), 1700000001);
  s.revoke("alice", "temp", record(0xab));
  s.save(dir / "policy.json");

  const nlohmann::json j = s.to_json();
  const auto& rec = j.at("records").at(0);
  EXPECT_EQ(rec.at("record_id"), "abababababababababababababababab");
  EXPECT_EQ(rec.at("grants").at(0).at("party"), "insurer");
  EXPECT_EQ(rec.at("grants").at(0).at("ts"), 1700000000);
  EXPECT_EQ(rec.at("revoked").at(0), "temp");

  const PolicyStore loaded = PolicyStore::load(dir / "policy.json");
  EXPECT_EQ(loaded.to_json(), j);
  EXPECT_EQ(loaded.owner()->id, "alice");
  EXPECT_EQ(loaded.request_access("insurer", record(0xab), any_record), Decision::full);

  EXPECT_TRUE(PolicyStore::load(dir / "missing.json").to_json().at("parties").empty());
}

class ReleaseTest : public ::testing::Test {
 protected:
  void SetUp() override {
    sealed_ = seal(file_, key_, {.mode = HeaderMode::fixed(16)});
    placement_ = disperse(sealed_.puf, sealed_.prf, device_, cloud_);
    backends_.add(device_).add(cloud_);
  }

  ProtectionKey key_ = ProtectionKey::random();
  Bytes file_ = sefrag::test::ascii_text(64 * 1024);
  MemoryBackend device_{"device"};
  MemoryBackend cloud_{"cloud"};
  BackendSet backends_;
  SealedPair sealed_;
  Placement placement_;
};

TEST_F(ReleaseTest, FullReleaseReconstructs) {
  const Release r = release(Decision::full, placement_, backends_);
  ASSERT_TRUE(r.puf && r.prf);
  EXPECT_EQ(open(*r.puf, *r.prf, key_), file_);
}

TEST_F(ReleaseTest, AnonymizedFullReleaseDropsHeader) {
  const Release r = release(Decision::full, placement_, backends_, true);
  ASSERT_TRUE(r.puf && r.prf);
  const PufContainer puf = PufContainer::parse(*r.puf);
  EXPECT_TRUE(puf.header_omitted());
  EXPECT_EQ(open(puf, PrfContainer::parse(*r.prf), key_), Bytes(file_.begin() + 16, file_.end()));
}

TEST_F(ReleaseTest, PufOnlyReleaseIsUseless) {
  const Release r = release(Decision::puf_only, placement_, backends_);
  ASSERT_TRUE(r.puf);
  EXPECT_FALSE(r.prf);
  const PufContainer puf = PufContainer::parse(*r.puf);
  const Bytes zeroed(puf.unit_count() * kPieceSize + puf.content_len % kUnitSize + kDigestSize, 0);
  const RecoveryAttempt attempt = recover_unchecked(puf.payload, zeroed, key_);
  EXPECT_FALSE(attempt.digest_ok);
  EXPECT_GT(entropy(attempt.public_portion), 7.9);
}

TEST_F(ReleaseTest, DeniedDeliversNothing) {
  EXPECT_TRUE(release(Decision::denied, placement_, backends_).empty());
}

TEST_F(ReleaseTest, CrossRecordReleaseIsPairMismatch) {
  const SealedPair other = seal(random_bytes(5000, 9), key_);
  const Placement other_p = disperse(other.puf, other.prf, device_, cloud_);
  const Release a = release(Decision::full, placement_, backends_);
  const Release b = release(Decision::full, other_p, backends_);
  EXPECT_EQ(error_code_of([&] { open(*b.puf, *a.prf, key_); }), Errc::pair_mismatch);
}
