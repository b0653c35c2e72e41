#pragma once

// Owner-controlled release of private fragments.
//
// Trusted roles (owner, doctor, authority) always get both fragments. A
// requester gets the public fragment only, unless the owner has granted
// access to that record. Parties not enrolled in the store get nothing.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sefrag/container.hpp"
#include "sefrag/dispersion.hpp"
#include "sefrag/error.hpp"

namespace sefrag {

enum class Role { owner, doctor, authority, requester };
enum class Decision { puf_only, full, denied };

constexpr std::string_view to_string(Role r) noexcept {
  switch (r) {
    case Role::owner: return "owner";
    case Role::doctor: return "doctor";
    case Role::authority: return "authority";
    case Role::requester: return "requester";
  }
  return "requester";
}

constexpr std::string_view to_string(Decision d) noexcept {
  switch (d) {
    case Decision::puf_only: return "PufOnly";
    case Decision::full: return "Full";
    case Decision::denied: return "Denied";
  }
  return "Denied";
}

inline Role parse_role(std::string_view s) {
  for (Role r : {Role::owner, Role::doctor, Role::authority, Role::requester}) {
    if (s == to_string(r)) return r;
  }
  throw Error(Errc::format_error, "unknown role '" + std::string(s) + "'");
}

struct Party {
  std::string id;
  Role role = Role::requester;

  friend bool operator==(const Party&, const Party&) = default;
};

struct GrantEntry {
  std::string party;
  /// Seconds since epoch; informational only.
  std::int64_t ts = 0;

  friend bool operator==(const GrantEntry&, const GrantEntry&) = default;
};

struct SharePolicy {
  FileId record_id{};
  std::vector<GrantEntry> grants;
  std::set<std::string> revoked;

  [[nodiscard]] bool is_granted(std::string_view party) const {
    return std::ranges::any_of(grants, [&](const GrantEntry& g) { return g.party == party; });
  }

  friend bool operator==(const SharePolicy&, const SharePolicy&) = default;
};

inline nlohmann::json to_json(const SharePolicy& p) {
  nlohmann::json grants = nlohmann::json::array();
  for (const auto& g : p.grants) grants.push_back({{"party", g.party}, {"ts", g.ts}});
  return {{"record_id", to_hex(p.record_id)}, {"grants", grants}, {"revoked", p.revoked}};
}

inline SharePolicy policy_from_json(const nlohmann::json& j) {
  SharePolicy p;
  p.record_id = parse_record_id(j.at("record_id").get<std::string>());
  for (const auto& g : j.at("grants")) p.grants.push_back({g.at("party").get<std::string>(), g.at("ts").get<std::int64_t>()});
  for (const auto& r : j.at("revoked")) p.revoked.insert(r.get<std::string>());
  return p;
}

inline std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

/// Enrolled parties plus per-record policies. Single writer.
class PolicyStore {
 public:
  /// The first party enrolled must be the owner; afterwards only the owner may enroll others.
  void enroll(const Party& party, std::optional<std::string_view> caller = std::nullopt) {
    if (party.id.empty()) throw Error(Errc::format_error, "party id must not be empty");
    if (owner_) {
      if (!caller || *caller != owner_->id) throw Error(Errc::not_owner, "only the owner may enroll parties");
      if (party.role == Role::owner && party.id != owner_->id) {
        throw Error(Errc::not_owner, "store already has an owner");
      }
    } else if (party.role != Role::owner) {
      throw Error(Errc::not_owner, "the owner must be enrolled first");
    }
    parties_[party.id] = party;
    if (party.role == Role::owner) owner_ = party;
  }

  [[nodiscard]] std::optional<Party> find_party(std::string_view id) const {
    auto it = parties_.find(std::string(id));
    if (it == parties_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] const std::optional<Party>& owner() const noexcept { return owner_; }

  [[nodiscard]] const SharePolicy* policy(const FileId& record_id) const {
    auto it = policies_.find(record_id);
    return it == policies_.end() ? nullptr : &it->second;
  }

  /// `known_record` is typically PlacementIndex::contains.
  template <typename RecordExists>
  [[nodiscard]] Decision request_access(std::string_view party_id, const FileId& record_id,
                                        RecordExists&& known_record) const {
    if (!known_record(record_id)) throw Error(Errc::unknown_record, to_hex(record_id));
    const auto party = find_party(party_id);
    if (!party) return Decision::denied;
    if (party->role != Role::requester) return Decision::full;
    const SharePolicy* p = policy(record_id);
    return p && p->is_granted(party_id) ? Decision::full : Decision::puf_only;
  }

  void grant(std::string_view caller, std::string_view grantee, const FileId& record_id,
             std::int64_t ts = unix_now()) {
    require_owner(caller);
    if (!find_party(grantee)) parties_[std::string(grantee)] = Party{std::string(grantee), Role::requester};
    SharePolicy& p = policy_for(record_id);
    p.revoked.erase(std::string(grantee));
    if (!p.is_granted(grantee)) p.grants.push_back({std::string(grantee), ts});
  }

  void revoke(std::string_view caller, std::string_view grantee, const FileId& record_id) {
    require_owner(caller);
    SharePolicy& p = policy_for(record_id);
    const auto removed = std::erase_if(p.grants, [&](const GrantEntry& g) { return g.party == grantee; });
    if (removed > 0) p.revoked.insert(std::string(grantee));
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json parties = nlohmann::json::array();
    for (const auto& [id, party] : parties_) parties.push_back({{"id", id}, {"role", to_string(party.role)}});
    nlohmann::json records = nlohmann::json::array();
    for (const auto& [id, policy] : policies_) records.push_back(sefrag::to_json(policy));
    return {{"parties", parties}, {"records", records}};
  }

  static PolicyStore from_json(const nlohmann::json& j) {
    PolicyStore s;
    try {
      for (const auto& p : j.at("parties")) {
        Party party{p.at("id").get<std::string>(), parse_role(p.at("role").get<std::string>())};
        if (party.role == Role::owner) {
          if (s.owner_) throw Error(Errc::format_error, "policy store has more than one owner");
          s.owner_ = party;
        }
        s.parties_[party.id] = party;
      }
      for (const auto& r : j.at("records")) {
        SharePolicy p = policy_from_json(r);
        s.policies_[p.record_id] = std::move(p);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::format_error, std::string("policy store: ") + e.what());
    }
    return s;
  }

  /// A missing file is an empty store.
  static PolicyStore load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return {};
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::format_error, std::string("policy store: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const {
    const std::string text = to_json().dump(2) + "\n";
    write_file_atomic(path, as_bytes(text));
  }

 private:
  void require_owner(std::string_view caller) const {
    if (!owner_ || owner_->id != caller) throw Error(Errc::not_owner, std::string(caller) + " is not the owner");
  }

  SharePolicy& policy_for(const FileId& record_id) {
    auto [it, inserted] = policies_.try_emplace(record_id);
    if (inserted) it->second.record_id = record_id;
    return it->second;
  }

  std::optional<Party> owner_;
  std::map<std::string, Party> parties_;
  std::map<FileId, SharePolicy> policies_;
};

struct Release {
  std::optional<Bytes> puf;
  std::optional<Bytes> prf;

  [[nodiscard]] bool empty() const noexcept { return !puf && !prf; }
};

/// Delivers container bytes according to `decision`. With `anonymize`, a full
/// release carries the PUF with its plaintext header stripped.
inline Release release(Decision decision, const Placement& placement, const BackendSet& backends,
                       bool anonymize = false) {
  Release out;
  if (decision == Decision::denied) return out;
  Bytes puf = backends.resolve(placement.puf.backend).get(placement.puf.ref);
  if (decision == Decision::full) {
    out.prf = backends.resolve(placement.prf.backend).get(placement.prf.ref);
    if (anonymize) puf = strip_header(PufContainer::parse(puf)).serialize();
  }
  out.puf = std::move(puf);
  return out;
}

}  // namespace sefrag
