#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sefrag {

/// Failure categories raised by every module. The CLI maps them onto exit codes.
enum class Errc {
  // se-core
  integrity_failure,
  length_mismatch,
  // container
  not_dicom,
  too_short,
  pair_mismatch,
  bad_padding,
  format_error,
  empty_passphrase,
  // analysis
  empty_input,
  // dispersion
  backend_unavailable,
  io_error,
  not_found,
  corrupt_blob,
  same_backend,
  bind_error,
  protocol_error,
  // sharing
  unknown_record,
  not_owner,
  unknown_party,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::integrity_failure: return "IntegrityFailure";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::not_dicom: return "NotDicom";
    case Errc::too_short: return "TooShort";
    case Errc::pair_mismatch: return "PairMismatch";
    case Errc::bad_padding: return "BadPadding";
    case Errc::format_error: return "FormatError";
    case Errc::empty_passphrase: return "EmptyPassphrase";
    case Errc::empty_input: return "EmptyInput";
    case Errc::backend_unavailable: return "BackendUnavailable";
    case Errc::io_error: return "IoError";
    case Errc::not_found: return "NotFound";
    case Errc::corrupt_blob: return "CorruptBlob";
    case Errc::same_backend: return "SameBackend";
    case Errc::bind_error: return "BindError";
    case Errc::protocol_error: return "ProtocolError";
    case Errc::unknown_record: return "UnknownRecord";
    case Errc::not_owner: return "NotOwner";
    case Errc::unknown_party: return "UnknownParty";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sefrag
