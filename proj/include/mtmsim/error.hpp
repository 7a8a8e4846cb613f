#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mtmsim {

// Error codes shared by every module. The text form (to_string) is the
// kebab-case name used in logs, CLI output and scenario files.
enum class Errc : std::uint8_t {
  ok = 0,
  // encoding
  decode_error,
  // crypto
  config_mismatch,
  integrity_failure,
  wrong_key,
  key_usage,
  // mtm-core
  unknown_handle,
  duplicate_stakeholder,
  resource_limit,
  profile_violation,
  lifecycle_violation,
  index_out_of_range,
  unknown_aik,
  unknown_key,
  unknown_parent,
  hierarchy_depth_limit,
  already_owned,
  missing_ek,
  bad_signature,
  revoked,
  not_yet_valid,
  measurement_mismatch,
  // rim
  unknown_cert,
  bad_counter,
  // engine
  failed_engine,
  missing_rim,
  duplicate_subsystem,
  forbidden,
  not_exported,
  provider_not_running,
  // take-ownership
  device_not_booted,
  attestation_failed,
  decrypt_failed,
  attestation_rejected,
  purpose_rejected,
  replayed_request,
  grant_rejected,
  boot_failed,
  // migration
  no_subsystem,
  channel_failed,
  source_revoked,
  owner_declined,
  stakeholder_mismatch,
  target_untrusted,
  policy_unacceptable,
  stale_offer,
  state_changed_since_lock,
  nonce_mismatch,
  policy_verify_failed,
  migration_timeout,
  // harness
  assertion_failed,
  bad_magic,
  version_mismatch,
  scenario_syntax,
  io_error,
};

std::string_view to_string(Errc code);
Errc errc_from_string(std::string_view name);  // Errc::ok if unknown

// True for outcomes that represent an expected protocol rejection rather
// than a malfunction (CLI exit code 2).
bool is_protocol_rejection(Errc code);

class Error : public std::runtime_error {
 public:
  explicit Error(Errc code) : std::runtime_error(std::string(to_string(code))), code_(code) {}
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mtmsim
