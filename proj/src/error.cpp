#include "mtmsim/error.hpp"

#include <array>
#include <utility>

namespace mtmsim {

namespace {

constexpr std::array<std::pair<Errc, std::string_view>, 55> kNames{{
    {Errc::ok, "ok"},
    {Errc::decode_error, "decode-error"},
    {Errc::config_mismatch, "config-mismatch"},
    {Errc::integrity_failure, "integrity-failure"},
    {Errc::wrong_key, "wrong-key"},
    {Errc::key_usage, "key-usage"},
    {Errc::unknown_handle, "unknown-handle"},
    {Errc::duplicate_stakeholder, "duplicate-stakeholder"},
    {Errc::resource_limit, "resource-limit"},
    {Errc::profile_violation, "profile-violation"},
    {Errc::lifecycle_violation, "lifecycle-violation"},
    {Errc::index_out_of_range, "index-out-of-range"},
    {Errc::unknown_aik, "unknown-aik"},
    {Errc::unknown_key, "unknown-key"},
    {Errc::unknown_parent, "unknown-parent"},
    {Errc::hierarchy_depth_limit, "hierarchy-depth-limit"},
    {Errc::already_owned, "already-owned"},
    {Errc::missing_ek, "missing-ek"},
    {Errc::bad_signature, "bad-signature"},
    {Errc::revoked, "revoked"},
    {Errc::not_yet_valid, "not-yet-valid"},
    {Errc::measurement_mismatch, "measurement-mismatch"},
    {Errc::unknown_cert, "unknown-cert"},
    {Errc::bad_counter, "bad-counter"},
    {Errc::failed_engine, "failed-engine"},
    {Errc::missing_rim, "missing-rim"},
    {Errc::duplicate_subsystem, "duplicate-subsystem"},
    {Errc::forbidden, "forbidden"},
    {Errc::not_exported, "not-exported"},
    {Errc::provider_not_running, "provider-not-running"},
    {Errc::device_not_booted, "device-not-booted"},
    {Errc::attestation_failed, "attestation-failed"},
    {Errc::decrypt_failed, "decrypt-failed"},
    {Errc::attestation_rejected, "attestation-rejected"},
    {Errc::purpose_rejected, "purpose-rejected"},
    {Errc::replayed_request, "replayed-request"},
    {Errc::grant_rejected, "grant-rejected"},
    {Errc::boot_failed, "boot-failed"},
    {Errc::no_subsystem, "no-subsystem"},
    {Errc::channel_failed, "channel-failed"},
    {Errc::source_revoked, "source-revoked"},
    {Errc::owner_declined, "owner-declined"},
    {Errc::stakeholder_mismatch, "stakeholder-mismatch"},
    {Errc::target_untrusted, "target-untrusted"},
    {Errc::policy_unacceptable, "policy-unacceptable"},
    {Errc::stale_offer, "stale-offer"},
    {Errc::state_changed_since_lock, "state-changed-since-lock"},
    {Errc::nonce_mismatch, "nonce-mismatch"},
    {Errc::policy_verify_failed, "policy-verify-failed"},
    {Errc::migration_timeout, "migration-timeout"},
    {Errc::assertion_failed, "assertion-failed"},
    {Errc::bad_magic, "bad-magic"},
    {Errc::version_mismatch, "version-mismatch"},
    {Errc::scenario_syntax, "scenario-syntax"},
    {Errc::io_error, "io-error"},
}};

}  // namespace

std::string_view to_string(Errc code) {
  for (const auto& [c, name] : kNames)
    if (c == code) return name;
  return "unknown-error";
}

Errc errc_from_string(std::string_view name) {
  for (const auto& [c, n] : kNames)
    if (n == name) return c;
  return Errc::ok;
}

bool is_protocol_rejection(Errc code) {
  switch (code) {
    case Errc::attestation_failed:
    case Errc::decrypt_failed:
    case Errc::attestation_rejected:
    case Errc::purpose_rejected:
    case Errc::replayed_request:
    case Errc::grant_rejected:
    case Errc::boot_failed:
    case Errc::no_subsystem:
    case Errc::channel_failed:
    case Errc::source_revoked:
    case Errc::owner_declined:
    case Errc::stakeholder_mismatch:
    case Errc::target_untrusted:
    case Errc::policy_unacceptable:
    case Errc::stale_offer:
    case Errc::state_changed_since_lock:
    case Errc::nonce_mismatch:
    case Errc::policy_verify_failed:
    case Errc::migration_timeout:
    case Errc::config_mismatch:
    case Errc::integrity_failure:
    case Errc::wrong_key:
    case Errc::duplicate_subsystem:
    case Errc::device_not_booted:
    case Errc::revoked:
    case Errc::bad_signature:
    case Errc::measurement_mismatch:
    case Errc::forbidden:
    case Errc::profile_violation:
    case Errc::lifecycle_violation:
    case Errc::unknown_handle:
    case Errc::duplicate_stakeholder:
    case Errc::failed_engine:
    case Errc::missing_rim:
    case Errc::assertion_failed:
      return true;
    default:
      return false;
  }
}

}  // namespace mtmsim
