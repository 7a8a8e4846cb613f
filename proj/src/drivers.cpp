#include <algorithm>

#include "mtmsim/harness.hpp"

namespace mtmsim {

namespace {

std::string tag_for(const std::string& action, ByteView wire) {
  if (wire.size() > 1 && wire[1] >= 1 && wire[1] <= kMessageTypeCount)
    return action + ":" + std::string(short_name(static_cast<MessageType>(wire[1])));
  return action;
}

std::vector<std::uint8_t> selection_for(const SecurityPolicy& policy) {
  std::vector<std::uint8_t> idx;
  for (const auto& config : policy.acceptable_target_states)
    for (const auto& b : config) idx.push_back(b.index);
  if (idx.empty()) idx.push_back(kPcrEngineImages);
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

}  // namespace

// --- take-ownership ----------------------------------------------------------------------

TakeOwnershipOutcome run_takeown(SimDevice& device, RemoteOwnerAgent& agent, const TakeOwnershipRun& run) {
  auto& platform = device.platform;
  const auto& suite = platform.suite();
  const auto& ro = agent.stakeholder();
  if (!platform.owner(ro.id)) {
    platform.provision_owner(agent.identity());
    device.record("provision-owner", to_bytes(ro.id));
  }

  TakeOwnershipOutcome out;
  std::optional<TakeOwnershipSession> session;
  try {
    session = to_prepare(platform, ro, run.purpose);
    device.record("takeown-prepare", session->session_id.view());

    if (run.tamper_image) {
      auto& image = platform.subsystem(ro.id)->engine.image;
      auto [offset, mask] = *run.tamper_image;
      image[offset % image.size()] ^= mask == 0 ? 1 : mask;
      device.record("tamper-image", image);
    }

    auto request = to_build_request(platform, *session, agent.transport_public());
    out.request_emitted = true;

    const std::string agent_ep = "agent:" + ro.id;
    Channel channel(suite, device.name(), agent_ep, run.faults, run.transport);
    channel.set_observer([&](const std::string& ep, const std::string& action, ByteView wire) {
      if (ep == device.name()) device.record(tag_for(action, wire), wire);
    });

    // The agent endpoint answers retransmitted requests from a reply cache,
    // so the protocol-level replay check only sees genuinely new requests.
    std::map<Digest, Bytes> replies;
    std::optional<Bytes> grant;
    std::optional<Error> rejection;
    for (std::uint32_t attempt = 0; attempt < run.max_attempts && !grant && !rejection; ++attempt) {
      channel.send(device.name(), request);
      while (auto wire = channel.receive(agent_ep)) {
        auto d = suite.hash(*wire);
        if (auto it = replies.find(d); it != replies.end()) {
          channel.send_wire(agent_ep, it->second);
          continue;
        }
        try {
          auto reply = agent.process_request(*wire).encode();
          replies.emplace(d, reply);
          channel.send_wire(agent_ep, reply);
        } catch (const Error& e) {
          if (!rejection) rejection = e;
        }
      }
      while (auto wire = channel.receive(device.name()))
        if (!grant) grant = std::move(wire);
    }
    if (rejection) throw *rejection;
    if (!grant) throw Error(Errc::channel_failed, "no grant received");

    if (run.swap_component) {
      auto* image = platform.subsystem(ro.id)->component_image(*run.swap_component);
      if (!image) throw Error(Errc::scenario_syntax, "no component " + *run.swap_component);
      *image = to_bytes("mtmsim:swapped:" + *run.swap_component);
      device.record("swap-component", to_bytes(*run.swap_component));
    }

    to_complete(platform, *session, *grant);
    device.record("takeown-complete", session->session_id.view());
    out.state = session->state;
  } catch (const Error& e) {
    out.status = e.code();
    out.detail = e.what();
    out.state = session ? session->state : TakeOwnershipState::failed;
    device.record("takeown-rejected", to_bytes(to_string(e.code())));
    // Roll back the blank subsystem unless boot already failed, in which
    // case the failed engine stays for inspection.
    if (session && e.code() != Errc::boot_failed && platform.subsystem(ro.id)) {
      remove_engine(platform, ro, ro.id);
      device.record("takeown-rollback", to_bytes(ro.id));
    }
  }
  return out;
}

// --- migration ----------------------------------------------------------------------------

std::uint32_t owned_holders(const std::vector<const SimDevice*>& devices, const StakeholderId& ro, const Digest& srk) {
  std::uint32_t n = 0;
  for (const auto* d : devices) {
    for (const auto& info : d->platform.mtm.instances())
      if (info.stakeholder == ro && info.lifecycle == Lifecycle::owned && info.srk_id == srk) {
        ++n;
        break;
      }
  }
  return n;
}

MigrationOutcome run_migration(SimDevice& src, SimDevice& dst, const StakeholderId& ro, const MigrationRun& run) {
  MigrationOutcome out;
  const auto& suite = src.platform.suite();
  const std::string S = src.name(), D = dst.name();
  if (S == D) throw Error(Errc::channel_failed, "source and destination are the same device");

  Channel ch(suite, S, D, run.faults, run.transport);
  ch.set_observer([&](const std::string& ep, const std::string& action, ByteView wire) {
    (ep == S ? src : dst).record(tag_for(action, wire), wire);
    if (action == "send") out.traffic.emplace_back(wire.begin(), wire.end());
  });

  std::optional<Digest> srk;
  if (const auto* t = src.platform.subsystem(ro); t && src.platform.mtm.is_live(t->vmtm))
    srk = src.platform.mtm.inspect(t->vmtm).srk_id;
  auto check = [&] {
    if (!srk) return;
    auto n = owned_holders({&src, &dst}, ro, *srk);
    out.max_owned = std::max(out.max_owned, n);
    if (n > 1) out.uniqueness_held = false;
  };

  Errc first_error = Errc::ok;
  auto fail = [&](Errc code, const std::string& detail) {
    if (first_error != Errc::ok) return;
    first_error = code;
    out.detail = detail;
  };

  MigrationStart start;
  try {
    start = mig_init(src.platform, run.source_approves, ro, dst.platform.device_id(), run.channel_open, run.protocol);
  } catch (const Error& e) {
    out.status = e.code();
    out.detail = e.what();
    out.terminated = true;
    src.record("migrate-refused", to_bytes(to_string(e.code())));
    return out;
  }
  auto& ss = start.session;
  std::optional<MigrationDestSession> ds;

  std::uint64_t tick = 0;
  Bytes src_last;
  std::uint64_t src_last_tick = 0, src_phase_tick = 0;
  Bytes dst_offer, dst_notice, dst_refusal;
  std::uint64_t dst_last_tick = 0, dst_phase_tick = 0;
  bool offer_replaced = false;

  auto src_send = [&](const ProtocolMessage& m) {
    src_last = m.encode();
    src_last_tick = tick;
    ch.send_wire(S, src_last);
  };
  auto src_session_id = [&] { return ss.target_nonce ? ss.session_id : ss.hello_session_id; };
  auto src_fail = [&](Errc code, const std::string& detail) {
    bool was_waiting = ss.state == SourceState::package_sent;
    fail(code, detail);
    src_abort(src.platform, ss, code);
    src.record("migrate-abort", to_bytes(to_string(code)));
    if (was_waiting)
      ch.send(S, MigrationAck{false}.to_message(ss.session_id));
    else
      ch.send(S, MigrationError{code, detail}.to_message(src_session_id()));
  };

  auto handle_dest = [&](const Bytes& wire) {
    ProtocolMessage m;
    try {
      m = ProtocolMessage::decode(wire);
    } catch (const Error&) {
      return;
    }
    switch (m.type) {
      case MessageType::migration_hello:
        if (!ds && dst_refusal.empty()) {
          try {
            ds = dest_open(dst.platform, wire);
            auto offer = dest_screen_source(dst.platform, *ds, run.dest_confirms);
            dst_offer = offer.encode();
            dst_phase_tick = tick;
            ch.send_wire(D, dst_offer);
          } catch (const Error& e) {
            fail(e.code(), e.what());
            if (ds) dest_abort(dst.platform, *ds, e.code());
            dst.record("migrate-refuse", to_bytes(to_string(e.code())));
            dst_refusal = MigrationError{e.code(), e.what()}.to_message(m.session_id).encode();
            ch.send_wire(D, dst_refusal);
          }
        } else if (!dst_refusal.empty()) {
          ch.send_wire(D, dst_refusal);
        } else if (ds->state == DestState::offer_sent && m.session_id == ds->hello_session_id) {
          ch.send_wire(D, dst_offer);
        }
        break;
      case MessageType::migration_package:
        if (!ds) break;
        if (ds->state == DestState::offer_sent || ds->state == DestState::imported_pending) {
          try {
            dst_notice = dest_import(dst.platform, *ds, wire).encode();
            dst_last_tick = tick;
            dst.record("migrate-import-pending", ds->session_id.view());
            ch.send_wire(D, dst_notice);
          } catch (const Error& e) {
            if (ds->state != DestState::offer_sent) break;
            fail(e.code(), e.what());
            dest_abort(dst.platform, *ds, e.code());
            dst.record("migrate-import-rejected", to_bytes(to_string(e.code())));
            dst_notice = MigrationNotice{false, e.code()}.to_message(ds->session_id).encode();
            ch.send_wire(D, dst_notice);
          }
        } else if (!dst_notice.empty()) {
          ch.send_wire(D, dst_notice);
        }
        break;
      case MessageType::migration_ack:
        if (!ds) break;
        try {
          auto before = ds->state;
          if (dest_on_ack(dst.platform, *ds, wire)) dst.record("migrate-activated", ds->session_id.view());
          if (before != ds->state && ds->state == DestState::discarded)
            dst.record("migrate-discarded", ds->session_id.view());
        } catch (const Error&) {
        }
        break;
      case MessageType::migration_error:
        if (!ds || (m.session_id != ds->session_id && m.session_id != ds->hello_session_id)) break;
        try {
          auto err = MigrationError::from_message(m);
          if (ds->state == DestState::opened || ds->state == DestState::offer_sent ||
              ds->state == DestState::imported_pending) {
            fail(err.code, err.detail);
            dest_abort(dst.platform, *ds, err.code);
            dst.record("migrate-halted", to_bytes(to_string(err.code)));
          }
        } catch (const Error&) {
        }
        break;
      default:
        break;
    }
  };

  auto handle_src = [&](const Bytes& wire) {
    ProtocolMessage m;
    try {
      m = ProtocolMessage::decode(wire);
    } catch (const Error&) {
      return;
    }
    switch (m.type) {
      case MessageType::migration_offer: {
        Bytes offer = wire;
        if (run.replace_offer && !offer_replaced) {
          offer = *run.replace_offer;
          offer_replaced = true;
        }
        if (!out.offer) out.offer = offer;
        if (ss.state != SourceState::hello_sent) {
          try {
            src_evaluate_offer(src.platform, ss, offer);
          } catch (const Error&) {
          }
          break;
        }
        try {
          src_evaluate_offer(src.platform, ss, offer);
        } catch (const Error& e) {
          src_fail(e.code(), e.what());
          break;
        }
        src.record("migrate-locked", ss.session_id.view());
        if (run.extend_after_lock) {
          const auto* t = src.platform.subsystem(ro);
          src.platform.mtm.pcr_extend(t->vmtm, 3, suite.hash(to_bytes("post-lock-event")));
          src.record("extend-after-lock");
        }
        try {
          src_send(src_package(src.platform, ss));
          src_phase_tick = tick;
        } catch (const Error& e) {
          src_fail(e.code(), e.what());
        }
        break;
      }
      case MessageType::migration_notice:
        if (ss.state != SourceState::package_sent && ss.state != SourceState::finalized &&
            ss.state != SourceState::aborted)
          break;
        try {
          auto before = ss.state;
          auto ack = src_finalize(src.platform, ss, wire);
          if (before == SourceState::package_sent) {
            if (ss.state == SourceState::finalized) {
              src.record("migrate-finalized", ss.session_id.view());
            } else {
              auto notice = MigrationNotice::from_message(m);
              fail(notice.reason, "destination reported failure");
              src.record("migrate-abort", to_bytes(to_string(notice.reason)));
            }
          }
          ch.send(S, ack);
        } catch (const Error&) {
        }
        break;
      case MessageType::migration_error:
        if (m.session_id != ss.hello_session_id && m.session_id != ss.session_id) break;
        if (ss.state == SourceState::hello_sent || ss.state == SourceState::locked ||
            ss.state == SourceState::package_sent) {
          try {
            auto err = MigrationError::from_message(m);
            fail(err.code, err.detail);
            src_abort(src.platform, ss, err.code);
            src.record("migrate-abort", to_bytes(to_string(err.code)));
          } catch (const Error&) {
          }
        }
        break;
      default:
        break;
    }
  };

  src.record("migrate-init", ss.hello_session_id.view());
  src_send(start.hello);
  check();

  const auto timeout = run.protocol.notice_timeout_ticks;
  for (tick = 1; tick <= run.max_ticks; ++tick) {
    if (auto w = ch.receive(D)) handle_dest(*w);
    check();
    if (auto w = ch.receive(S)) handle_src(*w);
    check();

    if (ss.state == SourceState::hello_sent || ss.state == SourceState::package_sent) {
      if (tick - src_phase_tick >= timeout) {
        src_fail(Errc::migration_timeout, "no answer from destination");
      } else if (tick - src_last_tick >= run.retransmit_interval) {
        src_last_tick = tick;
        ch.send_wire(S, src_last);
      }
    }
    if (ds && ds->state == DestState::imported_pending && tick - dst_last_tick >= run.retransmit_interval) {
      dst_last_tick = tick;
      ch.send_wire(D, dst_notice);
    }
    if (ds && ds->state == DestState::offer_sent && tick - dst_phase_tick >= 2 * timeout) {
      fail(Errc::migration_timeout, "no package from source");
      dest_abort(dst.platform, *ds, Errc::migration_timeout);
      dst.record("migrate-halted", to_bytes(to_string(Errc::migration_timeout)));
    }
    check();

    bool src_done = ss.state == SourceState::finalized || ss.state == SourceState::aborted;
    bool dst_done = !ds || ds->state == DestState::activated || ds->state == DestState::discarded ||
                    ds->state == DestState::halted;
    if (src_done && dst_done && ch.idle()) {
      out.terminated = true;
      break;
    }
  }

  out.ticks = tick;
  out.source_state = ss.state;
  if (ds) out.dest_state = ds->state;
  out.success = ss.state == SourceState::finalized && ds && ds->state == DestState::activated;
  if (out.success)
    out.status = Errc::ok;
  else if (!out.terminated)
    out.status = Errc::migration_timeout, out.detail = "migration did not terminate";
  else
    out.status = first_error == Errc::ok ? Errc::migration_timeout : first_error;
  return out;
}

// --- attestation ------------------------------------------------------------------------------

AttestationReport attest(SimDevice& device, const StakeholderId& ro, const Nonce& nonce) {
  auto& platform = device.platform;
  const auto* tss = platform.subsystem(ro);
  if (!tss || !tss->certificate) throw Error(Errc::no_subsystem, ro);
  auto aik_id = platform.suite().hash(tss->certificate->aik_public.bytes);
  auto response = platform.mtm.route_command(tss->vmtm, cmd::Quote{aik_id, nonce, selection_for(tss->policy)});
  if (!response.ok()) throw Error(response.status, "quote");
  device.record("attest", nonce.view());
  return {*tss->certificate, std::get<resp::QuoteResult>(response.body).quote};
}

Errc verify_attestation(const CryptoSuite& suite, const OwnerIdentity& owner, const SecurityPolicy& policy,
                        const AttestationReport& report, const Nonce& nonce) {
  if (!verify_tss_certificate(suite, report.certificate, owner.root_key)) return Errc::bad_signature;
  if (report.certificate.subject != owner.id) return Errc::stakeholder_mismatch;
  if (report.quote.nonce != nonce) return Errc::nonce_mismatch;
  if (!verify_quote(suite, report.certificate.aik_public, report.quote)) return Errc::attestation_rejected;
  for (const auto& config : policy.acceptable_target_states) {
    bool covered = std::all_of(config.begin(), config.end(), [&](const PcrBinding& b) {
      return std::find(report.quote.pcrs.begin(), report.quote.pcrs.end(), b) != report.quote.pcrs.end();
    });
    if (covered) return Errc::ok;
  }
  return Errc::attestation_rejected;
}

}  // namespace mtmsim
